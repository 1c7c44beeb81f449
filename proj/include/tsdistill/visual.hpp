#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tsdistill/rng.hpp"
#include "tsdistill/tensor.hpp"

namespace tsd {

/// Rendering configuration for the series-to-image transform.
struct AugmentConfig {
	std::size_t h_hidden = 16; // 1-D conv width; must be even (first 2-D conv halves it)
	std::size_t image_size = 56;
	std::size_t c_img = 3;
	std::size_t periodicity = 24;

	void validate() const;
};

/// Learnable parameters of the multiscale transform (per model instance).
struct VisualParams {
	Tensor k1d, b1d; // [H, 4, 3], [H]       raw | spectrum | sin | cos -> hidden
	Tensor k2a, b2a; // [H/2, H, 3, 3], [H/2]
	Tensor k2b, b2b; // [C_img, H/2, 3, 3], [C_img]
};

/// DFT magnitude along the last axis; non-differentiable preprocessing (the
/// result is a constant in the graph). Radix-2 when the length is a power of
/// two, direct O(L^2) evaluation otherwise.
Tensor fft_magnitude(const Tensor &x);

/// PE(t) = [sin(2*pi*t/P), cos(2*pi*t/P)] for t = 0..L-1, as an L x 2 tensor.
Tensor periodicity_encoding(std::size_t L, std::size_t P);

/// X_aug = stack[x, FFT(x), PE_sin(x)] along a new trailing axis of size 3.
/// Only channel 0 carries gradient; the spectrum and encoding channels are
/// graph constants.
Tensor enhance(const Tensor &x /* B x L x D */, std::size_t P);

/// Fold rule for the time axis: rows of length P when P | L, otherwise the
/// nearest rectangle with height = the greatest divisor of L <= sqrt(L).
std::pair<std::size_t, std::size_t> fold_dims(std::size_t L, std::size_t P);

/// Conv1D over time per variable (4 input channels: raw, spectrum/L, gated
/// sin, gated cos), mean over variables, period fold, two 3x3 convs with a
/// GELU between them. Replicate padding throughout; fully differentiable.
Tensor multiscale_transform(const Tensor &aug /* B x L x D x 3 */, const AugmentConfig &cfg,
                            const VisualParams &params);

/// 255 * (I - min) / (max - min + 1e-5) per sample; min/max are detached
/// constants of the current values. `frozen` overrides them (one (min, max)
/// pair per sample) so a finite-difference harness can hold them fixed.
Tensor pixel_normalize(const Tensor &img,
                       const std::optional<std::vector<std::pair<double, double>>> &frozen =
                           std::nullopt);

/// Min/max per sample, as pixel_normalize would compute them.
std::vector<std::pair<double, double>> image_min_max(const Tensor &img);

/// Full rendering pipeline: enhance -> multiscale -> resize -> normalize.
Tensor render_image(const Tensor &x /* B x L x D */, const AugmentConfig &cfg,
                    const VisualParams &params,
                    const std::optional<std::vector<std::pair<double, double>>> &frozen_minmax =
                        std::nullopt);

/// Binary PGM (P5), maxval 255, rounded-to-nearest bytes. One channel.
void export_pgm(const std::vector<double> &pixels, std::size_t height, std::size_t width,
                const std::string &path);
struct PgmImage {
	std::size_t height = 0, width = 0;
	std::vector<std::uint8_t> pixels;
};
PgmImage read_pgm(const std::string &path);

VisualParams init_visual_params(const AugmentConfig &cfg, std::uint64_t seed,
                                const std::string &prefix);

} // namespace tsd

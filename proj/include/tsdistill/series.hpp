#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "tsdistill/tensor.hpp"

namespace tsd {

/// A multivariate time series: T rows by C channels, row-major.
struct Series {
	std::vector<double> values;
	std::size_t T = 0;
	std::size_t C = 0;
	std::size_t periodicity = 1;
	std::vector<std::string> column_names;
	std::vector<std::string> timestamps; // empty, or one opaque label per row

	double at(std::size_t t, std::size_t c) const { return values[t * C + c]; }
	double &at(std::size_t t, std::size_t c) { return values[t * C + c]; }
};

/// One (lookback, horizon) slice with per-window normalization statistics.
/// `normalized` says whether the blocks currently hold normalized values.
struct SeriesWindow {
	std::vector<double> lookback; // seq_len x C, row-major
	std::vector<double> horizon;  // pred_len x C, row-major
	std::size_t seq_len = 0;
	std::size_t pred_len = 0;
	std::size_t channels = 0;
	std::vector<double> mean; // per channel, from the raw lookback
	std::vector<double> std;  // population std per channel
	double norm_const = 0.4;
	bool normalized = false;
};

struct SplitSpec {
	double train = 0.7;
	double val = 0.1;
	double test = 0.2;
	double few_shot_fraction = 1.0; // applied to the leading share of the training span
};

struct SeriesSplits {
	Series train, val, test;
};

Series load_csv(const std::string &path, bool has_header,
                std::optional<std::size_t> timestamp_column = std::nullopt);
void save_csv(const Series &s, const std::string &path);

/// Chronological, contiguous, non-overlapping partition. `min_part_length`
/// lets the caller demand each part can yield at least one window.
SeriesSplits split(const Series &s, const SplitSpec &spec, std::size_t min_part_length = 1);

std::vector<SeriesWindow> make_windows(const Series &s, std::size_t seq_len, std::size_t pred_len,
                                       std::size_t stride = 1);

/// Per-channel x' = (x - mean) * r / (std + 1e-8) using lookback statistics;
/// the horizon block is transformed with the same statistics.
SeriesWindow instance_normalize(const SeriesWindow &w, double norm_const = 0.4);
SeriesWindow denormalize(const SeriesWindow &w);
/// Map normalized model outputs (pred_len x C, row-major) back to the data scale.
std::vector<double> denormalize_predictions(const SeriesWindow &w,
                                            const std::vector<double> &predictions);

/// [B, L, C] -> [B, N, patch_len*C]; end-pads by replicating the final time
/// step `padding` times; each patch is flattened time-major, channel-minor.
Tensor patchify(const Tensor &x, std::size_t patch_len, std::size_t stride, std::size_t padding);
std::size_t patch_count(std::size_t L, std::size_t patch_len, std::size_t stride,
                        std::size_t padding);

enum class SynthKind { SineMix, TrendSine, Noise };
SynthKind synth_kind_from_string(const std::string &name);

Series synth_generate(SynthKind kind, std::size_t T, std::size_t C, std::size_t P,
                      std::uint64_t seed, double noise_sigma = 0.1);

/// Stack normalized windows into model-ready tensors.
struct WindowBatch {
	Tensor lookback; // B x L x C
	Tensor target;   // B x H x C (normalized horizon)
};
WindowBatch batch_from_windows(const std::vector<SeriesWindow> &windows,
                               const std::vector<std::size_t> &indices);

} // namespace tsd

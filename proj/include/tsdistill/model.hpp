#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tsdistill/params.hpp"
#include "tsdistill/series.hpp"
#include "tsdistill/temporal.hpp"
#include "tsdistill/visual.hpp"

namespace tsd {

enum class ModelRole { Teacher, Student };

struct VisionEncoderConfig {
	std::size_t d_vis = 64; // top channel width of the conv stack
	std::size_t depth = 2;  // number of stride-2 blocks
};

struct FusionConfig {
	std::size_t d_fus = 32;
	std::size_t n_heads = 4;
	double dropout = 0.1;

	void validate() const;
};

struct ForecasterConfig {
	ModelRole role = ModelRole::Teacher;
	std::size_t channels = 7; // series channels D
	std::size_t pred_len = 96;
	TemporalEncoderConfig temporal;
	AugmentConfig visual;
	VisionEncoderConfig vision;
	FusionConfig fusion;

	void validate() const;
};

struct ModelOutputs {
	Tensor predictions;       // B x H x D, normalized space
	Tensor fused;             // F_fus: B x d_fus
	Tensor attention;         // P: B x T' x T', head-averaged last-layer attention
	Tensor visual_features;   // F_vis: B x d_fus (pooled + projected)
};

/// Stride-2 conv stack -> global average pool -> linear projection to d_fus.
class VisionEncoder {
public:
	VisionEncoder(const VisionEncoderConfig &cfg, std::size_t in_channels, std::size_t d_fus,
	              ParamSet &params, const std::string &prefix, std::uint64_t seed);
	Tensor encode(const Tensor &img /* B x C x H x W */) const;

private:
	VisionEncoderConfig cfg_;
	std::vector<Tensor> kernels_, biases_;
	Linear proj_;
};

/// Temporal features query the pooled visual token; the fused representation
/// is LayerNorm(W_O A + lifted h_T).
class CrossModalFusion {
public:
	CrossModalFusion(const FusionConfig &cfg, std::size_t d_model, ParamSet &params,
	                 const std::string &prefix, std::uint64_t seed);
	Tensor fuse(const Tensor &h_t /* B x d_model */, const Tensor &f_vis /* B x d_fus */,
	            bool training, Rng &dropout_rng) const;

private:
	FusionConfig cfg_;
	Linear lift_, wq_, wk_, wv_, wo_;
	Tensor ln_gain_, ln_bias_;
};

/// Affine map d_fus -> H*D reshaped to B x H x D.
class PredictionHead {
public:
	PredictionHead(std::size_t d_fus, std::size_t pred_len, std::size_t channels, ParamSet &params,
	               const std::string &prefix, std::uint64_t seed);
	Tensor predict(const Tensor &fused) const;

private:
	std::size_t pred_len_, channels_;
	Linear head_;
};

/// SmoothL1 with beta = 1 between predictions and targets (both normalized).
Tensor reconstruction_loss(const Tensor &predictions, const Tensor &targets);

/// One cross-modal forecaster (teacher or student own separate instances).
class Forecaster {
public:
	Forecaster(const ForecasterConfig &cfg, std::uint64_t seed);

	/// Runs series -> temporal encoder and series -> visual augmentation ->
	/// vision encoder -> fusion -> head. `frozen_minmax` pins the image
	/// normalization constants (finite-difference harness support).
	ModelOutputs forward(const Tensor &x /* B x L x C */, bool training, Rng &dropout_rng,
	                     const std::optional<std::vector<std::pair<double, double>>> &frozen_minmax =
	                         std::nullopt) const;

	const ForecasterConfig &config() const { return cfg_; }
	const ParamSet &params() const { return params_; }
	std::size_t param_count() const { return params_.total_count(); }
	std::size_t vision_param_count() const { return params_.count_prefix("vision."); }

	/// Render I_visual without running the encoders (used by the render mode).
	Tensor render(const Tensor &x) const;
	/// The image before pixel normalization (its min/max feed the frozen-
	/// constant finite-difference mode).
	Tensor prenorm_image(const Tensor &x) const;
	/// Zero-shot transfer evaluates with the target dataset's periodicity.
	void set_visual_periodicity(std::size_t p) { cfg_.visual.periodicity = p; }

private:
	ForecasterConfig cfg_;
	ParamSet params_;
	VisualParams visual_params_;
	std::optional<TemporalEncoder> temporal_;
	std::optional<VisionEncoder> vision_;
	std::optional<CrossModalFusion> fusion_;
	std::optional<PredictionHead> head_;
};

/// Binary checkpoint: magic, JSON config block, then named parameter blobs
/// (u32 name length, name bytes, u32 rank, u64 extents, f64 values), all
/// little-endian. Round-trips exactly.
void save_checkpoint(const Forecaster &model, const std::string &path);
Forecaster load_checkpoint(const std::string &path);

std::string forecaster_config_json(const ForecasterConfig &cfg);
ForecasterConfig forecaster_config_from_json(const std::string &json_text);

} // namespace tsd

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsdistill/params.hpp"
#include "tsdistill/rng.hpp"
#include "tsdistill/tensor.hpp"

namespace tsd {

struct TemporalEncoderConfig {
	std::size_t d_model = 128;
	std::size_t e_layers = 2;
	std::size_t n_heads = 4;
	double dropout = 0.1;
	std::size_t patch_len = 16;
	std::size_t patch_stride = 8;
	std::size_t patch_padding = 8;

	void validate() const;
};

struct TemporalOutput {
	Tensor pooled;    // h_T: B x d_model, token mean of the final states
	Tensor tokens;    // B x N x d_model
	Tensor attention; // B x n_heads x N x N, last layer, post-softmax, pre-dropout
};

/// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same).
Tensor positional_encoding(std::size_t n_tokens, std::size_t d_model);

/// Patch-based pre-norm transformer encoder. Parameters are registered in the
/// supplied ParamSet under `prefix`; forward state lives entirely on the tape.
class TemporalEncoder {
public:
	TemporalEncoder(const TemporalEncoderConfig &cfg, std::size_t channels, ParamSet &params,
	                const std::string &prefix, std::uint64_t seed);

	/// e_i = W_embed . flatten(p_i) + b_embed
	Tensor embed_patches(const Tensor &patches) const { return embed_.apply(patches); }

	TemporalOutput encode(const Tensor &x /* B x L x C */, bool training, Rng &dropout_rng) const;

	const TemporalEncoderConfig &config() const { return cfg_; }
	std::size_t tokens_for(std::size_t L) const;

private:
	struct Block {
		Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
		Linear wq, wk, wv, wo;
		Linear ff1, ff2;
	};

	TemporalEncoderConfig cfg_;
	std::size_t channels_;
	Linear embed_;
	std::vector<Block> blocks_;
};

} // namespace tsd

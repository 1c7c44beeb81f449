#include "tsdistill/temporal.hpp"

#include <cmath>

#include "tsdistill/series.hpp"

namespace tsd {

void TemporalEncoderConfig::validate() const {
	if (d_model == 0 || n_heads == 0)
		throw ConfigError("temporal encoder: d_model and n_heads must be positive");
	if (d_model % n_heads != 0)
		throw ConfigError("temporal encoder: d_model must be divisible by n_heads");
	if (d_model % 2 != 0)
		throw ConfigError("temporal encoder: d_model must be even for sinusoidal encodings");
	if (patch_len == 0 || patch_stride == 0)
		throw ConfigError("temporal encoder: patch_len and stride must be positive");
	if (dropout < 0.0 || dropout >= 1.0)
		throw ConfigError("temporal encoder: dropout must lie in [0, 1)");
}

Tensor positional_encoding(std::size_t n_tokens, std::size_t d_model) {
	if (d_model % 2 != 0)
		throw ConfigError("positional_encoding: d_model must be even");
	std::vector<double> data(n_tokens * d_model);
	for (std::size_t pos = 0; pos < n_tokens; ++pos)
		for (std::size_t i = 0; i < d_model / 2; ++i) {
			double rate = std::pow(10000.0, 2.0 * double(i) / double(d_model));
			data[pos * d_model + 2 * i] = std::sin(double(pos) / rate);
			data[pos * d_model + 2 * i + 1] = std::cos(double(pos) / rate);
		}
	return Tensor::from_data({n_tokens, d_model}, std::move(data));
}

TemporalEncoder::TemporalEncoder(const TemporalEncoderConfig &cfg, std::size_t channels,
                                 ParamSet &params, const std::string &prefix, std::uint64_t seed)
    : cfg_(cfg), channels_(channels) {
	cfg.validate();
	std::size_t d = cfg.d_model;
	embed_ = Linear::create(params, prefix + ".embed", cfg.patch_len * channels, d, seed);
	for (std::size_t l = 0; l < cfg.e_layers; ++l) {
		std::string base = prefix + ".layer" + std::to_string(l);
		Block blk;
		blk.ln1_gain = params.add(base + ".ln1.gain", Tensor::full({d}, 1.0));
		blk.ln1_bias = params.add(base + ".ln1.bias", Tensor::zeros({d}));
		blk.ln2_gain = params.add(base + ".ln2.gain", Tensor::full({d}, 1.0));
		blk.ln2_bias = params.add(base + ".ln2.bias", Tensor::zeros({d}));
		blk.wq = Linear::create(params, base + ".attn.q", d, d, seed);
		blk.wk = Linear::create(params, base + ".attn.k", d, d, seed);
		blk.wv = Linear::create(params, base + ".attn.v", d, d, seed);
		blk.wo = Linear::create(params, base + ".attn.o", d, d, seed);
		blk.ff1 = Linear::create(params, base + ".ff1", d, 4 * d, seed);
		blk.ff2 = Linear::create(params, base + ".ff2", 4 * d, d, seed);
		blocks_.push_back(blk);
	}
}

std::size_t TemporalEncoder::tokens_for(std::size_t L) const {
	return patch_count(L, cfg_.patch_len, cfg_.patch_stride, cfg_.patch_padding);
}

TemporalOutput TemporalEncoder::encode(const Tensor &x, bool training, Rng &dropout_rng) const {
	const Shape &s = x.shape();
	if (s.size() != 3 || s[2] != channels_)
		throw ShapeError("temporal encode: expected [B, L, " + std::to_string(channels_) + "]");
	std::size_t B = s[0];

	Tensor patches = patchify(x, cfg_.patch_len, cfg_.patch_stride, cfg_.patch_padding);
	std::size_t N = patches.shape()[1];
	Tensor h = embed_patches(patches) + positional_encoding(N, cfg_.d_model);

	std::size_t d = cfg_.d_model;
	std::size_t nh = cfg_.n_heads;
	std::size_t dk = d / nh;
	double p = training ? cfg_.dropout : 0.0;
	double inv_sqrt_dk = 1.0 / std::sqrt(double(dk));

	auto split_heads = [&](const Tensor &t) {
		return permute(reshape(t, {B, N, nh, dk}), {0, 2, 1, 3}); // B x nh x N x dk
	};

	Tensor last_attention;
	for (const Block &blk : blocks_) {
		Tensor a = layer_norm(h, blk.ln1_gain, blk.ln1_bias, 2);
		Tensor q = split_heads(blk.wq.apply(a));
		Tensor k = split_heads(blk.wk.apply(a));
		Tensor v = split_heads(blk.wv.apply(a));
		Tensor scores = scale(matmul(q, permute(k, {0, 1, 3, 2})), inv_sqrt_dk);
		Tensor probs = softmax(scores, 3); // exported pre-dropout
		last_attention = probs;
		Tensor ctx = matmul(dropout(probs, p, dropout_rng), v); // B x nh x N x dk
		Tensor merged = reshape(permute(ctx, {0, 2, 1, 3}), {B, N, d});
		h = h + dropout(blk.wo.apply(merged), p, dropout_rng);

		Tensor f = layer_norm(h, blk.ln2_gain, blk.ln2_bias, 2);
		f = blk.ff2.apply(gelu(blk.ff1.apply(f)));
		h = h + dropout(f, p, dropout_rng);
	}

	TemporalOutput out;
	out.tokens = h;
	out.pooled = mean_axis(h, 1, false); // B x d_model
	if (blocks_.empty()) {
		// degenerate zero-layer stack: export uniform attention
		out.attention = Tensor::full({B, nh, N, N}, 1.0 / double(N));
	} else {
		out.attention = last_attention;
	}
	return out;
}

} // namespace tsd

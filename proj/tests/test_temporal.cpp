#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "tsdistill/grad_check.hpp"
#include "tsdistill/series.hpp"
#include "tsdistill/temporal.hpp"

using namespace tsd;
using tsd::testing::random_tensor;

namespace {

TemporalEncoderConfig toy_cfg() {
	TemporalEncoderConfig cfg;
	cfg.d_model = 8;
	cfg.e_layers = 1;
	cfg.n_heads = 2;
	cfg.dropout = 0.0;
	cfg.patch_len = 4;
	cfg.patch_stride = 2;
	cfg.patch_padding = 2;
	return cfg;
}

} // namespace

TEST_CASE("positional encoding values") {
	Tensor pe = positional_encoding(4, 6);
	// position 0 alternates sin(0)=0, cos(0)=1
	for (std::size_t i = 0; i < 3; ++i) {
		CHECK(pe.data()[2 * i] == doctest::Approx(0.0));
		CHECK(pe.data()[2 * i + 1] == doctest::Approx(1.0));
	}
	CHECK(pe.data()[1 * 6 + 0] == doctest::Approx(std::sin(1.0)).epsilon(1e-9)); // sin(1)
	for (double v : pe.data()) {
		CHECK(v >= -1.0);
		CHECK(v <= 1.0);
	}
	CHECK_THROWS_AS((void)positional_encoding(4, 5), ConfigError);
}

TEST_CASE("embed_patches identity and bias-only behavior") {
	TemporalEncoderConfig cfg = toy_cfg();
	cfg.d_model = 4; // square case so W can be the identity
	cfg.n_heads = 2;
	ParamSet params;
	TemporalEncoder enc(cfg, 1, params, "enc", 3);

	Tensor patches = Tensor::from_data({1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});

	auto &W = params.get("enc.embed.W").leaf_data();
	std::fill(W.begin(), W.end(), 0.0);
	for (std::size_t i = 0; i < 4; ++i)
		W[i * 4 + i] = 1.0;
	CHECK(enc.embed_patches(patches).data() == patches.data());

	std::fill(W.begin(), W.end(), 0.0);
	auto &b = params.get("enc.embed.b").leaf_data();
	b = {0.5, -1.0, 2.0, 0.0};
	Tensor out = enc.embed_patches(patches);
	for (std::size_t n = 0; n < 2; ++n)
		for (std::size_t j = 0; j < 4; ++j)
			CHECK(out.data()[n * 4 + j] == b[j]);
}

TEST_CASE("embedding is differentiable") {
	TemporalEncoderConfig cfg = toy_cfg();
	ParamSet params;
	TemporalEncoder enc(cfg, 2, params, "enc", 4);
	Rng rng = Rng::stream(32, "test/embed-grad");
	Tensor patches = random_tensor({2, 3, cfg.patch_len * 2}, rng);
	auto f = [&](const Tensor &p) { return sum(exp(scale(enc.embed_patches(p), 0.3))); };
	CHECK(grad_check(f, patches, 1e-5, 1e-4).pass);
}

TEST_CASE("encode output shapes and attention normalization") {
	TemporalEncoderConfig cfg = toy_cfg();
	cfg.e_layers = 2;
	ParamSet params;
	TemporalEncoder enc(cfg, 3, params, "enc", 5);
	Rng rng = Rng::stream(33, "test/encode");
	Rng drop = Rng::stream(33, "test/encode-drop");
	std::size_t B = 2, L = 10;
	Tensor x = random_tensor({B, L, 3}, rng);
	TemporalOutput out = enc.encode(x, false, drop);

	std::size_t N = enc.tokens_for(L);
	CHECK(out.pooled.shape() == Shape{B, cfg.d_model});
	CHECK(out.tokens.shape() == Shape{B, N, cfg.d_model});
	CHECK(out.attention.shape() == Shape{B, cfg.n_heads, N, N});

	// attention rows sum to 1 within 1e-9
	for (std::size_t r = 0; r < B * cfg.n_heads * N; ++r) {
		double s = 0.0;
		for (std::size_t j = 0; j < N; ++j)
			s += out.attention.data()[r * N + j];
		CHECK(std::fabs(s - 1.0) <= 1e-9);
	}
}

TEST_CASE("zero-layer encoder pools the embedded tokens") {
	TemporalEncoderConfig cfg = toy_cfg();
	cfg.e_layers = 0;
	ParamSet params;
	TemporalEncoder enc(cfg, 1, params, "enc", 6);
	Rng rng = Rng::stream(34, "test/zero-layer");
	Rng drop = Rng::stream(34, "test/zero-layer-drop");
	Tensor x = random_tensor({1, 8, 1}, rng);
	TemporalOutput out = enc.encode(x, false, drop);

	// expected: mean over tokens of embed(patchify(x)) + positional encoding
	Tensor patches = patchify(x, cfg.patch_len, cfg.patch_stride, cfg.patch_padding);
	Tensor expect =
	    mean_axis(enc.embed_patches(patches) + positional_encoding(patches.shape()[1], cfg.d_model),
	              1, false);
	CHECK(tsd::testing::all_close(out.pooled.data(), expect.data(), 1e-12));

	// degenerate stack still exports normalized attention rows
	std::size_t N = patches.shape()[1];
	for (std::size_t j = 0; j < N; ++j)
		CHECK(out.attention.data()[j] == doctest::Approx(1.0 / double(N)));
}

TEST_CASE("end-to-end encoder gradient on a two-token toy") {
	TemporalEncoderConfig cfg = toy_cfg();
	ParamSet params;
	TemporalEncoder enc(cfg, 1, params, "enc", 7);
	Rng rng = Rng::stream(35, "test/encode-grad");
	Tensor x0 = random_tensor({1, 6, 1}, rng); // patch 4 stride 2 pad 2 -> 2 tokens? (6+2-4)/2+1 = 3
	Rng drop = Rng::stream(0, "unused");
	auto f = [&](const Tensor &x) {
		Rng d = Rng::stream(0, "unused");
		TemporalOutput out = enc.encode(x, false, d);
		return sum(out.pooled * out.pooled);
	};
	CHECK(grad_check(f, x0, 1e-5, 1e-4).pass);

	// parameters receive finite-difference-consistent gradients too
	auto names = {std::string("enc.layer0.attn.q.W"), std::string("enc.embed.W"),
	              std::string("enc.layer0.ff1.W"), std::string("enc.layer0.ln1.gain")};
	std::vector<std::pair<std::string, Tensor>> leaves;
	for (const auto &n : names)
		leaves.emplace_back(n, params.get(n));
	auto g = [&]() {
		Rng d = Rng::stream(0, "unused");
		TemporalOutput out = enc.encode(x0, false, d);
		return sum(out.pooled * out.pooled);
	};
	for (auto &item : grad_check_many(g, leaves, 1e-5, 1e-4))
		CHECK_MESSAGE(item.report.pass, item.name, " max rel err ", item.report.max_rel_err);
}

TEST_CASE("batch permutation equivariance and dropout-off determinism") {
	TemporalEncoderConfig cfg = toy_cfg();
	cfg.e_layers = 2;
	ParamSet params;
	TemporalEncoder enc(cfg, 2, params, "enc", 8);
	Rng rng = Rng::stream(36, "test/equivariance");
	std::size_t B = 3, L = 8, C = 2;
	Tensor x = random_tensor({B, L, C}, rng);

	Rng d1 = Rng::stream(1, "drop");
	TemporalOutput out = enc.encode(x, false, d1);

	// permute the batch (rotate by one) and re-encode
	std::vector<double> rot(x.numel());
	std::size_t per = L * C;
	for (std::size_t b = 0; b < B; ++b)
		std::copy(x.data().begin() + ((b + 1) % B) * per, x.data().begin() + (((b + 1) % B) + 1) * per,
		          rot.begin() + b * per);
	Rng d2 = Rng::stream(2, "drop");
	TemporalOutput out_rot = enc.encode(Tensor::from_data({B, L, C}, rot), false, d2);

	std::size_t dper = cfg.d_model;
	for (std::size_t b = 0; b < B; ++b)
		for (std::size_t j = 0; j < dper; ++j)
			CHECK(out_rot.pooled.data()[b * dper + j] ==
			      doctest::Approx(out.pooled.data()[((b + 1) % B) * dper + j]).epsilon(1e-12));

	// determinism with dropout disabled
	Rng d3 = Rng::stream(3, "drop");
	TemporalOutput again = enc.encode(x, false, d3);
	CHECK(again.pooled.data() == out.pooled.data());

	// training mode consumes the dropout stream deterministically as well
	Rng d4 = Rng::stream(4, "drop");
	Rng d5 = Rng::stream(4, "drop");
	CHECK(enc.encode(x, true, d4).pooled.data() == enc.encode(x, true, d5).pooled.data());
}

TEST_CASE("doubling the input changes the pooled representation") {
	TemporalEncoderConfig cfg = toy_cfg();
	ParamSet params;
	TemporalEncoder enc(cfg, 1, params, "enc", 9);
	Rng rng = Rng::stream(37, "test/sensitivity");
	Tensor x = random_tensor({1, 8, 1}, rng);
	Rng d1 = Rng::stream(0, "d");
	Rng d2 = Rng::stream(0, "d");
	Tensor h1 = enc.encode(x, false, d1).pooled;
	Tensor h2 = enc.encode(scale(x, 2.0), false, d2).pooled;
	double diff = 0.0;
	for (std::size_t i = 0; i < h1.numel(); ++i)
		diff += (h1.data()[i] - h2.data()[i]) * (h1.data()[i] - h2.data()[i]);
	CHECK(std::sqrt(diff) > 1e-6);
}

TEST_CASE("config validation") {
	TemporalEncoderConfig bad = toy_cfg();
	bad.d_model = 9; // not divisible by heads, odd
	CHECK_THROWS_AS(bad.validate(), ConfigError);
	TemporalEncoderConfig odd = toy_cfg();
	odd.n_heads = 3;
	odd.d_model = 6; // divisible by 3 but even -> ok
	CHECK_NOTHROW(odd.validate());
}

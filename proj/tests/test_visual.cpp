#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "test_util.hpp"
#include "tsdistill/grad_check.hpp"
#include "tsdistill/visual.hpp"

using namespace tsd;
using tsd::testing::random_tensor;

namespace {

// Independent oracle: direct O(L^2) evaluation of |sum_t x(t) e^{-2pi i k t / L}|.
std::vector<double> naive_dft_magnitude(const std::vector<double> &x) {
	std::size_t L = x.size();
	std::vector<double> out(L);
	for (std::size_t k = 0; k < L; ++k) {
		double re = 0.0, im = 0.0;
		for (std::size_t t = 0; t < L; ++t) {
			double ang = -2.0 * M_PI * double(k) * double(t) / double(L);
			re += x[t] * std::cos(ang);
			im += x[t] * std::sin(ang);
		}
		out[k] = std::sqrt(re * re + im * im);
	}
	return out;
}

AugmentConfig tiny_cfg() {
	AugmentConfig cfg;
	cfg.h_hidden = 4;
	cfg.image_size = 8;
	cfg.c_img = 2;
	cfg.periodicity = 4;
	return cfg;
}

} // namespace

TEST_CASE("fft_magnitude on simple signals") {
	Tensor dc = fft_magnitude(Tensor::from_data({4}, {1, 1, 1, 1}));
	CHECK(dc.data()[0] == doctest::Approx(4.0).epsilon(1e-12));
	for (int k = 1; k < 4; ++k)
		CHECK(dc.data()[k] == doctest::Approx(0.0).epsilon(1e-12));

	Tensor alt = fft_magnitude(Tensor::from_data({4}, {0, 1, 0, -1}));
	CHECK(alt.data()[0] == doctest::Approx(0.0).epsilon(1e-12));
	CHECK(alt.data()[1] == doctest::Approx(2.0).epsilon(1e-12));
	CHECK(alt.data()[2] == doctest::Approx(0.0).epsilon(1e-12));
	CHECK(alt.data()[3] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("fft_magnitude matches the naive DFT oracle for all L <= 64") {
	Rng rng = Rng::stream(21, "test/dft-oracle");
	for (std::size_t L = 1; L <= 64; ++L) {
		std::vector<double> x(L);
		for (double &v : x)
			v = rng.uniform(-2.0, 2.0);
		Tensor got = fft_magnitude(Tensor::from_data({L}, x));
		auto want = naive_dft_magnitude(x);
		for (std::size_t k = 0; k < L; ++k)
			CHECK(std::fabs(got.data()[k] - want[k]) <= 1e-9);
	}
}

TEST_CASE("fft_magnitude is invariant to circular shifts") {
	Rng rng = Rng::stream(22, "test/dft-shift");
	std::size_t L = 24;
	std::vector<double> x(L), shifted(L);
	for (double &v : x)
		v = rng.uniform(-1.0, 1.0);
	for (std::size_t t = 0; t < L; ++t)
		shifted[t] = x[(t + 7) % L];
	Tensor a = fft_magnitude(Tensor::from_data({L}, x));
	Tensor b = fft_magnitude(Tensor::from_data({L}, shifted));
	for (std::size_t k = 0; k < L; ++k)
		CHECK(std::fabs(a.data()[k] - b.data()[k]) <= 1e-9);
}

TEST_CASE("periodicity encoding values") {
	Tensor pe = periodicity_encoding(25, 24);
	CHECK(pe.shape() == Shape{25, 2});
	CHECK(pe.data()[0] == doctest::Approx(0.0));  // sin at t=0
	CHECK(pe.data()[1] == doctest::Approx(1.0));  // cos at t=0
	CHECK(pe.data()[6 * 2] == doctest::Approx(1.0).epsilon(1e-12));      // quarter period
	CHECK(pe.data()[6 * 2 + 1] == doctest::Approx(0.0).epsilon(1e-12));
	CHECK(std::fabs(pe.data()[24 * 2] - pe.data()[0]) <= 1e-12); // t = P wraps to t = 0
	CHECK(std::fabs(pe.data()[24 * 2 + 1] - pe.data()[1]) <= 1e-12);
}

TEST_CASE("enhance stacks raw, spectrum, and encoding channels") {
	Rng rng = Rng::stream(23, "test/enhance");
	Tensor x = random_tensor({2, 6, 3}, rng);
	Tensor aug = enhance(x, 4);
	REQUIRE(aug.shape() == Shape{2, 6, 3, 3});
	// channel 0 equals the input exactly
	for (std::size_t i = 0; i < x.numel(); ++i)
		CHECK(aug.data()[i * 3 + 0] == x.data()[i]);

	// constant input: channel 1 is the DC-only spectrum [L*c, 0, ...]
	Tensor c = Tensor::full({1, 5, 1}, 3.0);
	Tensor caug = enhance(c, 4);
	CHECK(caug.data()[0 * 3 + 1] == doctest::Approx(15.0).epsilon(1e-12));
	for (std::size_t t = 1; t < 5; ++t)
		CHECK(caug.data()[(t * 1 + 0) * 3 + 1] == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("fold dimensions") {
	CHECK(fold_dims(96, 24) == std::pair<std::size_t, std::size_t>{4, 24});
	CHECK(fold_dims(24, 24) == std::pair<std::size_t, std::size_t>{1, 24});
	CHECK(fold_dims(512, 24) == std::pair<std::size_t, std::size_t>{16, 32}); // fallback rectangle
	CHECK(fold_dims(7, 3) == std::pair<std::size_t, std::size_t>{1, 7});      // prime length
}

TEST_CASE("multiscale_transform shape contract and zero final conv") {
	AugmentConfig cfg = tiny_cfg();
	Rng rng = Rng::stream(24, "test/multiscale");
	Tensor x = random_tensor({2, 8, 3}, rng);
	Tensor aug = enhance(x, cfg.periodicity);
	VisualParams params = init_visual_params(cfg, 5, "vp");
	Tensor out = multiscale_transform(aug, cfg, params);
	auto [h0, w0] = fold_dims(8, cfg.periodicity);
	CHECK(out.shape() == Shape{2, cfg.c_img, h0, w0});

	// zero weights in the final conv produce a zero image pre-normalization
	VisualParams zeroed = params;
	zeroed.k2b = Tensor::zeros(params.k2b.shape());
	zeroed.b2b = Tensor::zeros(params.b2b.shape());
	Tensor z = multiscale_transform(aug, cfg, zeroed);
	for (double v : z.data())
		CHECK(v == 0.0);
}

TEST_CASE("multiscale_transform gradient on a 1x8x1x3 toy") {
	AugmentConfig cfg = tiny_cfg();
	cfg.c_img = 1;
	VisualParams params = init_visual_params(cfg, 6, "vp");
	Rng rng = Rng::stream(25, "test/multiscale-grad");
	Tensor aug0 = random_tensor({1, 8, 1, 3}, rng, 0.1, 1.0);
	auto f = [&](const Tensor &aug) { return sum(multiscale_transform(aug, cfg, params)); };
	CHECK(grad_check(f, aug0, 1e-5, 1e-4).pass);

	// conv parameters get gradients too
	auto fk = [&](const Tensor &k) {
		VisualParams p2 = params;
		p2.k1d = k;
		return sum(multiscale_transform(aug0, cfg, p2));
	};
	CHECK(grad_check(fk, params.k1d.detach(), 1e-5, 1e-4).pass);
}

TEST_CASE("bilinear_resize corner alignment and center value") {
	Tensor img = Tensor::from_data({1, 1, 2, 2}, {0, 1, 2, 3});
	Tensor up = bilinear_resize(img, 3, 3);
	CHECK(up.data()[0] == doctest::Approx(0.0)); // corners exact
	CHECK(up.data()[2] == doctest::Approx(1.0));
	CHECK(up.data()[6] == doctest::Approx(2.0));
	CHECK(up.data()[8] == doctest::Approx(3.0));
	CHECK(up.data()[4] == doctest::Approx(1.5)); // center = mean of the four corners
}

TEST_CASE("bilinear_resize reproduces affine fields exactly") {
	Rng rng = Rng::stream(26, "test/bilinear-affine");
	for (int trial = 0; trial < 10; ++trial) {
		double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2), c = rng.uniform(-2, 2);
		std::size_t h = 3 + rng.below(4), w = 3 + rng.below(4);
		std::size_t H = 5 + rng.below(8), W = 5 + rng.below(8);
		std::vector<double> data(h * w);
		for (std::size_t y = 0; y < h; ++y)
			for (std::size_t x = 0; x < w; ++x)
				data[y * w + x] = a * double(x) + b * double(y) + c;
		Tensor img = Tensor::from_data({1, 1, h, w}, data);
		Tensor out = bilinear_resize(img, H, W);
		for (std::size_t y = 0; y < H; ++y)
			for (std::size_t x = 0; x < W; ++x) {
				double sy = H > 1 ? double(y) * double(h - 1) / double(H - 1) : 0.0;
				double sx = W > 1 ? double(x) * double(w - 1) / double(W - 1) : 0.0;
				double want = a * sx + b * sy + c;
				CHECK(std::fabs(out.data()[y * W + x] - want) <= 1e-9);
			}
	}
}

TEST_CASE("bilinear_resize is differentiable") {
	Rng rng = Rng::stream(27, "test/bilinear-grad");
	Tensor img = random_tensor({1, 2, 3, 4}, rng);
	Tensor w = random_tensor({1, 2, 7, 5}, rng);
	auto f = [&](const Tensor &t) { return sum(bilinear_resize(t, 7, 5) * w); };
	CHECK(grad_check(f, img, 1e-5, 1e-5).pass);
}

TEST_CASE("pixel_normalize values and range") {
	Tensor flat = Tensor::full({1, 1, 2, 2}, 7.0);
	Tensor z = pixel_normalize(flat);
	for (double v : z.data())
		CHECK(v == doctest::Approx(0.0));

	Tensor img = Tensor::from_data({1, 1, 2, 2}, {0, 5, 10, 20});
	Tensor n = pixel_normalize(img);
	CHECK(n.data()[0] == doctest::Approx(0.0).epsilon(1e-2));
	CHECK(n.data()[1] == doctest::Approx(63.749).epsilon(1e-2));
	CHECK(n.data()[2] == doctest::Approx(127.499).epsilon(1e-2));
	CHECK(n.data()[3] == doctest::Approx(254.999).epsilon(1e-2));

	Rng rng = Rng::stream(28, "test/pixel-range");
	for (int trial = 0; trial < 20; ++trial) {
		Tensor r = pixel_normalize(random_tensor({2, 3, 4, 4}, rng, -50.0, 90.0));
		for (double v : r.data()) {
			CHECK(v >= 0.0);
			CHECK(v <= 255.0);
		}
	}
}

TEST_CASE("render pipeline composes to B x C x size x size and is differentiable end to end") {
	AugmentConfig cfg;
	cfg.h_hidden = 4;
	cfg.image_size = 56;
	cfg.c_img = 3;
	cfg.periodicity = 4;
	VisualParams params = init_visual_params(cfg, 9, "vp");
	Rng rng = Rng::stream(29, "test/render");
	Tensor x = random_tensor({2, 8, 2}, rng, 0.1, 1.0, true);
	Tensor img = render_image(x, cfg, params);
	CHECK(img.shape() == Shape{2, 3, 56, 56});

	// gradient reaches the raw window values and every conv parameter
	backward(sum(img * img));
	auto nonzero = [](const std::vector<double> &g) {
		for (double v : g)
			if (v != 0.0)
				return true;
		return false;
	};
	CHECK(nonzero(x.grad()));
	for (const Tensor &p : {params.k1d, params.b1d, params.k2a, params.b2a, params.k2b, params.b2b})
		CHECK(nonzero(p.grad()));

	// determinism: identical inputs give bit-identical images
	Tensor img2 = render_image(x.detach(), cfg, params);
	CHECK(img.data() == img2.data());
}

TEST_CASE("per-image max saturates near 255 for non-constant images") {
	AugmentConfig cfg = tiny_cfg();
	VisualParams params = init_visual_params(cfg, 11, "vp");
	Rng rng = Rng::stream(30, "test/saturate");
	Tensor x = random_tensor({3, 8, 2}, rng);
	Tensor img = render_image(x, cfg, params);
	std::size_t per = 2 * 8 * 8;
	for (std::size_t b = 0; b < 3; ++b) {
		double hi = 0.0;
		for (std::size_t i = 0; i < per; ++i)
			hi = std::max(hi, img.data()[b * per + i]);
		CHECK(hi >= 255.0 * (1.0 - 1e-4));
	}
}

TEST_CASE("pgm export and round trip") {
	std::string path = "/tmp/tsd_test_img.pgm";
	export_pgm({0, 0, 0, 0}, 2, 2, path);
	{
		std::ifstream in(path, std::ios::binary);
		std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
		CHECK(content == std::string("P5\n2 2\n255\n") + std::string(4, '\0'));
	}

	std::vector<double> img(56 * 56);
	Rng rng = Rng::stream(31, "test/pgm");
	for (double &v : img)
		v = rng.uniform(0.0, 255.0);
	export_pgm(img, 56, 56, path);
	PgmImage r = read_pgm(path);
	CHECK(r.height == 56);
	CHECK(r.width == 56);
	CHECK(r.pixels.size() == 3136);
	for (std::size_t i = 0; i < img.size(); ++i)
		CHECK(double(r.pixels[i]) == doctest::Approx(std::nearbyint(img[i])));

	// writing the same bytes again round-trips identically
	export_pgm(img, 56, 56, path);
	PgmImage r2 = read_pgm(path);
	CHECK(r2.pixels == r.pixels);
	std::remove(path.c_str());
}

TEST_CASE("constant window renders as an all-zero image") {
	AugmentConfig cfg = tiny_cfg();
	VisualParams params = init_visual_params(cfg, 13, "vp");
	// a constant series normalizes to zeros; its rendering must be all zeros
	Tensor x = Tensor::zeros({1, 8, 2});
	Tensor img = render_image(x, cfg, params);
	for (double v : img.data())
		CHECK(v == 0.0);
}

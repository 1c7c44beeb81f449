#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "tsdistill/grad_check.hpp"
#include "tsdistill/tensor.hpp"

using namespace tsd;
using tsd::testing::all_close;
using tsd::testing::random_tensor;
using tsd::testing::random_tensor_away_from;

TEST_CASE("elementwise forward values") {
	Tensor e = exp(Tensor::from_data({2}, {0.0, 1.0}));
	CHECK(e.data()[0] == doctest::Approx(1.0));
	CHECK(e.data()[1] == doctest::Approx(2.718281828459045));

	Tensor s = sigmoid(Tensor::from_data({1}, {0.0}));
	CHECK(s.value() == doctest::Approx(0.5));

	Tensor a = Tensor::from_data({3}, {1.0, -2.0, 0.5});
	Tensor b = Tensor::from_data({3}, {4.0, 3.0, -1.0});
	CHECK(all_close((a + b).data(), {5.0, 1.0, -0.5}, 1e-12));
	CHECK(all_close((a - b).data(), {-3.0, -5.0, 1.5}, 1e-12));
	CHECK(all_close((a * b).data(), {4.0, -6.0, -0.5}, 1e-12));
	CHECK(all_close((a / b).data(), {0.25, -2.0 / 3.0, -0.5}, 1e-12));
	CHECK(all_close(relu(a).data(), {1.0, 0.0, 0.5}, 1e-12));
	CHECK(all_close(neg(a).data(), {-1.0, 2.0, -0.5}, 1e-12));
}

TEST_CASE("d/da sum(a*a) at a=[1,2] is [2,4]") {
	Tensor a = Tensor::from_data({2}, {1.0, 2.0}, true);
	backward(sum(a * a));
	CHECK(all_close(a.grad(), {2.0, 4.0}, 1e-12));
}

TEST_CASE("binary ops broadcast leading singleton dims") {
	Tensor big = Tensor::from_data({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
	Tensor row = Tensor::from_data({2}, {10.0, 20.0}, true);
	Tensor out = big + row;
	CHECK(out.shape() == Shape{2, 2, 2});
	CHECK(out.data()[0] == 11.0);
	CHECK(out.data()[1] == 22.0);
	CHECK(out.data()[7] == 28.0);
	// gradient sum-reduces over the broadcast axes
	backward(sum(out));
	CHECK(all_close(row.grad(), {4.0, 4.0}, 1e-12));
}

TEST_CASE("shape and domain errors") {
	Tensor a = Tensor::from_data({2}, {1.0, 2.0});
	Tensor b = Tensor::from_data({3}, {1.0, 2.0, 3.0});
	CHECK_THROWS_AS((void)add(a, b), ShapeError);
	CHECK_THROWS_AS((void)div(a, Tensor::from_data({2}, {1.0, 0.0})), DomainError);
	CHECK_THROWS_AS((void)log(Tensor::from_data({2}, {1.0, -1.0})), DomainError);
	CHECK_THROWS_AS((void)log(Tensor::from_data({1}, {0.0})), DomainError);
	CHECK_THROWS_AS((void)sqrt(Tensor::from_data({1}, {-1.0})), DomainError);
}

TEST_CASE("matmul values") {
	Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
	Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
	CHECK(all_close(matmul(eye, m).data(), {1, 2, 3, 4}, 1e-12));

	Tensor r = Tensor::from_data({1, 2}, {1, 2});
	Tensor c = Tensor::from_data({2, 1}, {3, 4});
	CHECK(matmul(r, c).data()[0] == doctest::Approx(11.0));

	CHECK_THROWS_AS((void)matmul(r, r), ShapeError);
}

TEST_CASE("matmul gradient matches finite differences (3x4 . 4x2)") {
	Rng rng = Rng::stream(7, "test/matmul");
	Tensor a0 = random_tensor({3, 4}, rng);
	Tensor b0 = random_tensor({4, 2}, rng);
	auto fa = [&](const Tensor &a) { return sum(matmul(a, b0)); };
	auto fb = [&](const Tensor &b) { return sum(matmul(a0, b)); };
	CHECK(grad_check(fa, a0, 1e-5, 1e-6).pass);
	CHECK(grad_check(fb, b0, 1e-5, 1e-6).pass);
}

TEST_CASE("batched matmul with shared rhs") {
	Rng rng = Rng::stream(8, "test/batched-matmul");
	Tensor a = random_tensor({2, 3, 4}, rng);
	Tensor w = random_tensor({4, 5}, rng);
	Tensor out = matmul(a, w);
	CHECK(out.shape() == Shape{2, 3, 5});
	auto f = [&](const Tensor &x) { return sum(matmul(x, w)); };
	CHECK(grad_check(f, a, 1e-5, 1e-5).pass);
	auto g = [&](const Tensor &x) { return sum(matmul(a, x)); };
	CHECK(grad_check(g, w, 1e-5, 1e-5).pass);
}

TEST_CASE("conv1d values") {
	Tensor x = Tensor::from_data({1, 1, 3}, {1, 2, 3});
	Tensor k1 = Tensor::from_data({1, 1, 1}, {1.0});
	CHECK(all_close(conv1d(x, k1, 1, 0).data(), {1, 2, 3}, 1e-12));

	Tensor ones = Tensor::from_data({1, 1, 4}, {1, 1, 1, 1});
	Tensor k2 = Tensor::from_data({1, 1, 2}, {1, 1});
	Tensor y = conv1d(ones, k2, 1, 0);
	CHECK(y.shape() == Shape{1, 1, 3});
	CHECK(all_close(y.data(), {2, 2, 2}, 1e-12));

	CHECK_THROWS_AS((void)conv1d(x, Tensor::from_data({1, 1, 6}, {1, 1, 1, 1, 1, 1}), 1, 0),
	                ShapeError);
}

TEST_CASE("conv1d gradient matches finite differences") {
	Rng rng = Rng::stream(9, "test/conv1d");
	Tensor x0 = random_tensor({2, 3, 7}, rng);
	Tensor k0 = random_tensor({4, 3, 3}, rng);
	auto fx = [&](const Tensor &x) { return sum(conv1d(x, k0, 2, 1)); };
	auto fk = [&](const Tensor &k) { return sum(conv1d(x0, k, 2, 1)); };
	CHECK(grad_check(fx, x0, 1e-5, 1e-5).pass);
	CHECK(grad_check(fk, k0, 1e-5, 1e-5).pass);
}

TEST_CASE("conv2d values") {
	Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
	Tensor ident = Tensor::from_data({1, 1, 1, 1}, {1.0});
	CHECK(all_close(conv2d(x, ident, 1, 0).data(), {1, 2, 3, 4}, 1e-12));

	Tensor k = Tensor::from_data({1, 1, 2, 2}, {1, 1, 1, 1});
	Tensor y = conv2d(x, k, 1, 0);
	CHECK(y.shape() == Shape{1, 1, 1, 1});
	CHECK(y.value() == doctest::Approx(10.0));
}

TEST_CASE("conv2d gradient matches finite differences") {
	Rng rng = Rng::stream(10, "test/conv2d");
	Tensor x0 = random_tensor({2, 2, 5, 4}, rng);
	Tensor k0 = random_tensor({3, 2, 3, 3}, rng);
	auto fx = [&](const Tensor &x) { return sum(conv2d(x, k0, 2, 1)); };
	auto fk = [&](const Tensor &k) { return sum(conv2d(x0, k, 2, 1)); };
	CHECK(grad_check(fx, x0, 1e-5, 1e-5).pass);
	CHECK(grad_check(fk, k0, 1e-5, 1e-5).pass);
}

TEST_CASE("softmax values and stability") {
	Tensor a = softmax(Tensor::from_data({2}, {0.0, 0.0}), 0);
	CHECK(all_close(a.data(), {0.5, 0.5}, 1e-12));

	Tensor big = softmax(Tensor::from_data({2}, {1000.0, 1000.0}), 0);
	CHECK(all_close(big.data(), {0.5, 0.5}, 1e-12));

	Tensor c = softmax(Tensor::from_data({2}, {0.0, std::log(3.0)}), 0);
	CHECK(c.data()[0] == doctest::Approx(0.25).epsilon(1e-9));
	CHECK(c.data()[1] == doctest::Approx(0.75).epsilon(1e-9));
}

TEST_CASE("softmax rows sum to 1 within 1e-12 for any finite input") {
	Rng rng = Rng::stream(11, "test/softmax-sum");
	for (int trial = 0; trial < 50; ++trial) {
		Tensor x = random_tensor({4, 9}, rng, -700.0, 700.0);
		Tensor y = softmax(x, 1);
		for (std::size_t r = 0; r < 4; ++r) {
			double s = 0.0;
			for (std::size_t j = 0; j < 9; ++j)
				s += y.data()[r * 9 + j];
			CHECK(std::fabs(s - 1.0) <= 1e-12);
		}
	}
}

TEST_CASE("layer_norm values") {
	Tensor gain = Tensor::from_data({3}, {1, 1, 1});
	Tensor bias = Tensor::from_data({3}, {0, 0, 0});
	Tensor c = layer_norm(Tensor::from_data({1, 3}, {5, 5, 5}), gain, bias, 1);
	CHECK(all_close(c.data(), {0, 0, 0}, 1e-12));

	Tensor g2 = Tensor::from_data({2}, {1, 1});
	Tensor b2 = Tensor::from_data({2}, {0, 0});
	Tensor y = layer_norm(Tensor::from_data({1, 2}, {1, -1}), g2, b2, 1);
	CHECK(y.data()[0] == doctest::Approx(1.0).epsilon(1e-4));
	CHECK(y.data()[1] == doctest::Approx(-1.0).epsilon(1e-4));
}

TEST_CASE("layer_norm gradient matches finite differences") {
	Rng rng = Rng::stream(12, "test/layernorm");
	Tensor x0 = random_tensor({3, 5}, rng);
	Tensor gain = random_tensor({5}, rng, 0.5, 1.5);
	Tensor bias = random_tensor({5}, rng);
	Tensor weight = random_tensor({3, 5}, rng); // non-uniform so the slice-sum is not trivially 0
	auto f = [&](const Tensor &x) { return sum(mul(layer_norm(x, gain, bias, 1), weight)); };
	CHECK(grad_check(f, x0, 1e-5, 1e-4).pass);
	auto fg = [&](const Tensor &g) { return sum(layer_norm(x0, g, bias, 1)); };
	CHECK(grad_check(fg, gain, 1e-5, 1e-4).pass);
}

TEST_CASE("smooth_l1 values") {
	Tensor p = Tensor::from_data({4}, {1, 2, 3, 4});
	CHECK(smooth_l1(p, p, 1.0).value() == doctest::Approx(0.0));

	Tensor t = Tensor::from_data({4}, {0.5, 1.5, 2.5, 3.5});
	CHECK(smooth_l1(p, t, 1.0).value() == doctest::Approx(0.125));

	Tensor t2 = Tensor::from_data({4}, {-1, 0, 1, 2});
	CHECK(smooth_l1(p, t2, 1.0).value() == doctest::Approx(1.5));

	CHECK_THROWS_AS((void)smooth_l1(p, Tensor::from_data({2}, {0, 0}), 1.0), ShapeError);
}

TEST_CASE("backward basics") {
	Tensor x = Tensor::from_data({3}, {2.0, -1.0, 0.5}, true);
	backward(sum(x));
	CHECK(all_close(x.grad(), {1, 1, 1}, 1e-15));

	Tensor z = Tensor::from_data({1}, {0.0}, true);
	backward(sum(exp(z)));
	CHECK(z.grad()[0] == doctest::Approx(1.0));

	CHECK_THROWS_AS(backward(Tensor::from_data({2}, {1, 2}, true)), std::invalid_argument);
}

TEST_CASE("repeated backward accumulates until grads are zeroed") {
	Tensor x = Tensor::from_data({3}, {1.0, 2.0, 3.0}, true);
	Tensor root = sum(x);
	backward(root);
	backward(root);
	CHECK(all_close(x.grad(), {2, 2, 2}, 1e-15));
	x.zero_grad();
	backward(root);
	CHECK(all_close(x.grad(), {1, 1, 1}, 1e-15));
}

TEST_CASE("value reused on two paths receives the sum of both path gradients") {
	Rng rng = Rng::stream(13, "test/two-paths");
	Tensor x0 = random_tensor({4}, rng);
	auto f = [](const Tensor &x) {
		Tensor y = x * x;       // path one
		Tensor z = exp(x);      // path two, same leaf
		return sum(y) + sum(z); // total derivative must be 2x + e^x
	};
	auto rep = grad_check(f, x0, 1e-5, 1e-6);
	CHECK(rep.pass);

	Tensor x = Tensor::from_data({1}, {0.5}, true);
	backward(f(x));
	CHECK(x.grad()[0] == doctest::Approx(2.0 * 0.5 + std::exp(0.5)));
}

TEST_CASE("composite softmax -> matmul -> smooth_l1 matches finite differences") {
	Rng rng = Rng::stream(14, "test/composite");
	Tensor x0 = random_tensor({3, 4}, rng);
	Tensor w = random_tensor({4, 2}, rng);
	Tensor target = random_tensor({3, 2}, rng, 2.0, 3.0); // keep |d| away from beta
	auto f = [&](const Tensor &x) { return smooth_l1(matmul(softmax(x, 1), w), target, 1.0); };
	CHECK(grad_check(f, x0, 1e-5, 1e-4).pass);
}

TEST_CASE("every differentiable op passes grad_check over 10 random seeds") {
	for (std::uint64_t seed = 1; seed <= 10; ++seed) {
		Rng rng = Rng::stream(seed, "test/op-sweep");
		Tensor x = random_tensor({2, 6}, rng, 0.2, 1.5); // positive domain covers log/sqrt
		Tensor y = random_tensor({2, 6}, rng, 0.3, 2.0);
		Tensor signed_x = random_tensor_away_from({2, 6}, rng, 0.2);

		CHECK(grad_check([&](const Tensor &t) { return sum(t + y); }, x).pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(t - y); }, x).pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(t * y); }, x).pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(t / y); }, x).pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(y / t); }, x).pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(neg(t)); }, x).pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(exp(t)); }, x).pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(log(t)); }, x).pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(sqrt(t)); }, x).pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(relu(t)); }, signed_x).pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(abs(t)); }, signed_x).pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(sigmoid(t)); }, x).pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(gelu(t)); }, signed_x).pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(softmax(t, 1)); }, x).pass);
		CHECK(grad_check([&](const Tensor &t) { return mean(t * t); }, x).pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(sum_axis(t, 0) * sum_axis(t, 1)); }, x)
		          .pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(exp(mean_axis(t, 1))); }, x).pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(max_axis(t, 1) * y); }, x).pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(min_axis(t, 0) * t); }, x).pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(reshape(t, {3, 4}) * reshape(y, {3, 4})); },
		                 x)
		          .pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(permute(t, {1, 0}) * permute(y, {1, 0})); },
		                 x)
		          .pass);
		CHECK(grad_check(
		          [&](const Tensor &t) { return sum(concat({t, t * y}, 1) * concat({y, y}, 1)); }, x)
		          .pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(replicate_pad(t, 1, 2) *
		          replicate_pad(y, 1, 2)); }, x).pass);
		CHECK(grad_check([&](const Tensor &t) { return sum(clamp_min(t, 0.5) * y); }, x).pass);
	}
}

TEST_CASE("grad_check harness self-tests") {
	Rng rng = Rng::stream(15, "test/harness");
	Tensor x0 = random_tensor({5}, rng);

	// f = sum(x^2) passes at tol 1e-6
	CHECK(grad_check([](const Tensor &x) { return sum(x * x); }, x0, 1e-5, 1e-6).pass);

	// f = constant: analytic and numeric gradients both 0
	auto rep = grad_check([](const Tensor &) { return Tensor::scalar(3.0); }, x0, 1e-5, 1e-6);
	CHECK(rep.pass);
	CHECK(rep.max_rel_err == doctest::Approx(0.0));

	// deliberately wrong backward rule must fail (negative control)
	auto broken_double = [](const Tensor &x) {
		auto node = std::make_shared<detail::Node>();
		node->shape = x.shape();
		node->data.resize(x.numel());
		for (std::size_t i = 0; i < x.numel(); ++i)
			node->data[i] = 2.0 * x.data()[i];
		node->parents = {x.node()};
		node->requires_grad = x.requires_grad();
		auto parent = x.node();
		node->backprop = [parent](detail::Node &self) {
			parent->ensure_grad();
			for (std::size_t i = 0; i < self.data.size(); ++i)
				parent->grad[i] += 3.0 * self.grad[i]; // wrong: claims d(2x)/dx == 3
		};
		return sum(Tensor::wrap(node));
	};
	auto bad = grad_check(broken_double, x0, 1e-5, 1e-4);
	CHECK_FALSE(bad.pass);
	CHECK(bad.max_rel_err > 0.1);
}

TEST_CASE("ops are deterministic: same inputs give bit-identical outputs") {
	Rng rng1 = Rng::stream(42, "test/det");
	Rng rng2 = Rng::stream(42, "test/det");
	Tensor a1 = random_tensor({4, 4}, rng1);
	Tensor a2 = random_tensor({4, 4}, rng2);
	REQUIRE(a1.data() == a2.data());

	Tensor r1 = matmul(softmax(a1, 1), exp(scale(a1, 0.25)));
	Tensor r2 = matmul(softmax(a2, 1), exp(scale(a2, 0.25)));
	CHECK(r1.data() == r2.data());

	Rng d1 = Rng::stream(7, "test/dropout");
	Rng d2 = Rng::stream(7, "test/dropout");
	CHECK(dropout(a1, 0.3, d1).data() == dropout(a2, 0.3, d2).data());
}

TEST_CASE("dropout is inverted and inactive at p=0") {
	Rng rng = Rng::stream(16, "test/dropout-scale");
	Tensor x = Tensor::full({10000}, 1.0);
	Tensor y = dropout(x, 0.1, rng);
	double s = 0.0;
	for (double v : y.data()) {
		CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.9)));
		s += v;
	}
	CHECK(s / 10000.0 == doctest::Approx(1.0).epsilon(0.02));

	Rng rng2 = Rng::stream(16, "test/dropout-noop");
	Tensor z = dropout(x, 0.0, rng2);
	CHECK(z.data() == x.data());
}

TEST_CASE("finiteness checks surface NaN as errors") {
	Tensor bad = Tensor::from_data({2}, {1.0, std::nan("")});
	CHECK_FALSE(bad.all_finite());
	CHECK_THROWS_AS(bad.check_finite("unit test"), NumericError);
	Tensor good = Tensor::from_data({2}, {1.0, 2.0});
	CHECK_NOTHROW(good.check_finite("unit test"));
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"
#include "tsdistill/metrics.hpp"

using namespace tsd;

namespace {

Forecast make_forecast(std::vector<double> y, std::vector<double> p, std::size_t s = 1) {
	Forecast f;
	f.horizon = y.size();
	f.channels = 1;
	f.seasonality = s;
	f.actual = std::move(y);
	f.predicted = std::move(p);
	return f;
}

} // namespace

TEST_CASE("mse and mae hand values") {
	auto perfect = make_forecast({1, 2, 3}, {1, 2, 3});
	auto [m0, a0] = mse_mae(perfect);
	CHECK(m0 == doctest::Approx(0.0));
	CHECK(a0 == doctest::Approx(0.0));

	auto unit = make_forecast({0, 0}, {1, -1});
	auto [m1, a1] = mse_mae(unit);
	CHECK(m1 == doctest::Approx(1.0));
	CHECK(a1 == doctest::Approx(1.0));

	auto mixed = make_forecast({1, 2}, {2, 4});
	auto [m2, a2] = mse_mae(mixed);
	CHECK(m2 == doctest::Approx(2.5));
	CHECK(a2 == doctest::Approx(1.5));
}

TEST_CASE("smape hand values") {
	CHECK(smape(make_forecast({5, 6}, {5, 6})) == doctest::Approx(0.0));
	CHECK(smape(make_forecast({100}, {110})) == doctest::Approx(200.0 * 10.0 / 210.0).epsilon(1e-9));
	CHECK(smape(make_forecast({1}, {3})) == doctest::Approx(100.0));

	// both-zero terms are defined as 0 and counted
	std::size_t guarded = 0;
	double v = smape(make_forecast({0, 1}, {0, 1}), &guarded);
	CHECK(v == doctest::Approx(0.0));
	CHECK(guarded == 1);
}

TEST_CASE("mape hand values and the all-zero error") {
	CHECK(mape(make_forecast({5, 6}, {5, 6})) == doctest::Approx(0.0));
	CHECK(mape(make_forecast({100}, {110})) == doctest::Approx(10.0));
	CHECK(mape(make_forecast({2}, {1})) == doctest::Approx(50.0));

	std::size_t skipped = 0;
	double v = mape(make_forecast({0, 2}, {7, 1}), &skipped);
	CHECK(v == doctest::Approx(50.0)); // zero-truth term skipped, count adjusted
	CHECK(skipped == 1);

	CHECK_THROWS_AS((void)mape(make_forecast({0, 0}, {1, 2})), UndefinedMetricError);
}

TEST_CASE("mase hand value, seasonal-naive identity, degenerate cases") {
	CHECK(mase(make_forecast({1, 3}, {2, 2}, 1)) == doctest::Approx(0.5));

	// predictions equal to the within-window seasonal shift give (H - s) / H;
	// verified against a brute-force evaluation of the printed formula
	std::vector<double> y{2.0, 5.0, 3.0, 7.0, 4.0, 6.0};
	std::size_t s = 2, H = y.size();
	std::vector<double> p(H);
	for (std::size_t h = 0; h < H; ++h)
		p[h] = h < s ? y[h] : y[h - s];
	double got = mase(make_forecast(y, p, s));

	double denom = 0.0;
	for (std::size_t j = s; j < H; ++j)
		denom += std::fabs(y[j] - y[j - s]);
	denom /= double(H - s);
	double brute = 0.0;
	for (std::size_t h = 0; h < H; ++h)
		brute += std::fabs(y[h] - p[h]) / denom;
	brute /= double(H);
	CHECK(got == doctest::Approx(brute).epsilon(1e-12));
	CHECK(got == doctest::Approx(double(H - s) / double(H)).epsilon(1e-12));

	CHECK_THROWS_AS((void)mase(make_forecast({5, 5, 5}, {1, 2, 3}, 1)), UndefinedMetricError);
	CHECK_THROWS_AS((void)mase(make_forecast({1, 2}, {1, 2}, 2)), UndefinedMetricError);
}

TEST_CASE("naive2 reference forecasts") {
	Series hist;
	hist.T = 4;
	hist.C = 1;
	hist.values = {1, 2, 3, 4};

	// s = 1 repeats the last value
	Forecast f1 = naive2(hist, 3, 1, {9, 9, 9});
	CHECK(f1.predicted == std::vector<double>{4, 4, 4});

	// s = 2 cycles the last season: [3, 4, 3]
	Forecast f2 = naive2(hist, 3, 2, {9, 9, 9});
	CHECK(f2.predicted == std::vector<double>{3, 4, 3});

	// exactly periodic history with period s: the reference is perfect
	Series periodic;
	periodic.T = 8;
	periodic.C = 1;
	periodic.values = {1, 2, 3, 4, 1, 2, 3, 4};
	std::vector<double> actual{1, 2, 3, 4, 1, 2};
	Forecast fp = naive2(periodic, 6, 4, actual);
	CHECK(fp.predicted == actual);

	CHECK_THROWS_AS((void)naive2(hist, 2, 9, {0, 0}), UndefinedMetricError);
}

TEST_CASE("owa hand values") {
	CHECK(owa(10.0, 1.5, 10.0, 1.5) == doctest::Approx(1.0)); // candidate == reference
	CHECK(owa(5.0, 0.75, 10.0, 1.5) == doctest::Approx(0.5));
	CHECK(owa(8.0, 1.2, 10.0, 1.0) == doctest::Approx(1.0)); // ratios 0.8 and 1.2
	CHECK_THROWS_AS((void)owa(1.0, 1.0, 0.0, 1.0), UndefinedMetricError);
}

TEST_CASE("metrics are nonnegative and zero on perfect forecasts; smape capped at 200") {
	Rng rng = Rng::stream(81, "test/metric-props");
	for (int trial = 0; trial < 100; ++trial) {
		std::size_t H = 4 + rng.below(8);
		std::vector<double> y(H), p(H);
		for (std::size_t h = 0; h < H; ++h) {
			y[h] = rng.uniform(-5.0, 5.0);
			p[h] = rng.uniform(-5.0, 5.0);
		}
		auto f = make_forecast(y, p, 1);
		auto [m, a] = mse_mae(f);
		CHECK(m >= 0.0);
		CHECK(a >= 0.0);
		double sm = smape(f);
		CHECK(sm >= 0.0);
		CHECK(sm <= 200.0 + 1e-12);

		auto pf = make_forecast(y, y, 1);
		auto [pm, pa] = mse_mae(pf);
		CHECK(pm == doctest::Approx(0.0));
		CHECK(pa == doctest::Approx(0.0));
		CHECK(smape(pf) == doctest::Approx(0.0));
	}
}

TEST_CASE("mse/mae are permutation invariant over entries") {
	Rng rng = Rng::stream(82, "test/metric-perm");
	std::vector<double> y(12), p(12);
	for (std::size_t i = 0; i < 12; ++i) {
		y[i] = rng.uniform(-3.0, 3.0);
		p[i] = rng.uniform(-3.0, 3.0);
	}
	auto [m0, a0] = mse_mae(make_forecast(y, p));
	// rotate both by the same offset
	std::rotate(y.begin(), y.begin() + 5, y.end());
	std::rotate(p.begin(), p.begin() + 5, p.end());
	auto [m1, a1] = mse_mae(make_forecast(y, p));
	CHECK(m0 == doctest::Approx(m1).epsilon(1e-12));
	CHECK(a0 == doctest::Approx(a1).epsilon(1e-12));
}

TEST_CASE("scaling behavior: MASE scale-free, MSE quadratic, MAE linear") {
	Rng rng = Rng::stream(83, "test/metric-scale");
	std::size_t H = 9, s = 2;
	std::vector<double> y(H), p(H);
	for (std::size_t i = 0; i < H; ++i) {
		y[i] = rng.uniform(1.0, 5.0);
		p[i] = rng.uniform(1.0, 5.0);
	}
	double k = 3.5;
	std::vector<double> ys(H), ps(H), ya(H), pa(H);
	for (std::size_t i = 0; i < H; ++i) {
		ys[i] = k * y[i];
		ps[i] = k * p[i];
		ya[i] = k * y[i] + 11.0; // full affine for MASE
		pa[i] = k * p[i] + 11.0;
	}

	auto base = make_forecast(y, p, s);
	auto scaled = make_forecast(ys, ps, s);
	auto affine = make_forecast(ya, pa, s);

	CHECK(mase(scaled) == doctest::Approx(mase(base)).epsilon(1e-9));
	CHECK(mase(affine) == doctest::Approx(mase(base)).epsilon(1e-9)); // shifts cancel too
	CHECK(smape(scaled) == doctest::Approx(smape(base)).epsilon(1e-9));

	auto [m0, a0] = mse_mae(base);
	auto [m1, a1] = mse_mae(scaled);
	CHECK(m1 == doctest::Approx(k * k * m0).epsilon(1e-9));
	CHECK(a1 == doctest::Approx(k * a0).epsilon(1e-9));

	// OWA against a shared reference is scale-free as well
	Series hist;
	hist.T = 6;
	hist.C = 1;
	hist.values = {1, 2, 3, 1, 2, 3};
	Forecast ref = naive2(hist, H, s, y);
	Series hist_s = hist;
	for (double &v : hist_s.values)
		v *= k;
	Forecast ref_s = naive2(hist_s, H, s, ys);
	double o0 = owa(smape(base), mase(base), smape(ref), mase(ref));
	double o1 = owa(smape(scaled), mase(scaled), smape(ref_s), mase(ref_s));
	CHECK(o0 == doctest::Approx(o1).epsilon(1e-9));
}

TEST_CASE("accumulator aggregates windows and excludes undefined MASE") {
	MetricAccumulator acc;
	Series hist;
	hist.T = 6;
	hist.C = 1;
	hist.values = {1, 2, 1, 2, 1, 2};

	auto cand = make_forecast({1, 2, 3, 5}, {1.5, 2.5, 0.5, 1.5}, 2);
	acc.add(cand, naive2(hist, 4, 2, cand.actual));

	auto degenerate = make_forecast({3, 3, 3, 3}, {3, 3, 2, 3}, 2); // zero seasonal denominator
	acc.add(degenerate, naive2(hist, 4, 2, degenerate.actual));

	auto rec = acc.finalize("unit", "eval", 4, 7);
	CHECK(rec.windows == 2);
	CHECK(rec.mase_excluded_windows == 1);
	CHECK(rec.smape.has_value());
	CHECK(rec.mase.has_value());
	CHECK(rec.owa.has_value());

	std::string json = metrics_record_json(rec);
	CHECK(json.find("\"dataset\":\"unit\"") != std::string::npos);
	CHECK(json.find("\"windows\":2") != std::string::npos);
}

TEST_CASE("accumulator OWA is exactly 1 when the candidate is Naive2 itself") {
	MetricAccumulator acc;
	Rng rng = Rng::stream(84, "test/owa-self");
	for (int w = 0; w < 5; ++w) {
		Series hist;
		hist.T = 8;
		hist.C = 1;
		hist.values.resize(8);
		for (double &v : hist.values)
			v = rng.uniform(1.0, 9.0);
		std::vector<double> actual(6);
		for (double &v : actual)
			v = rng.uniform(1.0, 9.0);
		Forecast ref = naive2(hist, 6, 2, actual);
		acc.add(ref, ref);
	}
	auto rec = acc.finalize("self", "eval", 6, 1);
	REQUIRE(rec.owa.has_value());
	CHECK(*rec.owa == doctest::Approx(1.0).epsilon(1e-12));
}

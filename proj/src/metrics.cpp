#include "tsdistill/metrics.hpp"

#include <cmath>

#include <json.hpp>

namespace tsd {

namespace {

void validate(const Forecast &f) {
	if (f.horizon == 0 || f.channels == 0)
		throw UndefinedMetricError("forecast has no entries");
	if (f.actual.size() != f.horizon * f.channels || f.predicted.size() != f.actual.size())
		throw ShapeError("forecast blocks must both be horizon x channels");
	if (f.seasonality < 1)
		throw UndefinedMetricError("seasonality must be >= 1");
}

} // namespace

std::pair<double, double> mse_mae(const Forecast &f) {
	validate(f);
	double mse_total = 0.0, mae_total = 0.0;
	for (std::size_t c = 0; c < f.channels; ++c) {
		double se = 0.0, ae = 0.0;
		for (std::size_t h = 0; h < f.horizon; ++h) {
			double d = f.actual[h * f.channels + c] - f.predicted[h * f.channels + c];
			se += d * d;
			ae += std::fabs(d);
		}
		mse_total += se / double(f.horizon);
		mae_total += ae / double(f.horizon);
	}
	return {mse_total / double(f.channels), mae_total / double(f.channels)};
}

double smape(const Forecast &f, std::size_t *guarded_terms) {
	validate(f);
	std::size_t guarded = 0;
	double total = 0.0;
	for (std::size_t c = 0; c < f.channels; ++c) {
		double acc = 0.0;
		for (std::size_t h = 0; h < f.horizon; ++h) {
			double y = f.actual[h * f.channels + c];
			double p = f.predicted[h * f.channels + c];
			double denom = std::fabs(y) + std::fabs(p);
			if (denom == 0.0) {
				++guarded; // both zero: the term is defined as 0
				continue;
			}
			acc += std::fabs(y - p) / denom;
		}
		total += 200.0 * acc / double(f.horizon);
	}
	if (guarded_terms)
		*guarded_terms = guarded;
	return total / double(f.channels);
}

double mape(const Forecast &f, std::size_t *skipped_terms) {
	validate(f);
	std::size_t skipped = 0;
	double total = 0.0;
	for (std::size_t c = 0; c < f.channels; ++c) {
		double acc = 0.0;
		std::size_t count = 0;
		for (std::size_t h = 0; h < f.horizon; ++h) {
			double y = f.actual[h * f.channels + c];
			double p = f.predicted[h * f.channels + c];
			if (y == 0.0) {
				++skipped; // term skipped, count adjusted
				continue;
			}
			acc += std::fabs(y - p) / std::fabs(y);
			++count;
		}
		if (count == 0)
			throw UndefinedMetricError("mape undefined: all ground-truth values are zero");
		total += 100.0 * acc / double(count);
	}
	if (skipped_terms)
		*skipped_terms = skipped;
	return total / double(f.channels);
}

double mase(const Forecast &f) {
	validate(f);
	std::size_t s = f.seasonality;
	if (f.horizon <= s)
		throw UndefinedMetricError("mase undefined: horizon must exceed the seasonality");
	double total = 0.0;
	for (std::size_t c = 0; c < f.channels; ++c) {
		// denominator: mean seasonal difference of the ground truth over the
		// forecast window, exactly as printed
		double denom = 0.0;
		for (std::size_t j = s; j < f.horizon; ++j)
			denom += std::fabs(f.actual[j * f.channels + c] - f.actual[(j - s) * f.channels + c]);
		denom /= double(f.horizon - s);
		if (denom == 0.0)
			throw UndefinedMetricError("mase undefined: zero seasonal denominator");
		double acc = 0.0;
		for (std::size_t h = 0; h < f.horizon; ++h)
			acc += std::fabs(f.actual[h * f.channels + c] - f.predicted[h * f.channels + c]) / denom;
		total += acc / double(f.horizon);
	}
	return total / double(f.channels);
}

Forecast naive2(const Series &history, std::size_t horizon, std::size_t seasonality,
                const std::vector<double> &actual) {
	if (seasonality < 1)
		throw UndefinedMetricError("naive2: seasonality must be >= 1");
	if (history.T < seasonality)
		throw UndefinedMetricError("naive2: history shorter than one season");
	if (actual.size() != horizon * history.C)
		throw ShapeError("naive2: actual block size mismatch");
	Forecast f;
	f.horizon = horizon;
	f.channels = history.C;
	f.seasonality = seasonality;
	f.actual = actual;
	f.predicted.resize(horizon * history.C);
	for (std::size_t h = 0; h < horizon; ++h) {
		// repeat the last full season of the history
		std::size_t src_t = history.T - seasonality + (h % seasonality);
		for (std::size_t c = 0; c < history.C; ++c)
			f.predicted[h * history.C + c] = history.at(src_t, c);
	}
	return f;
}

double owa(double smape_value, double mase_value, double smape_ref, double mase_ref) {
	if (smape_ref == 0.0 || mase_ref == 0.0)
		throw UndefinedMetricError("owa undefined: zero reference metric");
	return 0.5 * (smape_value / smape_ref + mase_value / mase_ref);
}

void MetricAccumulator::add(const Forecast &candidate, const Forecast &reference) {
	auto [m, a] = mse_mae(candidate);
	mse_sum += m;
	mae_sum += a;
	smape_sum += smape(candidate);
	ref_smape_sum += smape(reference);
	try {
		mape_sum += mape(candidate);
		++n_mape;
	} catch (const UndefinedMetricError &) {
	}
	try {
		double cand = mase(candidate);
		double ref = mase(reference);
		mase_sum += cand;
		ref_mase_sum += ref;
		++n_mase;
	} catch (const UndefinedMetricError &) {
		++mase_excluded;
	}
	++n;
}

MetricsRecord MetricAccumulator::finalize(std::string dataset, std::string mode,
                                          std::size_t horizon, std::uint64_t seed) const {
	if (n == 0)
		throw UndefinedMetricError("no windows evaluated");
	MetricsRecord r;
	r.dataset = std::move(dataset);
	r.mode = std::move(mode);
	r.horizon = horizon;
	r.seed = seed;
	r.windows = n;
	r.mase_excluded_windows = mase_excluded;
	r.mse = mse_sum / double(n);
	r.mae = mae_sum / double(n);
	r.smape = smape_sum / double(n);
	if (n_mape > 0)
		r.mape = mape_sum / double(n_mape);
	if (n_mase > 0) {
		r.mase = mase_sum / double(n_mase);
		double ref_smape = ref_smape_sum / double(n);
		double ref_mase = ref_mase_sum / double(n_mase);
		if (ref_smape != 0.0 && ref_mase != 0.0)
			r.owa = owa(*r.smape, *r.mase, ref_smape, ref_mase);
	}
	return r;
}

std::string metrics_record_json(const MetricsRecord &r) {
	nlohmann::ordered_json j;
	j["dataset"] = r.dataset;
	j["mode"] = r.mode;
	j["horizon"] = r.horizon;
	j["seed"] = r.seed;
	j["mse"] = r.mse;
	j["mae"] = r.mae;
	auto opt = [](const std::optional<double> &v) {
		return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
	};
	j["smape"] = opt(r.smape);
	j["mape"] = opt(r.mape);
	j["mase"] = opt(r.mase);
	j["owa"] = opt(r.owa);
	j["windows"] = r.windows;
	j["mase_excluded_windows"] = r.mase_excluded_windows;
	return j.dump();
}

} // namespace tsd

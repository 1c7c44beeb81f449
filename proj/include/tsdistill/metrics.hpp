#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "tsdistill/series.hpp"

namespace tsd {

/// Ground truth and prediction over one horizon, denormalized.
/// Values are H x D row-major; s is the periodicity used by MASE/OWA.
struct Forecast {
	std::vector<double> actual;
	std::vector<double> predicted;
	std::size_t horizon = 0;
	std::size_t channels = 1;
	std::size_t seasonality = 1;
};

struct MetricAccumulator; // forward

/// Per-channel metric, averaged over channels (unweighted).
std::pair<double, double> mse_mae(const Forecast &f);
/// (200/H) sum |Y - Yhat| / (|Y| + |Yhat|); both-zero terms contribute 0.
/// `guarded_terms` (optional out) counts the skipped terms.
double smape(const Forecast &f, std::size_t *guarded_terms = nullptr);
/// (100/count) over terms with Y != 0; throws UndefinedMetricError when every
/// term of some channel is zero.
double mape(const Forecast &f, std::size_t *skipped_terms = nullptr);
/// Paper-form MASE: per-step ratios against the seasonal denominator computed
/// over the forecast window itself. Throws UndefinedMetricError when H <= s or
/// the denominator is zero.
double mase(const Forecast &f);
/// Seasonal-naive reference forecast from the window's history block.
Forecast naive2(const Series &history, std::size_t horizon, std::size_t seasonality,
                const std::vector<double> &actual);
/// OWA = 0.5 (SMAPE/SMAPE_ref + MASE/MASE_ref). Zero reference metric throws.
double owa(double smape_value, double mase_value, double smape_ref, double mase_ref);

/// Aggregated evaluation record; unavailable metrics stay unset.
struct MetricsRecord {
	std::string dataset;
	std::string mode;
	std::size_t horizon = 0;
	std::uint64_t seed = 0;
	double mse = 0.0;
	double mae = 0.0;
	std::optional<double> smape;
	std::optional<double> mape;
	std::optional<double> mase;
	std::optional<double> owa;
	std::size_t windows = 0;
	std::size_t mase_excluded_windows = 0; // undefined MASE (H <= s or zero denominator)
};

/// Accumulates per-window metrics and the Naive2 reference for OWA.
struct MetricAccumulator {
	double mse_sum = 0.0, mae_sum = 0.0;
	double smape_sum = 0.0, ref_smape_sum = 0.0;
	double mase_sum = 0.0, ref_mase_sum = 0.0;
	double mape_sum = 0.0;
	std::size_t n = 0;
	std::size_t n_mape = 0;
	std::size_t n_mase = 0; // windows where both candidate and reference MASE exist
	std::size_t mase_excluded = 0;

	void add(const Forecast &candidate, const Forecast &reference);
	MetricsRecord finalize(std::string dataset, std::string mode, std::size_t horizon,
	                       std::uint64_t seed) const;
};

std::string metrics_record_json(const MetricsRecord &r);

} // namespace tsd

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tsdistill/config.hpp"
#include "tsdistill/distill.hpp"
#include "tsdistill/metrics.hpp"
#include "tsdistill/model.hpp"
#include "tsdistill/series.hpp"

namespace tsd {

struct PreparedData {
	SeriesSplits splits;
	std::vector<SeriesWindow> train_windows, val_windows, test_windows; // normalized
	std::size_t channels = 0;
};

PreparedData prepare_data(const RunConfig &cfg);

ForecasterConfig make_teacher_config(const RunConfig &cfg, std::size_t channels);
ForecasterConfig make_student_config(const RunConfig &cfg, std::size_t channels);

struct EpochStats {
	double train_loss = 0.0;
	double val_mse = 0.0;
};

/// One step of the distillation stream (serialized as a JSON line).
struct StepRecord {
	std::size_t step = 0;
	std::array<std::optional<double>, 4> raw;        // fd, fcst, recon, cd
	std::array<std::optional<double>, 4> normalized; // values actually weighted
	std::array<double, 4> weights{};
	double tau = 0.0;
	std::vector<double> beta_softmax; // empty when no aligner
	std::optional<double> alignment_score;
	std::optional<EffectivenessReport> effectiveness;
	double total = 0.0;
	double regularization = 0.0;
	std::size_t fd_zero_norm_rows = 0;
};

struct RunRecord {
	std::string mode;
	std::string dataset;
	std::uint64_t seed = 0;
	std::string config_snapshot;
	std::vector<EpochStats> epochs;
	std::size_t best_epoch = 0;
	std::optional<std::size_t> convergence_step; // first step the weight trajectory stabilized
	MetricsRecord metrics;                       // deployed model: teacher (train) / student (distill)
	std::optional<MetricsRecord> teacher_metrics; // jointly trained teacher, distill mode
	double wall_seconds = 0.0;
	std::vector<double> fcst_loss_trace;  // raw per-step student forecasting loss
	std::vector<double> recon_loss_trace; // raw per-step teacher reconstruction loss
	std::vector<double> total_loss_trace;
	std::vector<StepRecord> steps;
};

RunRecord run_train(const RunConfig &cfg);
RunRecord run_distill(const RunConfig &cfg);
MetricsRecord run_eval(const RunConfig &cfg);
std::vector<std::string> run_render(const RunConfig &cfg, std::size_t window_index);

struct GradCheckItem {
	std::string name;
	bool pass = false;
	double max_rel_err = 0.0;
};
/// Per-op finite-difference suite plus the frozen-target end-to-end objective.
/// `inject_fault` deliberately breaks the named op's backward rule (test hook).
std::vector<GradCheckItem> run_gradcheck(const std::string &inject_fault = "");

/// Test metrics of a trained model over the prepared test windows.
MetricsRecord evaluate_model(const Forecaster &model, const PreparedData &data,
                             const RunConfig &cfg, const std::string &mode_label);

std::string step_record_json(const StepRecord &r);
std::string run_record_json(const RunRecord &r);

} // namespace tsd

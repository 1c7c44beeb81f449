#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "tsdistill/params.hpp"
#include "tsdistill/rng.hpp"
#include "tsdistill/tensor.hpp"

namespace tsd {

/// Order of the four loss components everywhere in this module.
enum LossComponent : std::size_t { kFd = 0, kFcst = 1, kRecon = 2, kCd = 3 };

struct DistillConfig {
	std::array<double, 4> init_weights{0.01, 1.0, 0.5, 0.01}; // fd, fcst, recon, cd
	double init_temperature = 4.0;
	double tau_min = 1.0;
	double tau_max = 10.0;
	double gamma = 0.001;      // weight regularization coefficient
	double loss_momentum = 0.9;
	double lambda_mse = 1.0, lambda_cos = 1.0, lambda_kl = 1.0;
	double lambda_distill = 1.0; // outer multiplier on the transfer terms
	std::size_t n_scales = 3;
	double alignment_dropout = 0.1;
	std::size_t warmup_steps = 10;      // raw losses while trackers warm up
	std::size_t convergence_window = 10; // K
	double convergence_eps = 1e-4;
	// fixed binary mask on w = exp(theta_w); 0 pins a component weight to exactly 0
	std::array<double, 4> weight_mask{1.0, 1.0, 1.0, 1.0};

	void validate() const;
};

/// Multi-pathway student-to-teacher projection with softmax-weighted mixing.
class PyramidAligner {
public:
	PyramidAligner(std::size_t d_student, std::size_t d_teacher, std::size_t n_scales,
	               double dropout, ParamSet &params, const std::string &prefix, std::uint64_t seed);

	Tensor align(const Tensor &f_student /* B x d_s */, bool training, Rng &dropout_rng) const;

	Tensor pathway_logits() const { return beta_; } // learnable beta
	Tensor pathway_weights() const;                 // softmax(beta)
	std::vector<std::size_t> hidden_dims() const;

private:
	std::size_t d_student_, d_teacher_, n_scales_;
	double dropout_;
	std::vector<Linear> first_, second_;
	Tensor beta_;
};

/// Learnable distillation parameters plus the EMA/convergence bookkeeping.
class DistillState {
public:
	DistillState(const DistillConfig &cfg, ParamSet &params, const std::string &prefix);

	Tensor theta_w() const { return theta_w_; }
	Tensor theta_tau() const { return theta_tau_; }

	/// w = mask .* exp(theta_w), in-graph.
	Tensor weights() const;
	/// tau = tau_min + (tau_max - tau_min) * sigmoid(theta_tau), in-graph.
	Tensor temperature() const;
	std::array<double, 4> weight_values() const;
	double temperature_value() const;

	/// EMA trackers: L_bar <- mu L_bar + (1-mu)|L|, first update initializes.
	void update_tracker(LossComponent which, double loss_value);
	std::optional<double> tracker(LossComponent which) const { return trackers_[which]; }
	std::size_t steps_tracked() const { return steps_tracked_; }
	void mark_step_tracked() { ++steps_tracked_; }
	bool in_warmup() const { return steps_tracked_ < cfg_.warmup_steps; }

	void push_weight_history(const std::array<double, 4> &w);
	const std::deque<std::array<double, 4>> &weight_history() const { return history_; }

	const DistillConfig &config() const { return cfg_; }

private:
	DistillConfig cfg_;
	Tensor theta_w_;
	Tensor theta_tau_;
	std::array<std::optional<double>, 4> trackers_;
	std::deque<std::array<double, 4>> history_;
	std::size_t steps_tracked_ = 0;
};

// ---- losses ----

/// tau = tau_min + (tau_max - tau_min) * sigmoid(theta_tau); the init that
/// solves tau = t0 is logit((t0 - tau_min) / (tau_max - tau_min)).
double initial_theta_tau(double t0, double tau_min = 1.0, double tau_max = 10.0);

/// gamma * sum w_i^2, in-graph.
Tensor weight_regularization(const Tensor &w, double gamma);

/// Temperature-scaled KL alignment of attention maps. Rows are re-tempered as
/// softmax(log(clamp(P, 1e-12)) / tau); KL(teacher || student) is averaged
/// over rows within a sample, summed over the batch, and scaled by tau^2 / B.
/// The teacher matrix is treated as a constant; tau stays in the graph.
Tensor correlation_distill(const Tensor &p_teacher, const Tensor &p_student, const Tensor &tau);

struct FeatureDistillResult {
	Tensor loss;
	Tensor mse, cosine, kl;      // components (for logging/tests)
	std::size_t zero_norm_rows = 0; // cosine fallbacks taken (logged by the caller)
};

/// lambda_MSE * mean((F_S - F_T)^2) + lambda_cos * mean(1 - cos) +
/// lambda_KL * mean_B KL(softmax(F_T/tau) || softmax(F_S/tau)).
/// Zero-norm rows contribute cosine term 1 exactly and no gradient.
FeatureDistillResult feature_distill(const Tensor &f_student_aligned, const Tensor &f_teacher,
                                     const Tensor &tau, double lambda_mse, double lambda_cos,
                                     double lambda_kl);

/// L / (tracker + 1e-8); the tracker is a constant in the graph.
Tensor normalize_loss(const Tensor &loss, double tracker);

/// L_fcst + lambda_distill * L_distill.
Tensor student_objective(const Tensor &l_fcst, const Tensor &l_distill, double lambda_distill);

struct TotalLossParts {
	Tensor total;
	std::array<double, 4> raw;        // component values before normalization
	std::array<double, 4> normalized; // values actually weighted (== raw in warmup)
	std::array<double, 4> weights;
	double regularization;
};

/// Assembles w1 n_fd + w2 n_fcst + w3 n_recon + w4 n_cd (+ lambda_distill on
/// the transfer terms) + L_reg. Pass an undefined Tensor for fd/cd to build
/// the transfer-free objective; their weighted terms are then absent rather
/// than zero-valued.
TotalLossParts total_distill_loss(const std::array<Tensor, 4> &components, DistillState &state);

// ---- monitoring ----

enum class Convergence { NotDeterminable, NotConverged, Converged };

/// Mean L2 change of the weight vector over the last K steps against eps.
/// Needs K+1 history entries to be determinable.
Convergence check_convergence(const std::deque<std::array<double, 4>> &history, std::size_t K,
                              double eps);

struct StepSnapshot {
	double l_fcst = 0.0, l_fd = 0.0;
	double tau = 0.0;
	std::array<double, 4> weights{};
};

struct EffectivenessReport {
	std::optional<double> dfcst_dfd;  // finite-difference surrogate; nullopt when dL_fd == 0
	std::optional<double> dfcst_dtau; // nullopt when dtau == 0
	double weight_change = 0.0;       // ||w_t - w_{t-1}||_2
};

EffectivenessReport monitor(const StepSnapshot &prev, const StepSnapshot &cur);

} // namespace tsd

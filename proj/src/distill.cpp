#include "tsdistill/distill.hpp"

#include <algorithm>
#include <cmath>

namespace tsd {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kNormEps = 1e-8;

/// log-softmax along the last axis with the usual max shift; stable for the
/// clamped-log logits used in correlation distillation.
Tensor log_softmax_last(const Tensor &x) {
	std::size_t axis = x.rank() - 1;
	Tensor m = max_axis(x, axis, true).detach();
	Tensor shifted = x - m;
	Tensor lse = log(sum_axis(exp(shifted), axis, true));
	return shifted - lse;
}

} // namespace

void DistillConfig::validate() const {
	for (double w : init_weights)
		if (!(w > 0.0))
			throw ConfigError("initial distillation weights must be positive");
	if (!(tau_min >= 1.0) || !(tau_max > tau_min))
		throw ConfigError("temperature bounds must satisfy 1 <= tau_min < tau_max");
	if (init_temperature <= tau_min || init_temperature >= tau_max)
		throw ConfigError("initial temperature must lie strictly inside the bounds");
	if (gamma < 0.0)
		throw ConfigError("weight regularization coefficient must be nonnegative");
	if (loss_momentum < 0.0 || loss_momentum >= 1.0)
		throw ConfigError("loss momentum must lie in [0, 1)");
	if (n_scales == 0)
		throw ConfigError("at least one alignment scale is required");
	if (alignment_dropout < 0.0 || alignment_dropout >= 1.0)
		throw ConfigError("alignment dropout must lie in [0, 1)");
	if (!(lambda_distill >= 0.0))
		throw ConfigError("lambda_distill must be nonnegative");
	for (double m : weight_mask)
		if (m != 0.0 && m != 1.0)
			throw ConfigError("weight mask entries must be 0 or 1");
}

// ---- PyramidAligner ----

PyramidAligner::PyramidAligner(std::size_t d_student, std::size_t d_teacher, std::size_t n_scales,
                               double dropout, ParamSet &params, const std::string &prefix,
                               std::uint64_t seed)
    : d_student_(d_student), d_teacher_(d_teacher), n_scales_(n_scales), dropout_(dropout) {
	if (n_scales == 0)
		throw ConfigError("pyramid aligner needs at least one scale");
	for (std::size_t i = 0; i < n_scales; ++i) {
		std::size_t h = std::max<std::size_t>(1, std::max(d_student, d_teacher) >> i);
		std::string base = prefix + ".scale" + std::to_string(i);
		first_.push_back(Linear::create(params, base + ".in", d_student, h, seed));
		second_.push_back(Linear::create(params, base + ".out", h, d_teacher, seed));
	}
	beta_ = params.add(prefix + ".beta", Tensor::zeros({n_scales}));
}

std::vector<std::size_t> PyramidAligner::hidden_dims() const {
	std::vector<std::size_t> dims;
	for (std::size_t i = 0; i < n_scales_; ++i)
		dims.push_back(std::max<std::size_t>(1, std::max(d_student_, d_teacher_) >> i));
	return dims;
}

Tensor PyramidAligner::pathway_weights() const { return softmax(beta_, 0); }

Tensor PyramidAligner::align(const Tensor &f_student, bool training, Rng &dropout_rng) const {
	if (f_student.rank() != 2 || f_student.shape()[1] != d_student_)
		throw ShapeError("pyramid align: expected [B, " + std::to_string(d_student_) + "]");
	Tensor w = pathway_weights(); // n_scales, sums to 1
	Tensor out;
	double p = training ? dropout_ : 0.0;
	for (std::size_t i = 0; i < n_scales_; ++i) {
		Tensor hidden = dropout(gelu(first_[i].apply(f_student)), p, dropout_rng);
		Tensor projected = second_[i].apply(hidden); // B x d_t
		Tensor wi = index_map(w, {1}, {i});
		Tensor term = projected * wi;
		out = i == 0 ? term : out + term;
	}
	return out;
}

// ---- DistillState ----

DistillState::DistillState(const DistillConfig &cfg, ParamSet &params, const std::string &prefix)
    : cfg_(cfg) {
	cfg.validate();
	std::vector<double> logw(4);
	for (std::size_t i = 0; i < 4; ++i)
		logw[i] = std::log(cfg.init_weights[i]);
	theta_w_ = params.add(prefix + ".theta_w", Tensor::from_data({4}, std::move(logw)));
	theta_tau_ = params.add(
	    prefix + ".theta_tau",
	    Tensor::from_data({1}, {initial_theta_tau(cfg.init_temperature, cfg.tau_min, cfg.tau_max)}));
}

Tensor DistillState::weights() const {
	Tensor mask = Tensor::from_data({4}, {cfg_.weight_mask[0], cfg_.weight_mask[1],
	                                      cfg_.weight_mask[2], cfg_.weight_mask[3]});
	return exp(theta_w_) * mask;
}

Tensor DistillState::temperature() const {
	return shift(scale(sigmoid(theta_tau_), cfg_.tau_max - cfg_.tau_min), cfg_.tau_min);
}

std::array<double, 4> DistillState::weight_values() const {
	Tensor w = weights();
	return {w.data()[0], w.data()[1], w.data()[2], w.data()[3]};
}

double DistillState::temperature_value() const { return temperature().value(); }

void DistillState::update_tracker(LossComponent which, double loss_value) {
	double mag = std::fabs(loss_value);
	if (!trackers_[which])
		trackers_[which] = mag;
	else
		trackers_[which] = cfg_.loss_momentum * *trackers_[which] +
		                   (1.0 - cfg_.loss_momentum) * mag;
}

void DistillState::push_weight_history(const std::array<double, 4> &w) {
	history_.push_back(w);
	// only the convergence window plus one predecessor is ever needed
	std::size_t cap = cfg_.convergence_window + 1;
	while (history_.size() > cap)
		history_.pop_front();
}

// ---- losses ----

double initial_theta_tau(double t0, double tau_min, double tau_max) {
	double u = (t0 - tau_min) / (tau_max - tau_min);
	if (!(u > 0.0) || !(u < 1.0))
		throw ConfigError("initial temperature outside the open bounds");
	return std::log(u / (1.0 - u));
}

Tensor weight_regularization(const Tensor &w, double gamma) {
	if (gamma < 0.0)
		throw ConfigError("weight regularization coefficient must be nonnegative");
	return scale(sum(w * w), gamma);
}

Tensor correlation_distill(const Tensor &p_teacher, const Tensor &p_student, const Tensor &tau) {
	if (p_teacher.shape() != p_student.shape())
		throw ShapeError("correlation distill: attention shapes differ, " +
		                 shape_str(p_teacher.shape()) + " vs " + shape_str(p_student.shape()));
	if (p_teacher.rank() != 3)
		throw ShapeError("correlation distill: expected [B, T', T']");
	std::size_t B = p_teacher.shape()[0];

	Tensor tea_const = p_teacher.detach(); // knowledge flows one way
	Tensor logits_tea = log(clamp_min(tea_const, kProbFloor)) / tau;
	Tensor logits_stu = log(clamp_min(p_student, kProbFloor)) / tau;
	Tensor lsm_tea = log_softmax_last(logits_tea);
	Tensor lsm_stu = log_softmax_last(logits_stu);

	Tensor row_kl = sum_axis(exp(lsm_tea) * (lsm_tea - lsm_stu), 2, false); // B x T'
	Tensor per_sample = mean_axis(row_kl, 1, false);                        // averaged over rows
	return (tau * tau) * scale(sum(per_sample), 1.0 / double(B));           // summed over batch
}

FeatureDistillResult feature_distill(const Tensor &f_student_aligned, const Tensor &f_teacher,
                                     const Tensor &tau, double lambda_mse, double lambda_cos,
                                     double lambda_kl) {
	if (f_student_aligned.shape() != f_teacher.shape())
		throw ShapeError("feature distill: shapes differ, " + shape_str(f_student_aligned.shape()) +
		                 " vs " + shape_str(f_teacher.shape()));
	if (f_student_aligned.rank() != 2)
		throw ShapeError("feature distill: expected [B, d]");
	std::size_t B = f_student_aligned.shape()[0];

	Tensor f_t = f_teacher.detach();
	Tensor diff = f_student_aligned - f_t;
	Tensor mse = mean(diff * diff);

	// cosine with zero-norm guard: degenerate rows contribute exactly 1 - 0
	Tensor dot = sum_axis(f_student_aligned * f_t, 1, false); // B
	Tensor ns = sqrt(sum_axis(f_student_aligned * f_student_aligned, 1, false));
	Tensor nt = sqrt(sum_axis(f_t * f_t, 1, false));
	std::vector<double> mask(B), guard(B);
	std::size_t zero_rows = 0;
	for (std::size_t b = 0; b < B; ++b) {
		bool degenerate = ns.data()[b] == 0.0 || nt.data()[b] == 0.0;
		mask[b] = degenerate ? 0.0 : 1.0;
		guard[b] = degenerate ? 1.0 : 0.0;
		zero_rows += degenerate ? 1u : 0u;
	}
	Tensor mask_t = Tensor::from_data({B}, std::move(mask));
	Tensor guard_t = Tensor::from_data({B}, std::move(guard));
	Tensor cos_sim = (dot * mask_t) / (ns * nt + guard_t);
	Tensor cosine = mean(shift(neg(cos_sim), 1.0));

	Tensor lsm_t = log_softmax_last(f_t / tau);
	Tensor lsm_s = log_softmax_last(f_student_aligned / tau);
	Tensor kl = scale(sum(sum_axis(exp(lsm_t) * (lsm_t - lsm_s), 1, false)), 1.0 / double(B));

	FeatureDistillResult out;
	out.mse = mse;
	out.cosine = cosine;
	out.kl = kl;
	out.zero_norm_rows = zero_rows;
	out.loss = scale(mse, lambda_mse) + scale(cosine, lambda_cos) + scale(kl, lambda_kl);
	return out;
}

Tensor normalize_loss(const Tensor &loss, double tracker) {
	if (tracker < 0.0)
		throw DomainError("normalize_loss: tracker must be nonnegative");
	return scale(loss, 1.0 / (tracker + kNormEps));
}

Tensor student_objective(const Tensor &l_fcst, const Tensor &l_distill, double lambda_distill) {
	return l_fcst + scale(l_distill, lambda_distill);
}

TotalLossParts total_distill_loss(const std::array<Tensor, 4> &components, DistillState &state) {
	const DistillConfig &cfg = state.config();
	bool warmup = state.in_warmup();

	TotalLossParts parts;
	parts.weights = state.weight_values();

	std::array<Tensor, 4> normed;
	for (std::size_t i = 0; i < 4; ++i) {
		if (!components[i].defined())
			continue;
		parts.raw[i] = components[i].value();
		auto tr = state.tracker(static_cast<LossComponent>(i));
		normed[i] = (warmup || !tr) ? components[i] : normalize_loss(components[i], *tr);
		parts.normalized[i] = normed[i].value();
	}

	Tensor w = state.weights();
	auto weighted = [&](std::size_t i) { return normed[i] * index_map(w, {1}, {i}); };

	if (!normed[kFcst].defined() || !normed[kRecon].defined())
		throw std::logic_error("total_distill_loss: forecasting and reconstruction terms required");
	Tensor total = weighted(kFcst) + weighted(kRecon);
	if (normed[kFd].defined() || normed[kCd].defined()) {
		if (!normed[kFd].defined() || !normed[kCd].defined())
			throw std::logic_error("total_distill_loss: fd and cd must be supplied together");
		total = total + scale(weighted(kFd) + weighted(kCd), cfg.lambda_distill);
	}
	Tensor reg = weight_regularization(w, cfg.gamma);
	parts.regularization = reg.value();
	parts.total = total + reg;
	return parts;
}

// ---- monitoring ----

Convergence check_convergence(const std::deque<std::array<double, 4>> &history, std::size_t K,
                              double eps) {
	if (history.size() < K + 1)
		return Convergence::NotDeterminable;
	double acc = 0.0;
	std::size_t start = history.size() - K;
	for (std::size_t k = start; k < history.size(); ++k) {
		double d2 = 0.0;
		for (std::size_t i = 0; i < 4; ++i) {
			double d = history[k][i] - history[k - 1][i];
			d2 += d * d;
		}
		acc += std::sqrt(d2);
	}
	return (acc / double(K)) < eps ? Convergence::Converged : Convergence::NotConverged;
}

EffectivenessReport monitor(const StepSnapshot &prev, const StepSnapshot &cur) {
	EffectivenessReport rep;
	double dfd = cur.l_fd - prev.l_fd;
	double dfcst = cur.l_fcst - prev.l_fcst;
	double dtau = cur.tau - prev.tau;
	if (dfd != 0.0)
		rep.dfcst_dfd = dfcst / dfd;
	if (dtau != 0.0)
		rep.dfcst_dtau = dfcst / dtau;
	double d2 = 0.0;
	for (std::size_t i = 0; i < 4; ++i) {
		double d = cur.weights[i] - prev.weights[i];
		d2 += d * d;
	}
	rep.weight_change = std::sqrt(d2);
	return rep;
}

} // namespace tsd

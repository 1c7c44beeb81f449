#include "tsdistill/optimizer.hpp"

#include <cmath>

namespace tsd {

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWConfig cfg)
    : cfg_(cfg), params_(std::move(params)) {
	m_.resize(params_.size());
	v_.resize(params_.size());
	for (std::size_t i = 0; i < params_.size(); ++i) {
		m_[i].assign(params_[i].second.numel(), 0.0);
		v_[i].assign(params_[i].second.numel(), 0.0);
	}
}

void AdamW::step() {
	++t_;
	double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
	double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
	for (std::size_t i = 0; i < params_.size(); ++i) {
		auto &[name, p] = params_[i];
		if (!p.has_grad())
			throw NumericError("missing gradient for parameter " + name);
		const auto &g = p.grad();
		bool all_zero = true;
		for (double gv : g)
			if (gv != 0.0) {
				all_zero = false;
				break;
			}
		if (all_zero)
			continue; // zero gradients leave the parameter untouched
		auto &data = p.leaf_data();
		for (std::size_t j = 0; j < data.size(); ++j) {
			m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
			v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
			double mhat = m_[i][j] / bc1;
			double vhat = v_[i][j] / bc2;
			data[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * data[j]);
		}
	}
}

void AdamW::zero_grads() const {
	for (const auto &[name, p] : params_)
		p.zero_grad();
}

DualOptimizer::DualOptimizer(std::vector<std::pair<std::string, Tensor>> model_params,
                             std::vector<std::pair<std::string, Tensor>> distill_params, double lr,
                             double ratio, AdamWConfig base)
    : model_([&] {
	      AdamWConfig c = base;
	      c.lr = lr;
	      return AdamW(std::move(model_params), c);
      }()),
      distill_([&] {
	      AdamWConfig c = base;
	      c.lr = lr * ratio;
	      return AdamW(std::move(distill_params), c);
      }()) {}

void DualOptimizer::step() {
	model_.step();
	distill_.step();
}

void DualOptimizer::zero_grads() const {
	model_.zero_grads();
	distill_.zero_grads();
}

} // namespace tsd

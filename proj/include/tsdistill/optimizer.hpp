#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tsdistill/tensor.hpp"

namespace tsd {

struct AdamWConfig {
	double lr = 1e-3;
	double beta1 = 0.9;
	double beta2 = 0.999;
	double eps = 1e-8;
	double weight_decay = 1e-4; // decoupled
};

/// Adaptive-moment optimizer with decoupled weight decay. A parameter whose
/// gradient is exactly all-zero this step is skipped entirely (no moment
/// update, no decay), so zero gradients leave parameters unchanged.
class AdamW {
public:
	AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWConfig cfg);

	/// One update from the current gradients. A parameter with no gradient
	/// storage at all raises NumericError naming it (backward never reached it).
	void step();
	void zero_grads() const;
	std::size_t steps_taken() const { return t_; }
	const AdamWConfig &config() const { return cfg_; }

private:
	AdamWConfig cfg_;
	std::vector<std::pair<std::string, Tensor>> params_;
	std::vector<std::vector<double>> m_, v_;
	std::size_t t_ = 0;
};

/// Two optimizers over disjoint parameter groups driven by one gradient
/// snapshot: model parameters at lr, distillation parameters at ratio * lr.
/// Update order: model first, then distillation.
class DualOptimizer {
public:
	DualOptimizer(std::vector<std::pair<std::string, Tensor>> model_params,
	              std::vector<std::pair<std::string, Tensor>> distill_params, double lr,
	              double ratio, AdamWConfig base = {});

	void step();
	void zero_grads() const;
	double model_lr() const { return model_.config().lr; }
	double distill_lr() const { return distill_.config().lr; }

private:
	AdamW model_;
	AdamW distill_;
};

} // namespace tsd

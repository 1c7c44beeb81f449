#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tsdistill/tensor.hpp"

namespace tsd {

struct GradCheckReport {
	bool pass = false;
	double max_rel_err = 0.0;
	std::size_t worst_index = 0; // flat coordinate of the worst disagreement
	double analytic_at_worst = 0.0;
	double numeric_at_worst = 0.0;
};

/// Central-difference check of a scalar-valued tensor function.
///
/// Relative error per coordinate is |analytic - numeric| / max(1, |analytic|,
/// |numeric|), so near-zero gradients are compared absolutely. `f` must be
/// evaluable repeatedly; it receives a fresh leaf each call.
GradCheckReport grad_check(const std::function<Tensor(const Tensor &)> &f, const Tensor &x,
                           double h = 1e-5, double tol = 1e-4);

/// Same protocol for a function of many named leaves: analytic gradients come
/// from one backward pass, numeric ones from perturbing each coordinate of
/// each leaf in place.
struct MultiGradCheckItem {
	std::string name;
	GradCheckReport report;
};

std::vector<MultiGradCheckItem>
grad_check_many(const std::function<Tensor()> &f, const std::vector<std::pair<std::string, Tensor>> &leaves,
                double h = 1e-5, double tol = 1e-4);

} // namespace tsd

#pragma once

#include <cmath>
#include <vector>

#include "tsdistill/rng.hpp"
#include "tsdistill/tensor.hpp"

namespace tsd::testing {

inline Tensor random_tensor(Shape shape, Rng &rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
	std::vector<double> data(shape_numel(shape));
	for (double &v : data)
		v = rng.uniform(lo, hi);
	return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

/// Random values bounded away from zero (for relu/abs kink avoidance).
inline Tensor random_tensor_away_from(Shape shape, Rng &rng, double margin) {
	std::vector<double> data(shape_numel(shape));
	for (double &v : data) {
		double m = rng.uniform(margin, 1.0);
		v = rng.uniform() < 0.5 ? -m : m;
	}
	return Tensor::from_data(std::move(shape), std::move(data), false);
}

inline bool approx_equal(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

inline bool all_close(const std::vector<double> &a, const std::vector<double> &b, double tol) {
	if (a.size() != b.size())
		return false;
	for (std::size_t i = 0; i < a.size(); ++i)
		if (!approx_equal(a[i], b[i], tol))
			return false;
	return true;
}

} // namespace tsd::testing

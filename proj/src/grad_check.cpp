#include "tsdistill/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace tsd {

namespace {

double rel_err(double analytic, double numeric) {
	double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
	return std::fabs(analytic - numeric) / denom;
}

} // namespace

GradCheckReport grad_check(const std::function<Tensor(const Tensor &)> &f, const Tensor &x,
                           double h, double tol) {
	Tensor leaf = Tensor::from_data(x.shape(), x.data(), true);
	Tensor out = f(leaf);
	if (out.numel() != 1)
		throw std::invalid_argument("grad_check: f must be scalar-valued");
	backward(out);
	std::vector<double> analytic = leaf.has_grad() ? leaf.grad() : std::vector<double>(x.numel(), 0.0);

	GradCheckReport rep;
	std::vector<double> work = x.data();
	for (std::size_t i = 0; i < work.size(); ++i) {
		double keep = work[i];
		work[i] = keep + h;
		double fp = f(Tensor::from_data(x.shape(), work, false)).value();
		work[i] = keep - h;
		double fm = f(Tensor::from_data(x.shape(), work, false)).value();
		work[i] = keep;
		double numeric = (fp - fm) / (2.0 * h);
		double e = rel_err(analytic[i], numeric);
		if (e >= rep.max_rel_err) {
			rep.max_rel_err = e;
			rep.worst_index = i;
			rep.analytic_at_worst = analytic[i];
			rep.numeric_at_worst = numeric;
		}
	}
	rep.pass = rep.max_rel_err <= tol;
	return rep;
}

std::vector<MultiGradCheckItem>
grad_check_many(const std::function<Tensor()> &f,
                const std::vector<std::pair<std::string, Tensor>> &leaves, double h, double tol) {
	for (const auto &[name, t] : leaves) {
		(void)name;
		t.zero_grad();
	}
	Tensor out = f();
	if (out.numel() != 1)
		throw std::invalid_argument("grad_check_many: f must be scalar-valued");
	backward(out);

	std::vector<MultiGradCheckItem> items;
	for (const auto &[name, t] : leaves) {
		std::vector<double> analytic =
		    t.has_grad() ? t.grad() : std::vector<double>(t.numel(), 0.0);
		GradCheckReport rep;
		// perturb the live leaf in place; f() re-reads it on every call
		auto &data = t.leaf_data();
		for (std::size_t i = 0; i < data.size(); ++i) {
			double keep = data[i];
			data[i] = keep + h;
			double fp = f().value();
			data[i] = keep - h;
			double fm = f().value();
			data[i] = keep;
			double numeric = (fp - fm) / (2.0 * h);
			double e = rel_err(analytic[i], numeric);
			if (e >= rep.max_rel_err) {
				rep.max_rel_err = e;
				rep.worst_index = i;
				rep.analytic_at_worst = analytic[i];
				rep.numeric_at_worst = numeric;
			}
		}
		rep.pass = rep.max_rel_err <= tol;
		items.push_back({name, rep});
	}
	return items;
}

} // namespace tsd

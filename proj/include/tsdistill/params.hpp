#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tsdistill/rng.hpp"
#include "tsdistill/tensor.hpp"

namespace tsd {

/// Named collection of trainable tensors with deterministic iteration order.
class ParamSet {
public:
	Tensor add(const std::string &name, Tensor t) {
		if (has(name))
			throw std::logic_error("duplicate parameter name: " + name);
		t.set_requires_grad(true);
		items_.emplace_back(name, t);
		return t;
	}

	bool has(const std::string &name) const {
		for (const auto &[n, t] : items_)
			if (n == name)
				return true;
		return false;
	}

	Tensor get(const std::string &name) const {
		for (const auto &[n, t] : items_)
			if (n == name)
				return t;
		throw std::logic_error("unknown parameter: " + name);
	}

	const std::vector<std::pair<std::string, Tensor>> &items() const { return items_; }

	std::size_t total_count() const {
		std::size_t n = 0;
		for (const auto &[name, t] : items_)
			n += t.numel();
		return n;
	}

	std::size_t count_prefix(const std::string &prefix) const {
		std::size_t n = 0;
		for (const auto &[name, t] : items_)
			if (name.rfind(prefix, 0) == 0)
				n += t.numel();
		return n;
	}

	void zero_grads() const {
		for (const auto &[name, t] : items_)
			t.zero_grad();
	}

private:
	std::vector<std::pair<std::string, Tensor>> items_;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)); the stream is keyed by the
/// parameter name so init draws are independent of construction order.
inline Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                             std::uint64_t seed, const std::string &name) {
	Rng rng = Rng::stream(seed, "init/" + name);
	double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
	std::vector<double> data(shape_numel(shape));
	for (double &v : data)
		v = rng.uniform(-limit, limit);
	return Tensor::from_data(std::move(shape), std::move(data));
}

/// A dense layer y = x.W + b with W: [in, out].
struct Linear {
	Tensor W, b;

	static Linear create(ParamSet &params, const std::string &name, std::size_t in, std::size_t out,
	                     std::uint64_t seed) {
		Linear l;
		l.W = params.add(name + ".W", xavier_uniform({in, out}, in, out, seed, name + ".W"));
		l.b = params.add(name + ".b", Tensor::zeros({out}));
		return l;
	}

	Tensor apply(const Tensor &x) const { return matmul(x, W) + b; }
};

} // namespace tsd

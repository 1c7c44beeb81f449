#include "tsdistill/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace tsd {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr make_node(Shape shape, std::vector<double> data) {
	auto n = std::make_shared<detail::Node>();
	n->shape = std::move(shape);
	n->data = std::move(data);
	return n;
}

bool any_requires_grad(const std::vector<NodePtr> &parents) {
	for (const auto &p : parents)
		if (p->requires_grad)
			return true;
	return false;
}

std::vector<std::size_t> row_major_strides(const Shape &shape) {
	std::vector<std::size_t> s(shape.size(), 1);
	for (std::size_t i = shape.size(); i-- > 1;)
		s[i - 1] = s[i] * shape[i];
	return s;
}

/// Strides of `in` viewed under the broadcast output shape `out`
/// (right-aligned; stride 0 on broadcast axes).
std::vector<std::size_t> broadcast_strides(const Shape &in, const Shape &out) {
	std::vector<std::size_t> strides(out.size(), 0);
	auto in_strides = row_major_strides(in);
	std::size_t off = out.size() - in.size();
	for (std::size_t i = 0; i < in.size(); ++i) {
		if (in[i] == out[off + i])
			strides[off + i] = in_strides[i];
		else if (in[i] == 1)
			strides[off + i] = 0;
		else
			throw ShapeError("broadcast mismatch: " + shape_str(in) + " vs " + shape_str(out));
	}
	return strides;
}

Shape broadcast_shape(const Shape &a, const Shape &b, const char *op) {
	const Shape &lo = a.size() <= b.size() ? a : b;
	const Shape &hi = a.size() <= b.size() ? b : a;
	Shape out = hi;
	std::size_t off = hi.size() - lo.size();
	for (std::size_t i = 0; i < lo.size(); ++i) {
		std::size_t x = lo[i], y = hi[off + i];
		if (x == y)
			continue;
		if (x == 1)
			continue;
		if (y == 1) {
			out[off + i] = x;
			continue;
		}
		throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
		                 shape_str(b));
	}
	return out;
}

/// Walks an output-shaped index space while tracking flat offsets into two
/// broadcast inputs. Avoids div/mod per element.
struct BroadcastIter {
	explicit BroadcastIter(const Shape &out) : shape(out), coord(out.size(), 0) {}

	const Shape &shape;
	std::vector<std::size_t> coord;

	template <class Fn> void run(const std::vector<std::size_t> &sa, const std::vector<std::size_t> &sb, Fn fn) {
		std::size_t total = shape_numel(shape);
		std::size_t ia = 0, ib = 0;
		for (std::size_t i = 0; i < total; ++i) {
			fn(i, ia, ib);
			for (std::size_t d = shape.size(); d-- > 0;) {
				if (++coord[d] < shape[d]) {
					ia += sa[d];
					ib += sb[d];
					break;
				}
				coord[d] = 0;
				ia -= sa[d] * (shape[d] - 1);
				ib -= sb[d] * (shape[d] - 1);
			}
		}
	}
};

struct BinaryRule {
	// value and the two partials at one element
	double (*eval)(double, double);
	void (*partials)(double a, double b, double out, double &da, double &db);
};

Tensor binary_op(const Tensor &a, const Tensor &b, const char *name, const BinaryRule &rule) {
	NodePtr na = a.node(), nb = b.node();
	Shape out_shape = broadcast_shape(na->shape, nb->shape, name);
	auto sa = broadcast_strides(na->shape, out_shape);
	auto sb = broadcast_strides(nb->shape, out_shape);

	std::vector<double> out(shape_numel(out_shape));
	BroadcastIter it(out_shape);
	const double *pa = na->data.data(), *pb = nb->data.data();
	it.run(sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
		out[i] = rule.eval(pa[ia], pb[ib]);
	});

	auto node = make_node(std::move(out_shape), std::move(out));
	node->parents = {na, nb};
	node->requires_grad = any_requires_grad(node->parents);
	if (node->requires_grad) {
		auto partials = rule.partials;
		node->backprop = [na, nb, sa, sb, partials](detail::Node &self) {
			bool wa = na->requires_grad, wb = nb->requires_grad;
			if (wa)
				na->ensure_grad();
			if (wb)
				nb->ensure_grad();
			const double *pa = na->data.data(), *pb = nb->data.data();
			const double *po = self.data.data(), *pg = self.grad.data();
			BroadcastIter it(self.shape);
			it.run(sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
				double g = pg[i];
				if (g == 0.0)
					return;
				double da, db;
				partials(pa[ia], pb[ib], po[i], da, db);
				if (wa)
					na->grad[ia] += da * g;
				if (wb)
					nb->grad[ib] += db * g;
			});
		};
	}
	return Tensor::wrap(node);
}

struct UnaryRule {
	double (*eval)(double);
	double (*deriv)(double x, double y); // may use either input or output
};

Tensor unary_op(const Tensor &a, const char * /*name*/, const UnaryRule &rule) {
	NodePtr na = a.node();
	std::vector<double> out(na->numel());
	for (std::size_t i = 0; i < out.size(); ++i)
		out[i] = rule.eval(na->data[i]);

	auto node = make_node(na->shape, std::move(out));
	node->parents = {na};
	node->requires_grad = na->requires_grad;
	if (node->requires_grad) {
		auto deriv = rule.deriv;
		node->backprop = [na, deriv](detail::Node &self) {
			na->ensure_grad();
			for (std::size_t i = 0; i < self.data.size(); ++i) {
				double g = self.grad[i];
				if (g == 0.0)
					continue;
				na->grad[i] += deriv(na->data[i], self.data[i]) * g;
			}
		};
	}
	return Tensor::wrap(node);
}

double stable_sigmoid(double x) {
	if (x >= 0.0)
		return 1.0 / (1.0 + std::exp(-x));
	double e = std::exp(x);
	return e / (1.0 + e);
}

} // namespace

std::size_t shape_numel(const Shape &shape) {
	std::size_t n = 1;
	for (std::size_t d : shape)
		n *= d;
	return n;
}

std::string shape_str(const Shape &shape) {
	std::ostringstream os;
	os << '[';
	for (std::size_t i = 0; i < shape.size(); ++i)
		os << (i ? "x" : "") << shape[i];
	os << ']';
	return os.str();
}

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
	return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
	for (std::size_t d : shape)
		if (d == 0)
			throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
	std::vector<double> data(shape_numel(shape), value);
	auto n = make_node(std::move(shape), std::move(data));
	n->requires_grad = requires_grad;
	return wrap(n);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
	for (std::size_t d : shape)
		if (d == 0)
			throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
	if (shape_numel(shape) != data.size())
		throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
		                 shape_str(shape));
	auto n = make_node(std::move(shape), std::move(data));
	n->requires_grad = requires_grad;
	return wrap(n);
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

std::vector<double> &Tensor::leaf_data() const {
	if (!node_->parents.empty())
		throw std::logic_error("leaf_data() called on a non-leaf tensor");
	return node_->data;
}

double Tensor::value() const {
	if (numel() != 1)
		throw std::invalid_argument("value() requires a scalar tensor, got " + shape_str(shape()));
	return node_->data[0];
}

void Tensor::set_requires_grad(bool v) const {
	if (v && !node_->parents.empty())
		throw std::logic_error("requires_grad can only be enabled on leaf tensors");
	node_->requires_grad = v;
}

const std::vector<double> &Tensor::grad() const {
	if (node_->grad.empty())
		throw std::logic_error("tensor has no gradient; call backward() first");
	return node_->grad;
}

void Tensor::zero_grad() const { node_->grad.clear(); }

Tensor Tensor::detach() const { return from_data(node_->shape, node_->data, false); }

bool Tensor::all_finite() const {
	for (double v : node_->data)
		if (!std::isfinite(v))
			return false;
	return true;
}

void Tensor::check_finite(const std::string &context) const {
	if (!all_finite())
		throw NumericError("non-finite values in " + context);
}

// ---- backward ----

void backward(const Tensor &root) {
	if (!root.defined() || root.numel() != 1)
		throw std::invalid_argument("backward() requires a scalar root");

	// iterative post-order DFS: children before parents in `topo`
	std::vector<detail::Node *> topo;
	std::unordered_set<detail::Node *> visited;
	struct Frame {
		detail::Node *node;
		std::size_t next_parent;
	};
	std::vector<Frame> stack{{root.node().get(), 0}};
	visited.insert(root.node().get());
	while (!stack.empty()) {
		Frame &f = stack.back();
		if (f.next_parent < f.node->parents.size()) {
			detail::Node *p = f.node->parents[f.next_parent++].get();
			if (visited.insert(p).second)
				stack.push_back({p, 0});
		} else {
			topo.push_back(f.node);
			stack.pop_back();
		}
	}

	// Interior accumulators are sweep-local; leaf grads persist across sweeps.
	for (detail::Node *n : topo)
		if (!n->parents.empty())
			n->grad.clear();

	detail::Node *r = root.node().get();
	r->ensure_grad();
	r->grad[0] += 1.0;

	for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
		detail::Node *n = *it;
		if (n->backprop && !n->grad.empty())
			n->backprop(*n);
	}
}

// ---- elementwise ----

Tensor add(const Tensor &a, const Tensor &b) {
	static const BinaryRule r{[](double x, double y) { return x + y; },
	                          [](double, double, double, double &da, double &db) {
		                          da = 1.0;
		                          db = 1.0;
	                          }};
	return binary_op(a, b, "add", r);
}

Tensor sub(const Tensor &a, const Tensor &b) {
	static const BinaryRule r{[](double x, double y) { return x - y; },
	                          [](double, double, double, double &da, double &db) {
		                          da = 1.0;
		                          db = -1.0;
	                          }};
	return binary_op(a, b, "sub", r);
}

Tensor mul(const Tensor &a, const Tensor &b) {
	static const BinaryRule r{[](double x, double y) { return x * y; },
	                          [](double x, double y, double, double &da, double &db) {
		                          da = y;
		                          db = x;
	                          }};
	return binary_op(a, b, "mul", r);
}

Tensor div(const Tensor &a, const Tensor &b) {
	for (double v : b.data())
		if (v == 0.0)
			throw DomainError("div: zero denominator");
	static const BinaryRule r{[](double x, double y) { return x / y; },
	                          [](double x, double y, double, double &da, double &db) {
		                          da = 1.0 / y;
		                          db = -x / (y * y);
	                          }};
	return binary_op(a, b, "div", r);
}

Tensor neg(const Tensor &a) {
	static const UnaryRule r{[](double x) { return -x; }, [](double, double) { return -1.0; }};
	return unary_op(a, "neg", r);
}

Tensor exp(const Tensor &a) {
	static const UnaryRule r{[](double x) { return std::exp(x); },
	                         [](double, double y) { return y; }};
	return unary_op(a, "exp", r);
}

Tensor log(const Tensor &a) {
	for (double v : a.data())
		if (!(v > 0.0))
			throw DomainError("log: input must be strictly positive");
	static const UnaryRule r{[](double x) { return std::log(x); },
	                         [](double x, double) { return 1.0 / x; }};
	return unary_op(a, "log", r);
}

Tensor sqrt(const Tensor &a) {
	for (double v : a.data())
		if (v < 0.0)
			throw DomainError("sqrt: input must be nonnegative");
	static const UnaryRule r{[](double x) { return std::sqrt(x); },
	                         [](double, double y) { return 0.5 / y; }};
	return unary_op(a, "sqrt", r);
}

Tensor abs(const Tensor &a) {
	static const UnaryRule r{[](double x) { return std::fabs(x); },
	                         [](double x, double) { return x >= 0.0 ? 1.0 : -1.0; }};
	return unary_op(a, "abs", r);
}

Tensor relu(const Tensor &a) {
	static const UnaryRule r{[](double x) { return x > 0.0 ? x : 0.0; },
	                         [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }};
	return unary_op(a, "relu", r);
}

Tensor sigmoid(const Tensor &a) {
	static const UnaryRule r{[](double x) { return stable_sigmoid(x); },
	                         [](double, double y) { return y * (1.0 - y); }};
	return unary_op(a, "sigmoid", r);
}

Tensor gelu(const Tensor &a) {
	static const UnaryRule r{
	    [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
	    [](double x, double) {
		    double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
		    return cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
	    }};
	return unary_op(a, "gelu", r);
}

Tensor clamp_min(const Tensor &a, double lo) {
	NodePtr na = a.node();
	std::vector<double> out(na->numel());
	for (std::size_t i = 0; i < out.size(); ++i)
		out[i] = std::max(na->data[i], lo);
	auto node = make_node(na->shape, std::move(out));
	node->parents = {na};
	node->requires_grad = na->requires_grad;
	if (node->requires_grad) {
		node->backprop = [na, lo](detail::Node &self) {
			na->ensure_grad();
			for (std::size_t i = 0; i < self.data.size(); ++i) {
				double g = self.grad[i];
				if (g != 0.0 && na->data[i] > lo)
					na->grad[i] += g;
			}
		};
	}
	return Tensor::wrap(node);
}

Tensor operator+(const Tensor &a, const Tensor &b) { return add(a, b); }
Tensor operator-(const Tensor &a, const Tensor &b) { return sub(a, b); }
Tensor operator*(const Tensor &a, const Tensor &b) { return mul(a, b); }
Tensor operator/(const Tensor &a, const Tensor &b) { return div(a, b); }
Tensor operator-(const Tensor &a) { return neg(a); }

Tensor scale(const Tensor &a, double c) {
	NodePtr na = a.node();
	std::vector<double> out(na->numel());
	for (std::size_t i = 0; i < out.size(); ++i)
		out[i] = na->data[i] * c;
	auto node = make_node(na->shape, std::move(out));
	node->parents = {na};
	node->requires_grad = na->requires_grad;
	if (node->requires_grad) {
		node->backprop = [na, c](detail::Node &self) {
			na->ensure_grad();
			for (std::size_t i = 0; i < self.data.size(); ++i) {
				double g = self.grad[i];
				if (g != 0.0)
					na->grad[i] += c * g;
			}
		};
	}
	return Tensor::wrap(node);
}

Tensor shift(const Tensor &a, double c) {
	NodePtr na = a.node();
	std::vector<double> out(na->numel());
	for (std::size_t i = 0; i < out.size(); ++i)
		out[i] = na->data[i] + c;
	auto node = make_node(na->shape, std::move(out));
	node->parents = {na};
	node->requires_grad = na->requires_grad;
	if (node->requires_grad) {
		node->backprop = [na](detail::Node &self) {
			na->ensure_grad();
			for (std::size_t i = 0; i < self.data.size(); ++i) {
				double g = self.grad[i];
				if (g != 0.0)
					na->grad[i] += g;
			}
		};
	}
	return Tensor::wrap(node);
}

// ---- reductions ----

Tensor sum(const Tensor &a) {
	NodePtr na = a.node();
	double acc = 0.0;
	for (double v : na->data)
		acc += v;
	auto node = make_node({1}, {acc});
	node->parents = {na};
	node->requires_grad = na->requires_grad;
	if (node->requires_grad) {
		node->backprop = [na](detail::Node &self) {
			na->ensure_grad();
			double g = self.grad[0];
			if (g == 0.0)
				return;
			for (double &gi : na->grad)
				gi += g;
		};
	}
	return Tensor::wrap(node);
}

Tensor mean(const Tensor &a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

namespace {

struct AxisSplit {
	std::size_t outer, n, inner;
};

AxisSplit axis_split(const Shape &shape, std::size_t axis) {
	if (axis >= shape.size())
		throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
	AxisSplit s{1, shape[axis], 1};
	for (std::size_t i = 0; i < axis; ++i)
		s.outer *= shape[i];
	for (std::size_t i = axis + 1; i < shape.size(); ++i)
		s.inner *= shape[i];
	return s;
}

Shape reduced_shape(const Shape &shape, std::size_t axis, bool keepdim) {
	Shape out = shape;
	if (keepdim)
		out[axis] = 1;
	else
		out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
	if (out.empty())
		out = {1};
	return out;
}

} // namespace

Tensor sum_axis(const Tensor &a, std::size_t axis, bool keepdim) {
	NodePtr na = a.node();
	AxisSplit s = axis_split(na->shape, axis);
	std::vector<double> out(s.outer * s.inner, 0.0);
	for (std::size_t o = 0; o < s.outer; ++o)
		for (std::size_t j = 0; j < s.n; ++j) {
			const double *src = na->data.data() + (o * s.n + j) * s.inner;
			double *dst = out.data() + o * s.inner;
			for (std::size_t i = 0; i < s.inner; ++i)
				dst[i] += src[i];
		}
	auto node = make_node(reduced_shape(na->shape, axis, keepdim), std::move(out));
	node->parents = {na};
	node->requires_grad = na->requires_grad;
	if (node->requires_grad) {
		node->backprop = [na, s](detail::Node &self) {
			na->ensure_grad();
			for (std::size_t o = 0; o < s.outer; ++o)
				for (std::size_t j = 0; j < s.n; ++j) {
					const double *g = self.grad.data() + o * s.inner;
					double *dst = na->grad.data() + (o * s.n + j) * s.inner;
					for (std::size_t i = 0; i < s.inner; ++i)
						dst[i] += g[i];
				}
		};
	}
	return Tensor::wrap(node);
}

Tensor mean_axis(const Tensor &a, std::size_t axis, bool keepdim) {
	double n = static_cast<double>(a.shape()[axis]);
	return scale(sum_axis(a, axis, keepdim), 1.0 / n);
}

namespace {

Tensor extreme_axis(const Tensor &a, std::size_t axis, bool keepdim, bool take_max) {
	NodePtr na = a.node();
	AxisSplit s = axis_split(na->shape, axis);
	std::vector<double> out(s.outer * s.inner);
	auto arg = std::make_shared<std::vector<std::size_t>>(s.outer * s.inner);
	for (std::size_t o = 0; o < s.outer; ++o)
		for (std::size_t i = 0; i < s.inner; ++i) {
			std::size_t best = (o * s.n) * s.inner + i;
			double bv = na->data[best];
			for (std::size_t j = 1; j < s.n; ++j) {
				std::size_t idx = (o * s.n + j) * s.inner + i;
				double v = na->data[idx];
				if (take_max ? (v > bv) : (v < bv)) {
					bv = v;
					best = idx;
				}
			}
			out[o * s.inner + i] = bv;
			(*arg)[o * s.inner + i] = best;
		}
	auto node = make_node(reduced_shape(na->shape, axis, keepdim), std::move(out));
	node->parents = {na};
	node->requires_grad = na->requires_grad;
	if (node->requires_grad) {
		node->backprop = [na, arg](detail::Node &self) {
			na->ensure_grad();
			for (std::size_t i = 0; i < self.data.size(); ++i) {
				double g = self.grad[i];
				if (g != 0.0)
					na->grad[(*arg)[i]] += g;
			}
		};
	}
	return Tensor::wrap(node);
}

} // namespace

Tensor max_axis(const Tensor &a, std::size_t axis, bool keepdim) {
	return extreme_axis(a, axis, keepdim, true);
}

Tensor min_axis(const Tensor &a, std::size_t axis, bool keepdim) {
	return extreme_axis(a, axis, keepdim, false);
}

// ---- movement ----

Tensor reshape(const Tensor &a, Shape shape) {
	if (shape_numel(shape) != a.numel())
		throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
	NodePtr na = a.node();
	auto node = make_node(std::move(shape), na->data);
	node->parents = {na};
	node->requires_grad = na->requires_grad;
	if (node->requires_grad) {
		node->backprop = [na](detail::Node &self) {
			na->ensure_grad();
			for (std::size_t i = 0; i < self.data.size(); ++i) {
				double g = self.grad[i];
				if (g != 0.0)
					na->grad[i] += g;
			}
		};
	}
	return Tensor::wrap(node);
}

Tensor permute(const Tensor &a, const std::vector<std::size_t> &axes) {
	NodePtr na = a.node();
	const Shape &in = na->shape;
	if (axes.size() != in.size())
		throw ShapeError("permute: axes rank mismatch");
	std::vector<bool> seen(in.size(), false);
	Shape out_shape(in.size());
	for (std::size_t i = 0; i < axes.size(); ++i) {
		if (axes[i] >= in.size() || seen[axes[i]])
			throw ShapeError("permute: invalid axis list");
		seen[axes[i]] = true;
		out_shape[i] = in[axes[i]];
	}
	auto in_strides = row_major_strides(in);
	std::vector<std::size_t> map(na->numel());
	std::vector<std::size_t> coord(out_shape.size(), 0);
	std::size_t src = 0;
	// odometer over output coords; src tracks the input flat offset
	std::vector<std::size_t> step(out_shape.size());
	for (std::size_t i = 0; i < axes.size(); ++i)
		step[i] = in_strides[axes[i]];
	for (std::size_t i = 0; i < map.size(); ++i) {
		map[i] = src;
		for (std::size_t d = out_shape.size(); d-- > 0;) {
			if (++coord[d] < out_shape[d]) {
				src += step[d];
				break;
			}
			coord[d] = 0;
			src -= step[d] * (out_shape[d] - 1);
		}
	}
	return index_map(a, std::move(out_shape), std::move(map));
}

Tensor concat(const std::vector<Tensor> &parts, std::size_t axis) {
	if (parts.empty())
		throw ShapeError("concat: no inputs");
	const Shape &base = parts[0].shape();
	if (axis >= base.size())
		throw ShapeError("concat: axis out of range");
	std::size_t total_axis = 0;
	for (const Tensor &p : parts) {
		if (p.rank() != base.size())
			throw ShapeError("concat: rank mismatch");
		for (std::size_t d = 0; d < base.size(); ++d)
			if (d != axis && p.shape()[d] != base[d])
				throw ShapeError("concat: shape mismatch off the concat axis");
		total_axis += p.shape()[axis];
	}
	Shape out_shape = base;
	out_shape[axis] = total_axis;

	AxisSplit so = axis_split(out_shape, axis);
	std::vector<double> out(shape_numel(out_shape));
	std::vector<NodePtr> nodes;
	std::vector<std::size_t> offsets; // start of each part along the axis
	std::size_t off = 0;
	for (const Tensor &p : parts) {
		nodes.push_back(p.node());
		offsets.push_back(off);
		std::size_t pn = p.shape()[axis];
		for (std::size_t o = 0; o < so.outer; ++o) {
			const double *src = p.data().data() + o * pn * so.inner;
			double *dst = out.data() + (o * so.n + off) * so.inner;
			std::copy(src, src + pn * so.inner, dst);
		}
		off += pn;
	}

	auto node = make_node(std::move(out_shape), std::move(out));
	node->parents = nodes;
	node->requires_grad = any_requires_grad(nodes);
	if (node->requires_grad) {
		std::size_t ax = axis;
		node->backprop = [nodes, offsets, so, ax](detail::Node &self) {
			for (std::size_t k = 0; k < nodes.size(); ++k) {
				const NodePtr &p = nodes[k];
				if (!p->requires_grad)
					continue;
				p->ensure_grad();
				std::size_t pn = p->shape[ax];
				for (std::size_t o = 0; o < so.outer; ++o) {
					const double *g = self.grad.data() + (o * so.n + offsets[k]) * so.inner;
					double *dst = p->grad.data() + o * pn * so.inner;
					for (std::size_t i = 0; i < pn * so.inner; ++i)
						dst[i] += g[i];
				}
			}
		};
	}
	return Tensor::wrap(node);
}

Tensor index_map(const Tensor &a, Shape out_shape, std::vector<std::size_t> index) {
	if (shape_numel(out_shape) != index.size())
		throw ShapeError("index_map: index length does not match output shape");
	NodePtr na = a.node();
	std::vector<double> out(index.size());
	for (std::size_t i = 0; i < index.size(); ++i)
		out[i] = na->data[index[i]];
	auto node = make_node(std::move(out_shape), std::move(out));
	node->parents = {na};
	node->requires_grad = na->requires_grad;
	if (node->requires_grad) {
		auto idx = std::make_shared<std::vector<std::size_t>>(std::move(index));
		node->backprop = [na, idx](detail::Node &self) {
			na->ensure_grad();
			for (std::size_t i = 0; i < self.data.size(); ++i) {
				double g = self.grad[i];
				if (g != 0.0)
					na->grad[(*idx)[i]] += g;
			}
		};
	}
	return Tensor::wrap(node);
}

Tensor replicate_pad(const Tensor &a, std::size_t n_axes, std::size_t pad) {
	if (pad == 0)
		return a;
	const Shape &in = a.shape();
	if (n_axes == 0 || n_axes > in.size())
		throw ShapeError("replicate_pad: invalid axis count");
	Shape out = in;
	for (std::size_t i = in.size() - n_axes; i < in.size(); ++i)
		out[i] += 2 * pad;
	auto in_strides = row_major_strides(in);
	std::vector<std::size_t> map(shape_numel(out));
	std::vector<std::size_t> coord(out.size(), 0);
	std::size_t first_padded = in.size() - n_axes;
	for (std::size_t i = 0; i < map.size(); ++i) {
		std::size_t src = 0;
		for (std::size_t d = 0; d < out.size(); ++d) {
			std::size_t c = coord[d];
			if (d >= first_padded) {
				c = c < pad ? 0 : std::min(c - pad, in[d] - 1);
			}
			src += c * in_strides[d];
		}
		map[i] = src;
		for (std::size_t d = out.size(); d-- > 0;) {
			if (++coord[d] < out[d])
				break;
			coord[d] = 0;
		}
	}
	return index_map(a, std::move(out), std::move(map));
}

// ---- composites ----

Tensor softmax(const Tensor &a, std::size_t axis) {
	Tensor m = max_axis(a, axis, true).detach(); // shift-invariant: exact zero gradient
	Tensor e = exp(a - m);
	Tensor s = sum_axis(e, axis, true);
	return e / s;
}

Tensor layer_norm(const Tensor &a, const Tensor &gain, const Tensor &bias, std::size_t axis,
                  double eps) {
	const Shape &in = a.shape();
	if (axis >= in.size())
		throw ShapeError("layer_norm: axis out of range");
	std::size_t d = in[axis];
	if (gain.numel() != d || bias.numel() != d)
		throw ShapeError("layer_norm: gain/bias must have the axis extent");
	Shape bshape(in.size(), 1);
	bshape[axis] = d;
	Tensor g = reshape(gain, bshape);
	Tensor b = reshape(bias, bshape);

	Tensor mu = mean_axis(a, axis, true);
	Tensor centered = a - mu;
	Tensor var = mean_axis(centered * centered, axis, true);
	Tensor y = centered / sqrt(shift(var, eps));
	return y * g + b;
}

Tensor smooth_l1(const Tensor &pred, const Tensor &target, double beta) {
	if (pred.shape() != target.shape())
		throw ShapeError("smooth_l1: shape mismatch " + shape_str(pred.shape()) + " vs " +
		                 shape_str(target.shape()));
	if (!(beta > 0.0))
		throw DomainError("smooth_l1: beta must be positive");
	Tensor d = pred - target;
	Tensor ad = abs(d);
	// branch mask captured from forward values; constant in the graph
	std::vector<double> m(ad.numel());
	for (std::size_t i = 0; i < m.size(); ++i)
		m[i] = ad.data()[i] < beta ? 1.0 : 0.0;
	Tensor mask = Tensor::from_data(ad.shape(), std::move(m));
	Tensor inv_mask = shift(neg(mask), 1.0);
	Tensor quad = scale(d * d, 0.5 / beta);
	Tensor lin = shift(ad, -0.5 * beta);
	return mean(mask * quad + inv_mask * lin);
}

Tensor dropout(const Tensor &a, double p, Rng &rng) {
	if (p < 0.0 || p >= 1.0)
		throw DomainError("dropout: rate must lie in [0, 1)");
	if (p == 0.0)
		return a;
	std::vector<double> m(a.numel());
	double keep = 1.0 / (1.0 - p);
	for (double &v : m)
		v = rng.uniform() >= p ? keep : 0.0;
	return a * Tensor::from_data(a.shape(), std::move(m));
}

} // namespace tsd

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tsdistill/errors.hpp"
#include "tsdistill/rng.hpp"

namespace tsd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape &shape);
std::string shape_str(const Shape &shape);

namespace detail {

/// One node of the reverse-mode tape. Nodes form a DAG through `parents`;
/// `backprop` pulls this node's gradient into its parents' accumulators.
/// Backward traverses the DAG in reverse topological order, visiting each
/// node exactly once, so a value used on several paths receives the sum of
/// all path gradients.
struct Node {
	Shape shape;
	std::vector<double> data;
	std::vector<double> grad; // empty until first accumulation; data.size() afterwards
	bool requires_grad = false;
	std::vector<std::shared_ptr<Node>> parents;
	std::function<void(Node &)> backprop;

	std::size_t numel() const { return data.size(); }
	void ensure_grad() {
		if (grad.size() != data.size())
			grad.assign(data.size(), 0.0);
	}
};

} // namespace detail

/// Dense n-dimensional double tensor participating in a reverse-mode
/// differentiation graph. Value-semantic handle: copies alias the same node.
class Tensor {
public:
	Tensor() = default;

	static Tensor zeros(Shape shape, bool requires_grad = false);
	static Tensor full(Shape shape, double value, bool requires_grad = false);
	static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
	static Tensor scalar(double value); // shape {1}, no grad

	bool defined() const { return node_ != nullptr; }
	const Shape &shape() const { return node_->shape; }
	std::size_t rank() const { return node_->shape.size(); }
	std::size_t numel() const { return node_->data.size(); }
	std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }

	const std::vector<double> &data() const { return node_->data; }
	/// Leaf-only mutation (optimizer updates, in-place init). Using it on an
	/// interior node would silently desynchronize the tape.
	std::vector<double> &leaf_data() const;

	double value() const; // scalar tensors only
	double at(std::size_t flat_index) const { return node_->data.at(flat_index); }

	bool requires_grad() const { return node_->requires_grad; }
	void set_requires_grad(bool v) const;
	bool has_grad() const { return !node_->grad.empty(); }
	const std::vector<double> &grad() const;
	void zero_grad() const;

	/// Same values, no history, no gradient.
	Tensor detach() const;

	bool all_finite() const;
	void check_finite(const std::string &context) const;

	// graph internals (used by ops and backward)
	std::shared_ptr<detail::Node> node() const { return node_; }
	static Tensor wrap(std::shared_ptr<detail::Node> node) {
		Tensor t;
		t.node_ = std::move(node);
		return t;
	}

private:
	std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode sweep from a scalar root. Gradients accumulate into every
/// requires_grad tensor reachable from the root; repeated calls keep
/// accumulating unless the grads are zeroed first.
void backward(const Tensor &root);

// ---- elementwise (binary ops broadcast: shapes right-aligned, each dim equal
//      or 1; the gradient is sum-reduced over broadcast axes) ----
Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor div(const Tensor &a, const Tensor &b); // any zero in b is a DomainError

Tensor neg(const Tensor &a);
Tensor exp(const Tensor &a);
Tensor log(const Tensor &a); // a > 0 elementwise, else DomainError
Tensor sqrt(const Tensor &a); // a >= 0 elementwise
Tensor abs(const Tensor &a);
Tensor relu(const Tensor &a);
Tensor sigmoid(const Tensor &a);
Tensor gelu(const Tensor &a); // exact erf form
Tensor clamp_min(const Tensor &a, double lo);

Tensor operator+(const Tensor &a, const Tensor &b);
Tensor operator-(const Tensor &a, const Tensor &b);
Tensor operator*(const Tensor &a, const Tensor &b);
Tensor operator/(const Tensor &a, const Tensor &b);
Tensor operator-(const Tensor &a);

/// a * c and a + c with a compile-time-constant scalar (no extra node inputs).
Tensor scale(const Tensor &a, double c);
Tensor shift(const Tensor &a, double c);

// ---- reductions ----
Tensor sum(const Tensor &a);  // scalar, shape {1}
Tensor mean(const Tensor &a); // scalar, shape {1}
Tensor sum_axis(const Tensor &a, std::size_t axis, bool keepdim = true);
Tensor mean_axis(const Tensor &a, std::size_t axis, bool keepdim = true);
Tensor max_axis(const Tensor &a, std::size_t axis, bool keepdim = true); // subgradient to first argmax
Tensor min_axis(const Tensor &a, std::size_t axis, bool keepdim = true);

// ---- movement ----
Tensor reshape(const Tensor &a, Shape shape);
Tensor permute(const Tensor &a, const std::vector<std::size_t> &axes);
Tensor concat(const std::vector<Tensor> &parts, std::size_t axis);
/// Gather: out.data[i] = a.data[index[i]]; backward scatter-adds.
Tensor index_map(const Tensor &a, Shape out_shape, std::vector<std::size_t> index);
/// Replicate-pad the trailing `n_axes` axes by `pad` on each side.
Tensor replicate_pad(const Tensor &a, std::size_t n_axes, std::size_t pad);

// ---- linear algebra / conv ----
/// a: [..., m, k] x b: [k, n] (shared) or [..., k, n] (matching leading dims).
Tensor matmul(const Tensor &a, const Tensor &b);
/// x: [B, C_in, L], kernel: [C_out, C_in, K]; zero padding; cross-correlation.
Tensor conv1d(const Tensor &x, const Tensor &kernel, std::size_t stride, std::size_t padding);
/// x: [B, C_in, H, W], kernel: [C_out, C_in, kh, kw]; zero padding; cross-correlation.
Tensor conv2d(const Tensor &x, const Tensor &kernel, std::size_t stride, std::size_t padding);
/// Corner-aligned bilinear resize of [B, C, h, w] to [B, C, H, W].
Tensor bilinear_resize(const Tensor &img, std::size_t out_h, std::size_t out_w);

// ---- neural-net composites ----
/// Numerically stable softmax along `axis` (max-subtracted).
Tensor softmax(const Tensor &a, std::size_t axis);
/// Per-slice standardization along `axis` with eps inside the sqrt, then gain/bias.
Tensor layer_norm(const Tensor &a, const Tensor &gain, const Tensor &bias, std::size_t axis,
                  double eps = 1e-5);
/// Mean over elements of the Huber-style loss with threshold `beta`.
Tensor smooth_l1(const Tensor &pred, const Tensor &target, double beta = 1.0);
/// Inverted dropout; draws one mask from `rng`. Identity when p == 0.
Tensor dropout(const Tensor &a, double p, Rng &rng);

} // namespace tsd

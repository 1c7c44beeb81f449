#include <algorithm>
#include <cmath>

#include "tsdistill/tensor.hpp"

namespace tsd {

namespace {

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr make_node(Shape shape, std::vector<double> data) {
	auto n = std::make_shared<detail::Node>();
	n->shape = std::move(shape);
	n->data = std::move(data);
	return n;
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_acc(const double *a, const double *b, double *c, std::size_t m, std::size_t k,
              std::size_t n) {
	for (std::size_t i = 0; i < m; ++i) {
		const double *arow = a + i * k;
		double *crow = c + i * n;
		for (std::size_t kk = 0; kk < k; ++kk) {
			double av = arow[kk];
			if (av == 0.0)
				continue;
			const double *brow = b + kk * n;
			for (std::size_t j = 0; j < n; ++j)
				crow[j] += av * brow[j];
		}
	}
}

// C[m,n] += A[m,k] * B^T where B is [n,k]
void gemm_bt_acc(const double *a, const double *b, double *c, std::size_t m, std::size_t k,
                 std::size_t n) {
	for (std::size_t i = 0; i < m; ++i) {
		const double *arow = a + i * k;
		double *crow = c + i * n;
		for (std::size_t j = 0; j < n; ++j) {
			const double *brow = b + j * k;
			double acc = 0.0;
			for (std::size_t kk = 0; kk < k; ++kk)
				acc += arow[kk] * brow[kk];
			crow[j] += acc;
		}
	}
}

// C[k,n] += A^T * B where A is [m,k], B is [m,n]
void gemm_at_acc(const double *a, const double *b, double *c, std::size_t m, std::size_t k,
                 std::size_t n) {
	for (std::size_t i = 0; i < m; ++i) {
		const double *arow = a + i * k;
		const double *brow = b + i * n;
		for (std::size_t kk = 0; kk < k; ++kk) {
			double av = arow[kk];
			if (av == 0.0)
				continue;
			double *crow = c + kk * n;
			for (std::size_t j = 0; j < n; ++j)
				crow[j] += av * brow[j];
		}
	}
}

} // namespace

Tensor matmul(const Tensor &a, const Tensor &b) {
	const Shape &sa = a.shape();
	const Shape &sb = b.shape();
	if (sa.size() < 2 || sb.size() < 2)
		throw ShapeError("matmul: operands must have rank >= 2");
	std::size_t m = sa[sa.size() - 2], k = sa[sa.size() - 1];
	std::size_t kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
	if (k != kb)
		throw ShapeError("matmul: inner dimensions differ, " + shape_str(sa) + " x " + shape_str(sb));

	std::size_t batch = 1;
	for (std::size_t i = 0; i + 2 < sa.size(); ++i)
		batch *= sa[i];
	bool shared_b = sb.size() == 2;
	if (!shared_b) {
		if (sb.size() != sa.size())
			throw ShapeError("matmul: batched operands must have equal rank");
		for (std::size_t i = 0; i + 2 < sa.size(); ++i)
			if (sa[i] != sb[i])
				throw ShapeError("matmul: batch dimensions differ");
	}

	Shape out_shape(sa.begin(), sa.end() - 2);
	out_shape.push_back(m);
	out_shape.push_back(n);

	NodePtr na = a.node(), nb = b.node();
	std::vector<double> out(batch * m * n, 0.0);
	for (std::size_t bi = 0; bi < batch; ++bi) {
		const double *pa = na->data.data() + bi * m * k;
		const double *pb = nb->data.data() + (shared_b ? 0 : bi * k * n);
		gemm_acc(pa, pb, out.data() + bi * m * n, m, k, n);
	}

	auto node = make_node(std::move(out_shape), std::move(out));
	node->parents = {na, nb};
	node->requires_grad = na->requires_grad || nb->requires_grad;
	if (node->requires_grad) {
		node->backprop = [na, nb, batch, m, k, n, shared_b](detail::Node &self) {
			if (na->requires_grad)
				na->ensure_grad();
			if (nb->requires_grad)
				nb->ensure_grad();
			for (std::size_t bi = 0; bi < batch; ++bi) {
				const double *g = self.grad.data() + bi * m * n;
				const double *pa = na->data.data() + bi * m * k;
				const double *pb = nb->data.data() + (shared_b ? 0 : bi * k * n);
				if (na->requires_grad) // dA = dC * B^T
					gemm_bt_acc(g, pb, na->grad.data() + bi * m * k, m, n, k);
				if (nb->requires_grad) // dB (+)= A^T * dC
					gemm_at_acc(pa, g, nb->grad.data() + (shared_b ? 0 : bi * k * n), m, k, n);
			}
		};
	}
	return Tensor::wrap(node);
}

Tensor conv1d(const Tensor &x, const Tensor &kernel, std::size_t stride, std::size_t padding) {
	const Shape &sx = x.shape();
	const Shape &sk = kernel.shape();
	if (sx.size() != 3 || sk.size() != 3)
		throw ShapeError("conv1d: expects x [B,C_in,L] and kernel [C_out,C_in,K]");
	std::size_t B = sx[0], cin = sx[1], L = sx[2];
	std::size_t cout = sk[0], kcin = sk[1], K = sk[2];
	if (cin != kcin)
		throw ShapeError("conv1d: channel mismatch");
	if (stride < 1)
		throw ShapeError("conv1d: stride must be >= 1");
	if (K > L + 2 * padding)
		throw ShapeError("conv1d: kernel larger than padded input");
	std::size_t lout = (L + 2 * padding - K) / stride + 1;

	NodePtr nx = x.node(), nk = kernel.node();
	std::vector<double> out(B * cout * lout, 0.0);
	const double *px = nx->data.data();
	const double *pk = nk->data.data();
	for (std::size_t b = 0; b < B; ++b)
		for (std::size_t co = 0; co < cout; ++co)
			for (std::size_t lo = 0; lo < lout; ++lo) {
				double acc = 0.0;
				std::ptrdiff_t base = static_cast<std::ptrdiff_t>(lo * stride) -
				                      static_cast<std::ptrdiff_t>(padding);
				for (std::size_t ci = 0; ci < cin; ++ci) {
					const double *xrow = px + (b * cin + ci) * L;
					const double *krow = pk + (co * cin + ci) * K;
					for (std::size_t t = 0; t < K; ++t) {
						std::ptrdiff_t li = base + static_cast<std::ptrdiff_t>(t);
						if (li >= 0 && li < static_cast<std::ptrdiff_t>(L))
							acc += xrow[li] * krow[t];
					}
				}
				out[(b * cout + co) * lout + lo] = acc;
			}

	auto node = make_node({B, cout, lout}, std::move(out));
	node->parents = {nx, nk};
	node->requires_grad = nx->requires_grad || nk->requires_grad;
	if (node->requires_grad) {
		node->backprop = [nx, nk, B, cin, L, cout, K, lout, stride, padding](detail::Node &self) {
			if (nx->requires_grad)
				nx->ensure_grad();
			if (nk->requires_grad)
				nk->ensure_grad();
			const double *px = nx->data.data();
			const double *pk = nk->data.data();
			for (std::size_t b = 0; b < B; ++b)
				for (std::size_t co = 0; co < cout; ++co)
					for (std::size_t lo = 0; lo < lout; ++lo) {
						double g = self.grad[(b * cout + co) * lout + lo];
						if (g == 0.0)
							continue;
						std::ptrdiff_t base = static_cast<std::ptrdiff_t>(lo * stride) -
						                      static_cast<std::ptrdiff_t>(padding);
						for (std::size_t ci = 0; ci < cin; ++ci) {
							for (std::size_t t = 0; t < K; ++t) {
								std::ptrdiff_t li = base + static_cast<std::ptrdiff_t>(t);
								if (li < 0 || li >= static_cast<std::ptrdiff_t>(L))
									continue;
								if (nx->requires_grad)
									nx->grad[(b * cin + ci) * L + li] += pk[(co * cin + ci) * K + t] * g;
								if (nk->requires_grad)
									nk->grad[(co * cin + ci) * K + t] += px[(b * cin + ci) * L + li] * g;
							}
						}
					}
		};
	}
	return Tensor::wrap(node);
}

Tensor conv2d(const Tensor &x, const Tensor &kernel, std::size_t stride, std::size_t padding) {
	const Shape &sx = x.shape();
	const Shape &sk = kernel.shape();
	if (sx.size() != 4 || sk.size() != 4)
		throw ShapeError("conv2d: expects x [B,C_in,H,W] and kernel [C_out,C_in,kh,kw]");
	std::size_t B = sx[0], cin = sx[1], H = sx[2], W = sx[3];
	std::size_t cout = sk[0], kcin = sk[1], kh = sk[2], kw = sk[3];
	if (cin != kcin)
		throw ShapeError("conv2d: channel mismatch");
	if (stride < 1)
		throw ShapeError("conv2d: stride must be >= 1");
	if (kh > H + 2 * padding || kw > W + 2 * padding)
		throw ShapeError("conv2d: kernel larger than padded input");
	std::size_t hout = (H + 2 * padding - kh) / stride + 1;
	std::size_t wout = (W + 2 * padding - kw) / stride + 1;

	NodePtr nx = x.node(), nk = kernel.node();
	std::vector<double> out(B * cout * hout * wout, 0.0);
	const double *px = nx->data.data();
	const double *pk = nk->data.data();
	for (std::size_t b = 0; b < B; ++b)
		for (std::size_t co = 0; co < cout; ++co)
			for (std::size_t ho = 0; ho < hout; ++ho)
				for (std::size_t wo = 0; wo < wout; ++wo) {
					double acc = 0.0;
					std::ptrdiff_t ybase = static_cast<std::ptrdiff_t>(ho * stride) -
					                       static_cast<std::ptrdiff_t>(padding);
					std::ptrdiff_t xbase = static_cast<std::ptrdiff_t>(wo * stride) -
					                       static_cast<std::ptrdiff_t>(padding);
					for (std::size_t ci = 0; ci < cin; ++ci) {
						const double *xpl = px + (b * cin + ci) * H * W;
						const double *kpl = pk + (co * cin + ci) * kh * kw;
						for (std::size_t ty = 0; ty < kh; ++ty) {
							std::ptrdiff_t yy = ybase + static_cast<std::ptrdiff_t>(ty);
							if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(H))
								continue;
							for (std::size_t tx = 0; tx < kw; ++tx) {
								std::ptrdiff_t xx = xbase + static_cast<std::ptrdiff_t>(tx);
								if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W))
									continue;
								acc += xpl[yy * W + xx] * kpl[ty * kw + tx];
							}
						}
					}
					out[((b * cout + co) * hout + ho) * wout + wo] = acc;
				}

	auto node = make_node({B, cout, hout, wout}, std::move(out));
	node->parents = {nx, nk};
	node->requires_grad = nx->requires_grad || nk->requires_grad;
	if (node->requires_grad) {
		node->backprop = [nx, nk, B, cin, H, W, cout, kh, kw, hout, wout, stride,
		                  padding](detail::Node &self) {
			if (nx->requires_grad)
				nx->ensure_grad();
			if (nk->requires_grad)
				nk->ensure_grad();
			const double *px = nx->data.data();
			const double *pk = nk->data.data();
			for (std::size_t b = 0; b < B; ++b)
				for (std::size_t co = 0; co < cout; ++co)
					for (std::size_t ho = 0; ho < hout; ++ho)
						for (std::size_t wo = 0; wo < wout; ++wo) {
							double g = self.grad[((b * cout + co) * hout + ho) * wout + wo];
							if (g == 0.0)
								continue;
							std::ptrdiff_t ybase = static_cast<std::ptrdiff_t>(ho * stride) -
							                       static_cast<std::ptrdiff_t>(padding);
							std::ptrdiff_t xbase = static_cast<std::ptrdiff_t>(wo * stride) -
							                       static_cast<std::ptrdiff_t>(padding);
							for (std::size_t ci = 0; ci < cin; ++ci) {
								double *xg = nx->requires_grad ? nx->grad.data() + (b * cin + ci) * H * W : nullptr;
								const double *xpl = px + (b * cin + ci) * H * W;
								double *kg = nk->requires_grad ? nk->grad.data() + (co * cin + ci) * kh * kw : nullptr;
								const double *kpl = pk + (co * cin + ci) * kh * kw;
								for (std::size_t ty = 0; ty < kh; ++ty) {
									std::ptrdiff_t yy = ybase + static_cast<std::ptrdiff_t>(ty);
									if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(H))
										continue;
									for (std::size_t tx = 0; tx < kw; ++tx) {
										std::ptrdiff_t xx = xbase + static_cast<std::ptrdiff_t>(tx);
										if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W))
											continue;
										if (xg)
											xg[yy * W + xx] += kpl[ty * kw + tx] * g;
										if (kg)
											kg[ty * kw + tx] += xpl[yy * W + xx] * g;
									}
								}
							}
						}
		};
	}
	return Tensor::wrap(node);
}

Tensor bilinear_resize(const Tensor &img, std::size_t out_h, std::size_t out_w) {
	const Shape &s = img.shape();
	if (s.size() != 4)
		throw ShapeError("bilinear_resize: expects [B,C,h,w]");
	if (out_h < 1 || out_w < 1)
		throw ShapeError("bilinear_resize: output extents must be positive");
	std::size_t B = s[0], C = s[1], h = s[2], w = s[3];

	// corner-aligned: source corners map exactly onto target corners
	double sy_scale = out_h > 1 ? static_cast<double>(h - 1) / static_cast<double>(out_h - 1) : 0.0;
	double sx_scale = out_w > 1 ? static_cast<double>(w - 1) / static_cast<double>(out_w - 1) : 0.0;

	struct Tap {
		std::size_t y0, y1, x0, x1;
		double wy, wx;
	};
	auto taps = std::make_shared<std::vector<Tap>>(out_h * out_w);
	for (std::size_t y = 0; y < out_h; ++y) {
		double sy = y * sy_scale;
		std::size_t y0 = static_cast<std::size_t>(sy);
		y0 = std::min(y0, h - 1);
		std::size_t y1 = std::min(y0 + 1, h - 1);
		double wy = sy - static_cast<double>(y0);
		for (std::size_t x = 0; x < out_w; ++x) {
			double sx = x * sx_scale;
			std::size_t x0 = static_cast<std::size_t>(sx);
			x0 = std::min(x0, w - 1);
			std::size_t x1 = std::min(x0 + 1, w - 1);
			double wx = sx - static_cast<double>(x0);
			(*taps)[y * out_w + x] = {y0, y1, x0, x1, wy, wx};
		}
	}

	NodePtr ni = img.node();
	std::vector<double> out(B * C * out_h * out_w);
	const double *pi = ni->data.data();
	for (std::size_t bc = 0; bc < B * C; ++bc) {
		const double *plane = pi + bc * h * w;
		double *dst = out.data() + bc * out_h * out_w;
		for (std::size_t i = 0; i < taps->size(); ++i) {
			const Tap &t = (*taps)[i];
			double top = plane[t.y0 * w + t.x0] * (1.0 - t.wx) + plane[t.y0 * w + t.x1] * t.wx;
			double bot = plane[t.y1 * w + t.x0] * (1.0 - t.wx) + plane[t.y1 * w + t.x1] * t.wx;
			dst[i] = top * (1.0 - t.wy) + bot * t.wy;
		}
	}

	auto node = make_node({B, C, out_h, out_w}, std::move(out));
	node->parents = {ni};
	node->requires_grad = ni->requires_grad;
	if (node->requires_grad) {
		node->backprop = [ni, taps, B, C, h, w, out_h, out_w](detail::Node &self) {
			ni->ensure_grad();
			for (std::size_t bc = 0; bc < B * C; ++bc) {
				double *gsrc = ni->grad.data() + bc * h * w;
				const double *g = self.grad.data() + bc * out_h * out_w;
				for (std::size_t i = 0; i < taps->size(); ++i) {
					double gv = g[i];
					if (gv == 0.0)
						continue;
					const Tap &t = (*taps)[i];
					gsrc[t.y0 * w + t.x0] += gv * (1.0 - t.wy) * (1.0 - t.wx);
					gsrc[t.y0 * w + t.x1] += gv * (1.0 - t.wy) * t.wx;
					gsrc[t.y1 * w + t.x0] += gv * t.wy * (1.0 - t.wx);
					gsrc[t.y1 * w + t.x1] += gv * t.wy * t.wx;
				}
			}
		};
	}
	return Tensor::wrap(node);
}

} // namespace tsd

#include "tsdistill/visual.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>

#include "tsdistill/params.hpp"

namespace tsd {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT.
void fft_radix2(std::vector<std::complex<double>> &a) {
	std::size_t n = a.size();
	for (std::size_t i = 1, j = 0; i < n; ++i) {
		std::size_t bit = n >> 1;
		for (; j & bit; bit >>= 1)
			j ^= bit;
		j ^= bit;
		if (i < j)
			std::swap(a[i], a[j]);
	}
	for (std::size_t len = 2; len <= n; len <<= 1) {
		double ang = -kTwoPi / static_cast<double>(len);
		std::complex<double> wl(std::cos(ang), std::sin(ang));
		for (std::size_t i = 0; i < n; i += len) {
			std::complex<double> w(1.0);
			for (std::size_t j = 0; j < len / 2; ++j) {
				auto u = a[i + j];
				auto v = a[i + j + len / 2] * w;
				a[i + j] = u + v;
				a[i + j + len / 2] = u - v;
				w *= wl;
			}
		}
	}
}

void dft_magnitude_line(const double *x, std::size_t L, double *out) {
	if (is_pow2(L)) {
		std::vector<std::complex<double>> buf(L);
		for (std::size_t t = 0; t < L; ++t)
			buf[t] = x[t];
		fft_radix2(buf);
		for (std::size_t k = 0; k < L; ++k)
			out[k] = std::abs(buf[k]);
		return;
	}
	for (std::size_t k = 0; k < L; ++k) {
		double re = 0.0, im = 0.0;
		for (std::size_t t = 0; t < L; ++t) {
			double ang = -kTwoPi * static_cast<double>(k) * static_cast<double>(t) /
			             static_cast<double>(L);
			re += x[t] * std::cos(ang);
			im += x[t] * std::sin(ang);
		}
		out[k] = std::hypot(re, im);
	}
}

} // namespace

void AugmentConfig::validate() const {
	if (h_hidden < 2 || h_hidden % 2 != 0)
		throw ConfigError("h_hidden must be even and >= 2 (the first 2-D conv halves it)");
	if (image_size < 2)
		throw ConfigError("image_size must be >= 2");
	if (c_img < 1)
		throw ConfigError("c_img must be >= 1");
	if (periodicity < 1)
		throw ConfigError("periodicity must be >= 1");
}

Tensor fft_magnitude(const Tensor &x) {
	const Shape &s = x.shape();
	if (s.empty())
		throw ShapeError("fft_magnitude: empty shape");
	std::size_t L = s.back();
	std::size_t lines = x.numel() / L;
	std::vector<double> out(x.numel());
	for (std::size_t i = 0; i < lines; ++i)
		dft_magnitude_line(x.data().data() + i * L, L, out.data() + i * L);
	return Tensor::from_data(s, std::move(out)); // constant: no gradient path
}

Tensor periodicity_encoding(std::size_t L, std::size_t P) {
	if (P < 1)
		throw ConfigError("periodicity_encoding: P must be >= 1");
	std::vector<double> data(L * 2);
	for (std::size_t t = 0; t < L; ++t) {
		// t mod P keeps the encoding exactly periodic
		double phase = kTwoPi * static_cast<double>(t % P) / static_cast<double>(P);
		data[t * 2] = std::sin(phase);
		data[t * 2 + 1] = std::cos(phase);
	}
	return Tensor::from_data({L, 2}, std::move(data));
}

Tensor enhance(const Tensor &x, std::size_t P) {
	const Shape &s = x.shape();
	if (s.size() != 3)
		throw ShapeError("enhance: expects [B, L, D]");
	std::size_t B = s[0], L = s[1], D = s[2];

	// magnitude spectrum per (b, d) line: gather to [B,D,L], transform, put back
	std::vector<double> spec(B * L * D);
	std::vector<double> line(L), mag(L);
	for (std::size_t b = 0; b < B; ++b)
		for (std::size_t d = 0; d < D; ++d) {
			for (std::size_t t = 0; t < L; ++t)
				line[t] = x.data()[(b * L + t) * D + d];
			dft_magnitude_line(line.data(), L, mag.data());
			for (std::size_t t = 0; t < L; ++t)
				spec[(b * L + t) * D + d] = mag[t];
		}
	Tensor fft_channel = Tensor::from_data({B, L, D}, std::move(spec));

	Tensor pe = periodicity_encoding(L, P);
	std::vector<double> sin_data(B * L * D);
	for (std::size_t b = 0; b < B; ++b)
		for (std::size_t t = 0; t < L; ++t)
			for (std::size_t d = 0; d < D; ++d)
				sin_data[(b * L + t) * D + d] = pe.data()[t * 2];
	Tensor sin_channel = Tensor::from_data({B, L, D}, std::move(sin_data));

	Shape unsq{B, L, D, 1};
	return concat({reshape(x, unsq), reshape(fft_channel, unsq), reshape(sin_channel, unsq)}, 3);
}

std::pair<std::size_t, std::size_t> fold_dims(std::size_t L, std::size_t P) {
	if (L < 1)
		throw ConfigError("fold_dims: L must be >= 1");
	if (P >= 1 && L % P == 0)
		return {L / P, P};
	std::size_t root = static_cast<std::size_t>(std::sqrt(static_cast<double>(L)));
	for (std::size_t h = root; h >= 1; --h)
		if (L % h == 0)
			return {h, L / h};
	return {1, L};
}

namespace {

// conv with replicate padding 1 on the spatial axes
Tensor conv1d_rpad(const Tensor &x, const Tensor &k, const Tensor &bias) {
	Tensor y = conv1d(replicate_pad(x, 1, 1), k, 1, 0);
	return y + reshape(bias, {bias.numel(), 1});
}

Tensor conv2d_rpad(const Tensor &x, const Tensor &k, const Tensor &bias) {
	Tensor y = conv2d(replicate_pad(x, 2, 1), k, 1, 0);
	return y + reshape(bias, {bias.numel(), 1, 1});
}

} // namespace

Tensor multiscale_transform(const Tensor &aug, const AugmentConfig &cfg,
                            const VisualParams &params) {
	cfg.validate();
	const Shape &s = aug.shape();
	if (s.size() != 4 || s[3] != 3)
		throw ShapeError("multiscale_transform: expects [B, L, D, 3]");
	std::size_t B = s[0], L = s[1], D = s[2];

	// split the stacked channels and lay each out as [B*D, 1, L]
	auto channel_index = [&](std::size_t ch) {
		std::vector<std::size_t> idx(B * D * L);
		std::size_t k = 0;
		for (std::size_t b = 0; b < B; ++b)
			for (std::size_t d = 0; d < D; ++d)
				for (std::size_t t = 0; t < L; ++t)
					idx[k++] = ((b * L + t) * D + d) * 3 + ch;
		return idx;
	};
	Tensor raw = index_map(aug, {B * D, 1, L}, channel_index(0));
	Tensor spec = index_map(aug, {B * D, 1, L}, channel_index(1));
	Tensor sin_ch = index_map(aug, {B * D, 1, L}, channel_index(2));

	// keep channel magnitudes commensurate: raw DFT magnitudes grow with L
	Tensor spec_scaled = scale(spec, 1.0 / static_cast<double>(L));

	// degenerate-window gate: a variable whose series channel is identically
	// zero gets zero encodings, so constant inputs render as constant images
	std::vector<double> gate(B * D, 0.0);
	for (std::size_t bd = 0; bd < B * D; ++bd)
		for (std::size_t t = 0; t < L; ++t)
			if (raw.data()[bd * L + t] != 0.0) {
				gate[bd] = 1.0;
				break;
			}
	Tensor gate_t = Tensor::from_data({B * D, 1, 1}, std::move(gate));

	// cos component rides along as a fourth conv channel (X_aug itself keeps
	// the declared three)
	Tensor pe = periodicity_encoding(L, cfg.periodicity);
	std::vector<double> cos_tiled(B * D * L);
	for (std::size_t bd = 0; bd < B * D; ++bd)
		for (std::size_t t = 0; t < L; ++t)
			cos_tiled[bd * L + t] = pe.data()[t * 2 + 1];
	Tensor cos_ch = Tensor::from_data({B * D, 1, L}, std::move(cos_tiled));

	Tensor conv_in = concat({raw, spec_scaled, sin_ch * gate_t, cos_ch * gate_t}, 1);

	Tensor f1d = conv1d_rpad(conv_in, params.k1d, params.b1d); // [B*D, H, L]
	std::size_t H = cfg.h_hidden;
	Tensor by_var = reshape(f1d, {B, D, H, L});
	Tensor pooled = mean_axis(by_var, 1, false); // [B, H, L]

	auto [h0, w0] = fold_dims(L, cfg.periodicity);
	Tensor folded = reshape(pooled, {B, H, h0, w0});

	Tensor c1 = gelu(conv2d_rpad(folded, params.k2a, params.b2a)); // [B, H/2, h0, w0]
	return conv2d_rpad(c1, params.k2b, params.b2b);                // [B, C_img, h0, w0]
}

std::vector<std::pair<double, double>> image_min_max(const Tensor &img) {
	const Shape &s = img.shape();
	if (s.size() != 4)
		throw ShapeError("image_min_max: expects [B, C, H, W]");
	std::size_t per = s[1] * s[2] * s[3];
	std::vector<std::pair<double, double>> mm(s[0]);
	for (std::size_t b = 0; b < s[0]; ++b) {
		double lo = img.data()[b * per], hi = lo;
		for (std::size_t i = 1; i < per; ++i) {
			double v = img.data()[b * per + i];
			lo = std::min(lo, v);
			hi = std::max(hi, v);
		}
		mm[b] = {lo, hi};
	}
	return mm;
}

Tensor pixel_normalize(const Tensor &img,
                       const std::optional<std::vector<std::pair<double, double>>> &frozen) {
	const Shape &s = img.shape();
	if (s.size() != 4)
		throw ShapeError("pixel_normalize: expects [B, C, H, W]");
	img.check_finite("pixel_normalize input");
	auto mm = frozen ? *frozen : image_min_max(img);
	if (mm.size() != s[0])
		throw ShapeError("pixel_normalize: one (min, max) pair per sample required");

	std::vector<double> mins(s[0]), gains(s[0]);
	for (std::size_t b = 0; b < s[0]; ++b) {
		mins[b] = mm[b].first;
		gains[b] = 255.0 / (mm[b].second - mm[b].first + 1e-5);
	}
	Tensor min_t = Tensor::from_data({s[0], 1, 1, 1}, std::move(mins));
	Tensor gain_t = Tensor::from_data({s[0], 1, 1, 1}, std::move(gains));
	return (img - min_t) * gain_t; // min/max detached: gradient is the affine map only
}

Tensor render_image(const Tensor &x, const AugmentConfig &cfg, const VisualParams &params,
                    const std::optional<std::vector<std::pair<double, double>>> &frozen_minmax) {
	Tensor aug = enhance(x, cfg.periodicity);
	Tensor multi = multiscale_transform(aug, cfg, params);
	Tensor resized = bilinear_resize(multi, cfg.image_size, cfg.image_size);
	return pixel_normalize(resized, frozen_minmax);
}

void export_pgm(const std::vector<double> &pixels, std::size_t height, std::size_t width,
                const std::string &path) {
	if (pixels.size() != height * width)
		throw ShapeError("export_pgm: pixel count does not match extents");
	std::ofstream out(path, std::ios::binary);
	if (!out)
		throw IoError("cannot open for writing: " + path);
	out << "P5\n" << width << " " << height << "\n255\n";
	std::vector<std::uint8_t> bytes(pixels.size());
	for (std::size_t i = 0; i < pixels.size(); ++i) {
		double v = std::nearbyint(pixels[i]);
		bytes[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
	}
	out.write(reinterpret_cast<const char *>(bytes.data()),
	          static_cast<std::streamsize>(bytes.size()));
	if (!out)
		throw IoError("write failure: " + path);
}

PgmImage read_pgm(const std::string &path) {
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw IoError("cannot open: " + path);
	std::string magic;
	in >> magic;
	if (magic != "P5")
		throw IoError("not a binary PGM: " + path);
	std::size_t w = 0, h = 0, maxval = 0;
	in >> w >> h >> maxval;
	in.get(); // single whitespace after maxval
	if (maxval != 255)
		throw IoError("unsupported maxval in " + path);
	PgmImage img;
	img.width = w;
	img.height = h;
	img.pixels.resize(w * h);
	in.read(reinterpret_cast<char *>(img.pixels.data()), static_cast<std::streamsize>(w * h));
	if (!in)
		throw IoError("truncated PGM: " + path);
	return img;
}

VisualParams init_visual_params(const AugmentConfig &cfg, std::uint64_t seed,
                                const std::string &prefix) {
	cfg.validate();
	std::size_t H = cfg.h_hidden;
	VisualParams p;
	p.k1d = xavier_uniform({H, 4, 3}, 4 * 3, H * 3, seed, prefix + ".k1d");
	p.b1d = Tensor::zeros({H});
	p.k2a = xavier_uniform({H / 2, H, 3, 3}, H * 9, (H / 2) * 9, seed, prefix + ".k2a");
	p.b2a = Tensor::zeros({H / 2});
	p.k2b = xavier_uniform({cfg.c_img, H / 2, 3, 3}, (H / 2) * 9, cfg.c_img * 9, seed,
	                       prefix + ".k2b");
	p.b2b = Tensor::zeros({cfg.c_img});
	for (Tensor t : {p.k1d, p.b1d, p.k2a, p.b2a, p.k2b, p.b2b})
		t.set_requires_grad(true);
	return p;
}

} // namespace tsd

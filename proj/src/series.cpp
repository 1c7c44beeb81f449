#include "tsdistill/series.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tsdistill/rng.hpp"

namespace tsd {

namespace {

constexpr double kStdEps = 1e-8;
constexpr double kTwoPi = 6.283185307179586476925286766559;

std::vector<std::string> split_fields(const std::string &line) {
	std::vector<std::string> out;
	std::string cur;
	for (char ch : line) {
		if (ch == ',') {
			out.push_back(cur);
			cur.clear();
		} else if (ch != '\r') {
			cur.push_back(ch);
		}
	}
	out.push_back(cur);
	return out;
}

double parse_cell(const std::string &cell, std::size_t row, std::size_t col) {
	const char *begin = cell.data();
	const char *end = begin + cell.size();
	while (begin < end && (*begin == ' ' || *begin == '\t'))
		++begin;
	while (end > begin && (*(end - 1) == ' ' || *(end - 1) == '\t'))
		--end;
	double v = 0.0;
	auto [ptr, ec] = std::from_chars(begin, end, v);
	if (ec != std::errc() || ptr != end)
		throw IoError("csv parse failure at row " + std::to_string(row) + ", column " +
		              std::to_string(col) + ": '" + cell + "'");
	return v;
}

} // namespace

Series load_csv(const std::string &path, bool has_header,
                std::optional<std::size_t> timestamp_column) {
	std::ifstream in(path);
	if (!in)
		throw IoError("cannot open csv file: " + path);

	std::vector<std::string> lines;
	std::string line;
	while (std::getline(in, line)) {
		if (!line.empty() && !(line.size() == 1 && line[0] == '\r'))
			lines.push_back(line);
	}
	if (lines.empty())
		throw IoError("empty csv file: " + path);

	std::size_t first_data = has_header ? 1 : 0;
	if (lines.size() <= first_data)
		throw IoError("csv has a header but no data rows: " + path);

	std::size_t n_cols = split_fields(lines[first_data]).size();
	if (timestamp_column && *timestamp_column >= n_cols)
		throw IoError("timestamp column index out of range");

	Series s;
	s.C = n_cols - (timestamp_column ? 1 : 0);
	if (s.C == 0)
		throw IoError("csv has no numeric columns");
	s.T = lines.size() - first_data;
	s.values.reserve(s.T * s.C);

	if (has_header) {
		auto names = split_fields(lines[0]);
		if (names.size() != n_cols)
			throw IoError("csv header column count differs from data rows");
		for (std::size_t c = 0; c < n_cols; ++c)
			if (!timestamp_column || c != *timestamp_column)
				s.column_names.push_back(names[c]);
	} else {
		for (std::size_t c = 0; c < s.C; ++c)
			s.column_names.push_back("c" + std::to_string(c));
	}

	for (std::size_t r = 0; r < s.T; ++r) {
		auto fields = split_fields(lines[first_data + r]);
		if (fields.size() != n_cols)
			throw IoError("csv row " + std::to_string(r + 1) + " has " +
			              std::to_string(fields.size()) + " columns, expected " +
			              std::to_string(n_cols));
		for (std::size_t c = 0; c < n_cols; ++c) {
			if (timestamp_column && c == *timestamp_column) {
				s.timestamps.push_back(fields[c]);
				continue;
			}
			s.values.push_back(parse_cell(fields[c], r + 1, c + 1));
		}
	}
	return s;
}

void save_csv(const Series &s, const std::string &path) {
	std::ofstream out(path);
	if (!out)
		throw IoError("cannot write csv file: " + path);
	for (std::size_t c = 0; c < s.C; ++c)
		out << (c ? "," : "") << (c < s.column_names.size() ? s.column_names[c] : "c" + std::to_string(c));
	out << '\n';
	out.precision(17);
	for (std::size_t t = 0; t < s.T; ++t) {
		for (std::size_t c = 0; c < s.C; ++c)
			out << (c ? "," : "") << s.at(t, c);
		out << '\n';
	}
	if (!out)
		throw IoError("write failure: " + path);
}

namespace {

Series slice_series(const Series &s, std::size_t begin, std::size_t count) {
	Series out;
	out.C = s.C;
	out.T = count;
	out.periodicity = s.periodicity;
	out.column_names = s.column_names;
	out.values.assign(s.values.begin() + static_cast<std::ptrdiff_t>(begin * s.C),
	                  s.values.begin() + static_cast<std::ptrdiff_t>((begin + count) * s.C));
	if (!s.timestamps.empty())
		out.timestamps.assign(s.timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
		                      s.timestamps.begin() + static_cast<std::ptrdiff_t>(begin + count));
	return out;
}

} // namespace

SeriesSplits split(const Series &s, const SplitSpec &spec, std::size_t min_part_length) {
	if (!(spec.train > 0.0) || !(spec.val > 0.0) || !(spec.test > 0.0))
		throw ConfigError("split fractions must all be positive");
	if (std::fabs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
		throw ConfigError("split fractions must sum to 1");
	if (!(spec.few_shot_fraction > 0.0) || spec.few_shot_fraction > 1.0)
		throw ConfigError("few-shot fraction must lie in (0, 1]");

	std::size_t n_train = static_cast<std::size_t>(spec.train * static_cast<double>(s.T));
	std::size_t n_val = static_cast<std::size_t>(spec.val * static_cast<double>(s.T));
	if (n_train + n_val >= s.T)
		throw ConfigError("series too short for the requested split");
	std::size_t n_test = s.T - n_train - n_val;

	// few-shot keeps only the leading share of the training span
	std::size_t n_train_kept =
	    static_cast<std::size_t>(spec.few_shot_fraction * static_cast<double>(n_train));

	auto require = [&](std::size_t n, const char *part) {
		if (n < min_part_length)
			throw ConfigError(std::string("split part '") + part + "' too short: " +
			                  std::to_string(n) + " < " + std::to_string(min_part_length));
	};
	require(n_train_kept, "train");
	require(n_val, "val");
	require(n_test, "test");

	SeriesSplits out;
	out.train = slice_series(s, 0, n_train_kept);
	out.val = slice_series(s, n_train, n_val);
	out.test = slice_series(s, n_train + n_val, n_test);
	return out;
}

std::vector<SeriesWindow> make_windows(const Series &s, std::size_t seq_len, std::size_t pred_len,
                                       std::size_t stride) {
	if (stride < 1)
		throw ConfigError("window stride must be >= 1");
	if (s.T < seq_len + pred_len)
		throw ConfigError("series length " + std::to_string(s.T) +
		                  " is too short for seq_len + pred_len = " +
		                  std::to_string(seq_len + pred_len));
	std::size_t count = (s.T - seq_len - pred_len) / stride + 1;
	std::vector<SeriesWindow> out;
	out.reserve(count);
	for (std::size_t i = 0; i < count; ++i) {
		std::size_t start = i * stride;
		SeriesWindow w;
		w.seq_len = seq_len;
		w.pred_len = pred_len;
		w.channels = s.C;
		w.lookback.assign(s.values.begin() + static_cast<std::ptrdiff_t>(start * s.C),
		                  s.values.begin() + static_cast<std::ptrdiff_t>((start + seq_len) * s.C));
		w.horizon.assign(
		    s.values.begin() + static_cast<std::ptrdiff_t>((start + seq_len) * s.C),
		    s.values.begin() + static_cast<std::ptrdiff_t>((start + seq_len + pred_len) * s.C));
		out.push_back(std::move(w));
	}
	return out;
}

SeriesWindow instance_normalize(const SeriesWindow &w, double norm_const) {
	if (w.normalized)
		return w;
	SeriesWindow out = w;
	out.norm_const = norm_const;
	out.mean.assign(w.channels, 0.0);
	out.std.assign(w.channels, 0.0);
	double n = static_cast<double>(w.seq_len);
	for (std::size_t c = 0; c < w.channels; ++c) {
		double m = 0.0;
		for (std::size_t t = 0; t < w.seq_len; ++t)
			m += w.lookback[t * w.channels + c];
		m /= n;
		double var = 0.0;
		for (std::size_t t = 0; t < w.seq_len; ++t) {
			double d = w.lookback[t * w.channels + c] - m;
			var += d * d;
		}
		out.mean[c] = m;
		out.std[c] = std::sqrt(var / n); // population std
	}
	for (std::size_t t = 0; t < w.seq_len; ++t)
		for (std::size_t c = 0; c < w.channels; ++c) {
			double r = norm_const / (out.std[c] + kStdEps);
			out.lookback[t * w.channels + c] = (w.lookback[t * w.channels + c] - out.mean[c]) * r;
		}
	for (std::size_t t = 0; t < w.pred_len; ++t)
		for (std::size_t c = 0; c < w.channels; ++c) {
			double r = norm_const / (out.std[c] + kStdEps);
			out.horizon[t * w.channels + c] = (w.horizon[t * w.channels + c] - out.mean[c]) * r;
		}
	out.normalized = true;
	return out;
}

SeriesWindow denormalize(const SeriesWindow &w) {
	if (!w.normalized)
		return w;
	SeriesWindow out = w;
	for (std::size_t t = 0; t < w.seq_len; ++t)
		for (std::size_t c = 0; c < w.channels; ++c) {
			double inv = (w.std[c] + kStdEps) / w.norm_const;
			out.lookback[t * w.channels + c] = w.lookback[t * w.channels + c] * inv + w.mean[c];
		}
	for (std::size_t t = 0; t < w.pred_len; ++t)
		for (std::size_t c = 0; c < w.channels; ++c) {
			double inv = (w.std[c] + kStdEps) / w.norm_const;
			out.horizon[t * w.channels + c] = w.horizon[t * w.channels + c] * inv + w.mean[c];
		}
	out.normalized = false;
	return out;
}

std::vector<double> denormalize_predictions(const SeriesWindow &w,
                                            const std::vector<double> &predictions) {
	if (!w.normalized)
		throw std::logic_error("denormalize_predictions needs a normalized window");
	if (predictions.size() != w.pred_len * w.channels)
		throw ShapeError("prediction block size mismatch");
	std::vector<double> out(predictions.size());
	for (std::size_t t = 0; t < w.pred_len; ++t)
		for (std::size_t c = 0; c < w.channels; ++c) {
			double inv = (w.std[c] + kStdEps) / w.norm_const;
			out[t * w.channels + c] = predictions[t * w.channels + c] * inv + w.mean[c];
		}
	return out;
}

std::size_t patch_count(std::size_t L, std::size_t patch_len, std::size_t stride,
                        std::size_t padding) {
	if (patch_len > L + padding)
		throw ShapeError("patch length exceeds padded input");
	if (stride < 1)
		throw ConfigError("patch stride must be >= 1");
	return (L + padding - patch_len) / stride + 1;
}

Tensor patchify(const Tensor &x, std::size_t patch_len, std::size_t stride, std::size_t padding) {
	const Shape &s = x.shape();
	if (s.size() != 3)
		throw ShapeError("patchify: expects [B, L, C]");
	std::size_t B = s[0], L = s[1], C = s[2];
	std::size_t N = patch_count(L, patch_len, stride, padding);

	std::vector<std::size_t> index(B * N * patch_len * C);
	std::size_t k = 0;
	for (std::size_t b = 0; b < B; ++b)
		for (std::size_t n = 0; n < N; ++n)
			for (std::size_t t = 0; t < patch_len; ++t) {
				std::size_t pos = n * stride + t;
				std::size_t src_t = pos < L ? pos : L - 1; // end-padding replicates the final step
				for (std::size_t c = 0; c < C; ++c)
					index[k++] = (b * L + src_t) * C + c;
			}
	return index_map(x, {B, N, patch_len * C}, std::move(index));
}

SynthKind synth_kind_from_string(const std::string &name) {
	if (name == "sine_mix")
		return SynthKind::SineMix;
	if (name == "trend_sine")
		return SynthKind::TrendSine;
	if (name == "noise")
		return SynthKind::Noise;
	throw ConfigError("unknown synthetic kind: " + name);
}

Series synth_generate(SynthKind kind, std::size_t T, std::size_t C, std::size_t P,
                      std::uint64_t seed, double noise_sigma) {
	if (T == 0 || C == 0 || P == 0)
		throw ConfigError("synth_generate: T, C, P must be positive");
	Series s;
	s.T = T;
	s.C = C;
	s.periodicity = P;
	s.values.assign(T * C, 0.0);
	for (std::size_t c = 0; c < C; ++c)
		s.column_names.push_back("ch" + std::to_string(c));

	for (std::size_t c = 0; c < C; ++c) {
		Rng shape_rng = Rng::stream(seed, "synth/shape/" + std::to_string(c));
		Rng noise_rng = Rng::stream(seed, "synth/noise/" + std::to_string(c));
		if (kind == SynthKind::Noise) {
			for (std::size_t t = 0; t < T; ++t)
				s.at(t, c) = noise_rng.normal();
			continue;
		}
		std::size_t n_comp = 2 + shape_rng.below(2); // 2 or 3 sinusoids
		std::vector<double> amp(n_comp), phase(n_comp);
		std::vector<std::size_t> harmonic(n_comp);
		for (std::size_t i = 0; i < n_comp; ++i) {
			harmonic[i] = 1 + shape_rng.below(3);
			amp[i] = shape_rng.uniform(0.5, 1.5);
			phase[i] = shape_rng.uniform(0.0, kTwoPi);
		}
		double slope = kind == SynthKind::TrendSine
		                   ? shape_rng.uniform(-1.0, 1.0) * 2.0 / static_cast<double>(T)
		                   : 0.0;
		for (std::size_t t = 0; t < T; ++t) {
			// phase uses t mod P so noiseless channels are exactly periodic
			double tp = static_cast<double>(t % P);
			double v = 0.0;
			for (std::size_t i = 0; i < n_comp; ++i)
				v += amp[i] * std::sin(kTwoPi * static_cast<double>(harmonic[i]) * tp /
				                           static_cast<double>(P) +
				                       phase[i]);
			v += slope * static_cast<double>(t);
			if (noise_sigma > 0.0)
				v += noise_sigma * noise_rng.normal();
			s.at(t, c) = v;
		}
	}
	return s;
}

WindowBatch batch_from_windows(const std::vector<SeriesWindow> &windows,
                               const std::vector<std::size_t> &indices) {
	if (indices.empty())
		throw ShapeError("batch_from_windows: empty batch");
	const SeriesWindow &w0 = windows.at(indices[0]);
	std::size_t B = indices.size(), L = w0.seq_len, H = w0.pred_len, C = w0.channels;
	std::vector<double> lb(B * L * C), tg(B * H * C);
	for (std::size_t i = 0; i < B; ++i) {
		const SeriesWindow &w = windows.at(indices[i]);
		if (!w.normalized)
			throw std::logic_error("batch_from_windows expects normalized windows");
		std::copy(w.lookback.begin(), w.lookback.end(), lb.begin() + static_cast<std::ptrdiff_t>(i * L * C));
		std::copy(w.horizon.begin(), w.horizon.end(), tg.begin() + static_cast<std::ptrdiff_t>(i * H * C));
	}
	return {Tensor::from_data({B, L, C}, std::move(lb)), Tensor::from_data({B, H, C}, std::move(tg))};
}

} // namespace tsd

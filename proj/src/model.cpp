#include "tsdistill/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace tsd {

void FusionConfig::validate() const {
	if (d_fus == 0 || n_heads == 0)
		throw ConfigError("fusion: d_fus and n_heads must be positive");
	if (d_fus % n_heads != 0)
		throw ConfigError("fusion: d_fus must be divisible by n_heads");
	if (dropout < 0.0 || dropout >= 1.0)
		throw ConfigError("fusion: dropout must lie in [0, 1)");
}

void ForecasterConfig::validate() const {
	if (channels == 0 || pred_len == 0)
		throw ConfigError("forecaster: channels and pred_len must be positive");
	temporal.validate();
	visual.validate();
	fusion.validate();
	if (vision.d_vis == 0 || vision.depth == 0)
		throw ConfigError("forecaster: vision d_vis and depth must be positive");
}

// ---- VisionEncoder ----

VisionEncoder::VisionEncoder(const VisionEncoderConfig &cfg, std::size_t in_channels,
                             std::size_t d_fus, ParamSet &params, const std::string &prefix,
                             std::uint64_t seed)
    : cfg_(cfg) {
	// channel ramp doubling up to d_vis
	std::size_t cin = in_channels;
	for (std::size_t i = 0; i < cfg.depth; ++i) {
		std::size_t cout = std::max<std::size_t>(1, cfg.d_vis >> (cfg.depth - 1 - i));
		std::string base = prefix + ".block" + std::to_string(i);
		kernels_.push_back(params.add(
		    base + ".k", xavier_uniform({cout, cin, 3, 3}, cin * 9, cout * 9, seed, base + ".k")));
		biases_.push_back(params.add(base + ".b", Tensor::zeros({cout})));
		cin = cout;
	}
	proj_ = Linear::create(params, prefix + ".proj", cin, d_fus, seed);
}

Tensor VisionEncoder::encode(const Tensor &img) const {
	Tensor h = img;
	for (std::size_t i = 0; i < kernels_.size(); ++i) {
		h = conv2d(h, kernels_[i], 2, 1) + reshape(biases_[i], {biases_[i].numel(), 1, 1});
		h = gelu(h);
	}
	Tensor pooled = mean_axis(mean_axis(h, 3, false), 2, false); // B x C
	return proj_.apply(pooled);
}

// ---- CrossModalFusion ----

CrossModalFusion::CrossModalFusion(const FusionConfig &cfg, std::size_t d_model, ParamSet &params,
                                   const std::string &prefix, std::uint64_t seed)
    : cfg_(cfg) {
	cfg.validate();
	lift_ = Linear::create(params, prefix + ".lift", d_model, cfg.d_fus, seed);
	wq_ = Linear::create(params, prefix + ".q", cfg.d_fus, cfg.d_fus, seed);
	wk_ = Linear::create(params, prefix + ".k", cfg.d_fus, cfg.d_fus, seed);
	wv_ = Linear::create(params, prefix + ".v", cfg.d_fus, cfg.d_fus, seed);
	wo_ = Linear::create(params, prefix + ".o", cfg.d_fus, cfg.d_fus, seed);
	ln_gain_ = params.add(prefix + ".ln.gain", Tensor::full({cfg.d_fus}, 1.0));
	ln_bias_ = params.add(prefix + ".ln.bias", Tensor::zeros({cfg.d_fus}));
}

Tensor CrossModalFusion::fuse(const Tensor &h_t, const Tensor &f_vis, bool training,
                              Rng &dropout_rng) const {
	std::size_t B = h_t.shape()[0];
	std::size_t d = cfg_.d_fus;
	std::size_t nh = cfg_.n_heads;
	std::size_t dk = d / nh;

	Tensor lifted = lift_.apply(h_t); // B x d_fus
	Tensor q = reshape(wq_.apply(lifted), {B, nh, 1, dk});
	Tensor k = reshape(wk_.apply(f_vis), {B, nh, 1, dk});
	Tensor v = reshape(wv_.apply(f_vis), {B, nh, 1, dk});

	// one pooled visual token: softmax over a single key is exactly 1
	Tensor scores = scale(matmul(q, permute(k, {0, 1, 3, 2})), 1.0 / std::sqrt(double(dk)));
	Tensor probs = softmax(scores, 3);
	Tensor attended = reshape(matmul(probs, v), {B, d});

	double p = training ? cfg_.dropout : 0.0;
	Tensor out = dropout(wo_.apply(attended), p, dropout_rng);
	return layer_norm(out + lifted, ln_gain_, ln_bias_, 1);
}

// ---- PredictionHead ----

PredictionHead::PredictionHead(std::size_t d_fus, std::size_t pred_len, std::size_t channels,
                               ParamSet &params, const std::string &prefix, std::uint64_t seed)
    : pred_len_(pred_len), channels_(channels) {
	head_ = Linear::create(params, prefix + ".out", d_fus, pred_len * channels, seed);
}

Tensor PredictionHead::predict(const Tensor &fused) const {
	Tensor flat = head_.apply(fused); // B x (H*D)
	return reshape(flat, {fused.shape()[0], pred_len_, channels_});
}

Tensor reconstruction_loss(const Tensor &predictions, const Tensor &targets) {
	return smooth_l1(predictions, targets, 1.0);
}

// ---- Forecaster ----

Forecaster::Forecaster(const ForecasterConfig &cfg, std::uint64_t seed) : cfg_(cfg) {
	cfg.validate();
	temporal_.emplace(cfg.temporal, cfg.channels, params_, "temporal", seed);
	visual_params_ = init_visual_params(cfg.visual, seed, "visual");
	params_.add("visual.k1d", visual_params_.k1d);
	params_.add("visual.b1d", visual_params_.b1d);
	params_.add("visual.k2a", visual_params_.k2a);
	params_.add("visual.b2a", visual_params_.b2a);
	params_.add("visual.k2b", visual_params_.k2b);
	params_.add("visual.b2b", visual_params_.b2b);
	vision_.emplace(cfg.vision, cfg.visual.c_img, cfg.fusion.d_fus, params_, "vision", seed);
	fusion_.emplace(cfg.fusion, cfg.temporal.d_model, params_, "fusion", seed);
	head_.emplace(cfg.fusion.d_fus, cfg.pred_len, cfg.channels, params_, "head", seed);
}

ModelOutputs Forecaster::forward(
    const Tensor &x, bool training, Rng &dropout_rng,
    const std::optional<std::vector<std::pair<double, double>>> &frozen_minmax) const {
	TemporalOutput temporal = temporal_->encode(x, training, dropout_rng);
	Tensor img = render_image(x, cfg_.visual, visual_params_, frozen_minmax);
	Tensor f_vis = vision_->encode(img);
	Tensor fused = fusion_->fuse(temporal.pooled, f_vis, training, dropout_rng);

	ModelOutputs out;
	out.predictions = head_->predict(fused);
	out.fused = fused;
	out.attention = mean_axis(temporal.attention, 1, false); // head-average: B x T' x T'
	out.visual_features = f_vis;
	return out;
}

Tensor Forecaster::render(const Tensor &x) const {
	return render_image(x, cfg_.visual, visual_params_);
}

Tensor Forecaster::prenorm_image(const Tensor &x) const {
	Tensor aug = enhance(x, cfg_.visual.periodicity);
	Tensor multi = multiscale_transform(aug, cfg_.visual, visual_params_);
	return bilinear_resize(multi, cfg_.visual.image_size, cfg_.visual.image_size);
}

// ---- checkpoint io ----

namespace {

constexpr char kMagic[8] = {'T', 'S', 'D', 'C', 'K', 'P', 'T', '1'};

template <class T> void write_pod(std::ofstream &out, T v) {
	out.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <class T> T read_pod(std::ifstream &in) {
	T v{};
	in.read(reinterpret_cast<char *>(&v), sizeof(T));
	if (!in)
		throw IoError("truncated checkpoint");
	return v;
}

} // namespace

std::string forecaster_config_json(const ForecasterConfig &cfg) {
	nlohmann::ordered_json j;
	j["role"] = cfg.role == ModelRole::Teacher ? "teacher" : "student";
	j["channels"] = cfg.channels;
	j["pred_len"] = cfg.pred_len;
	j["temporal"] = {{"d_model", cfg.temporal.d_model},   {"e_layers", cfg.temporal.e_layers},
	                 {"n_heads", cfg.temporal.n_heads},   {"dropout", cfg.temporal.dropout},
	                 {"patch_len", cfg.temporal.patch_len}, {"patch_stride", cfg.temporal.patch_stride},
	                 {"patch_padding", cfg.temporal.patch_padding}};
	j["visual"] = {{"h_hidden", cfg.visual.h_hidden},
	               {"image_size", cfg.visual.image_size},
	               {"c_img", cfg.visual.c_img},
	               {"periodicity", cfg.visual.periodicity}};
	j["vision"] = {{"d_vis", cfg.vision.d_vis}, {"depth", cfg.vision.depth}};
	j["fusion"] = {{"d_fus", cfg.fusion.d_fus},
	               {"n_heads", cfg.fusion.n_heads},
	               {"dropout", cfg.fusion.dropout}};
	return j.dump();
}

ForecasterConfig forecaster_config_from_json(const std::string &json_text) {
	nlohmann::json j = nlohmann::json::parse(json_text);
	ForecasterConfig cfg;
	cfg.role = j.at("role").get<std::string>() == "teacher" ? ModelRole::Teacher : ModelRole::Student;
	cfg.channels = j.at("channels").get<std::size_t>();
	cfg.pred_len = j.at("pred_len").get<std::size_t>();
	const auto &t = j.at("temporal");
	cfg.temporal.d_model = t.at("d_model").get<std::size_t>();
	cfg.temporal.e_layers = t.at("e_layers").get<std::size_t>();
	cfg.temporal.n_heads = t.at("n_heads").get<std::size_t>();
	cfg.temporal.dropout = t.at("dropout").get<double>();
	cfg.temporal.patch_len = t.at("patch_len").get<std::size_t>();
	cfg.temporal.patch_stride = t.at("patch_stride").get<std::size_t>();
	cfg.temporal.patch_padding = t.at("patch_padding").get<std::size_t>();
	const auto &v = j.at("visual");
	cfg.visual.h_hidden = v.at("h_hidden").get<std::size_t>();
	cfg.visual.image_size = v.at("image_size").get<std::size_t>();
	cfg.visual.c_img = v.at("c_img").get<std::size_t>();
	cfg.visual.periodicity = v.at("periodicity").get<std::size_t>();
	const auto &ve = j.at("vision");
	cfg.vision.d_vis = ve.at("d_vis").get<std::size_t>();
	cfg.vision.depth = ve.at("depth").get<std::size_t>();
	const auto &f = j.at("fusion");
	cfg.fusion.d_fus = f.at("d_fus").get<std::size_t>();
	cfg.fusion.n_heads = f.at("n_heads").get<std::size_t>();
	cfg.fusion.dropout = f.at("dropout").get<double>();
	return cfg;
}

void save_checkpoint(const Forecaster &model, const std::string &path) {
	std::ofstream out(path, std::ios::binary);
	if (!out)
		throw IoError("cannot open checkpoint for writing: " + path);
	out.write(kMagic, sizeof(kMagic));

	std::string cfg = forecaster_config_json(model.config());
	write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
	out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

	const auto &items = model.params().items();
	write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(items.size()));
	for (const auto &[name, t] : items) {
		write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
		out.write(name.data(), static_cast<std::streamsize>(name.size()));
		write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
		for (std::size_t d : t.shape())
			write_pod<std::uint64_t>(out, d);
		out.write(reinterpret_cast<const char *>(t.data().data()),
		          static_cast<std::streamsize>(t.numel() * sizeof(double)));
	}
	if (!out)
		throw IoError("checkpoint write failure: " + path);
}

Forecaster load_checkpoint(const std::string &path) {
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw IoError("cannot open checkpoint: " + path);
	char magic[8];
	in.read(magic, sizeof(magic));
	if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
		throw IoError("not a checkpoint file: " + path);

	auto cfg_len = read_pod<std::uint32_t>(in);
	std::string cfg_text(cfg_len, '\0');
	in.read(cfg_text.data(), cfg_len);
	if (!in)
		throw IoError("truncated checkpoint config block");

	Forecaster model(forecaster_config_from_json(cfg_text), /*seed=*/0);

	auto n_params = read_pod<std::uint32_t>(in);
	if (n_params != model.params().items().size())
		throw IoError("checkpoint parameter count mismatch");
	for (std::uint32_t i = 0; i < n_params; ++i) {
		auto name_len = read_pod<std::uint32_t>(in);
		std::string name(name_len, '\0');
		in.read(name.data(), name_len);
		auto rank = read_pod<std::uint32_t>(in);
		Shape shape(rank);
		for (auto &d : shape)
			d = read_pod<std::uint64_t>(in);
		Tensor t = model.params().get(name);
		if (t.shape() != shape)
			throw IoError("checkpoint shape mismatch for parameter " + name);
		in.read(reinterpret_cast<char *>(t.leaf_data().data()),
		        static_cast<std::streamsize>(t.numel() * sizeof(double)));
		if (!in)
			throw IoError("truncated checkpoint tensor " + name);
	}
	return model;
}

} // namespace tsd

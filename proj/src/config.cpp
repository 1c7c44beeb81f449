#include "tsdistill/config.hpp"

#include "tsdistill/series.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace tsd {

namespace {

std::string trim(const std::string &s) {
	std::size_t a = s.find_first_not_of(" \t\r");
	if (a == std::string::npos)
		return "";
	std::size_t b = s.find_last_not_of(" \t\r");
	return s.substr(a, b - a + 1);
}

double parse_double(const std::string &key, const std::string &v) {
	try {
		std::size_t used = 0;
		double out = std::stod(v, &used);
		if (used != v.size())
			throw std::invalid_argument(v);
		return out;
	} catch (const std::exception &) {
		throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
	}
}

std::size_t parse_size(const std::string &key, const std::string &v) {
	double d = parse_double(key, v);
	if (d < 0.0 || d != std::floor(d))
		throw ConfigError("config key '" + key + "': expected a nonnegative integer, got '" + v + "'");
	return static_cast<std::size_t>(d);
}

std::int64_t parse_int(const std::string &key, const std::string &v) {
	double d = parse_double(key, v);
	if (d != std::floor(d))
		throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
	return static_cast<std::int64_t>(d);
}

bool parse_bool(const std::string &key, const std::string &v) {
	if (v == "true" || v == "1" || v == "yes")
		return true;
	if (v == "false" || v == "0" || v == "no")
		return false;
	throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

using Setter = std::function<void(RunConfig &, const std::string &key, const std::string &value)>;

const std::map<std::string, Setter> &setter_table() {
	static const std::map<std::string, Setter> table = {
	    // [data]
	    {"data.name", [](RunConfig &c, const std::string &, const std::string &v) { c.data.name = v; }},
	    {"data.csv", [](RunConfig &c, const std::string &, const std::string &v) { c.data.csv_path = v; }},
	    {"data.has_header", [](RunConfig &c, const std::string &k, const std::string &v) { c.data.has_header = parse_bool(k, v); }},
	    {"data.timestamp_column", [](RunConfig &c, const std::string &k, const std::string &v) { c.data.timestamp_column = static_cast<int>(parse_int(k, v)); }},
	    {"data.synth_kind", [](RunConfig &c, const std::string &, const std::string &v) { c.data.synth_kind = v; }},
	    {"data.synth_t", [](RunConfig &c, const std::string &k, const std::string &v) { c.data.synth_t = parse_size(k, v); }},
	    {"data.synth_c", [](RunConfig &c, const std::string &k, const std::string &v) { c.data.synth_c = parse_size(k, v); }},
	    {"data.synth_noise", [](RunConfig &c, const std::string &k, const std::string &v) { c.data.synth_noise = parse_double(k, v); }},
	    {"data.synth_seed", [](RunConfig &c, const std::string &k, const std::string &v) { c.data.synth_seed = parse_size(k, v); }},
	    {"data.periodicity", [](RunConfig &c, const std::string &k, const std::string &v) { c.data.periodicity = parse_size(k, v); }},
	    {"data.seq_len", [](RunConfig &c, const std::string &k, const std::string &v) { c.data.seq_len = parse_size(k, v); }},
	    {"data.pred_len", [](RunConfig &c, const std::string &k, const std::string &v) { c.data.pred_len = parse_size(k, v); }},
	    {"data.window_stride", [](RunConfig &c, const std::string &k, const std::string &v) { c.data.window_stride = parse_size(k, v); }},
	    {"data.eval_stride", [](RunConfig &c, const std::string &k, const std::string &v) { c.data.eval_stride = parse_size(k, v); }},
	    {"data.norm_const", [](RunConfig &c, const std::string &k, const std::string &v) { c.data.norm_const = parse_double(k, v); }},
	    {"data.few_shot_fraction", [](RunConfig &c, const std::string &k, const std::string &v) { c.data.few_shot_fraction = parse_double(k, v); }},
	    {"data.train_frac", [](RunConfig &c, const std::string &k, const std::string &v) { c.data.train_frac = parse_double(k, v); }},
	    {"data.val_frac", [](RunConfig &c, const std::string &k, const std::string &v) { c.data.val_frac = parse_double(k, v); }},
	    {"data.test_frac", [](RunConfig &c, const std::string &k, const std::string &v) { c.data.test_frac = parse_double(k, v); }},
	    // [model]
	    {"model.profile", [](RunConfig &c, const std::string &, const std::string &v) { apply_profile(c.model, v); }},
	    {"model.d_model", [](RunConfig &c, const std::string &k, const std::string &v) { c.model.d_model = parse_size(k, v); }},
	    {"model.e_layers", [](RunConfig &c, const std::string &k, const std::string &v) { c.model.e_layers = parse_size(k, v); }},
	    {"model.n_heads", [](RunConfig &c, const std::string &k, const std::string &v) { c.model.n_heads = parse_size(k, v); }},
	    {"model.dropout", [](RunConfig &c, const std::string &k, const std::string &v) { c.model.dropout = parse_double(k, v); }},
	    {"model.patch_len", [](RunConfig &c, const std::string &k, const std::string &v) { c.model.patch_len = parse_size(k, v); }},
	    {"model.patch_stride", [](RunConfig &c, const std::string &k, const std::string &v) { c.model.patch_stride = parse_size(k, v); }},
	    {"model.patch_padding", [](RunConfig &c, const std::string &k, const std::string &v) { c.model.patch_padding = parse_size(k, v); }},
	    {"model.image_size", [](RunConfig &c, const std::string &k, const std::string &v) { c.model.image_size = parse_size(k, v); }},
	    {"model.c_img", [](RunConfig &c, const std::string &k, const std::string &v) { c.model.c_img = parse_size(k, v); }},
	    {"model.h_hidden", [](RunConfig &c, const std::string &k, const std::string &v) { c.model.h_hidden = parse_size(k, v); }},
	    {"model.vision_depth", [](RunConfig &c, const std::string &k, const std::string &v) { c.model.vision_depth = parse_size(k, v); }},
	    {"model.teacher_d_vis", [](RunConfig &c, const std::string &k, const std::string &v) { c.model.teacher_d_vis = parse_size(k, v); }},
	    {"model.student_d_vis", [](RunConfig &c, const std::string &k, const std::string &v) { c.model.student_d_vis = parse_size(k, v); }},
	    {"model.teacher_d_fus", [](RunConfig &c, const std::string &k, const std::string &v) { c.model.teacher_d_fus = parse_size(k, v); }},
	    {"model.student_d_fus", [](RunConfig &c, const std::string &k, const std::string &v) { c.model.student_d_fus = parse_size(k, v); }},
	    {"model.fusion_heads", [](RunConfig &c, const std::string &k, const std::string &v) { c.model.fusion_heads = parse_size(k, v); }},
	    // [train]
	    {"train.batch_size", [](RunConfig &c, const std::string &k, const std::string &v) { c.train.batch_size = parse_size(k, v); }},
	    {"train.learning_rate", [](RunConfig &c, const std::string &k, const std::string &v) { c.train.learning_rate = parse_double(k, v); }},
	    {"train.train_epochs", [](RunConfig &c, const std::string &k, const std::string &v) { c.train.train_epochs = parse_size(k, v); }},
	    {"train.patience", [](RunConfig &c, const std::string &k, const std::string &v) { c.train.patience = parse_size(k, v); }},
	    {"train.seed", [](RunConfig &c, const std::string &k, const std::string &v) { c.train.seed = parse_size(k, v); }},
	    {"train.weight_decay", [](RunConfig &c, const std::string &k, const std::string &v) { c.train.weight_decay = parse_double(k, v); }},
	    // [distill]
	    {"distill.init_feature_w", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.init_weights[kFd] = parse_double(k, v); }},
	    {"distill.init_fcst_w", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.init_weights[kFcst] = parse_double(k, v); }},
	    {"distill.init_recon_w", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.init_weights[kRecon] = parse_double(k, v); }},
	    {"distill.init_att_w", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.init_weights[kCd] = parse_double(k, v); }},
	    {"distill.init_temperature", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.init_temperature = parse_double(k, v); }},
	    {"distill.distill_lr_ratio", [](RunConfig &c, const std::string &k, const std::string &v) { c.train.distill_lr_ratio = parse_double(k, v); }},
	    {"distill.num_alignment_scales", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.n_scales = parse_size(k, v); }},
	    {"distill.feature_alignment_dropout", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.alignment_dropout = parse_double(k, v); }},
	    {"distill.loss_momentum", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.loss_momentum = parse_double(k, v); }},
	    {"distill.weight_regularization", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.gamma = parse_double(k, v); }},
	    {"distill.lambda_mse", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.lambda_mse = parse_double(k, v); }},
	    {"distill.lambda_cos", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.lambda_cos = parse_double(k, v); }},
	    {"distill.lambda_kl", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.lambda_kl = parse_double(k, v); }},
	    {"distill.lambda_distill", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.lambda_distill = parse_double(k, v); }},
	    {"distill.warmup_steps", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.warmup_steps = parse_size(k, v); }},
	    {"distill.convergence_window", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.convergence_window = parse_size(k, v); }},
	    {"distill.convergence_eps", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.convergence_eps = parse_double(k, v); }},
	    {"distill.fix_feature_w_zero", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.weight_mask[kFd] = parse_bool(k, v) ? 0.0 : 1.0; }},
	    {"distill.fix_att_w_zero", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.weight_mask[kCd] = parse_bool(k, v) ? 0.0 : 1.0; }},
	    {"distill.fix_fcst_w_zero", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.weight_mask[kFcst] = parse_bool(k, v) ? 0.0 : 1.0; }},
	    {"distill.fix_recon_w_zero", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill.weight_mask[kRecon] = parse_bool(k, v) ? 0.0 : 1.0; }},
	    {"distill.enabled", [](RunConfig &c, const std::string &k, const std::string &v) { c.distill_enabled = parse_bool(k, v); }},
	};
	return table;
}

} // namespace

void apply_profile(ModelConfig &m, const std::string &profile) {
	if (profile == "paper-default") {
		m = ModelConfig{};
		m.profile = profile;
	} else if (profile == "tiny") {
		m.profile = profile;
		m.d_model = 32;
		m.e_layers = 1;
		m.n_heads = 4;
		m.dropout = 0.1;
		m.patch_len = 16;
		m.patch_stride = 8;
		m.patch_padding = 8;
		m.image_size = 28;
		m.c_img = 3;
		m.h_hidden = 8;
		m.vision_depth = 2;
		m.teacher_d_vis = 64;
		m.student_d_vis = 16;
		m.teacher_d_fus = 32;
		m.student_d_fus = 16;
		m.fusion_heads = 4;
	} else {
		throw ConfigError("unknown model profile: " + profile);
	}
}

void apply_override(RunConfig &cfg, const std::string &dotted_key, const std::string &value) {
	const auto &table = setter_table();
	auto it = table.find(dotted_key);
	if (it == table.end())
		throw ConfigError("unknown config key: " + dotted_key);
	it->second(cfg, dotted_key, value);
}

RunConfig load_config_file(const std::string &path) {
	std::ifstream in(path);
	if (!in)
		throw ConfigError("cannot open config file: " + path);
	RunConfig cfg;

	// two passes so a profile declared anywhere is applied before dim overrides
	std::vector<std::pair<std::string, std::string>> entries;
	std::string section, line;
	std::size_t line_no = 0;
	while (std::getline(in, line)) {
		++line_no;
		std::string t = trim(line);
		if (t.empty() || t[0] == '#' || t[0] == ';')
			continue;
		if (t.front() == '[' && t.back() == ']') {
			section = trim(t.substr(1, t.size() - 2));
			if (section != "data" && section != "model" && section != "train" && section != "distill")
				throw ConfigError("unknown config section [" + section + "] at line " +
				                  std::to_string(line_no));
			continue;
		}
		auto eq = t.find('=');
		if (eq == std::string::npos)
			throw ConfigError("config line " + std::to_string(line_no) + " is not 'key = value'");
		if (section.empty())
			throw ConfigError("config key outside a section at line " + std::to_string(line_no));
		std::string key = trim(t.substr(0, eq));
		std::string value = trim(t.substr(eq + 1));
		entries.emplace_back(section + "." + key, value);
	}
	for (const auto &[k, v] : entries)
		if (k == "model.profile")
			apply_override(cfg, k, v);
	for (const auto &[k, v] : entries)
		if (k != "model.profile")
			apply_override(cfg, k, v);
	return cfg;
}

void RunConfig::validate() const {
	auto positive = [](double v, const char *name) {
		if (!(v > 0.0))
			throw ConfigError(std::string(name) + " must be positive");
	};
	positive(double(data.seq_len), "seq_len");
	positive(double(data.pred_len), "pred_len");
	positive(double(data.periodicity), "periodicity");
	positive(double(data.window_stride), "window_stride");
	positive(double(data.eval_stride), "eval_stride");
	positive(data.norm_const, "norm_const");
	positive(double(train.batch_size), "batch_size");
	positive(train.learning_rate, "learning_rate");
	positive(double(train.train_epochs), "train_epochs");
	positive(double(train.patience), "patience");
	positive(train.distill_lr_ratio, "distill_lr_ratio");
	positive(data.few_shot_fraction, "few_shot_fraction");
	if (data.few_shot_fraction > 1.0)
		throw ConfigError("few_shot_fraction must lie in (0, 1]");
	if (data.csv_path.empty()) {
		positive(double(data.synth_t), "synth_t");
		positive(double(data.synth_c), "synth_c");
		(void)synth_kind_from_string(data.synth_kind);
	}
	if (mode == "eval" && checkpoint.empty())
		throw ConfigError("eval mode requires a checkpoint path");
	distill.validate();
}

std::string config_echo(const RunConfig &c) {
	std::ostringstream os;
	os.precision(17);
	os << "[data]\n";
	os << "name = " << c.data.name << "\n";
	if (!c.data.csv_path.empty()) {
		os << "csv = " << c.data.csv_path << "\n";
		os << "has_header = " << (c.data.has_header ? "true" : "false") << "\n";
		os << "timestamp_column = " << c.data.timestamp_column << "\n";
	} else {
		os << "synth_kind = " << c.data.synth_kind << "\n";
		os << "synth_t = " << c.data.synth_t << "\n";
		os << "synth_c = " << c.data.synth_c << "\n";
		os << "synth_noise = " << c.data.synth_noise << "\n";
		os << "synth_seed = " << c.data.synth_seed << "\n";
	}
	os << "periodicity = " << c.data.periodicity << "\n";
	os << "seq_len = " << c.data.seq_len << "\n";
	os << "pred_len = " << c.data.pred_len << "\n";
	os << "window_stride = " << c.data.window_stride << "\n";
	os << "eval_stride = " << c.data.eval_stride << "\n";
	os << "norm_const = " << c.data.norm_const << "\n";
	os << "few_shot_fraction = " << c.data.few_shot_fraction << "\n";
	os << "train_frac = " << c.data.train_frac << "\n";
	os << "val_frac = " << c.data.val_frac << "\n";
	os << "test_frac = " << c.data.test_frac << "\n";
	os << "\n[model]\n";
	os << "profile = " << c.model.profile << "\n";
	os << "d_model = " << c.model.d_model << "\n";
	os << "e_layers = " << c.model.e_layers << "\n";
	os << "n_heads = " << c.model.n_heads << "\n";
	os << "dropout = " << c.model.dropout << "\n";
	os << "patch_len = " << c.model.patch_len << "\n";
	os << "patch_stride = " << c.model.patch_stride << "\n";
	os << "patch_padding = " << c.model.patch_padding << "\n";
	os << "image_size = " << c.model.image_size << "\n";
	os << "c_img = " << c.model.c_img << "\n";
	os << "h_hidden = " << c.model.h_hidden << "\n";
	os << "vision_depth = " << c.model.vision_depth << "\n";
	os << "teacher_d_vis = " << c.model.teacher_d_vis << "\n";
	os << "student_d_vis = " << c.model.student_d_vis << "\n";
	os << "teacher_d_fus = " << c.model.teacher_d_fus << "\n";
	os << "student_d_fus = " << c.model.student_d_fus << "\n";
	os << "fusion_heads = " << c.model.fusion_heads << "\n";
	os << "\n[train]\n";
	os << "batch_size = " << c.train.batch_size << "\n";
	os << "learning_rate = " << c.train.learning_rate << "\n";
	os << "train_epochs = " << c.train.train_epochs << "\n";
	os << "patience = " << c.train.patience << "\n";
	os << "seed = " << c.train.seed << "\n";
	os << "weight_decay = " << c.train.weight_decay << "\n";
	os << "\n[distill]\n";
	os << "enabled = " << (c.distill_enabled ? "true" : "false") << "\n";
	os << "init_feature_w = " << c.distill.init_weights[kFd] << "\n";
	os << "init_fcst_w = " << c.distill.init_weights[kFcst] << "\n";
	os << "init_recon_w = " << c.distill.init_weights[kRecon] << "\n";
	os << "init_att_w = " << c.distill.init_weights[kCd] << "\n";
	os << "init_temperature = " << c.distill.init_temperature << "\n";
	os << "distill_lr_ratio = " << c.train.distill_lr_ratio << "\n";
	os << "num_alignment_scales = " << c.distill.n_scales << "\n";
	os << "feature_alignment_dropout = " << c.distill.alignment_dropout << "\n";
	os << "loss_momentum = " << c.distill.loss_momentum << "\n";
	os << "weight_regularization = " << c.distill.gamma << "\n";
	os << "lambda_mse = " << c.distill.lambda_mse << "\n";
	os << "lambda_cos = " << c.distill.lambda_cos << "\n";
	os << "lambda_kl = " << c.distill.lambda_kl << "\n";
	os << "lambda_distill = " << c.distill.lambda_distill << "\n";
	os << "warmup_steps = " << c.distill.warmup_steps << "\n";
	os << "convergence_window = " << c.distill.convergence_window << "\n";
	os << "convergence_eps = " << c.distill.convergence_eps << "\n";
	return os.str();
}

} // namespace tsd

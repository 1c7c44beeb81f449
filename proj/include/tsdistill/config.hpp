#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tsdistill/distill.hpp"

namespace tsd {

struct DataConfig {
	std::string name = "synth";
	std::string csv_path; // empty -> synthetic source
	bool has_header = true;
	int timestamp_column = -1; // -1 = none
	std::string synth_kind = "sine_mix";
	std::size_t synth_t = 4000;
	std::size_t synth_c = 3;
	double synth_noise = 0.1;
	std::uint64_t synth_seed = 1;
	std::size_t periodicity = 24;
	std::size_t seq_len = 512;
	std::size_t pred_len = 96;
	std::size_t window_stride = 1;
	std::size_t eval_stride = 1;
	double norm_const = 0.4;
	double few_shot_fraction = 1.0;
	double train_frac = 0.7, val_frac = 0.1, test_frac = 0.2;
};

struct ModelConfig {
	std::string profile = "paper-default";
	std::size_t d_model = 128;
	std::size_t e_layers = 2;
	std::size_t n_heads = 4;
	double dropout = 0.1;
	std::size_t patch_len = 16, patch_stride = 8, patch_padding = 8;
	std::size_t image_size = 56;
	std::size_t c_img = 3;
	std::size_t h_hidden = 16;
	std::size_t vision_depth = 3;
	std::size_t teacher_d_vis = 1280; // MAE-Huge row of the teacher table
	std::size_t student_d_vis = 128;
	std::size_t teacher_d_fus = 256;
	std::size_t student_d_fus = 256;
	std::size_t fusion_heads = 4;
};

struct TrainConfig {
	std::size_t batch_size = 32;
	double learning_rate = 1e-3;
	std::size_t train_epochs = 10;
	std::size_t patience = 5;
	std::uint64_t seed = 1;
	double weight_decay = 1e-4;
	double distill_lr_ratio = 0.1;
};

struct RunConfig {
	DataConfig data;
	ModelConfig model;
	TrainConfig train;
	DistillConfig distill;
	bool distill_enabled = true; // false: transfer terms never computed (no-KD baseline)
	std::string mode = "train";  // train | distill | eval | few_shot | zero_shot | render
	std::string out_dir;         // empty: no files written
	std::string checkpoint;      // eval input
	bool zero_shot = false;

	void validate() const;
};

/// Applies profile presets to the model dimensions ("paper-default" or "tiny").
void apply_profile(ModelConfig &model, const std::string &profile);

/// Parses the flat `key = value` config format with [data]/[model]/[train]/
/// [distill] sections. Unknown sections or keys are rejected by name.
RunConfig load_config_file(const std::string &path);

/// Applies one "section.key=value" override (CLI flags reuse the same table).
void apply_override(RunConfig &cfg, const std::string &dotted_key, const std::string &value);

/// Fully resolved config echo, in the config-file format.
std::string config_echo(const RunConfig &cfg);

} // namespace tsd

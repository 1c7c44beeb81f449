#include "tsdistill/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "tsdistill/grad_check.hpp"
#include "tsdistill/optimizer.hpp"

namespace tsd {

namespace {

std::uint64_t derived_seed(std::uint64_t seed, const std::string &purpose) {
	return Rng::stream(seed, "seed/" + purpose).next_u64();
}

std::vector<SeriesWindow> windowize(const Series &s, const RunConfig &cfg, std::size_t stride) {
	auto raw = make_windows(s, cfg.data.seq_len, cfg.data.pred_len, stride);
	std::vector<SeriesWindow> out;
	out.reserve(raw.size());
	for (auto &w : raw)
		out.push_back(instance_normalize(w, cfg.data.norm_const));
	return out;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed, std::size_t epoch) {
	std::vector<std::size_t> idx(n);
	for (std::size_t i = 0; i < n; ++i)
		idx[i] = i;
	Rng rng = Rng::stream(seed, "shuffle/epoch" + std::to_string(epoch));
	for (std::size_t i = n; i > 1; --i)
		std::swap(idx[i - 1], idx[rng.below(i)]);
	return idx;
}

/// Mean per-window denormalized MSE (the checkpoint-selection criterion).
double denorm_val_mse(const Forecaster &model, const std::vector<SeriesWindow> &windows,
                      std::size_t batch_size) {
	if (windows.empty())
		throw ConfigError("validation split yields no windows");
	double total = 0.0;
	Rng dead = Rng::stream(0, "eval/no-dropout");
	for (std::size_t start = 0; start < windows.size(); start += batch_size) {
		std::size_t end = std::min(windows.size(), start + batch_size);
		std::vector<std::size_t> idx;
		for (std::size_t i = start; i < end; ++i)
			idx.push_back(i);
		WindowBatch batch = batch_from_windows(windows, idx);
		ModelOutputs out = model.forward(batch.lookback, false, dead);
		std::size_t per = windows[0].pred_len * windows[0].channels;
		for (std::size_t i = 0; i < idx.size(); ++i) {
			const SeriesWindow &w = windows[idx[i]];
			std::vector<double> pred(out.predictions.data().begin() + i * per,
			                         out.predictions.data().begin() + (i + 1) * per);
			Forecast f;
			f.horizon = w.pred_len;
			f.channels = w.channels;
			f.seasonality = 1;
			f.predicted = denormalize_predictions(w, pred);
			f.actual = denormalize(w).horizon;
			total += mse_mae(f).first;
		}
	}
	return total / double(windows.size());
}

struct ParamSnapshot {
	std::vector<std::vector<double>> values;

	static ParamSnapshot capture(const std::vector<std::pair<std::string, Tensor>> &params) {
		ParamSnapshot s;
		for (const auto &[name, t] : params)
			s.values.push_back(t.data());
		return s;
	}
	void restore(const std::vector<std::pair<std::string, Tensor>> &params) const {
		for (std::size_t i = 0; i < params.size(); ++i)
			params[i].second.leaf_data() = values[i];
	}
};

void ensure_dir(const std::string &dir) {
	if (!dir.empty())
		std::filesystem::create_directories(dir);
}

void write_text(const std::string &path, const std::string &content) {
	std::ofstream out(path, std::ios::binary);
	if (!out)
		throw IoError("cannot write " + path);
	out << content;
}

nlohmann::ordered_json opt_json(const std::optional<double> &v) {
	return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

// ---- joint objective (shared by the distill loop and the gradcheck suite) ----

struct FrozenTargets {
	Tensor teacher_attention; // values captured at the base point
	Tensor teacher_fused;
	std::vector<std::pair<double, double>> teacher_minmax, student_minmax;
};

struct JointParts {
	TotalLossParts parts;
	std::size_t fd_zero_norm_rows = 0;
	std::optional<double> alignment_score; // diagnostic: mean cosine of aligned vs teacher
};

JointParts joint_objective(const Forecaster &teacher, const Forecaster &student,
                           const PyramidAligner *aligner, DistillState &state, const Tensor &x,
                           const Tensor &y, bool training, Rng &teacher_drop, Rng &student_drop,
                           Rng &aligner_drop, const FrozenTargets *frozen) {
	std::optional<std::vector<std::pair<double, double>>> t_mm, s_mm;
	if (frozen) {
		t_mm = frozen->teacher_minmax;
		s_mm = frozen->student_minmax;
	}
	ModelOutputs t_out = teacher.forward(x, training, teacher_drop, t_mm);
	ModelOutputs s_out = student.forward(x, training, student_drop, s_mm);

	std::array<Tensor, 4> comps;
	comps[kRecon] = reconstruction_loss(t_out.predictions, y);
	comps[kFcst] = smooth_l1(s_out.predictions, y, 1.0);

	JointParts jp;
	if (aligner) {
		const DistillConfig &dc = state.config();
		Tensor tau = state.temperature();
		Tensor f_tea = frozen ? frozen->teacher_fused : t_out.fused;
		Tensor p_tea = frozen ? frozen->teacher_attention : t_out.attention;
		Tensor aligned = aligner->align(s_out.fused, training, aligner_drop);
		auto fd = feature_distill(aligned, f_tea, tau, dc.lambda_mse, dc.lambda_cos, dc.lambda_kl);
		comps[kFd] = fd.loss;
		comps[kCd] = correlation_distill(p_tea, s_out.attention, tau);
		jp.fd_zero_norm_rows = fd.zero_norm_rows;
		jp.alignment_score = 1.0 - fd.cosine.value();
	}
	jp.parts = total_distill_loss(comps, state);
	return jp;
}

std::vector<std::pair<std::string, Tensor>>
prefixed_params(const ParamSet &set, const std::string &prefix) {
	std::vector<std::pair<std::string, Tensor>> out;
	for (const auto &[name, t] : set.items())
		out.emplace_back(prefix + name, t);
	return out;
}

} // namespace

PreparedData prepare_data(const RunConfig &cfg) {
	Series full;
	if (!cfg.data.csv_path.empty()) {
		std::optional<std::size_t> ts;
		if (cfg.data.timestamp_column >= 0)
			ts = static_cast<std::size_t>(cfg.data.timestamp_column);
		full = load_csv(cfg.data.csv_path, cfg.data.has_header, ts);
	} else {
		full = synth_generate(synth_kind_from_string(cfg.data.synth_kind), cfg.data.synth_t,
		                      cfg.data.synth_c, cfg.data.periodicity, cfg.data.synth_seed,
		                      cfg.data.synth_noise);
	}
	full.periodicity = cfg.data.periodicity;

	SplitSpec spec{cfg.data.train_frac, cfg.data.val_frac, cfg.data.test_frac,
	               cfg.data.few_shot_fraction};
	PreparedData out;
	out.splits = split(full, spec, cfg.data.seq_len + cfg.data.pred_len);
	out.channels = full.C;
	out.train_windows = windowize(out.splits.train, cfg, cfg.data.window_stride);
	out.val_windows = windowize(out.splits.val, cfg, cfg.data.eval_stride);
	out.test_windows = windowize(out.splits.test, cfg, cfg.data.eval_stride);
	return out;
}

ForecasterConfig make_teacher_config(const RunConfig &cfg, std::size_t channels) {
	ForecasterConfig fc;
	fc.role = ModelRole::Teacher;
	fc.channels = channels;
	fc.pred_len = cfg.data.pred_len;
	fc.temporal.d_model = cfg.model.d_model;
	fc.temporal.e_layers = cfg.model.e_layers;
	fc.temporal.n_heads = cfg.model.n_heads;
	fc.temporal.dropout = cfg.model.dropout;
	fc.temporal.patch_len = cfg.model.patch_len;
	fc.temporal.patch_stride = cfg.model.patch_stride;
	fc.temporal.patch_padding = cfg.model.patch_padding;
	fc.visual.h_hidden = cfg.model.h_hidden;
	fc.visual.image_size = cfg.model.image_size;
	fc.visual.c_img = cfg.model.c_img;
	fc.visual.periodicity = cfg.data.periodicity;
	fc.vision.d_vis = cfg.model.teacher_d_vis;
	fc.vision.depth = cfg.model.vision_depth;
	fc.fusion.d_fus = cfg.model.teacher_d_fus;
	fc.fusion.n_heads = cfg.model.fusion_heads;
	fc.fusion.dropout = cfg.model.dropout;
	return fc;
}

ForecasterConfig make_student_config(const RunConfig &cfg, std::size_t channels) {
	ForecasterConfig fc = make_teacher_config(cfg, channels);
	fc.role = ModelRole::Student;
	fc.vision.d_vis = cfg.model.student_d_vis;
	fc.fusion.d_fus = cfg.model.student_d_fus;
	return fc;
}

MetricsRecord evaluate_model(const Forecaster &model, const PreparedData &data,
                             const RunConfig &cfg, const std::string &mode_label) {
	const auto &windows = data.test_windows;
	if (windows.empty())
		throw ConfigError("test split yields no windows");
	MetricAccumulator acc;
	Rng dead = Rng::stream(0, "eval/no-dropout");
	std::size_t bs = cfg.train.batch_size;
	for (std::size_t start = 0; start < windows.size(); start += bs) {
		std::size_t end = std::min(windows.size(), start + bs);
		std::vector<std::size_t> idx;
		for (std::size_t i = start; i < end; ++i)
			idx.push_back(i);
		WindowBatch batch = batch_from_windows(windows, idx);
		ModelOutputs out = model.forward(batch.lookback, false, dead);
		out.predictions.check_finite("evaluation predictions");
		std::size_t per = windows[0].pred_len * windows[0].channels;
		for (std::size_t i = 0; i < idx.size(); ++i) {
			const SeriesWindow &w = windows[idx[i]];
			std::vector<double> pred(out.predictions.data().begin() + i * per,
			                         out.predictions.data().begin() + (i + 1) * per);
			SeriesWindow raw = denormalize(w);
			Forecast cand;
			cand.horizon = w.pred_len;
			cand.channels = w.channels;
			cand.seasonality = cfg.data.periodicity;
			cand.predicted = denormalize_predictions(w, pred);
			cand.actual = raw.horizon;

			Series history;
			history.T = w.seq_len;
			history.C = w.channels;
			history.values = raw.lookback;
			acc.add(cand, naive2(history, w.pred_len, cfg.data.periodicity, cand.actual));
		}
	}
	return acc.finalize(cfg.data.name, mode_label, cfg.data.pred_len, cfg.train.seed);
}

RunRecord run_train(const RunConfig &cfg) {
	cfg.validate();
	auto t0 = std::chrono::steady_clock::now();
	PreparedData data = prepare_data(cfg);

	Forecaster teacher(make_teacher_config(cfg, data.channels), derived_seed(cfg.train.seed, "teacher"));
	auto params = prefixed_params(teacher.params(), "teacher.");
	AdamWConfig oc;
	oc.lr = cfg.train.learning_rate;
	oc.weight_decay = cfg.train.weight_decay;
	AdamW opt(params, oc);
	Rng teacher_drop = Rng::stream(cfg.train.seed, "dropout/teacher");

	RunRecord rec;
	rec.mode = cfg.data.few_shot_fraction < 1.0 ? "few_shot" : "train";
	rec.dataset = cfg.data.name;
	rec.seed = cfg.train.seed;
	rec.config_snapshot = config_echo(cfg);

	std::size_t bs = cfg.train.batch_size;
	if (data.train_windows.size() < bs)
		throw ConfigError("training split yields fewer windows than one batch");

	double best_val = std::numeric_limits<double>::infinity();
	ParamSnapshot best;
	for (std::size_t epoch = 0; epoch < cfg.train.train_epochs; ++epoch) {
		auto order = shuffled_indices(data.train_windows.size(), cfg.train.seed, epoch);
		double loss_sum = 0.0;
		std::size_t n_batches = order.size() / bs; // final short batch dropped
		for (std::size_t b = 0; b < n_batches; ++b) {
			std::vector<std::size_t> idx(order.begin() + b * bs, order.begin() + (b + 1) * bs);
			WindowBatch batch = batch_from_windows(data.train_windows, idx);
			for (const auto &[name, t] : params)
				t.zero_grad();
			ModelOutputs out = teacher.forward(batch.lookback, true, teacher_drop);
			Tensor loss = reconstruction_loss(out.predictions, batch.target);
			if (!loss.all_finite() || !std::isfinite(loss.value()))
				throw NumericError("training diverged at epoch " + std::to_string(epoch) +
				                   " batch " + std::to_string(b) + ": non-finite loss");
			backward(loss);
			opt.step();
			loss_sum += loss.value();
			rec.recon_loss_trace.push_back(loss.value());
			rec.total_loss_trace.push_back(loss.value());
		}
		EpochStats es;
		es.train_loss = n_batches ? loss_sum / double(n_batches) : 0.0;
		es.val_mse = denorm_val_mse(teacher, data.val_windows, bs);
		rec.epochs.push_back(es);
		if (es.val_mse < best_val) {
			best_val = es.val_mse;
			best = ParamSnapshot::capture(params);
			rec.best_epoch = epoch;
		}
		if (epoch - rec.best_epoch >= cfg.train.patience)
			break; // early stopping
	}
	if (!best.values.empty())
		best.restore(params);

	rec.metrics = evaluate_model(teacher, data, cfg, rec.mode);
	auto t1 = std::chrono::steady_clock::now();
	rec.wall_seconds = std::chrono::duration<double>(t1 - t0).count();

	if (!cfg.out_dir.empty()) {
		ensure_dir(cfg.out_dir);
		save_checkpoint(teacher, cfg.out_dir + "/teacher.ckpt");
		write_text(cfg.out_dir + "/metrics.jsonl", metrics_record_json(rec.metrics) + "\n");
		write_text(cfg.out_dir + "/run.json", run_record_json(rec));
		write_text(cfg.out_dir + "/config_resolved.ini", rec.config_snapshot);
	}
	return rec;
}

RunRecord run_distill(const RunConfig &cfg_in) {
	RunConfig cfg = cfg_in;
	// the no-KD baseline never computes the transfer terms; their weights are
	// pinned to zero so the regularizer matches the masked full loop exactly
	if (!cfg.distill_enabled) {
		cfg.distill.weight_mask[kFd] = 0.0;
		cfg.distill.weight_mask[kCd] = 0.0;
	}
	cfg.validate();
	auto t0 = std::chrono::steady_clock::now();
	PreparedData data = prepare_data(cfg);

	Forecaster teacher(make_teacher_config(cfg, data.channels), derived_seed(cfg.train.seed, "teacher"));
	Forecaster student(make_student_config(cfg, data.channels), derived_seed(cfg.train.seed, "student"));

	ParamSet extras;
	std::optional<PyramidAligner> aligner;
	if (cfg.distill_enabled)
		aligner.emplace(cfg.model.student_d_fus, cfg.model.teacher_d_fus, cfg.distill.n_scales,
		                cfg.distill.alignment_dropout, extras, "aligner",
		                derived_seed(cfg.train.seed, "aligner"));
	DistillState state(cfg.distill, extras, "state");

	// model optimizer: both networks plus the aligner pathways; the distill
	// optimizer owns exactly theta_w, theta_tau, beta at ratio * lr
	auto model_params = prefixed_params(teacher.params(), "teacher.");
	auto student_params = prefixed_params(student.params(), "student.");
	model_params.insert(model_params.end(), student_params.begin(), student_params.end());
	std::vector<std::pair<std::string, Tensor>> distill_params;
	for (const auto &[name, t] : extras.items()) {
		if (name == "state.theta_w" || name == "state.theta_tau" || name == "aligner.beta")
			distill_params.emplace_back(name, t);
		else
			model_params.emplace_back(name, t);
	}
	AdamWConfig oc;
	oc.weight_decay = cfg.train.weight_decay;
	DualOptimizer dual(model_params, distill_params, cfg.train.learning_rate,
	                   cfg.train.distill_lr_ratio, oc);

	Rng teacher_drop = Rng::stream(cfg.train.seed, "dropout/teacher");
	Rng student_drop = Rng::stream(cfg.train.seed, "dropout/student");
	Rng aligner_drop = Rng::stream(cfg.train.seed, "dropout/aligner");

	RunRecord rec;
	rec.mode = cfg.data.few_shot_fraction < 1.0 ? "few_shot" : "distill";
	rec.dataset = cfg.data.name;
	rec.seed = cfg.train.seed;
	rec.config_snapshot = config_echo(cfg);

	auto all_params = model_params;
	all_params.insert(all_params.end(), distill_params.begin(), distill_params.end());

	std::size_t bs = cfg.train.batch_size;
	if (data.train_windows.size() < bs)
		throw ConfigError("training split yields fewer windows than one batch");

	double best_val = std::numeric_limits<double>::infinity();
	double best_teacher_val = std::numeric_limits<double>::infinity();
	ParamSnapshot best_all, best_teacher;
	auto teacher_only = prefixed_params(teacher.params(), "teacher.");
	std::optional<StepSnapshot> prev_snapshot;
	std::size_t global_step = 0;

	for (std::size_t epoch = 0; epoch < cfg.train.train_epochs; ++epoch) {
		auto order = shuffled_indices(data.train_windows.size(), cfg.train.seed, epoch);
		double loss_sum = 0.0;
		std::size_t n_batches = order.size() / bs;
		for (std::size_t b = 0; b < n_batches; ++b) {
			std::vector<std::size_t> idx(order.begin() + b * bs, order.begin() + (b + 1) * bs);
			WindowBatch batch = batch_from_windows(data.train_windows, idx);
			for (const auto &[name, t] : all_params)
				t.zero_grad();

			JointParts jp = joint_objective(teacher, student, aligner ? &*aligner : nullptr, state,
			                                batch.lookback, batch.target, true, teacher_drop,
			                                student_drop, aligner_drop, nullptr);
			if (!std::isfinite(jp.parts.total.value()))
				throw NumericError("distillation diverged at epoch " + std::to_string(epoch) +
				                   " batch " + std::to_string(b) + ": non-finite loss");
			backward(jp.parts.total);
			dual.step();

			// trackers update after the losses they normalized were consumed
			for (std::size_t i = 0; i < 4; ++i)
				if (i == kFcst || i == kRecon || aligner)
					state.update_tracker(static_cast<LossComponent>(i), jp.parts.raw[i]);
			state.mark_step_tracked();

			auto w_post = state.weight_values();
			state.push_weight_history(w_post);
			if (!rec.convergence_step &&
			    check_convergence(state.weight_history(), cfg.distill.convergence_window,
			                      cfg.distill.convergence_eps) == Convergence::Converged)
				rec.convergence_step = global_step;

			StepRecord sr;
			sr.step = global_step;
			for (std::size_t i = 0; i < 4; ++i) {
				bool present = (i == kFcst || i == kRecon) || aligner.has_value();
				if (present) {
					sr.raw[i] = jp.parts.raw[i];
					sr.normalized[i] = jp.parts.normalized[i];
				}
			}
			sr.weights = w_post;
			sr.tau = state.temperature_value();
			if (aligner) {
				Tensor bw = aligner->pathway_weights();
				sr.beta_softmax.assign(bw.data().begin(), bw.data().end());
			}
			sr.alignment_score = jp.alignment_score;
			sr.total = jp.parts.total.value();
			sr.regularization = jp.parts.regularization;
			sr.fd_zero_norm_rows = jp.fd_zero_norm_rows;

			StepSnapshot snap;
			snap.l_fcst = jp.parts.raw[kFcst];
			snap.l_fd = aligner ? jp.parts.raw[kFd] : 0.0;
			snap.tau = sr.tau;
			snap.weights = w_post;
			if (prev_snapshot)
				sr.effectiveness = monitor(*prev_snapshot, snap);
			prev_snapshot = snap;

			rec.steps.push_back(sr);
			rec.fcst_loss_trace.push_back(jp.parts.raw[kFcst]);
			rec.recon_loss_trace.push_back(jp.parts.raw[kRecon]);
			rec.total_loss_trace.push_back(sr.total);
			loss_sum += sr.total;
			++global_step;
		}
		EpochStats es;
		es.train_loss = n_batches ? loss_sum / double(n_batches) : 0.0;
		es.val_mse = denorm_val_mse(student, data.val_windows, bs);
		rec.epochs.push_back(es);
		double teacher_val = denorm_val_mse(teacher, data.val_windows, bs);
		if (teacher_val < best_teacher_val) {
			best_teacher_val = teacher_val;
			best_teacher = ParamSnapshot::capture(teacher_only);
		}
		if (es.val_mse < best_val) {
			best_val = es.val_mse;
			best_all = ParamSnapshot::capture(all_params);
			rec.best_epoch = epoch;
		}
		if (epoch - rec.best_epoch >= cfg.train.patience)
			break;
	}
	if (!best_all.values.empty())
		best_all.restore(all_params);
	rec.metrics = evaluate_model(student, data, cfg, rec.mode);
	// jointly trained teacher evaluated at its own best validation epoch
	if (!best_teacher.values.empty())
		best_teacher.restore(teacher_only);
	rec.teacher_metrics = evaluate_model(teacher, data, cfg, rec.mode + "-teacher");

	auto t1 = std::chrono::steady_clock::now();
	rec.wall_seconds = std::chrono::duration<double>(t1 - t0).count();

	if (!cfg.out_dir.empty()) {
		ensure_dir(cfg.out_dir);
		save_checkpoint(student, cfg.out_dir + "/student.ckpt");
		save_checkpoint(teacher, cfg.out_dir + "/teacher.ckpt");
		std::string metrics_lines = metrics_record_json(rec.metrics) + "\n" +
		                            metrics_record_json(*rec.teacher_metrics) + "\n";
		write_text(cfg.out_dir + "/metrics.jsonl", metrics_lines);
		std::string steps;
		for (const auto &sr : rec.steps)
			steps += step_record_json(sr) + "\n";
		write_text(cfg.out_dir + "/steps.jsonl", steps);
		write_text(cfg.out_dir + "/run.json", run_record_json(rec));
		write_text(cfg.out_dir + "/config_resolved.ini", rec.config_snapshot);
	}
	return rec;
}

MetricsRecord run_eval(const RunConfig &cfg) {
	if (cfg.checkpoint.empty())
		throw ConfigError("eval requires a checkpoint path");
	cfg.validate();
	Forecaster model = load_checkpoint(cfg.checkpoint);
	PreparedData data = prepare_data(cfg);
	if (model.config().channels != data.channels)
		throw ConfigError("checkpoint was trained on " + std::to_string(model.config().channels) +
		                  " channels but the target data has " + std::to_string(data.channels));
	if (model.config().pred_len != cfg.data.pred_len)
		throw ConfigError("checkpoint prediction length differs from the configured pred_len");
	// zero-shot transfer uses the target dataset's periodicity in the encodings
	model.set_visual_periodicity(cfg.data.periodicity);

	MetricsRecord rec =
	    evaluate_model(model, data, cfg, cfg.zero_shot ? "zero_shot" : "eval");
	if (!cfg.out_dir.empty()) {
		ensure_dir(cfg.out_dir);
		write_text(cfg.out_dir + "/metrics.jsonl", metrics_record_json(rec) + "\n");
	}
	return rec;
}

std::vector<std::string> run_render(const RunConfig &cfg, std::size_t window_index) {
	cfg.validate();
	PreparedData data = prepare_data(cfg);
	const auto &windows = data.train_windows;
	if (window_index >= windows.size())
		throw ConfigError("window index " + std::to_string(window_index) + " out of range (" +
		                  std::to_string(windows.size()) + " windows)");
	Forecaster model = cfg.checkpoint.empty()
	                       ? Forecaster(make_teacher_config(cfg, data.channels),
	                                    derived_seed(cfg.train.seed, "teacher"))
	                       : load_checkpoint(cfg.checkpoint);

	WindowBatch batch = batch_from_windows(windows, {window_index});
	Tensor img = model.render(batch.lookback); // 1 x C_img x S x S
	std::size_t c_img = img.shape()[1], side = img.shape()[2];

	ensure_dir(cfg.out_dir.empty() ? "." : cfg.out_dir);
	std::string base = (cfg.out_dir.empty() ? "." : cfg.out_dir) + "/render_w" +
	                   std::to_string(window_index) + "_c";
	std::vector<std::string> paths;
	for (std::size_t c = 0; c < c_img; ++c) {
		std::vector<double> plane(img.data().begin() + c * side * side,
		                          img.data().begin() + (c + 1) * side * side);
		std::string path = base + std::to_string(c) + ".pgm";
		export_pgm(plane, side, side, path);
		paths.push_back(path);
	}
	return paths;
}

std::string step_record_json(const StepRecord &r) {
	nlohmann::ordered_json j;
	j["step"] = r.step;
	j["raw"] = {{"fd", opt_json(r.raw[kFd])},
	            {"fcst", opt_json(r.raw[kFcst])},
	            {"recon", opt_json(r.raw[kRecon])},
	            {"cd", opt_json(r.raw[kCd])}};
	j["norm"] = {{"fd", opt_json(r.normalized[kFd])},
	             {"fcst", opt_json(r.normalized[kFcst])},
	             {"recon", opt_json(r.normalized[kRecon])},
	             {"cd", opt_json(r.normalized[kCd])}};
	j["w"] = {r.weights[0], r.weights[1], r.weights[2], r.weights[3]};
	j["tau"] = r.tau;
	j["beta_softmax"] = r.beta_softmax;
	j["alignment_score"] = opt_json(r.alignment_score);
	if (r.effectiveness) {
		j["m_eff"] = {{"dfcst_dfd", opt_json(r.effectiveness->dfcst_dfd)},
		              {"dfcst_dtau", opt_json(r.effectiveness->dfcst_dtau)},
		              {"dw", r.effectiveness->weight_change}};
	} else {
		j["m_eff"] = nullptr;
	}
	j["total"] = r.total;
	j["reg"] = r.regularization;
	j["fd_zero_norm_rows"] = r.fd_zero_norm_rows;
	return j.dump();
}

std::string run_record_json(const RunRecord &r) {
	nlohmann::ordered_json j;
	j["mode"] = r.mode;
	j["dataset"] = r.dataset;
	j["seed"] = r.seed;
	j["best_epoch"] = r.best_epoch;
	j["convergence_step"] =
	    r.convergence_step ? nlohmann::ordered_json(*r.convergence_step) : nlohmann::ordered_json(nullptr);
	nlohmann::ordered_json epochs = nlohmann::ordered_json::array();
	for (const auto &e : r.epochs)
		epochs.push_back({{"train_loss", e.train_loss}, {"val_mse", e.val_mse}});
	j["epochs"] = epochs;
	j["metrics"] = nlohmann::ordered_json::parse(metrics_record_json(r.metrics));
	if (r.teacher_metrics)
		j["teacher_metrics"] = nlohmann::ordered_json::parse(metrics_record_json(*r.teacher_metrics));
	j["wall_seconds"] = r.wall_seconds;
	j["config"] = r.config_snapshot;
	return j.dump(2);
}

// ---- gradcheck suite ----

namespace {

Tensor broken_relu(const Tensor &x) {
	auto node = std::make_shared<detail::Node>();
	node->shape = x.shape();
	node->data.resize(x.numel());
	for (std::size_t i = 0; i < x.numel(); ++i)
		node->data[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
	node->parents = {x.node()};
	node->requires_grad = x.requires_grad();
	auto parent = x.node();
	node->backprop = [parent](detail::Node &self) {
		parent->ensure_grad();
		for (std::size_t i = 0; i < self.data.size(); ++i)
			parent->grad[i] += 0.9 * self.grad[i] * (parent->data[i] > 0.0 ? 1.0 : 0.0);
	};
	return Tensor::wrap(node);
}

} // namespace

std::vector<GradCheckItem> run_gradcheck(const std::string &inject_fault) {
	std::vector<GradCheckItem> items;
	auto check_op = [&](const std::string &name, std::function<Tensor(const Tensor &)> f,
	                    Shape shape, double lo, double hi, double tol = 1e-4) {
		GradCheckItem item{name, true, 0.0};
		for (std::uint64_t seed = 1; seed <= 10; ++seed) {
			Rng rng = Rng::stream(seed, "gradcheck/" + name);
			std::vector<double> data(shape_numel(shape));
			for (double &v : data)
				v = rng.uniform(lo, hi);
			Tensor x = Tensor::from_data(shape, std::move(data));
			auto rep = grad_check(f, x, 1e-5, tol);
			item.max_rel_err = std::max(item.max_rel_err, rep.max_rel_err);
			item.pass = item.pass && rep.pass;
		}
		items.push_back(item);
	};

	Rng fixed = Rng::stream(7, "gradcheck/fixtures");
	Tensor other = Tensor::from_data({2, 6}, [&] {
		std::vector<double> v(12);
		for (double &x : v)
			x = fixed.uniform(0.3, 1.5);
		return v;
	}());
	Tensor w34 = Tensor::from_data({3, 4}, [&] {
		std::vector<double> v(12);
		for (double &x : v)
			x = fixed.uniform(-1.0, 1.0);
		return v;
	}());
	Tensor k13 = Tensor::from_data({2, 2, 3}, [&] {
		std::vector<double> v(12);
		for (double &x : v)
			x = fixed.uniform(-1.0, 1.0);
		return v;
	}());
	Tensor k2d = Tensor::from_data({2, 1, 3, 3}, [&] {
		std::vector<double> v(18);
		for (double &x : v)
			x = fixed.uniform(-1.0, 1.0);
		return v;
	}());

	check_op("add", [&](const Tensor &t) { return sum(t + other); }, {2, 6}, -1, 1);
	check_op("sub", [&](const Tensor &t) { return sum(t - other); }, {2, 6}, -1, 1);
	check_op("mul", [&](const Tensor &t) { return sum(t * other); }, {2, 6}, -1, 1);
	check_op("div", [&](const Tensor &t) { return sum(t / other); }, {2, 6}, -1, 1);
	check_op("neg", [&](const Tensor &t) { return sum(neg(t) * other); }, {2, 6}, -1, 1);
	check_op("exp", [&](const Tensor &t) { return sum(exp(t)); }, {2, 6}, -1, 1);
	check_op("log", [&](const Tensor &t) { return sum(log(t)); }, {2, 6}, 0.2, 2.0);
	if (inject_fault == "relu") {
		check_op("relu (fault injected)", [&](const Tensor &t) { return sum(broken_relu(t)); },
		         {2, 6}, 0.2, 1.0);
	} else {
		check_op("relu", [&](const Tensor &t) { return sum(relu(t) * other); }, {2, 6}, 0.2, 1.0);
	}
	check_op("sigmoid", [&](const Tensor &t) { return sum(sigmoid(t)); }, {2, 6}, -2, 2);
	check_op("gelu", [&](const Tensor &t) { return sum(gelu(t)); }, {2, 6}, -2, 2);
	check_op("softmax", [&](const Tensor &t) { return sum(softmax(t, 1) * other); }, {2, 6}, -2, 2);
	check_op("layer_norm", [&](const Tensor &t) {
		Tensor gain = Tensor::full({6}, 1.2);
		Tensor bias = Tensor::full({6}, 0.1);
		return sum(layer_norm(t, gain, bias, 1) * other);
	}, {2, 6}, -1, 1);
	check_op("smooth_l1", [&](const Tensor &t) { return smooth_l1(t, other, 1.0); }, {2, 6}, 2.5, 4.0);
	check_op("matmul", [&](const Tensor &t) { return sum(matmul(t, w34)); }, {2, 3}, -1, 1);
	check_op("conv1d", [&](const Tensor &t) { return sum(conv1d(t, k13, 1, 1)); }, {1, 2, 5}, -1, 1,
	         1e-5);
	check_op("conv2d", [&](const Tensor &t) { return sum(conv2d(t, k2d, 2, 1)); }, {1, 1, 5, 5}, -1,
	         1, 1e-5);
	check_op("bilinear_resize",
	         [&](const Tensor &t) { return sum(bilinear_resize(t, 7, 5) * bilinear_resize(t, 7, 5)); },
	         {1, 1, 3, 4}, -1, 1);
	check_op("patchify", [&](const Tensor &t) { return sum(exp(scale(patchify(t, 3, 2, 1), 0.3))); },
	         {1, 6, 2}, -1, 1);

	// distillation pieces
	{
		ParamSet ps;
		PyramidAligner aligner(4, 6, 3, 0.0, ps, "aligner", 11);
		Rng rng = Rng::stream(12, "gradcheck/pyramid-target");
		std::vector<double> tv(2 * 6);
		for (double &v : tv)
			v = rng.uniform(-1.0, 1.0);
		Tensor target = Tensor::from_data({2, 6}, tv);
		check_op("pyramid_align", [&](const Tensor &t) {
			Rng d = Rng::stream(0, "d");
			return feature_distill(aligner.align(t, false, d), target, Tensor::scalar(2.0), 1, 1, 1)
			    .loss;
		}, {2, 4}, -1, 1);
	}
	{
		Rng rng = Rng::stream(13, "gradcheck/cd-teacher");
		std::vector<double> tv(2 * 3 * 3);
		for (double &v : tv)
			v = rng.uniform(-1.0, 1.0);
		Tensor tea = softmax(Tensor::from_data({2, 3, 3}, tv), 2).detach();
		check_op("correlation_distill", [&](const Tensor &t) {
			return correlation_distill(tea, softmax(t, 2), Tensor::scalar(3.0));
		}, {2, 3, 3}, -1, 1);
		check_op("correlation_distill_tau", [&](const Tensor &theta) {
			Rng r2 = Rng::stream(14, "gradcheck/cd-student");
			std::vector<double> sv(2 * 3 * 3);
			for (double &v : sv)
				v = r2.uniform(-1.0, 1.0);
			Tensor stu = softmax(Tensor::from_data({2, 3, 3}, sv), 2);
			Tensor tau = shift(scale(sigmoid(theta), 9.0), 1.0);
			return correlation_distill(tea, stu, tau);
		}, {1}, -0.5, 0.5);
	}
	{
		Rng rng = Rng::stream(15, "gradcheck/fd-teacher");
		std::vector<double> tv(2 * 5);
		for (double &v : tv)
			v = rng.uniform(-1.0, 1.0);
		Tensor tea = Tensor::from_data({2, 5}, tv);
		check_op("feature_distill", [&](const Tensor &t) {
			return feature_distill(t, tea, Tensor::scalar(2.0), 1, 1, 1).loss;
		}, {2, 5}, -1, 1);
	}

	// end-to-end objective on a frozen-target micro instance
	{
		RunConfig cfg;
		apply_profile(cfg.model, "tiny");
		cfg.model.d_model = 8;
		cfg.model.e_layers = 1;
		cfg.model.n_heads = 2;
		cfg.model.dropout = 0.0;
		cfg.model.patch_len = 4;
		cfg.model.patch_stride = 2;
		cfg.model.patch_padding = 2;
		cfg.model.image_size = 8;
		cfg.model.c_img = 2;
		cfg.model.h_hidden = 4;
		cfg.model.vision_depth = 1;
		cfg.model.teacher_d_vis = 8;
		cfg.model.student_d_vis = 4;
		cfg.model.teacher_d_fus = 8;
		cfg.model.student_d_fus = 4;
		cfg.model.fusion_heads = 2;
		cfg.data.seq_len = 8;
		cfg.data.pred_len = 2;
		cfg.data.periodicity = 4;
		cfg.data.synth_c = 1;

		Forecaster teacher(make_teacher_config(cfg, 1), derived_seed(3, "teacher"));
		Forecaster student(make_student_config(cfg, 1), derived_seed(3, "student"));
		ParamSet extras;
		PyramidAligner aligner(cfg.model.student_d_fus, cfg.model.teacher_d_fus, 3, 0.0, extras,
		                       "aligner", derived_seed(3, "aligner"));
		DistillConfig dc;
		dc.alignment_dropout = 0.0;
		DistillState state(dc, extras, "state");

		Series s = synth_generate(SynthKind::SineMix, 64, 1, 4, 5, 0.05);
		auto windows = make_windows(s, 8, 2, 7);
		std::vector<SeriesWindow> normed;
		for (auto &w : windows)
			normed.push_back(instance_normalize(w, 0.4));
		WindowBatch batch = batch_from_windows(normed, {0, 1});

		// capture the stop-gradient values once; finite differences must hold
		// them fixed or they would register the detached pathways
		Rng dead = Rng::stream(0, "d");
		ModelOutputs base_t = teacher.forward(batch.lookback, false, dead);
		FrozenTargets frozen;
		frozen.teacher_attention = base_t.attention.detach();
		frozen.teacher_fused = base_t.fused.detach();
		frozen.teacher_minmax = image_min_max(teacher.prenorm_image(batch.lookback));
		frozen.student_minmax = image_min_max(student.prenorm_image(batch.lookback));

		auto objective = [&]() {
			Rng d1 = Rng::stream(0, "d"), d2 = Rng::stream(0, "d"), d3 = Rng::stream(0, "d");
			return joint_objective(teacher, student, &aligner, state, batch.lookback, batch.target,
			                       false, d1, d2, d3, &frozen)
			    .parts.total;
		};

		std::vector<std::pair<std::string, Tensor>> leaves = prefixed_params(teacher.params(), "teacher.");
		auto sp = prefixed_params(student.params(), "student.");
		leaves.insert(leaves.end(), sp.begin(), sp.end());
		for (const auto &[name, t] : extras.items())
			leaves.emplace_back(name, t);

		for (auto &res : grad_check_many(objective, leaves, 1e-5, 1e-3))
			items.push_back({"objective/" + res.name, res.report.pass, res.report.max_rel_err});
	}

	return items;
}

} // namespace tsd

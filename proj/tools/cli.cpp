#include "lcm/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "lcm/config.hpp"
#include "lcm/data_model.hpp"
#include "lcm/error.hpp"
#include "lcm/eval.hpp"
#include "lcm/model.hpp"
#include "lcm/preprocessing.hpp"
#include "lcm/rng.hpp"
#include "lcm/synthgen.hpp"
#include "lcm/trainer.hpp"

namespace lcm {
namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

// Per-subcommand training overrides.
struct TrainFlags {
  std::optional<std::uint64_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> p_mask;
  std::optional<double> lambda;
  std::optional<std::string> lr_mode;
};

RunConfig load_config(const CommonFlags& flags) {
  return flags.config.empty() ? RunConfig{} : load_run_config(flags.config);
}

void add_common(CLI::App* app, CommonFlags& flags, bool out_required) {
  app->add_option("--config", flags.config, "JSON run configuration");
  app->add_option("--seed", flags.seed, "Seed override");
  auto* out = app->add_option("--out", flags.out, "Output path");
  if (out_required) out->required();
}

void add_train_flags(CLI::App* app, TrainFlags& flags) {
  app->add_option("--epochs", flags.epochs, "Epoch override");
  app->add_option("--batch-size", flags.batch_size, "Batch size override");
  app->add_option("--p-mask", flags.p_mask, "Mask probability override");
  app->add_option("--lambda", flags.lambda, "Reconstruction weight override");
  app->add_option("--lr-mode", flags.lr_mode, "warmup-cosine or polynomial")
      ->check(CLI::IsMember({"warmup-cosine", "polynomial"}));
}

void apply_train_flags(RunConfig& cfg, const CommonFlags& common, const TrainFlags& flags) {
  if (common.seed) cfg.train.seed = *common.seed;
  if (flags.epochs) cfg.train.epochs = *flags.epochs;
  if (flags.batch_size) cfg.train.batch_size = *flags.batch_size;
  if (flags.p_mask) cfg.train.p_mask = *flags.p_mask;
  if (flags.lambda) cfg.train.lambda = *flags.lambda;
  if (flags.lr_mode) cfg.train.schedule.mode = parse_lr_mode(*flags.lr_mode);
  cfg.validate();
}

std::filesystem::path indexed_path(const std::filesystem::path& base, std::size_t i) {
  std::filesystem::path p = base;
  p.replace_filename(base.stem().string() + "_" + std::to_string(i) + base.extension().string());
  return p;
}

SegmentBatch concat(std::vector<SegmentBatch> parts) {
  SegmentBatch all;
  for (auto& part : parts) {
    if (part.size() == 0) continue;
    if (all.size() == 0) {
      all.sample_rate_hz = part.sample_rate_hz;
      all.labels = part.labels;
      all.segments = std::move(part.segments);
      continue;
    }
    require(part.sample_rate_hz == all.sample_rate_hz && part.channels() == all.channels() &&
                part.length() == all.length(),
            "preprocess: inputs produce segments of different shapes");
    require(part.labels.has_value() == all.labels.has_value(), "preprocess: cannot mix labeled and unlabeled inputs");
    if (all.labels) all.labels->insert(all.labels->end(), part.labels->begin(), part.labels->end());
    for (auto& s : part.segments) all.segments.push_back(std::move(s));
  }
  return all;
}

// Segment-wise preprocessing of an archive; each segment is treated as a recording.
SegmentBatch preprocess_archive(const SegmentBatch& in, const PreprocConfig& cfg, double scale_to_mV) {
  std::vector<SegmentBatch> parts;
  for (std::size_t i = 0; i < in.size(); ++i) {
    Recording rec;
    rec.montage = Montage::numbered(in.channels());
    rec.sample_rate_hz = in.sample_rate_hz;
    rec.scale_to_mV = scale_to_mV;
    rec.samples = in.segments[i];
    SegmentBatch out = preprocess(rec, cfg);
    if (in.labels) out.labels = std::vector<int>(out.size(), (*in.labels)[i]);
    parts.push_back(std::move(out));
  }
  return concat(std::move(parts));
}

int cmd_synth(const CommonFlags& common, bool labeled, std::ostream& out) {
  RunConfig cfg = load_config(common);
  if (common.seed) cfg.synth.seed = *common.seed;
  cfg.validate();
  if (labeled) {
    const SegmentBatch batch = synth_labeled_dataset(cfg.synth, cfg.labeled);
    save_segments(batch, common.out);
    out << "wrote " << batch.size() << " labeled segments to " << common.out << "\n";
    return 0;
  }
  for (std::size_t i = 0; i < cfg.synth_count; ++i) {
    SynthSpec spec = cfg.synth;
    std::filesystem::path path = common.out;
    if (cfg.synth_count > 1) {
      spec.seed = derive_seed(cfg.synth.seed, rng_domain::kSynth, i);
      path = indexed_path(common.out, i);
    }
    save_recording(synth_recording(spec), path);
    out << "wrote " << path.string() << "\n";
  }
  return 0;
}

int cmd_preprocess(const CommonFlags& common, const std::vector<std::string>& inputs, std::ostream& out) {
  RunConfig cfg = load_config(common);
  std::vector<SegmentBatch> parts;
  for (const auto& in : inputs) {
    const std::string magic = read_magic(in);
    if (magic == "LCMS") {
      parts.push_back(preprocess_archive(load_segments(in), cfg.preprocess, cfg.synth.scale_to_mV));
    } else {
      parts.push_back(preprocess(load_recording(in), cfg.preprocess));
    }
  }
  const SegmentBatch all = concat(std::move(parts));
  require(all.size() > 0, "preprocess: inputs yield no complete segment");
  save_segments(all, common.out);
  out << "wrote " << all.size() << " segments (" << all.channels() << " x " << all.length() << ") to " << common.out
      << "\n";
  return 0;
}

int cmd_pretrain(const CommonFlags& common, const TrainFlags& tflags, const std::string& data_path,
                 const std::string& log_path, const std::string& resume_path, std::ostream& out) {
  RunConfig cfg = load_config(common);
  apply_train_flags(cfg, common, tflags);
  const SegmentBatch data = load_segments(data_path);
  std::optional<Checkpoint> resume;
  if (!resume_path.empty()) resume = load_checkpoint(resume_path);

  std::ofstream log_file;
  std::ostream* log = &out;
  if (!log_path.empty()) {
    log_file.open(log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log_file) throw IoError("cannot open log " + log_path);
    log = &log_file;
  }
  PretrainHooks hooks;
  hooks.on_log = [log](const TrainLogRecord& r) { *log << to_json_line(r) << "\n" << std::flush; };
  hooks.on_checkpoint = [&common](const Checkpoint& ckpt) { save_checkpoint(ckpt, common.out); };
  const Checkpoint final_ckpt = run_pretraining(cfg.train, data, hooks, resume);
  save_checkpoint(final_ckpt, common.out);
  if (!log_path.empty()) out << "wrote checkpoint at step " << final_ckpt.step << " to " << common.out << "\n";
  return 0;
}

int cmd_probe(const CommonFlags& common, const std::string& ckpt_path, const std::string& train_path,
              const std::string& test_path, std::ostream& out) {
  RunConfig cfg = load_config(common);
  if (common.seed) cfg.probe.seed = *common.seed;
  cfg.validate();
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const SegmentBatch train = load_segments(train_path);
  const SegmentBatch test = load_segments(test_path);
  require(train.labels && test.labels, "probe: train and test archives must carry labels");
  const FeatureSet ftrain = extract_features(train, ckpt, cfg.train.encoder);
  const FeatureSet ftest = extract_features(test, ckpt, cfg.train.encoder);
  const LinearProbe probe = fit_probe(ftrain, cfg.probe.seed, cfg.probe.options);
  const Matrix<double> scores = probe.predict_proba(ftest.features);
  const MetricsReport report = compute_metrics(probe.predict(ftest.features), ftest.labels, scores);
  const std::string line = to_json_line(report);
  if (common.out.empty()) {
    out << line << "\n";
  } else {
    std::ofstream f(common.out);
    if (!f) throw IoError("cannot open " + common.out);
    f << line << "\n";
    out << line << "\n";
  }
  return 0;
}

int cmd_gradcheck(const CommonFlags& common, const GradCheckOptions& options, std::ostream& out) {
  RunConfig cfg = load_config(common);
  const EncoderConfig encoder = common.config.empty() ? gradcheck_config() : cfg.train.encoder;
  const std::uint64_t seed = common.seed.value_or(cfg.train.seed);
  const GradCheckReport report = grad_check(encoder, seed, options);
  for (const auto& t : report.tensors) {
    out << std::left << std::setw(28) << t.name << " coords=" << t.coords << " max_rel_error=" << std::scientific
        << std::setprecision(3) << t.max_rel_error << std::defaultfloat << "\n";
  }
  out << "max_rel_error=" << std::scientific << std::setprecision(3) << report.max_rel_error
      << " tolerance=" << report.tolerance << std::defaultfloat << " " << (report.passed() ? "PASS" : "FAIL") << "\n";
  if (!report.passed()) throw NumericError("gradient check failed");
  return 0;
}

void inspect_recording(const std::string& path, std::ostream& out) {
  const Recording rec = load_recording(path);
  out << "recording " << path << "\n"
      << "  montage      " << rec.montage.montage_id << "\n"
      << "  channels     " << rec.channels() << "\n"
      << "  sample_rate  " << rec.sample_rate_hz << " Hz\n"
      << "  samples      " << rec.length() << "\n"
      << "  duration     " << static_cast<double>(rec.length()) / rec.sample_rate_hz << " s\n"
      << "  scale_to_mV  " << rec.scale_to_mV << "\n"
      << "  names       ";
  for (const auto& n : rec.montage.channel_names) out << " " << n;
  out << "\n";
}

void inspect_segments(const std::string& path, std::ostream& out) {
  const SegmentBatch batch = load_segments(path);
  out << "segments " << path << "\n"
      << "  count        " << batch.size() << "\n"
      << "  channels     " << batch.channels() << "\n"
      << "  length       " << batch.length() << "\n"
      << "  sample_rate  " << batch.sample_rate_hz << " Hz\n";
  if (batch.labels) {
    std::map<int, std::size_t> counts;
    for (int l : *batch.labels) ++counts[l];
    out << "  labels      ";
    for (const auto& [l, c] : counts) out << " " << l << ":" << c;
    out << "\n";
  }
}

void inspect_checkpoint(const std::string& path, const RunConfig* cfg, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(path);
  std::map<std::string, std::uint64_t> group_sizes;
  for (const auto& [name, t] : ckpt.tensors) {
    const auto slash = name.find('/');
    group_sizes[name.substr(0, slash)] += t.size();
  }
  out << "checkpoint " << path << "\n"
      << "  version      " << ckpt.format_version << "\n"
      << "  step         " << ckpt.step << "\n"
      << "  tensors      " << ckpt.tensors.size() << "\n";
  for (const auto& [group, n] : group_sizes) out << "  " << std::left << std::setw(12) << group << " " << n << "\n";
  out << "  param_count  " << group_sizes["theta"] << "\n";
  if (cfg) {
    out << "  param_count (config) " << param_count(cfg->train.encoder) << "\n";
  }
}

int cmd_inspect(const CommonFlags& common, const std::string& path, std::ostream& out) {
  const std::string magic = read_magic(path);
  std::optional<RunConfig> cfg;
  if (!common.config.empty()) cfg = load_run_config(common.config);
  if (magic == "LCMR") {
    inspect_recording(path, out);
  } else if (magic == "LCMS") {
    inspect_segments(path, out);
  } else if (magic == "LCMC") {
    inspect_checkpoint(path, cfg ? &*cfg : nullptr, out);
  } else if (!std::filesystem::exists(path)) {
    throw IoError("cannot open " + path);
  } else {
    throw FormatError(FormatError::Reason::kBadMagic, "unrecognized file magic in " + path);
  }
  return 0;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kIo:
    case ErrorKind::kFormat:
      return 2;
    case ErrorKind::kValidation:
    case ErrorKind::kNumeric:
      return 1;
  }
  return 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"lcm: EEG self-supervised pretraining toolkit"};
  app.require_subcommand(1);

  CommonFlags common;
  TrainFlags tflags;

  auto* synth = app.add_subcommand("synth", "Write synthetic LCMR recordings (or a labeled LCMS archive)");
  add_common(synth, common, true);
  bool labeled = false;
  synth->add_flag("--labeled", labeled, "Write the two-class labeled segment archive instead");

  auto* pre = app.add_subcommand("preprocess", "LCMR recordings or LCMS archives -> preprocessed LCMS archive");
  add_common(pre, common, true);
  std::vector<std::string> inputs;
  pre->add_option("--in", inputs, "Input files")->required();

  auto* pretrain = app.add_subcommand("pretrain", "Pretrain on an LCMS archive; writes an LCMC checkpoint");
  add_common(pretrain, common, true);
  add_train_flags(pretrain, tflags);
  std::string data_path, log_path, resume_path;
  pretrain->add_option("--data", data_path, "Preprocessed LCMS archive")->required();
  pretrain->add_option("--log", log_path, "JSON-lines log file (default: stdout)");
  pretrain->add_option("--resume", resume_path, "Checkpoint to resume from");

  auto* probe = app.add_subcommand("probe", "Linear probe on frozen target-encoder features");
  add_common(probe, common, false);
  std::string ckpt_path, train_path, test_path;
  probe->add_option("--checkpoint", ckpt_path, "LCMC checkpoint")->required();
  probe->add_option("--train", train_path, "Labeled LCMS archive for fitting")->required();
  probe->add_option("--test", test_path, "Labeled LCMS archive for scoring")->required();

  auto* gc = app.add_subcommand(
      "gradcheck", "Finite-difference gradient check (built-in small encoder unless --config is given)");
  add_common(gc, common, false);
  GradCheckOptions gopts;
  gc->add_option("--coords", gopts.coords_per_tensor, "Sampled coordinates per tensor");
  gc->add_option("--tolerance", gopts.tolerance, "Maximum relative error");
  gc->add_option("--only", gopts.only_prefixes, "Restrict to tensor name prefixes");

  auto* inspect = app.add_subcommand("inspect", "Summarize a recording, segment archive or checkpoint");
  inspect->add_option("--config", common.config, "Run configuration (adds the closed-form param_count)");
  std::string inspect_path;
  inspect->add_option("path", inspect_path, "File to inspect")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(common, labeled, out);
    if (pre->parsed()) return cmd_preprocess(common, inputs, out);
    if (pretrain->parsed()) return cmd_pretrain(common, tflags, data_path, log_path, resume_path, out);
    if (probe->parsed()) return cmd_probe(common, ckpt_path, train_path, test_path, out);
    if (gc->parsed()) return cmd_gradcheck(common, gopts, out);
    if (inspect->parsed()) return cmd_inspect(common, inspect_path, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace lcm

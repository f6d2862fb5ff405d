#include "lcm/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

#include "lcm/error.hpp"

namespace lcm {
namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

using FieldParser = std::function<void(const json&)>;

void parse_section(const json& j, const std::string& section, const std::map<std::string, FieldParser>& fields) {
  require(j.is_object(), "config: section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    const auto it = fields.find(key);
    require(it != fields.end(), "config: unknown key '" + key + "' in section '" + section + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ValidationError("config: bad value for '" + section + "." + key + "': " + e.what());
    }
  }
}

template <typename V>
FieldParser into(V& target) {
  return [&target](const json& v) { target = v.get<V>(); };
}

Oscillation parse_oscillation(const json& j) {
  Oscillation osc;
  parse_section(j, "synth.oscillations[]", {
                                                {"frequency_hz", into(osc.frequency_hz)},
                                                {"amplitude", into(osc.amplitude)},
                                                {"channels", into(osc.channels)},
                                            });
  return osc;
}

}  // namespace

void RunConfig::validate() const {
  synth.validate();
  require(synth_count >= 1, "config: synth.count must be >= 1");
  labeled.validate(synth);
  preprocess.validate();
  train.validate();
  require(probe.options.epochs >= 1 && probe.options.step_size > 0 && probe.options.l2 >= 0,
          "config: probe settings invalid");
}

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  auto& s = cfg.synth;
  auto& l = cfg.labeled;
  auto& p = cfg.preprocess;
  auto& e = cfg.train.encoder;
  auto& sc = cfg.train.schedule;
  auto& t = cfg.train;
  auto& pr = cfg.probe;
  const std::map<std::string, FieldParser> sections = {
      {"synth",
       [&](const json& j) {
         parse_section(j, "synth",
                       {
                           {"seed", into(s.seed)},
                           {"channel_count", into(s.channel_count)},
                           {"duration_s", into(s.duration_s)},
                           {"sample_rate_hz", into(s.sample_rate_hz)},
                           {"background_exponent", into(s.background_exponent)},
                           {"background_rms", into(s.background_rms)},
                           {"scale_to_mV", into(s.scale_to_mV)},
                           {"count", into(cfg.synth_count)},
                           {"oscillations",
                            [&](const json& arr) {
                              require(arr.is_array(), "config: synth.oscillations must be an array");
                              s.oscillations.clear();
                              for (const auto& o : arr) s.oscillations.push_back(parse_oscillation(o));
                            }},
                       });
       }},
      {"labeled",
       [&](const json& j) {
         parse_section(j, "labeled",
                       {
                           {"per_class", into(l.per_class)},
                           {"band_low_hz", into(l.band_low_hz)},
                           {"band_high_hz", into(l.band_high_hz)},
                           {"power_ratio", into(l.power_ratio)},
                           {"band_rms", into(l.band_rms)},
                       });
       }},
      {"preprocess",
       [&](const json& j) {
         parse_section(j, "preprocess",
                       {
                           {"target_rate_hz", into(p.target_rate_hz)},
                           {"segment_s", into(p.segment_s)},
                           {"lowpass_hz", into(p.lowpass_hz)},
                           {"apply_bandpass", into(p.apply_bandpass)},
                           {"channel_selection",
                            [&](const json& v) {
                              if (v.is_null()) p.channel_selection.reset();
                              else p.channel_selection = v.get<std::vector<std::string>>();
                            }},
                       });
       }},
      {"encoder",
       [&](const json& j) {
         parse_section(j, "encoder",
                       {
                           {"in_channels", into(e.in_channels)},
                           {"mapped_channels", into(e.mapped_channels)},
                           {"patch_len", into(e.patch_len)},
                           {"windows", into(e.windows)},
                           {"d", into(e.d)},
                           {"layers", into(e.layers)},
                           {"heads", into(e.heads)},
                           {"mlp_ratio", into(e.mlp_ratio)},
                           {"kernel", into(e.kernel)},
                       });
       }},
      {"schedule",
       [&](const json& j) {
         parse_section(j, "schedule",
                       {
                           {"lr_max", into(sc.lr_max)},
                           {"lr_final", into(sc.lr_final)},
                           {"warmup_epochs", into(sc.warmup_epochs)},
                           {"decay_exponent", into(sc.decay_exponent)},
                           {"mode", [&](const json& v) { sc.mode = parse_lr_mode(v.get<std::string>()); }},
                           {"wd_init", into(sc.wd_init)},
                           {"wd_final", into(sc.wd_final)},
                           {"m_low", into(sc.m_low)},
                           {"m_high", into(sc.m_high)},
                       });
       }},
      {"train",
       [&](const json& j) {
         parse_section(j, "train",
                       {
                           {"batch_size", into(t.batch_size)},
                           {"epochs", into(t.epochs)},
                           {"p_mask", into(t.p_mask)},
                           {"lambda", into(t.lambda)},
                           {"seed", into(t.seed)},
                           {"checkpoint_every_epochs", into(t.checkpoint_every_epochs)},
                       });
       }},
      {"probe",
       [&](const json& j) {
         parse_section(j, "probe",
                       {
                           {"seed", into(pr.seed)},
                           {"epochs", into(pr.options.epochs)},
                           {"step_size", into(pr.options.step_size)},
                           {"l2", into(pr.options.l2)},
                       });
       }},
  };
  parse_section(root, "<root>", sections);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string dump_run_config(const RunConfig& cfg) {
  ojson root;
  const auto& s = cfg.synth;
  ojson osc = ojson::array();
  for (const auto& o : s.oscillations) {
    osc.push_back(ojson{{"frequency_hz", o.frequency_hz}, {"amplitude", o.amplitude}, {"channels", o.channels}});
  }
  root["synth"] = ojson{{"seed", s.seed},
                        {"channel_count", s.channel_count},
                        {"duration_s", s.duration_s},
                        {"sample_rate_hz", s.sample_rate_hz},
                        {"background_exponent", s.background_exponent},
                        {"background_rms", s.background_rms},
                        {"scale_to_mV", s.scale_to_mV},
                        {"count", cfg.synth_count},
                        {"oscillations", osc}};
  const auto& l = cfg.labeled;
  root["labeled"] = ojson{{"per_class", l.per_class},
                          {"band_low_hz", l.band_low_hz},
                          {"band_high_hz", l.band_high_hz},
                          {"power_ratio", l.power_ratio},
                          {"band_rms", l.band_rms}};
  const auto& p = cfg.preprocess;
  root["preprocess"] = ojson{{"target_rate_hz", p.target_rate_hz},
                             {"segment_s", p.segment_s},
                             {"lowpass_hz", p.lowpass_hz},
                             {"apply_bandpass", p.apply_bandpass},
                             {"channel_selection", p.channel_selection ? ojson(*p.channel_selection) : ojson(nullptr)}};
  const auto& e = cfg.train.encoder;
  root["encoder"] = ojson{{"in_channels", e.in_channels}, {"mapped_channels", e.mapped_channels},
                          {"patch_len", e.patch_len},     {"windows", e.windows},
                          {"d", e.d},                     {"layers", e.layers},
                          {"heads", e.heads},             {"mlp_ratio", e.mlp_ratio},
                          {"kernel", e.kernel}};
  const auto& sc = cfg.train.schedule;
  root["schedule"] = ojson{{"lr_max", sc.lr_max},       {"lr_final", sc.lr_final},
                           {"warmup_epochs", sc.warmup_epochs}, {"decay_exponent", sc.decay_exponent},
                           {"mode", to_string(sc.mode)}, {"wd_init", sc.wd_init},
                           {"wd_final", sc.wd_final},   {"m_low", sc.m_low},
                           {"m_high", sc.m_high}};
  const auto& t = cfg.train;
  root["train"] = ojson{{"batch_size", t.batch_size}, {"epochs", t.epochs},
                        {"p_mask", t.p_mask},         {"lambda", t.lambda},
                        {"seed", t.seed},             {"checkpoint_every_epochs", t.checkpoint_every_epochs}};
  root["probe"] = ojson{{"seed", cfg.probe.seed},
                        {"epochs", cfg.probe.options.epochs},
                        {"step_size", cfg.probe.options.step_size},
                        {"l2", cfg.probe.options.l2}};
  return root.dump(2);
}

}  // namespace lcm

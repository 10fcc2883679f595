#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "mvd/common.hpp"

namespace mvd {

// Flat key=value configuration.  Defaults encode the paper profile
// (schedule, guidance, augmentation, dropout, anchor window, EMA);
// desk-scale training runs override size/rate knobs explicitly.
struct Config {
  // schedule
  int64_t timesteps = 1000;
  double beta_start = 0.00085;
  double beta_end = 0.0120;

  // sampling
  int64_t sample_steps = 50;
  double guidance_ref = 0.25;
  double guidance_anchor = 0.25;
  double guidance_text = 6.5;
  int64_t t_test = 200;
  bool augment_anchor_at_inference = false;
  double divergence_abort = 1e4;

  // training
  int64_t train_steps = 2000;
  int64_t batch_size = 32;
  double lr = 1e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double weight_decay = 0.01;
  double lr_mask_scale = 1.0;
  int64_t t_max = 550;
  double drop_rate = 0.10;
  int64_t anchor_window = 10;
  double ema_decay = 0.9999;
  uint64_t seed = 0;

  // model
  int64_t latent_channels = 1;
  int64_t latent_h = 16;
  int64_t latent_w = 16;
  int64_t width_dynamic = 16;
  int64_t width_mask = 8;
  bool use_mask = true;
  std::string static_form = "paper";  // or "lambda_norm"

  // toy data
  int64_t clip_length = 24;
  int64_t corpus_clips = 256;
  double texture_amp = 0.45;
  double speed_slow = 1.0;
  double speed_fast = 2.0;
  double jitter = 0.25;
  double motion_lo = 1.0;
  double motion_hi = 20.0;

  void validate() const {
    if (timesteps < 1) throw ConfigError("timesteps must be >= 1");
    if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1))
      throw ConfigError("need 0 < beta_start <= beta_end < 1");
    if (sample_steps < 1 || sample_steps > timesteps)
      throw ConfigError("sample_steps must be in [1, timesteps]");
    if (t_test < 0 || t_test > timesteps) throw ConfigError("t_test out of range");
    if (t_max < 0 || t_max > timesteps) throw ConfigError("t_max out of range");
    if (drop_rate < 0 || drop_rate > 1) throw ConfigError("drop_rate outside [0,1]");
    if (ema_decay < 0 || ema_decay > 1) throw ConfigError("ema_decay outside [0,1]");
    if (anchor_window < 1) throw ConfigError("anchor_window must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (latent_channels < 1 || latent_h < 4 || latent_w < 4)
      throw ConfigError("latent shape too small");
    if (latent_h % 4 != 0 || latent_w % 4 != 0)
      throw ConfigError("latent dims must be divisible by 4 (two down stages)");
    if (width_dynamic < 2 || width_mask < 2) throw ConfigError("head width too small");
    if (static_form != "paper" && static_form != "lambda_norm")
      throw ConfigError("static_form must be 'paper' or 'lambda_norm'");
    if (clip_length < 2) throw ConfigError("clip_length must be >= 2");
    if (motion_lo > motion_hi) throw ConfigError("motion bounds inverted");
  }

  std::map<std::string, std::string> to_map() const;
  static Config from_map(const std::map<std::string, std::string>& kv);

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      // trim
      auto b = line.find_first_not_of(" \t\r");
      if (b == std::string::npos) continue;
      auto e = line.find_last_not_of(" \t\r");
      line = line.substr(b, e - b + 1);
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
      std::string key = line.substr(0, eq);
      std::string val = line.substr(eq + 1);
      auto ke = key.find_last_not_of(" \t");
      key = key.substr(0, ke + 1);
      auto vb = val.find_first_not_of(" \t");
      val = vb == std::string::npos ? "" : val.substr(vb);
      kv[key] = val;
    }
    return from_map(kv);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config file: " + path);
    for (const auto& [k, v] : to_map()) out << k << "=" << v << "\n";
  }

  // FNV-1a over the canonical serialization; checkpoint resume guards on it.
  uint64_t hash() const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& [k, v] : to_map()) {
      for (char c : k + "=" + v + "\n") {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
      }
    }
    return h;
  }
};

namespace detail_cfg {
inline std::string fmt(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}
inline double to_f(const std::string& k, const std::string& v) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("bad numeric value for " + k + ": '" + v + "'");
  }
}
inline int64_t to_i(const std::string& k, const std::string& v) {
  try {
    size_t pos = 0;
    long long d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("bad integer value for " + k + ": '" + v + "'");
  }
}
inline bool to_b(const std::string& k, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean value for " + k + ": '" + v + "'");
}
}  // namespace detail_cfg

inline std::map<std::string, std::string> Config::to_map() const {
  using detail_cfg::fmt;
  std::map<std::string, std::string> m;
  m["schedule.timesteps"] = std::to_string(timesteps);
  m["schedule.beta_start"] = fmt(beta_start);
  m["schedule.beta_end"] = fmt(beta_end);
  m["sample.steps"] = std::to_string(sample_steps);
  m["sample.guidance_ref"] = fmt(guidance_ref);
  m["sample.guidance_anchor"] = fmt(guidance_anchor);
  m["sample.guidance_text"] = fmt(guidance_text);
  m["sample.t_test"] = std::to_string(t_test);
  m["sample.augment_anchor"] = augment_anchor_at_inference ? "true" : "false";
  m["sample.divergence_abort"] = fmt(divergence_abort);
  m["train.steps"] = std::to_string(train_steps);
  m["train.batch_size"] = std::to_string(batch_size);
  m["train.lr"] = fmt(lr);
  m["train.adam_beta1"] = fmt(adam_beta1);
  m["train.adam_beta2"] = fmt(adam_beta2);
  m["train.weight_decay"] = fmt(weight_decay);
  m["train.lr_mask_scale"] = fmt(lr_mask_scale);
  m["train.t_max"] = std::to_string(t_max);
  m["train.drop_rate"] = fmt(drop_rate);
  m["train.anchor_window"] = std::to_string(anchor_window);
  m["train.ema_decay"] = fmt(ema_decay);
  m["train.seed"] = std::to_string(seed);
  m["model.latent_channels"] = std::to_string(latent_channels);
  m["model.latent_h"] = std::to_string(latent_h);
  m["model.latent_w"] = std::to_string(latent_w);
  m["model.width_dynamic"] = std::to_string(width_dynamic);
  m["model.width_mask"] = std::to_string(width_mask);
  m["model.use_mask"] = use_mask ? "true" : "false";
  m["model.static_form"] = static_form;
  m["data.clip_length"] = std::to_string(clip_length);
  m["data.corpus_clips"] = std::to_string(corpus_clips);
  m["data.texture_amp"] = fmt(texture_amp);
  m["data.speed_slow"] = fmt(speed_slow);
  m["data.speed_fast"] = fmt(speed_fast);
  m["data.jitter"] = fmt(jitter);
  m["data.motion_lo"] = fmt(motion_lo);
  m["data.motion_hi"] = fmt(motion_hi);
  return m;
}

inline Config Config::from_map(const std::map<std::string, std::string>& kv) {
  using namespace detail_cfg;
  Config c;
  for (const auto& [k, v] : kv) {
    if (k == "schedule.timesteps") c.timesteps = to_i(k, v);
    else if (k == "schedule.beta_start") c.beta_start = to_f(k, v);
    else if (k == "schedule.beta_end") c.beta_end = to_f(k, v);
    else if (k == "sample.steps") c.sample_steps = to_i(k, v);
    else if (k == "sample.guidance_ref") c.guidance_ref = to_f(k, v);
    else if (k == "sample.guidance_anchor") c.guidance_anchor = to_f(k, v);
    else if (k == "sample.guidance_text") c.guidance_text = to_f(k, v);
    else if (k == "sample.t_test") c.t_test = to_i(k, v);
    else if (k == "sample.augment_anchor") c.augment_anchor_at_inference = to_b(k, v);
    else if (k == "sample.divergence_abort") c.divergence_abort = to_f(k, v);
    else if (k == "train.steps") c.train_steps = to_i(k, v);
    else if (k == "train.batch_size") c.batch_size = to_i(k, v);
    else if (k == "train.lr") c.lr = to_f(k, v);
    else if (k == "train.adam_beta1") c.adam_beta1 = to_f(k, v);
    else if (k == "train.adam_beta2") c.adam_beta2 = to_f(k, v);
    else if (k == "train.weight_decay") c.weight_decay = to_f(k, v);
    else if (k == "train.lr_mask_scale") c.lr_mask_scale = to_f(k, v);
    else if (k == "train.t_max") c.t_max = to_i(k, v);
    else if (k == "train.drop_rate") c.drop_rate = to_f(k, v);
    else if (k == "train.anchor_window") c.anchor_window = to_i(k, v);
    else if (k == "train.ema_decay") c.ema_decay = to_f(k, v);
    else if (k == "train.seed") c.seed = static_cast<uint64_t>(to_i(k, v));
    else if (k == "model.latent_channels") c.latent_channels = to_i(k, v);
    else if (k == "model.latent_h") c.latent_h = to_i(k, v);
    else if (k == "model.latent_w") c.latent_w = to_i(k, v);
    else if (k == "model.width_dynamic") c.width_dynamic = to_i(k, v);
    else if (k == "model.width_mask") c.width_mask = to_i(k, v);
    else if (k == "model.use_mask") c.use_mask = to_b(k, v);
    else if (k == "model.static_form") c.static_form = v;
    else if (k == "data.clip_length") c.clip_length = to_i(k, v);
    else if (k == "data.corpus_clips") c.corpus_clips = to_i(k, v);
    else if (k == "data.texture_amp") c.texture_amp = to_f(k, v);
    else if (k == "data.speed_slow") c.speed_slow = to_f(k, v);
    else if (k == "data.speed_fast") c.speed_fast = to_f(k, v);
    else if (k == "data.jitter") c.jitter = to_f(k, v);
    else if (k == "data.motion_lo") c.motion_lo = to_f(k, v);
    else if (k == "data.motion_hi") c.motion_hi = to_f(k, v);
    else throw ConfigError("unknown config key: " + k);
  }
  c.validate();
  return c;
}

}  // namespace mvd

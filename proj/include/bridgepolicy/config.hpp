#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "bridgepolicy/envs.hpp"
#include "bridgepolicy/errors.hpp"

namespace bridgepolicy {

/// Everything needed to reproduce a run. Defaults follow the reference
/// hyperparameter table where one exists.
struct RunConfig {
  std::string task = "reach";

  // schedule
  double theta = 2.0;
  double lambda = 50.0 / 255.0;
  double gamma = 1e7;
  double T = 1.0;
  int n_train_steps = 100;

  // model
  int horizon = 8;
  int obs_steps = 2;
  int action_steps = 4;
  std::vector<int> hidden{256, 256};
  int state_hidden = 64;
  int point_hidden = 32;
  int d_s = 16;
  int time_embed = 64;
  double tau = 0.07;
  bool stop_grad_terminal = false;

  // train
  int batch = 256;
  double lr = 1e-3;
  double weight_decay = 1e-6;
  double alpha = 0.3;
  int epochs = 300;
  std::uint64_t seed = 0;
  int eval_every = 50;
  int eval_episodes = 20;

  // sampler
  int sampler_steps = 10;
  double noise_multiplier = 1.0;

  // env
  int n_points = 512;
  int n_raw = 1024;
  int episode_cap = 100;
  int episodes = 100;

  // eval
  int final_eval_episodes = 100;
  bool log_wall_time = false;

  // paths
  std::string dataset = "dataset.bpd";
  std::string checkpoint = "policy.ckpt";
  std::string metrics = "metrics.jsonl";

  envs::Task task_kind() const { return envs::parse_task(task); }

  /// Re-checks every range constraint; throws ConfigError naming the key.
  void validate() const {
    auto req = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("invalid config: " + what);
    };
    envs::parse_task(task);
    req(theta > 0.0 && std::isfinite(theta), "schedule.theta must be > 0");
    req(lambda > 0.0 && std::isfinite(lambda), "schedule.lambda must be > 0");
    req(gamma > 0.0, "schedule.gamma must be > 0");
    req(T > 0.0 && std::isfinite(T), "schedule.T must be > 0");
    req(n_train_steps >= 1, "schedule.n_train_steps must be >= 1");
    req(horizon >= 1, "model.horizon must be >= 1");
    req(obs_steps >= 1, "model.obs_steps must be >= 1");
    req(action_steps >= 1 && action_steps <= horizon, "model.action_steps must be in [1, horizon]");
    req(!hidden.empty(), "model.hidden needs at least one width");
    for (int h : hidden) req(h >= 1, "model.hidden widths must be >= 1");
    req(state_hidden >= 1 && point_hidden >= 1 && d_s >= 1, "model widths must be >= 1");
    req(time_embed >= 2 && time_embed % 2 == 0, "model.time_embed must be even and >= 2");
    req(tau > 0.0, "model.tau must be > 0");
    req(batch >= 1, "train.batch must be >= 1");
    req(lr > 0.0, "train.lr must be > 0");
    req(weight_decay >= 0.0, "train.weight_decay must be >= 0");
    req(alpha >= 0.0, "train.alpha must be >= 0");
    req(epochs >= 0, "train.epochs must be >= 0");
    req(eval_every >= 0, "train.eval_every must be >= 0");
    req(eval_episodes >= 0, "train.eval_episodes must be >= 0");
    req(sampler_steps >= 1, "sampler.n_steps must be >= 1");
    req(noise_multiplier >= 0.0, "sampler.noise_multiplier must be >= 0");
    req(n_points >= 1 && n_raw >= n_points, "env.n_raw must be >= env.n_points >= 1");
    req(episode_cap >= 1, "env.episode_cap must be >= 1");
    req(episodes >= 0, "env.episodes must be >= 0");
    req(final_eval_episodes >= 0, "eval.episodes must be >= 0");
  }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto r = std::from_chars(s.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) {
    if (s == "inf") return INFINITY;
    throw ConfigError("config key " + key + ": expected a number, got '" + s + "'");
  }
  return v;
}

inline long long parse_int(const std::string& key, const std::string& s) {
  long long v = 0;
  const auto* end = s.data() + s.size();
  auto r = std::from_chars(s.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw ConfigError("config key " + key + ": expected an integer, got '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config key " + key + ": expected true or false, got '" + s + "'");
}

// Binds "section.key" to a field for reading and writing.
struct Field {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

inline std::vector<Field> fields(RunConfig& c) {
  auto dbl = [](const std::string& k, double& f) {
    return Field{k, [k, &f](const std::string& s) { f = parse_double(k, s); }, [&f] { return fmt_double(f); }};
  };
  auto int_ = [](const std::string& k, int& f) {
    return Field{k, [k, &f](const std::string& s) { f = static_cast<int>(parse_int(k, s)); }, [&f] { return std::to_string(f); }};
  };
  auto str = [](const std::string& k, std::string& f) {
    return Field{k, [&f](const std::string& s) { f = s; }, [&f] { return f; }};
  };
  auto bool_ = [](const std::string& k, bool& f) {
    return Field{k, [k, &f](const std::string& s) { f = parse_bool(k, s); }, [&f] { return std::string(f ? "true" : "false"); }};
  };
  return {
      str("task.name", c.task),
      dbl("schedule.theta", c.theta),
      dbl("schedule.lambda", c.lambda),
      dbl("schedule.gamma", c.gamma),
      dbl("schedule.T", c.T),
      int_("schedule.n_train_steps", c.n_train_steps),
      int_("model.horizon", c.horizon),
      int_("model.obs_steps", c.obs_steps),
      int_("model.action_steps", c.action_steps),
      Field{"model.hidden",
            [&c](const std::string& s) {
              c.hidden.clear();
              std::stringstream ss(s);
              std::string part;
              while (std::getline(ss, part, ','))
                c.hidden.push_back(static_cast<int>(parse_int("model.hidden", part)));
            },
            [&c] {
              std::string out;
              for (std::size_t i = 0; i < c.hidden.size(); ++i) out += (i ? "," : "") + std::to_string(c.hidden[i]);
              return out;
            }},
      int_("model.state_hidden", c.state_hidden),
      int_("model.point_hidden", c.point_hidden),
      int_("model.d_s", c.d_s),
      int_("model.time_embed", c.time_embed),
      dbl("model.tau", c.tau),
      bool_("model.stop_grad_terminal", c.stop_grad_terminal),
      int_("train.batch", c.batch),
      dbl("train.lr", c.lr),
      dbl("train.weight_decay", c.weight_decay),
      dbl("train.alpha", c.alpha),
      int_("train.epochs", c.epochs),
      Field{"train.seed", [&c](const std::string& s) { c.seed = static_cast<std::uint64_t>(parse_int("train.seed", s)); },
            [&c] { return std::to_string(c.seed); }},
      int_("train.eval_every", c.eval_every),
      int_("train.eval_episodes", c.eval_episodes),
      int_("sampler.n_steps", c.sampler_steps),
      dbl("sampler.noise_multiplier", c.noise_multiplier),
      int_("env.n_points", c.n_points),
      int_("env.n_raw", c.n_raw),
      int_("env.episode_cap", c.episode_cap),
      int_("env.episodes", c.episodes),
      int_("eval.episodes", c.final_eval_episodes),
      bool_("eval.log_wall_time", c.log_wall_time),
      str("paths.dataset", c.dataset),
      str("paths.checkpoint", c.checkpoint),
      str("paths.metrics", c.metrics),
  };
}

}  // namespace detail

/// Parses INI text. Keys not set keep their defaults; unknown sections or keys are rejected.
inline RunConfig parse_config(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  RunConfig cfg;
  auto fs = detail::fields(cfg);
  std::map<std::string, detail::Field*> by_key;
  for (auto& f : fs) by_key[f.key] = &f;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key '" + section + "' must live inside a [section]");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      auto it = by_key.find(full);
      if (it == by_key.end()) throw ConfigError("unknown config key '" + full + "'");
      it->second->set(value.get_value<std::string>());
    }
  }
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Canonical text form: every key, fixed order, shortest round-trip numbers.
inline std::string write_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::string out, section;
  for (const auto& f : detail::fields(copy)) {
    const auto dot = f.key.find('.');
    const std::string sec = f.key.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "" : "\n") + std::string("[") + sec + "]\n";
      section = sec;
    }
    out += f.key.substr(dot + 1) + " = " + f.get() + "\n";
  }
  return out;
}

}  // namespace bridgepolicy

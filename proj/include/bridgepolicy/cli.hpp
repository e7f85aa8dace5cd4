#pragma once

#include <malloc.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bridgepolicy/config.hpp"
#include "bridgepolicy/envs.hpp"
#include "bridgepolicy/errors.hpp"
#include "bridgepolicy/policy.hpp"
#include "bridgepolicy/verify.hpp"

namespace bridgepolicy::cli {

/// Training allocates and frees many mid-sized matrices per step. Keeping
/// them on the heap instead of fresh mmaps removes most page-fault time.
inline void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

struct Options {
  std::string config, out, checkpoint, suite = "all", observation;
  std::optional<std::uint64_t> seed;
  std::optional<int> episodes;
  bool baseline = false, trace = false;
};

namespace detail {

inline RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.episodes) cfg.episodes = *o.episodes;
  cfg.validate();
  return cfg;
}

inline envs::EnvConfig env_config(const RunConfig& cfg) {
  envs::EnvConfig ec;
  ec.task = cfg.task_kind();
  ec.episode_cap = cfg.episode_cap;
  ec.n_points = cfg.n_points;
  ec.n_raw = cfg.n_raw;
  return ec;
}

// Seed for the held-out evaluation, distinct from the per-epoch evaluations.
inline std::uint64_t final_eval_seed(std::uint64_t seed) { return derive_seed(seed, 0xF17A1); }

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << text;
  if (!f) throw IoError("write failed for " + path);
}

inline int gen_data(const Options& o, std::ostream& out) {
  const RunConfig cfg = resolve_config(o);
  const std::string path = o.out.empty() ? cfg.dataset : o.out;
  const auto ds = envs::generate_dataset(env_config(cfg), cfg.episodes, cfg.seed, path);
  nlohmann::json j{{"dataset", path},         {"task", cfg.task},
                   {"episodes", ds.n_episodes()}, {"requested", cfg.episodes},
                   {"steps", ds.n_steps()},       {"seed", cfg.seed}};
  out << j.dump() << "\n";
  return 0;
}

inline int train(const Options& o, bool baseline, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_config(o);
  envs::Dataset ds;
  if (std::filesystem::exists(cfg.dataset)) {
    ds = envs::load_dataset(cfg.dataset);
    if (ds.task != cfg.task_kind()) throw ConfigError("dataset " + cfg.dataset + " was generated for another task");
  } else {
    err << "dataset " << cfg.dataset << " not found; generating " << cfg.episodes << " episodes in memory\n";
    ds = envs::build_dataset(env_config(cfg), cfg.episodes, cfg.seed);
  }
  if (ds.n_steps() == 0) throw ConfigError("cannot train on an empty dataset");
  const auto norm = policy::Normalizer::from_dataset(ds);
  const auto data = policy::make_training_data(ds, cfg, norm);
  policy::Model model(cfg, ds.state_dim, baseline, cfg.seed);
  std::ofstream metrics(cfg.metrics, std::ios::binary);
  if (!metrics) throw IoError("cannot write " + cfg.metrics);
  const auto result = policy::train(model, data, &metrics);
  for (const auto& line : result.metrics) out << line << "\n";
  const std::string ckpt = o.out.empty() ? cfg.checkpoint : o.out;
  policy::save_checkpoint(model, norm, ckpt);
  nlohmann::json j{{"checkpoint", ckpt}, {"baseline", baseline}, {"epochs", cfg.epochs}, {"top5_success", result.top5_success}};
  out << j.dump() << "\n";
  return 0;
}

inline int eval(const Options& o, std::ostream& out) {
  if (o.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  auto ck = policy::load_checkpoint(o.checkpoint);
  const RunConfig& cfg = ck.model.config();
  const int episodes = o.episodes.value_or(cfg.final_eval_episodes);
  if (episodes < 0) throw ConfigError("--episodes must be >= 0");
  const std::uint64_t seed = o.seed.value_or(cfg.seed);
  const auto e = policy::evaluate(ck.model, ck.norm, episodes, final_eval_seed(seed));
  nlohmann::json j{{"task", cfg.task},
                   {"baseline", ck.model.baseline()},
                   {"episodes", e.episodes},
                   {"success_rate", e.success_rate},
                   {"mean_final_distance", e.mean_final_distance},
                   {"seed", seed}};
  if (!o.out.empty()) write_text(o.out, j.dump() + "\n");
  out << j.dump() << "\n";
  return 0;
}

// Observation record: {"state_history": [[...], ...], "cloud": [[x, y, z], ...]}
// or {"episode_seed": n} for the first observation of that episode.
inline policy::Observation read_observation(const std::string& path, const policy::Model& model) {
  const RunConfig& cfg = model.config();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("observation " + path + ": " + e.what());
  }
  policy::Observation obs;
  const envs::Task task = cfg.task_kind();
  if (j.contains("episode_seed")) {
    const auto seed = j.at("episode_seed").get<std::uint64_t>();
    const auto s = envs::reset(task, seed);
    obs.state_history = net::Mat(cfg.obs_steps, model.state_dim());
    for (int k = 0; k < cfg.obs_steps; ++k) obs.state_history.row(k) = envs::state_vector(task, s).transpose();
    obs.cloud = envs::render_point_cloud(task, s, cfg.n_raw, cfg.n_points, envs::cloud_seed(seed, 0));
    return obs;
  }
  try {
    const auto hist = j.at("state_history").get<std::vector<std::vector<double>>>();
    const auto cloud = j.at("cloud").get<std::vector<std::vector<double>>>();
    if (static_cast<int>(hist.size()) != cfg.obs_steps) throw FormatError("state_history needs model.obs_steps rows");
    if (static_cast<Eigen::Index>(cloud.size()) != cfg.n_points) throw FormatError("cloud needs env.n_points rows");
    obs.state_history.resize(cfg.obs_steps, model.state_dim());
    for (std::size_t r = 0; r < hist.size(); ++r) {
      if (static_cast<Eigen::Index>(hist[r].size()) != model.state_dim()) throw FormatError("state row has the wrong width");
      for (std::size_t c = 0; c < hist[r].size(); ++c)
        obs.state_history(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = hist[r][c];
    }
    obs.cloud.resize(cfg.n_points, 3);
    for (std::size_t r = 0; r < cloud.size(); ++r) {
      if (cloud[r].size() != 3) throw FormatError("cloud points need 3 coordinates");
      for (Eigen::Index c = 0; c < 3; ++c) obs.cloud(static_cast<Eigen::Index>(r), c) = cloud[r][static_cast<std::size_t>(c)];
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("observation " + path + ": " + e.what());
  }
  return obs;
}

inline nlohmann::json rows_json(const net::Mat& m) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return a;
}

inline int sample(const Options& o, std::ostream& out) {
  if (o.checkpoint.empty()) throw ConfigError("sample needs --checkpoint");
  if (o.observation.empty()) throw ConfigError("sample needs --observation");
  auto ck = policy::load_checkpoint(o.checkpoint);
  const auto obs = read_observation(o.observation, ck.model);
  ChainTrace trace;
  const auto r = policy::infer_actions(ck.model, ck.norm, obs, o.seed.value_or(ck.model.config().seed), o.trace ? &trace : nullptr);
  nlohmann::json j{{"actions", rows_json(r.actions)}, {"chunk", rows_json(r.chunk)}, {"nfe", r.nfe}};
  if (o.trace) {
    // intermediate states are in the model's normalized action space
    nlohmann::json states = nlohmann::json::array(), preds = nlohmann::json::array();
    for (const auto& s : trace.states) states.push_back(std::vector<double>(s.begin(), s.end()));
    for (const auto& p : trace.predictions) preds.push_back(std::vector<double>(p.begin(), p.end()));
    j["trace"] = {{"grid", trace.grid}, {"states", states}, {"predictions", preds}};
  }
  if (!o.out.empty()) write_text(o.out, j.dump() + "\n");
  out << j.dump() << "\n";
  return 0;
}

inline int run_verify(const Options& o, std::ostream& out) {
  const auto checks = verify::run(o.suite);
  out << verify::table(checks);
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : checks) j.push_back(verify::to_json(c));
  out << j.dump() << "\n";
  if (!o.out.empty()) write_text(o.out, j.dump(2) + "\n");
  return verify::all_pass(checks) ? 0 : 1;
}

}  // namespace detail

/// Parses argv and runs one subcommand. Returns the process exit code.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Policy learning with diffusion bridges on toy manipulation tasks"};
  app.name("bridgepolicy");
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;
  int episodes = 0;

  auto add_config = [&](CLI::App* c) { c->add_option("--config", o.config, "INI run config")->check(CLI::ExistingFile); };
  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", seed, "override train.seed"); };

  auto* gen = app.add_subcommand("gen-data", "generate scripted demonstrations");
  add_config(gen);
  add_seed(gen);
  gen->add_option("--episodes", episodes, "number of demonstrations");
  gen->add_option("--out", o.out, "dataset path (default: paths.dataset)");

  auto* tr = app.add_subcommand("train", "train a policy");
  auto* btr = app.add_subcommand("baseline-train", "train the noise-prior baseline");
  for (auto* c : {tr, btr}) {
    add_config(c);
    add_seed(c);
    c->add_option("--episodes", episodes, "demonstrations to generate when no dataset exists");
    c->add_option("--out", o.out, "checkpoint path (default: paths.checkpoint)");
  }
  tr->add_flag("--baseline", o.baseline, "train the noise-prior baseline instead");

  auto* ev = app.add_subcommand("eval", "closed-loop evaluation on fresh seeds");
  ev->add_option("--checkpoint", o.checkpoint, "checkpoint to evaluate")->required();
  add_seed(ev);
  ev->add_option("--episodes", episodes, "evaluation episodes (default: eval.episodes)");
  ev->add_option("--out", o.out, "also write the record here");

  auto* sm = app.add_subcommand("sample", "sample one action chunk");
  sm->add_option("--checkpoint", o.checkpoint, "checkpoint")->required();
  sm->add_option("--observation", o.observation, "observation record (JSON)")->required();
  add_seed(sm);
  sm->add_flag("--trace", o.trace, "include the intermediate chain");
  sm->add_option("--out", o.out, "also write the record here");

  auto* vf = app.add_subcommand("verify", "run oracle suites");
  vf->add_option("--suite", o.suite, "suite name or all");
  vf->add_option("--out", o.out, "write the JSON records here");

  if (argc > 1 && argv[1][0] != '-' && !app.get_subcommand_no_throw(argv[1])) {
    err << "error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  for (auto* c : app.get_subcommands()) {
    if (const auto* opt = c->get_option_no_throw("--seed"); opt && opt->count()) o.seed = seed;
    if (const auto* opt = c->get_option_no_throw("--episodes"); opt && opt->count()) o.episodes = episodes;
  }
  try {
    if (gen->parsed()) return detail::gen_data(o, out);
    if (tr->parsed()) return detail::train(o, o.baseline, out, err);
    if (btr->parsed()) return detail::train(o, true, out, err);
    if (ev->parsed()) return detail::eval(o, out);
    if (sm->parsed()) return detail::sample(o, out);
    if (vf->parsed()) return detail::run_verify(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace bridgepolicy::cli

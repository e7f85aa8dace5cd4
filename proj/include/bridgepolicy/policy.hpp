#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bridgepolicy/bridge.hpp"
#include "bridgepolicy/config.hpp"
#include "bridgepolicy/envs.hpp"
#include "bridgepolicy/io.hpp"
#include "bridgepolicy/net/adamw.hpp"
#include "bridgepolicy/net/layers.hpp"
#include "bridgepolicy/net/pointnet.hpp"
#include "bridgepolicy/sampler.hpp"

namespace bridgepolicy::policy {

using net::Mat;
using net::Tape;
using net::Var;

inline constexpr Eigen::Index kActionDim = 2;

inline NoiseSchedule make_schedule(const RunConfig& cfg) {
  return NoiseSchedule(ThetaSchedule::constant(cfg.theta), cfg.lambda, cfg.gamma, cfg.T, cfg.n_train_steps);
}

inline SamplerConfig make_sampler_config(const RunConfig& cfg) {
  SamplerConfig s;
  s.n_steps = cfg.sampler_steps;
  s.noise_multiplier = cfg.noise_multiplier;
  return s;
}

/// Maps raw actions/states into [-1, 1] per dimension and point clouds into
/// the unit workspace (center 0, radius 1).
struct Normalizer {
  envs::MinMax action, state;
  Eigen::Vector3d cloud_center = Eigen::Vector3d::Zero();
  double cloud_scale = 1.0;

  static Normalizer from_dataset(const envs::Dataset& ds) {
    return {ds.action_stats, ds.state_stats, Eigen::Vector3d::Zero(), 1.0};
  }

  Mat cloud(const envs::Cloud& c) const {
    Mat out = c;
    out.rowwise() -= cloud_center.transpose();
    return out / cloud_scale;
  }
};

/// One observation as the policy sees it.
struct Observation {
  Mat state_history;  // To x Ds, oldest first
  envs::Cloud cloud;  // N x 3
};

/// Encoders, fusion and denoiser, with all weights in one ParamStore.
///
/// State encoder: flatten(To x Ds) -> Linear -> LN -> SiLU -> Linear -> H tokens of width d_s.
/// Point encoder: per point Linear -> LN -> SiLU -> Linear -> LN -> SiLU, max-pool, Linear -> H tokens of width D_a.
/// Denoiser: MLP on [a_t, a_T, temb(t)] (the baseline also sees z_obs) -> a0 estimate.
class Model {
 public:
  Model(const RunConfig& cfg, Eigen::Index state_dim, bool baseline, std::uint64_t init_seed)
      : cfg_(cfg), state_dim_(state_dim), baseline_(baseline) {
    cfg.validate();
    Rng rng = make_rng(init_seed, 0xB1D6E);
    const Eigen::Index H = cfg.horizon, chunk = H * kActionDim;
    state_in_ = net::Linear(params, "state_enc.in", cfg.obs_steps * state_dim, cfg.state_hidden, rng);
    state_ln_ = net::LayerNorm(params, "state_enc.ln", cfg.state_hidden);
    state_out_ = net::Linear(params, "state_enc.out", cfg.state_hidden, H * cfg.d_s, rng);
    net::Linear(params, "point_enc.0", 3, cfg.point_hidden, rng);
    net::LayerNorm(params, "point_enc.ln0", cfg.point_hidden);
    net::Linear(params, "point_enc.1", cfg.point_hidden, cfg.point_hidden, rng);
    net::LayerNorm(params, "point_enc.ln1", cfg.point_hidden);
    point_proj_ = net::Linear(params, "point_enc.proj", cfg.point_hidden, chunk, rng);
    std::vector<Eigen::Index> hidden(cfg.hidden.begin(), cfg.hidden.end());
    denoiser_ = net::Mlp(params, "denoiser", (baseline ? 3 : 2) * chunk + cfg.time_embed, hidden, chunk, rng);
  }

  net::ParamStore params;

  const RunConfig& config() const { return cfg_; }
  Eigen::Index state_dim() const { return state_dim_; }
  Eigen::Index chunk_dim() const { return cfg_.horizon * kActionDim; }
  bool baseline() const { return baseline_; }

  /// z_obs for a batch: states B x (To*Ds) normalized, clouds (B*N) x 3 normalized.
  Var encode(Tape& tape, const Mat& states, const Mat& clouds) {
    const Eigen::Index B = states.rows();
    if (states.cols() != cfg_.obs_steps * state_dim_) throw DomainError("encode: state history has the wrong width");
    if (clouds.cols() != 3 || clouds.rows() != B * cfg_.n_points) throw DomainError("encode: point cloud has the wrong shape");
    Var s = checked(tape, state_in_(tape, params, tape.constant(states)), "state_enc.in");
    s = checked(tape, net::silu(tape, state_ln_(tape, params, s)), "state_enc.ln");
    Var zs = checked(tape, state_out_(tape, params, s), "state_enc.out");
    auto P = [&](const std::string& n) { return tape.param(params.get("point_enc." + n)); };
    const net::PointMlpVars pv{P("0.W"), P("0.b"), P("ln0.gain"), P("ln0.bias"), P("1.W"), P("1.b"), P("ln1.gain"), P("ln1.bias")};
    Var p = net::point_mlp_maxpool(tape, clouds, pv, cfg_.n_points);
    Var zpc = checked(tape, point_proj_(tape, params, p), "point_enc.proj");
    Var z = checked(tape, net::cross_attention_fuse(tape, zs, zpc, cfg_.horizon), "fusion");
    if (tape.value(z).cols() != chunk_dim()) throw DomainError("fusion output does not match the action chunk shape");
    return z;
  }

  /// a0 estimate for a batch at fractional training-grid indices t * n_train_steps / T.
  Var denoise(Tape& tape, Var a_t, Var a_T, const Eigen::VectorXd& steps, std::optional<Var> cond = std::nullopt) {
    Var temb = tape.constant(net::time_embedding(steps, cfg_.time_embed));
    std::vector<Var> parts{a_t, a_T};
    if (baseline_) {
      if (!cond) throw DomainError("baseline denoiser needs the observation latent");
      parts.push_back(*cond);
    }
    parts.push_back(temb);
    return checked(tape, denoiser_(tape, params, net::concat_cols(tape, parts)), "denoiser");
  }

 private:
  static Var checked(Tape& tape, Var v, const char* layer) {
    if (!tape.value(v).allFinite()) throw NumericalError(std::string("non-finite activations in ") + layer);
    return v;
  }

  RunConfig cfg_;
  Eigen::Index state_dim_;
  bool baseline_;
  net::Linear state_in_, state_out_, point_proj_;
  net::LayerNorm state_ln_;
  net::Mlp denoiser_;
};

/// Training samples cut from a dataset: observation history padded with the
/// first step, action chunks padded with zero actions past the episode end.
struct TrainingData {
  Mat states;  // S x (To*Ds), normalized
  Mat chunks;  // S x (H*Da), normalized
  const envs::Dataset* source = nullptr;
  Normalizer norm;

  Eigen::Index size() const { return states.rows(); }

  Mat clouds(const std::vector<Eigen::Index>& idx) const {
    const Eigen::Index N = source->n_points;
    Mat out(static_cast<Eigen::Index>(idx.size()) * N, 3);
    for (std::size_t b = 0; b < idx.size(); ++b)
      out.middleRows(static_cast<Eigen::Index>(b) * N, N) =
          norm.cloud(Eigen::Map<const envs::Cloud>(source->clouds.row(idx[b]).data(), N, 3));
    return out;
  }
  Mat rows(const Mat& m, const std::vector<Eigen::Index>& idx) const {
    Mat out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t b = 0; b < idx.size(); ++b) out.row(static_cast<Eigen::Index>(b)) = m.row(idx[b]);
    return out;
  }
};

inline TrainingData make_training_data(const envs::Dataset& ds, const RunConfig& cfg, const Normalizer& norm) {
  TrainingData td;
  td.source = &ds;
  td.norm = norm;
  const Eigen::Index S = ds.n_steps(), Ds = ds.state_dim, To = cfg.obs_steps, H = cfg.horizon;
  td.states.resize(S, To * Ds);
  td.chunks.resize(S, H * kActionDim);
  const Eigen::VectorXd zero_action = norm.action.normalize(Eigen::VectorXd::Zero(kActionDim));
  for (int e = 0; e < ds.n_episodes(); ++e) {
    const auto lo = ds.episode_offsets[static_cast<std::size_t>(e)], hi = ds.episode_offsets[static_cast<std::size_t>(e) + 1];
    for (auto k = lo; k < hi; ++k) {
      for (Eigen::Index j = 0; j < To; ++j) {
        const auto src = std::max<std::int64_t>(lo, k - (To - 1) + j);
        td.states.row(k).segment(j * Ds, Ds) = norm.state.normalize(ds.states.row(src).transpose()).transpose();
      }
      for (Eigen::Index h = 0; h < H; ++h)
        td.chunks.row(k).segment(h * kActionDim, kActionDim) =
            (k + h < hi ? norm.action.normalize(ds.actions.row(k + h).transpose()) : zero_action).transpose();
    }
  }
  return td;
}

struct LossRecord {
  double l_db = 0.0, l_align = 0.0, l_total = 0.0;
};

/// Records the bridge-matching plus alignment loss for one batch on `tape`. Returns the total-loss node.
inline Var record_loss(Tape& tape, Model& model, const TrainingData& data, const std::vector<Eigen::Index>& idx,
                       std::uint64_t seed, LossRecord* rec) {
  const RunConfig& cfg = model.config();
  const NoiseSchedule sched = make_schedule(cfg);
  Rng rng = make_rng(seed);
  const auto B = static_cast<Eigen::Index>(idx.size());
  const Eigen::Index D = model.chunk_dim();
  if (B == 0) throw DomainError("train_step needs a nonempty batch");

  Var z = model.encode(tape, data.rows(data.states, idx), data.clouds(idx));
  const Mat a0 = data.rows(data.chunks, idx);

  // t on the discrete grid {1, ..., n}; never 0
  Eigen::VectorXd steps(B), w_a0(B), w_aT(B), sd(B);
  std::uniform_int_distribution<int> pick(1, cfg.n_train_steps);
  for (Eigen::Index b = 0; b < B; ++b) {
    steps[b] = pick(rng);
    const auto c = marginal_coefficients(sched, sched.grid_time(static_cast<int>(steps[b])));
    w_a0[b] = c.weight_a0;
    w_aT[b] = c.weight_aT;
    sd[b] = std::sqrt(c.variance);
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat eps(B, D);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
  const Mat offset = w_a0.asDiagonal() * a0 + sd.asDiagonal() * eps;

  Var a_t, a_T, pred;
  if (!model.baseline()) {
    a_T = cfg.stop_grad_terminal ? net::stop_gradient(tape, z) : z;
    a_t = net::scale_rows_add(tape, a_T, w_aT, offset);
    pred = model.denoise(tape, a_t, a_T, steps);
  } else {
    Mat noise(B, D);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = cfg.lambda * normal(rng);
    a_T = tape.constant(noise);
    a_t = tape.constant(w_aT.asDiagonal() * noise + offset);
    pred = model.denoise(tape, a_t, a_T, steps, z);
  }
  Var a0v = tape.constant(a0);
  Var l_db = net::l1_loss(tape, pred, a0v);
  Var l_align = net::clip_loss(tape, a0v, z, cfg.tau);
  Var total = net::weighted_sum(tape, l_db, l_align, cfg.alpha);
  LossRecord r{tape.value(l_db)(0, 0), tape.value(l_align)(0, 0), tape.value(total)(0, 0)};
  if (!std::isfinite(r.l_total))
    throw NumericalError("non-finite loss; reproduce with step seed " + std::to_string(seed));
  if (rec) *rec = r;
  return total;
}

/// Loss of a batch without touching parameters (deterministic in `seed`).
inline LossRecord evaluate_loss(Model& model, const TrainingData& data, const std::vector<Eigen::Index>& idx,
                                std::uint64_t seed) {
  Tape tape;
  LossRecord r;
  record_loss(tape, model, data, idx, seed, &r);
  return r;
}

/// One optimizer update on one batch.
inline LossRecord train_step(Model& model, net::AdamW& opt, const TrainingData& data, const std::vector<Eigen::Index>& idx,
                             std::uint64_t seed) {
  Tape tape;
  LossRecord r;
  Var total = record_loss(tape, model, data, idx, seed, &r);
  model.params.zero_grad();
  tape.backward(total);
  opt.step(model.params);
  return r;
}

inline net::AdamW make_optimizer(const RunConfig& cfg) {
  net::AdamWConfig a;
  a.lr = cfg.lr;
  a.weight_decay = cfg.weight_decay;
  return net::AdamW(a);
}

// ---------------------------------------------------------------- inference

inline Mat observation_states(const Observation& obs, const Normalizer& norm) {
  Mat s(1, obs.state_history.size());
  for (Eigen::Index j = 0; j < obs.state_history.rows(); ++j)
    s.block(0, j * obs.state_history.cols(), 1, obs.state_history.cols()) =
        norm.state.normalize(obs.state_history.row(j).transpose()).transpose();
  return s;
}

/// Observation latent for one observation (the a_T handed to the sampler).
inline State encode_observation(Model& model, const Normalizer& norm, const Observation& obs) {
  Tape tape;
  Var z = model.encode(tape, observation_states(obs, norm), norm.cloud(obs.cloud));
  return tape.value(z).row(0).transpose();
}

struct InferenceResult {
  Mat actions;  // Ta x 2, raw units
  Mat chunk;    // H x 2, raw units
  State z_obs;
  int nfe = 0;
};

/// a_T = z_obs, M reverse steps, return the first Ta actions.
inline InferenceResult infer_actions(Model& model, const Normalizer& norm, const Observation& obs, std::uint64_t seed,
                                     ChainTrace* trace = nullptr) {
  const RunConfig& cfg = model.config();
  const NoiseSchedule sched = make_schedule(cfg);
  const SamplerConfig scfg = make_sampler_config(cfg);
  InferenceResult out;
  out.z_obs = encode_observation(model, norm, obs);
  const double step_scale = cfg.n_train_steps / cfg.T;
  int nfe = 0;
  auto denoiser = [&](const State& a, const State& aT, double t) {
    ++nfe;
    Tape tape;
    Eigen::VectorXd steps = Eigen::VectorXd::Constant(1, t * step_scale);
    std::optional<Var> cond;
    if (model.baseline()) cond = tape.constant(out.z_obs.transpose());
    Var p = model.denoise(tape, tape.constant(a.transpose()), tape.constant(aT.transpose()), steps, cond);
    return State(tape.value(p).row(0).transpose());
  };
  const State a0 = model.baseline() ? sample_noise_prior_baseline(model.chunk_dim(), denoiser, sched, scfg, seed, trace)
                                    : sample_chain(out.z_obs, denoiser, sched, scfg, seed, trace);
  out.nfe = nfe;
  out.chunk.resize(cfg.horizon, kActionDim);
  for (Eigen::Index h = 0; h < cfg.horizon; ++h)
    out.chunk.row(h) = norm.action.unnormalize(a0.segment(h * kActionDim, kActionDim)).transpose();
  out.actions = out.chunk.topRows(cfg.action_steps);
  return out;
}

// ---------------------------------------------------------------- rollouts

struct EpisodeOutcome {
  bool success = false;
  int steps = 0;
  double final_distance = 0.0;
};

/// Closed-loop episode: re-plan every Ta steps (receding horizon).
inline EpisodeOutcome run_episode(Model& model, const Normalizer& norm, std::uint64_t episode_seed) {
  const RunConfig& cfg = model.config();
  const envs::Task task = cfg.task_kind();
  envs::ToyEnvState s = envs::reset(task, episode_seed);
  std::vector<Eigen::VectorXd> history(static_cast<std::size_t>(cfg.obs_steps), envs::state_vector(task, s));
  EpisodeOutcome out;
  while (s.step_count < cfg.episode_cap && !out.success) {
    Observation obs;
    obs.state_history.resize(cfg.obs_steps, model.state_dim());
    for (int j = 0; j < cfg.obs_steps; ++j) obs.state_history.row(j) = history[static_cast<std::size_t>(j)].transpose();
    obs.cloud = envs::render_point_cloud(task, s, cfg.n_raw, cfg.n_points, envs::cloud_seed(episode_seed, s.step_count));
    const auto plan = infer_actions(model, norm, obs, derive_seed(episode_seed, 0x5A3D + static_cast<std::uint64_t>(s.step_count)));
    for (Eigen::Index k = 0; k < plan.actions.rows() && s.step_count < cfg.episode_cap; ++k) {
      const auto r = envs::env_step(task, s, plan.actions.row(k).transpose());
      s = r.state;
      history.erase(history.begin());
      history.push_back(envs::state_vector(task, s));
      if (r.success) {
        out.success = true;
        break;
      }
    }
  }
  out.steps = s.step_count;
  out.final_distance = ((task == envs::Task::Reach ? s.agent : s.object) - s.goal).norm();
  return out;
}

/// Seeds for evaluation episodes, disjoint in construction from dataset seeds.
inline std::uint64_t eval_episode_seed(std::uint64_t base_seed, int i) {
  return derive_seed(derive_seed(base_seed, 0xE7A1u), static_cast<std::uint64_t>(i));
}

struct EvalSummary {
  double success_rate = 0.0;
  double mean_final_distance = 0.0;
  int episodes = 0;
};

inline EvalSummary evaluate(Model& model, const Normalizer& norm, int episodes, std::uint64_t base_seed) {
  EvalSummary e;
  e.episodes = episodes;
  if (episodes == 0) return e;
  int wins = 0;
  double dist = 0.0;
  for (int i = 0; i < episodes; ++i) {
    const auto o = run_episode(model, norm, eval_episode_seed(base_seed, i));
    wins += o.success;
    dist += o.final_distance;
  }
  e.success_rate = static_cast<double>(wins) / episodes;
  e.mean_final_distance = dist / episodes;
  return e;
}

// ---------------------------------------------------------------- checkpoints

inline const std::string kCheckpointMagic = std::string("BPCKPT\0\0", 8);
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string serialize_checkpoint(const Model& model, const Normalizer& norm) {
  nlohmann::json m;
  m["config"] = write_config(model.config());
  m["baseline"] = model.baseline();
  m["state_dim"] = model.state_dim();
  io::Container c;
  c.manifest = m.dump(2);
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const Mat& v = model.params.at(i).value;
    c.add("param/" + model.params.name(i), {static_cast<std::uint64_t>(v.rows()), static_cast<std::uint64_t>(v.cols())},
          std::vector<double>(v.data(), v.data() + v.size()));
  }
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  auto n = [](const Eigen::VectorXd& v) { return std::vector<std::uint64_t>{static_cast<std::uint64_t>(v.size())}; };
  c.add("norm/action_min", n(norm.action.lo), vec(norm.action.lo));
  c.add("norm/action_max", n(norm.action.hi), vec(norm.action.hi));
  c.add("norm/state_min", n(norm.state.lo), vec(norm.state.lo));
  c.add("norm/state_max", n(norm.state.hi), vec(norm.state.hi));
  c.add("norm/cloud_center", {3}, vec(norm.cloud_center));
  c.add("norm/cloud_scale", {1}, std::vector<double>{norm.cloud_scale});
  return io::serialize(kCheckpointMagic, kCheckpointVersion, c);
}

struct Checkpoint {
  Model model;
  Normalizer norm;
};

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  const io::Container c = io::deserialize(bytes, kCheckpointMagic, kCheckpointVersion);
  nlohmann::json m;
  RunConfig cfg;
  bool baseline = false;
  Eigen::Index state_dim = 0;
  try {
    m = nlohmann::json::parse(c.manifest);
    cfg = parse_config(m.at("config").get<std::string>());
    baseline = m.at("baseline").get<bool>();
    state_dim = m.at("state_dim").get<Eigen::Index>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest unreadable: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config invalid: ") + e.what());
  }
  Model model(cfg, state_dim, baseline, 0);
  std::size_t n_params = 0;
  for (const auto& a : c.arrays)
    if (a.name.rfind("param/", 0) == 0) ++n_params;
  if (n_params != model.params.size()) throw FormatError("checkpoint parameter set does not match its config");
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    Mat& v = model.params.at(i).value;
    const auto& a = c.at("param/" + model.params.name(i));
    if (a.shape != std::vector<std::uint64_t>{static_cast<std::uint64_t>(v.rows()), static_cast<std::uint64_t>(v.cols())})
      throw FormatError("shape mismatch for parameter " + model.params.name(i));
    std::copy(a.f64().begin(), a.f64().end(), v.data());
  }
  auto vec = [&](const std::string& name) {
    const auto& v = c.at(name).f64();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  Normalizer norm;
  norm.action = {vec("norm/action_min"), vec("norm/action_max")};
  norm.state = {vec("norm/state_min"), vec("norm/state_max")};
  if (norm.action.lo.size() != kActionDim || norm.state.lo.size() != state_dim)
    throw FormatError("normalization statistics do not match the model");
  norm.cloud_center = vec("norm/cloud_center");
  norm.cloud_scale = vec("norm/cloud_scale")[0];
  return {std::move(model), norm};
}

inline void save_checkpoint(const Model& model, const Normalizer& norm, const std::string& path) {
  io::write_file(path, serialize_checkpoint(model, norm));
}

inline Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(io::read_file(path)); }

// ---------------------------------------------------------------- training loop

/// One metrics record per epoch, as a JSON line.
inline std::string metrics_line(int epoch, const LossRecord& r, std::optional<double> eval_success,
                                std::optional<double> wall_time) {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["l_db"] = r.l_db;
  j["l_align"] = r.l_align;
  j["l_total"] = r.l_total;
  j["eval_success_rate"] = eval_success ? nlohmann::json(*eval_success) : nlohmann::json(nullptr);
  if (wall_time) j["wall_time"] = *wall_time;
  return j.dump();
}

struct TrainResult {
  std::vector<std::string> metrics;
  std::vector<double> eval_history;
  double top5_success = 0.0;
};

/// Epoch loop: shuffled minibatches, AdamW, periodic evaluation on fresh seeds.
/// Batch order, bridge times and noise all derive from cfg.seed.
inline TrainResult train(Model& model, const TrainingData& data, std::ostream* log = nullptr) {
  const RunConfig& cfg = model.config();
  net::AdamW opt = make_optimizer(cfg);
  TrainResult out;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.size()));
  std::uint64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng shuffle_rng = make_rng(cfg.seed, 0x5F00 + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    LossRecord sum;
    int batches = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch));
      const std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                          order.begin() + static_cast<std::ptrdiff_t>(hi));
      const LossRecord r = train_step(model, opt, data, idx, derive_seed(cfg.seed, 0x7A000000 + step++));
      sum.l_db += r.l_db;
      sum.l_align += r.l_align;
      sum.l_total += r.l_total;
      ++batches;
    }
    if (batches) {
      sum.l_db /= batches;
      sum.l_align /= batches;
      sum.l_total /= batches;
    }
    std::optional<double> success;
    if (cfg.eval_every > 0 && cfg.eval_episodes > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      success = evaluate(model, data.norm, cfg.eval_episodes, derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch))).success_rate;
      out.eval_history.push_back(*success);
    }
    std::optional<double> wall;
    if (cfg.log_wall_time) wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.metrics.push_back(metrics_line(epoch, sum, success, wall));
    if (log) *log << out.metrics.back() << "\n" << std::flush;
  }
  if (!out.eval_history.empty()) {
    std::vector<double> h = out.eval_history;
    std::sort(h.rbegin(), h.rend());
    const std::size_t k = std::min<std::size_t>(5, h.size());
    out.top5_success = std::accumulate(h.begin(), h.begin() + static_cast<std::ptrdiff_t>(k), 0.0) / static_cast<double>(k);
  }
  return out;
}

}  // namespace bridgepolicy::policy

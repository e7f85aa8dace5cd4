#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "bridgepolicy/errors.hpp"
#include "bridgepolicy/io.hpp"
#include "bridgepolicy/rng.hpp"

namespace bridgepolicy::envs {

using Vec2 = Eigen::Vector2d;
using Cloud = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

enum class Task { Reach, Push };

inline Task parse_task(const std::string& name) {
  if (name == "reach") return Task::Reach;
  if (name == "push") return Task::Push;
  throw ConfigError("unknown task '" + name + "' (expected reach or push)");
}

inline std::string task_name(Task t) { return t == Task::Reach ? "reach" : "push"; }

inline constexpr double kStepScale = 0.05;
inline constexpr double kSuccessRadius = 0.05;
inline constexpr double kContactRadius = 0.08;
inline constexpr double kMinSeparation = 0.5;
inline constexpr double kCloudNoise = 0.01;

struct ToyEnvState {
  Vec2 agent = Vec2::Zero();
  Vec2 object = Vec2::Zero();
  Vec2 goal = Vec2::Zero();
  int step_count = 0;
};

inline bool is_success(Task task, const ToyEnvState& s) {
  return ((task == Task::Reach ? s.agent : s.object) - s.goal).norm() < kSuccessRadius;
}

inline Vec2 clip_action(const Vec2& a) { return a.cwiseMax(-1.0).cwiseMin(1.0); }

inline Vec2 clip_workspace(const Vec2& p) { return p.cwiseMax(-1.0).cwiseMin(1.0); }

struct StepResult {
  ToyEnvState state;
  bool success = false;
};

/// Pushing: when the agent touches the object before moving, the object is
/// carried along by the same displacement.
inline StepResult env_step(Task task, const ToyEnvState& s, const Vec2& action) {
  ToyEnvState next = s;
  const Vec2 moved = clip_workspace(s.agent + kStepScale * clip_action(action));
  if (task == Task::Push && (s.agent - s.object).norm() < kContactRadius)
    next.object = clip_workspace(s.object + (moved - s.agent));
  next.agent = moved;
  ++next.step_count;
  return {next, is_success(task, next)};
}

namespace detail {

// Action that moves the agent toward `target`, at full speed until the last step.
inline Vec2 toward(const Vec2& from, const Vec2& target) {
  const Vec2 d = target - from;
  const double n = d.norm();
  if (n == 0.0) return Vec2::Zero();
  return d / n * std::min(1.0, n / kStepScale);
}

}  // namespace detail

/// Reach: unit vector toward the goal. Push: get behind the object on the
/// object->goal line (detouring sideways if the agent starts in front), then push.
inline Vec2 scripted_expert(Task task, const ToyEnvState& s) {
  if (task == Task::Reach) {
    const Vec2 d = s.goal - s.agent;
    const double n = d.norm();
    return n == 0.0 ? Vec2::Zero() : Vec2(d / n);
  }
  const Vec2 to_goal = s.goal - s.object;
  const double dist = to_goal.norm();
  if (dist == 0.0) return Vec2::Zero();
  const Vec2 d = to_goal / dist;
  const Vec2 perp(-d.y(), d.x());
  const Vec2 rel = s.agent - s.object;
  const double along = rel.dot(d), lateral = rel.dot(perp);
  const double behind = 0.12, side = 0.16;
  if (along < -0.03 && std::abs(lateral) < 0.03) return d * std::min(1.0, dist / kStepScale);
  if (along < -0.1) return detail::toward(s.agent, s.object - behind * d);
  const double sgn = lateral >= 0.0 ? 1.0 : -1.0;
  if (std::abs(lateral) < side - 0.01) return detail::toward(s.agent, s.object + along * d + sgn * side * perp);
  return detail::toward(s.agent, s.object - behind * d + sgn * side * perp);
}

/// Start configuration for an episode seed. Reach uses [-0.9, 0.9]^2 with the
/// object parked on the goal; Push keeps everything in [-0.6, 0.6]^2 so the
/// pushing approach stays inside the workspace.
inline ToyEnvState reset(Task task, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const double box = task == Task::Reach ? 0.9 : 0.6;
  auto draw = [&] { return Vec2(uniform(rng, -box, box), uniform(rng, -box, box)); };
  ToyEnvState s;
  if (task == Task::Reach) {
    do {
      s.agent = draw();
      s.goal = draw();
    } while ((s.agent - s.goal).norm() < kMinSeparation);
    s.object = s.goal;
  } else {
    do {
      s.agent = draw();
      s.object = draw();
      s.goal = draw();
    } while ((s.object - s.goal).norm() < kMinSeparation || (s.agent - s.object).norm() < 0.2);
  }
  return s;
}

inline Eigen::Index state_dim(Task task) { return task == Task::Reach ? 4 : 6; }

/// Low-dimensional observation: agent and goal, plus the object for Push.
inline Eigen::VectorXd state_vector(Task task, const ToyEnvState& s) {
  Eigen::VectorXd v(state_dim(task));
  if (task == Task::Reach)
    v << s.agent, s.goal;
  else
    v << s.agent, s.object, s.goal;
  return v;
}

/// Greedy max-min selection. Distances are compared squared; ties go to the lowest index.
inline std::vector<Eigen::Index> farthest_point_sample(const Cloud& points, Eigen::Index k, Eigen::Index start_index = 0) {
  const Eigen::Index m = points.rows();
  if (k < 1 || k > m) throw DomainError("farthest_point_sample: need 1 <= k <= M (k=" + std::to_string(k) + ", M=" +
                                        std::to_string(m) + ")");
  if (start_index < 0 || start_index >= m) throw DomainError("farthest_point_sample: start index out of range");
  std::vector<double> mind(static_cast<std::size_t>(m), std::numeric_limits<double>::infinity());
  std::vector<Eigen::Index> out{start_index};
  out.reserve(static_cast<std::size_t>(k));
  Eigen::Index last = start_index;
  mind[static_cast<std::size_t>(last)] = -1.0;
  while (static_cast<Eigen::Index>(out.size()) < k) {
    Eigen::Index best = -1;
    double best_d = -1.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      double& di = mind[static_cast<std::size_t>(i)];
      if (di < 0.0) continue;
      const double dx = points(i, 0) - points(last, 0), dy = points(i, 1) - points(last, 1), dz = points(i, 2) - points(last, 2);
      di = std::min(di, dx * dx + dy * dy + dz * dz);
      if (di > best_d) {
        best_d = di;
        best = i;
      }
    }
    out.push_back(best);
    mind[static_cast<std::size_t>(best)] = -1.0;
    last = best;
  }
  return out;
}

struct Disc {
  Vec2 center;
  double radius;
  double height;
};

/// Marker discs in the rendered scene: goal on the table, object and agent
/// raised so the cloud alone tells them apart.
inline std::vector<Disc> scene_discs(Task task, const ToyEnvState& s) {
  std::vector<Disc> discs{{s.goal, 0.05, 0.0}};
  if (task == Task::Push) discs.push_back({s.object, 0.04, 0.3});
  discs.push_back({s.agent, 0.03, 0.6});
  return discs;
}

/// n_raw surface samples split evenly over the discs (height noise sigma 0.01),
/// clamped to the workspace box inflated by 3 sigma, then FPS-downsampled to n_points.
inline Cloud render_point_cloud(Task task, const ToyEnvState& s, Eigen::Index n_raw, Eigen::Index n_points,
                                std::uint64_t seed) {
  if (n_raw < n_points) throw DomainError("render_point_cloud: n_raw must be >= the FPS target");
  if (n_points < 1) throw DomainError("render_point_cloud: need at least one point");
  const auto discs = scene_discs(task, s);
  Rng rng = make_rng(seed);
  std::normal_distribution<double> noise(0.0, kCloudNoise);
  const double lim = 1.0 + 3.0 * kCloudNoise;
  Cloud raw(n_raw, 3);
  const auto nd = static_cast<Eigen::Index>(discs.size());
  for (Eigen::Index i = 0; i < n_raw; ++i) {
    const Disc& d = discs[static_cast<std::size_t>(i % nd)];
    const double r = d.radius * std::sqrt(uniform(rng, 0.0, 1.0));
    const double phi = uniform(rng, 0.0, 2.0 * M_PI);
    raw(i, 0) = std::clamp(d.center.x() + r * std::cos(phi), -lim, lim);
    raw(i, 1) = std::clamp(d.center.y() + r * std::sin(phi), -lim, lim);
    raw(i, 2) = std::clamp(d.height + noise(rng), -lim, lim);
  }
  const auto idx = farthest_point_sample(raw, n_points, 0);
  Cloud out(n_points, 3);
  for (Eigen::Index i = 0; i < n_points; ++i) out.row(i) = raw.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

struct EnvConfig {
  Task task = Task::Reach;
  int episode_cap = 100;
  Eigen::Index n_points = 512;
  Eigen::Index n_raw = 1024;
};

inline std::uint64_t cloud_seed(std::uint64_t episode_seed, int step) {
  return derive_seed(episode_seed, 1 + static_cast<std::uint64_t>(step));
}

struct Episode {
  std::uint64_t seed = 0;
  ToyEnvState initial;
  std::vector<Eigen::VectorXd> states;
  std::vector<Cloud> clouds;
  std::vector<Vec2> actions;
  bool success = false;
};

/// Rolls the scripted expert, recording (observation, action) before every step
/// until success or the episode cap.
inline Episode rollout_expert(const EnvConfig& cfg, std::uint64_t episode_seed) {
  Episode ep;
  ep.seed = episode_seed;
  ToyEnvState s = reset(cfg.task, episode_seed);
  ep.initial = s;
  while (s.step_count < cfg.episode_cap) {
    ep.states.push_back(state_vector(cfg.task, s));
    ep.clouds.push_back(render_point_cloud(cfg.task, s, cfg.n_raw, cfg.n_points, cloud_seed(episode_seed, s.step_count)));
    const Vec2 a = scripted_expert(cfg.task, s);
    ep.actions.push_back(a);
    const auto r = env_step(cfg.task, s, a);
    s = r.state;
    if (r.success) {
      ep.success = true;
      break;
    }
  }
  return ep;
}

/// Per-dimension min/max used to map values into [-1, 1].
struct MinMax {
  Eigen::VectorXd lo, hi;

  Eigen::VectorXd scale() const {
    Eigen::VectorXd s = (hi - lo) / 2.0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
      if (!(s[i] > 1e-12)) s[i] = 1.0;
    return s;
  }
  Eigen::VectorXd center() const { return (hi + lo) / 2.0; }
  Eigen::VectorXd normalize(const Eigen::VectorXd& x) const { return (x - center()).cwiseQuotient(scale()); }
  Eigen::VectorXd unnormalize(const Eigen::VectorXd& x) const { return x.cwiseProduct(scale()) + center(); }
};

struct Dataset {
  Task task = Task::Reach;
  std::uint64_t seed = 0;
  int n_requested = 0;
  int n_failed = 0;
  Eigen::Index n_points = 0;
  Eigen::Index state_dim = 0;
  // one row per recorded step; clouds are flattened N x 3 per row
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> states, clouds, actions;
  std::vector<std::int64_t> episode_offsets{0};
  std::vector<std::uint64_t> episode_seeds;
  Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor> initial_states;
  MinMax action_stats, state_stats;

  int n_episodes() const { return static_cast<int>(episode_offsets.size()) - 1; }
  Eigen::Index n_steps() const { return states.rows(); }
};

inline MinMax min_max_rows(const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& m,
                           Eigen::Index dim) {
  MinMax s;
  if (m.rows() == 0) {
    s.lo = -Eigen::VectorXd::Ones(dim);
    s.hi = Eigen::VectorXd::Ones(dim);
  } else {
    s.lo = m.colwise().minCoeff().transpose();
    s.hi = m.colwise().maxCoeff().transpose();
  }
  return s;
}

/// Expert demonstrations for `n_episodes` seeds derived from `seed`; failed
/// episodes are dropped and counted.
inline Dataset build_dataset(const EnvConfig& cfg, int n_episodes, std::uint64_t seed) {
  if (n_episodes < 0) throw ConfigError("episode count must be >= 0");
  Dataset ds;
  ds.task = cfg.task;
  ds.seed = seed;
  ds.n_requested = n_episodes;
  ds.n_points = cfg.n_points;
  ds.state_dim = state_dim(cfg.task);
  std::vector<Episode> kept;
  Eigen::Index total = 0;
  for (int e = 0; e < n_episodes; ++e) {
    Episode ep = rollout_expert(cfg, derive_seed(seed, static_cast<std::uint64_t>(e)));
    if (!ep.success) {
      ++ds.n_failed;
      continue;
    }
    total += static_cast<Eigen::Index>(ep.actions.size());
    kept.push_back(std::move(ep));
  }
  ds.states.resize(total, ds.state_dim);
  ds.clouds.resize(total, cfg.n_points * 3);
  ds.actions.resize(total, 2);
  ds.initial_states.resize(static_cast<Eigen::Index>(kept.size()), 6);
  Eigen::Index row = 0;
  for (std::size_t e = 0; e < kept.size(); ++e) {
    const Episode& ep = kept[e];
    for (std::size_t k = 0; k < ep.actions.size(); ++k, ++row) {
      ds.states.row(row) = ep.states[k].transpose();
      ds.clouds.row(row) = Eigen::Map<const Eigen::RowVectorXd>(ep.clouds[k].data(), cfg.n_points * 3);
      ds.actions.row(row) = ep.actions[k].transpose();
    }
    ds.episode_offsets.push_back(row);
    ds.episode_seeds.push_back(ep.seed);
    ds.initial_states.row(static_cast<Eigen::Index>(e)) << ep.initial.agent.transpose(), ep.initial.object.transpose(),
        ep.initial.goal.transpose();
  }
  ds.action_stats = min_max_rows(ds.actions, 2);
  ds.state_stats = min_max_rows(ds.states, ds.state_dim);
  return ds;
}

inline const std::string kDatasetMagic = std::string("BPDSET\0\0", 8);
inline constexpr std::uint32_t kDatasetVersion = 1;

namespace detail {

template <typename M>
std::vector<double> flat(const M& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

inline std::vector<double> flat_vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace detail

inline std::string serialize_dataset(const Dataset& ds) {
  using nlohmann::json;
  auto u = [](Eigen::Index v) { return static_cast<std::uint64_t>(v); };
  json m;
  m["task"] = task_name(ds.task);
  m["seed"] = ds.seed;
  m["episodes_requested"] = ds.n_requested;
  m["episodes"] = ds.n_episodes();
  m["episodes_failed"] = ds.n_failed;
  m["steps"] = ds.n_steps();
  m["state_dim"] = ds.state_dim;
  m["action_dim"] = 2;
  m["n_points"] = ds.n_points;
  m["episode_seeds"] = ds.episode_seeds;
  m["normalization"] = {{"action_min", detail::flat_vec(ds.action_stats.lo)},
                        {"action_max", detail::flat_vec(ds.action_stats.hi)},
                        {"state_min", detail::flat_vec(ds.state_stats.lo)},
                        {"state_max", detail::flat_vec(ds.state_stats.hi)},
                        {"cloud_center", {0.0, 0.0, 0.0}},
                        {"cloud_scale", 1.0}};
  io::Container c;
  c.manifest = m.dump(2);
  c.add("states", {u(ds.n_steps()), u(ds.state_dim)}, detail::flat(ds.states));
  c.add("clouds", {u(ds.n_steps()), u(ds.n_points), 3}, detail::flat(ds.clouds));
  c.add("actions", {u(ds.n_steps()), 2}, detail::flat(ds.actions));
  c.add("episode_offsets", {ds.episode_offsets.size()}, ds.episode_offsets);
  c.add("initial_states", {u(ds.initial_states.rows()), 6}, detail::flat(ds.initial_states));
  c.add("action_min", {2}, detail::flat_vec(ds.action_stats.lo));
  c.add("action_max", {2}, detail::flat_vec(ds.action_stats.hi));
  c.add("state_min", {u(ds.state_dim)}, detail::flat_vec(ds.state_stats.lo));
  c.add("state_max", {u(ds.state_dim)}, detail::flat_vec(ds.state_stats.hi));
  return io::serialize(kDatasetMagic, kDatasetVersion, c);
}

inline Dataset deserialize_dataset(const std::string& bytes) {
  const io::Container c = io::deserialize(bytes, kDatasetMagic, kDatasetVersion);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(c.manifest);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset manifest is not valid JSON: ") + e.what());
  }
  Dataset ds;
  try {
    ds.task = parse_task(m.at("task").get<std::string>());
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.n_requested = m.at("episodes_requested").get<int>();
    ds.n_failed = m.at("episodes_failed").get<int>();
    ds.n_points = m.at("n_points").get<Eigen::Index>();
    ds.state_dim = m.at("state_dim").get<Eigen::Index>();
    ds.episode_seeds = m.at("episode_seeds").get<std::vector<std::uint64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset manifest incomplete: ") + e.what());
  }
  const auto steps = static_cast<Eigen::Index>(c.at("actions").shape.at(0));
  auto load = [&](const std::string& name, auto& dst, Eigen::Index rows, Eigen::Index cols) {
    const auto& v = c.at(name).f64();
    if (static_cast<Eigen::Index>(v.size()) != rows * cols) throw FormatError("array '" + name + "' has the wrong size");
    dst.resize(rows, cols);
    std::copy(v.begin(), v.end(), dst.data());
  };
  load("states", ds.states, steps, ds.state_dim);
  load("clouds", ds.clouds, steps, ds.n_points * 3);
  load("actions", ds.actions, steps, 2);
  ds.episode_offsets = c.at("episode_offsets").i64();
  const auto n_ep = static_cast<Eigen::Index>(ds.episode_offsets.size()) - 1;
  if (n_ep < 0 || ds.episode_offsets.back() != steps || static_cast<Eigen::Index>(ds.episode_seeds.size()) != n_ep)
    throw FormatError("episode offsets inconsistent with the step arrays");
  load("initial_states", ds.initial_states, n_ep, 6);
  auto vec = [&](const std::string& name) {
    const auto& v = c.at(name).f64();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  ds.action_stats = {vec("action_min"), vec("action_max")};
  ds.state_stats = {vec("state_min"), vec("state_max")};
  return ds;
}

/// Writes the dataset container to `out_path`; returns the dataset.
inline Dataset generate_dataset(const EnvConfig& cfg, int n_episodes, std::uint64_t seed, const std::string& out_path) {
  Dataset ds = build_dataset(cfg, n_episodes, seed);
  io::write_file(out_path, serialize_dataset(ds));
  return ds;
}

inline Dataset load_dataset(const std::string& path) { return deserialize_dataset(io::read_file(path)); }

}  // namespace bridgepolicy::envs

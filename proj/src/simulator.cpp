#include "cftraj/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace cftraj {

namespace {

constexpr double kLaneWidth = 3.5;
constexpr double kLaneOffset = 1.75;   // intersection lanes sit this far right of the road axis
constexpr double kBoxHalf = 5.0;       // conflict box half-size
constexpr double kStopBack = 3.0;      // stop line distance before the box
constexpr double kSafeMargin = 3.0;    // scripted non-aggressive scenes keep this clearance
constexpr int kMaxAttempts = 1000;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

// Integral of smoothstep over [0, u].
double smoothstep_integral(double u) {
  if (u <= 0.0) return 0.0;
  if (u >= 1.0) return 0.5 + (u - 1.0);
  return u * u * u - 0.5 * u * u * u * u;
}

// Quintic minimum-jerk blend in [0, 1].
double quintic(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
}

// Piecewise-constant-acceleration motion along a path, starting at arc length 0.
class SpeedProfile {
 public:
  explicit SpeedProfile(double v0) { segs_.push_back({0.0, 0.0, v0, 0.0}); }

  void set_accel(double t, double a) {
    const double t0 = std::max(t, segs_.back().t0);
    segs_.push_back({t0, s(t0), v(t0), a});
  }
  double s(double t) const {
    const Seg& g = seg(t);
    const double dt = t - g.t0;
    return g.s0 + g.v0 * dt + 0.5 * g.a * dt * dt;
  }
  double v(double t) const {
    const Seg& g = seg(t);
    return g.v0 + g.a * (t - g.t0);
  }
  // First time the arc length reaches `target` (profile is non-decreasing).
  double time_at(double target) const {
    double lo = 0.0, hi = 1.0;
    while (s(hi) < target) {
      hi *= 2.0;
      if (hi > 1e6) return std::numeric_limits<double>::infinity();
    }
    for (int k = 0; k < 200; ++k) {
      const double mid = 0.5 * (lo + hi);
      (s(mid) < target ? lo : hi) = mid;
    }
    return hi;
  }

 private:
  struct Seg {
    double t0, s0, v0, a;
  };
  const Seg& seg(double t) const {
    for (std::size_t k = segs_.size(); k-- > 1;) {
      if (t >= segs_[k].t0) return segs_[k];
    }
    return segs_.front();
  }
  std::vector<Seg> segs_;
};

// Straight approach through the intersection centre. Direction k: 0 east, 1 north, 2 west, 3 south.
struct Approach {
  Vec2 heading;
  Vec2 offset;      // lateral lane offset (right of heading)
  double d0 = 0.0;  // start distance before the centre

  Vec2 at(double s) const { return heading * (s - d0) + offset; }
};

Approach make_approach(int k, double d0) {
  const double ang = k * std::numbers::pi / 2.0;
  const Vec2 h{std::cos(ang), std::sin(ang)};
  const Vec2 right{h.y, -h.x};
  return {h, right * kLaneOffset, d0};
}

void check_count(const ScenarioConfig& cfg, int lo, int hi) {
  if (cfg.n_agents < lo || cfg.n_agents > hi) {
    throw std::invalid_argument(std::string(to_string(cfg.kind)) + " scenes need " + std::to_string(lo) + ".." +
                                std::to_string(hi) + " agents, got " + std::to_string(cfg.n_agents));
  }
}

Scene empty_scene(const ScenarioConfig& cfg) {
  Scene s;
  s.kind = cfg.kind;
  s.dt = cfg.dt;
  s.t_h = cfg.t_h;
  s.t_p = cfg.t_p;
  s.tracks.resize(static_cast<std::size_t>(cfg.n_agents));
  for (int a = 0; a < cfg.n_agents; ++a) {
    s.tracks[static_cast<std::size_t>(a)].agent_id = a;
    s.tracks[static_cast<std::size_t>(a)].positions.resize(static_cast<std::size_t>(cfg.t_p));
  }
  return s;
}

Scene following(const ScenarioConfig& cfg, std::mt19937_64& rng) {
  Scene s = empty_scene(cfg);
  const double v0 = uniform(rng, 12.0, 20.0);
  const double ts = uniform(rng, 1.0, 6.0);
  const double dur = uniform(rng, 1.5, 3.0);
  const double dv = uniform(rng, -4.0, 3.0);
  const std::size_t n = s.n();
  std::vector<double> gap0(n), headway(n), sway_amp(n), sway_period(n), sway_phase(n);
  for (std::size_t a = 0; a < n; ++a) {
    gap0[a] = uniform(rng, 6.0, 10.0);
    headway[a] = uniform(rng, 0.8, 1.5);
    sway_amp[a] = uniform(rng, 0.0, 0.15);
    sway_period[a] = uniform(rng, 4.0, 9.0);
    sway_phase[a] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  }
  for (int f = 0; f < cfg.t_p; ++f) {
    const double t = f * cfg.dt;
    const double u = (t - ts) / dur;
    double x = v0 * t + dv * dur * smoothstep_integral(u);
    double v = v0 + dv * smoothstep(u);
    for (std::size_t a = 0; a < n; ++a) {
      if (a > 0) x -= gap0[a] + headway[a] * v;  // follower keeps a speed-dependent gap to its predecessor
      const double y = sway_amp[a] * std::sin(2.0 * std::numbers::pi * t / sway_period[a] + sway_phase[a]);
      s.tracks[a].positions[static_cast<std::size_t>(f)] = {x, y};
    }
  }
  return s;
}

Scene overtaking(const ScenarioConfig& cfg, std::mt19937_64& rng) {
  Scene s = empty_scene(cfg);
  const double v_slow = uniform(rng, 8.0, 14.0);
  const double dv = uniform(rng, 4.0, 7.0);
  const double v_fast = v_slow + dv;
  const double t_lc = uniform(rng, 2.0, 4.5);
  const double lc_dur = uniform(rng, 2.5, 3.5);
  const double gap_lc = uniform(rng, 12.0, 20.0);
  const double gap0 = gap_lc + dv * t_lc;
  const double ret_gap = 12.0;
  const double t_ret = (gap0 + ret_gap) / dv;
  const double v_far = v_fast + uniform(rng, 2.0, 5.0);
  const double far_ahead = uniform(rng, 35.0, 50.0);
  for (int f = 0; f < cfg.t_p; ++f) {
    const double t = f * cfg.dt;
    const double xa = v_slow * t;
    const double xb = -gap0 + v_fast * t;
    const double yb = kLaneWidth * (quintic((t - t_lc) / lc_dur) - quintic((t - t_ret) / lc_dur));
    s.tracks[0].positions[static_cast<std::size_t>(f)] = {xa, 0.0};
    s.tracks[1].positions[static_cast<std::size_t>(f)] = {xb, yb};
    if (s.n() > 2) s.tracks[2].positions[static_cast<std::size_t>(f)] = {far_ahead - gap0 + v_far * t, kLaneWidth};
  }
  return s;
}

Scene crossing(const ScenarioConfig& cfg, std::mt19937_64& rng, bool yield) {
  Scene s = empty_scene(cfg);
  const std::size_t n = s.n();
  // Distinct approach directions; the first two are perpendicular.
  std::vector<int> dirs{0, 1, 2, 3};
  std::shuffle(dirs.begin(), dirs.end(), rng);
  if ((dirs[0] + dirs[1]) % 2 == 0) std::swap(dirs[1], dirs[2]);
  dirs.resize(n);

  std::vector<double> speed(n);
  std::vector<Approach> paths(n);
  std::vector<SpeedProfile> motion;
  motion.reserve(n);

  if (yield) {
    const double first = uniform(rng, 3.5, 4.5);
    std::vector<double> arrival(n);
    for (std::size_t a = 0; a < n; ++a) {
      speed[a] = uniform(rng, 8.0, 12.0);
      arrival[a] = a == 0 ? first : first + uniform(rng, 0.0, 1.0);
      paths[a] = make_approach(dirs[a], kBoxHalf + speed[a] * arrival[a]);
    }
    // Priority by natural arrival at the box; later agents stop and wait for the box to clear.
    std::vector<std::size_t> rank(n);
    std::iota(rank.begin(), rank.end(), 0);
    std::stable_sort(rank.begin(), rank.end(), [&](auto x, auto y) { return arrival[x] < arrival[y]; });
    std::vector<SpeedProfile> prof(n, SpeedProfile(0.0));
    double box_free = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t a = rank[r];
      const double v = speed[a];
      SpeedProfile p(v);
      const double s_entry = paths[a].d0 - kBoxHalf;
      if (r > 0) {
        const double s_stop = s_entry - kStopBack;
        double decel = 3.0;
        double t_brake = (s_stop - v * v / (2.0 * decel)) / v;
        if (t_brake < 0.0) {
          t_brake = 0.0;
          decel = v * v / (2.0 * s_stop);
        }
        const double t_stop = t_brake + v / decel;
        p.set_accel(t_brake, -decel);
        p.set_accel(t_stop, 0.0);
        const double accel = 2.5;
        const double t_to_entry = std::sqrt(2.0 * kStopBack / accel);
        const double t_go = std::max(t_stop, box_free + 0.5 - t_to_entry);
        p.set_accel(t_go, accel);
        p.set_accel(t_go + v / accel, 0.0);
      }
      box_free = p.time_at(paths[a].d0 + kBoxHalf);
      prof[a] = p;
    }
    motion = std::move(prof);
  } else {
    // Agents 0 and 1 reach the crossing point of their lanes at the same instant.
    const double t_hit = uniform(rng, 4.0, 6.0);
    for (std::size_t a = 0; a < n; ++a) speed[a] = uniform(rng, 9.0, 14.0);
    const Approach pa = make_approach(dirs[0], 0.0), pb = make_approach(dirs[1], 0.0);
    const Vec2 conflict = pa.offset + pb.offset;
    for (std::size_t a = 0; a < n; ++a) {
      const Approach base = make_approach(dirs[a], 0.0);
      const double d0 = a < 2 ? speed[a] * t_hit - conflict.dot(base.heading)
                              : kBoxHalf + speed[a] * uniform(rng, 3.5, 6.5);
      paths[a] = make_approach(dirs[a], d0);
      motion.emplace_back(speed[a]);
    }
  }

  for (std::size_t a = 0; a < n; ++a) {
    for (int f = 0; f < cfg.t_p; ++f) {
      s.tracks[a].positions[static_cast<std::size_t>(f)] = paths[a].at(motion[a].s(f * cfg.dt));
    }
  }
  return s;
}

}  // namespace

std::vector<CollisionEvent> CollisionLabel::merged_events() const {
  // events are ordered by (u, v, frame)
  std::vector<CollisionEvent> out;
  const CollisionEvent* prev = nullptr;
  for (const auto& e : events) {
    if (!prev || prev->u != e.u || prev->v != e.v || prev->frame != e.frame - 1) out.push_back(e);
    prev = &e;
  }
  return out;
}

Scene generate_scene(const ScenarioConfig& cfg) {
  if (cfg.noise_std < 0.0) throw std::invalid_argument("noise_std must be >= 0");
  if (!(cfg.dt > 0.0) || cfg.t_h <= 0 || cfg.t_h >= cfg.t_p) throw std::invalid_argument("bad time grid");
  std::mt19937_64 rng(splitmix64(cfg.seed));
  Scene s;
  switch (cfg.kind) {
    case ScenarioKind::following: check_count(cfg, 2, 6); break;
    case ScenarioKind::overtaking: check_count(cfg, 2, 3); break;
    case ScenarioKind::intersection:
    case ScenarioKind::aggressive: check_count(cfg, 2, 4); break;
    default: throw std::invalid_argument("cannot simulate scenario kind " + std::string(to_string(cfg.kind)));
  }
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxAttempts) throw std::runtime_error("simulator: could not satisfy scenario contract");
    switch (cfg.kind) {
      case ScenarioKind::following: s = following(cfg, rng); break;
      case ScenarioKind::overtaking: s = overtaking(cfg, rng); break;
      case ScenarioKind::intersection: s = crossing(cfg, rng, true); break;
      default: s = crossing(cfg, rng, false); break;
    }
    if (cfg.kind == ScenarioKind::aggressive || min_pairwise_distance(s) >= kSafeMargin) break;
  }
  if (cfg.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_std);
    for (auto& t : s.tracks) {
      for (auto& p : t.positions) {
        p.x += noise(rng);
        p.y += noise(rng);
      }
    }
  }
  char id[64];
  std::snprintf(id, sizeof id, "%s_%llu", std::string(to_string(cfg.kind)).c_str(),
                static_cast<unsigned long long>(cfg.seed));
  s.scene_id = id;
  return s;
}

double min_pairwise_distance(const Scene& scene) {
  double best = std::numeric_limits<double>::infinity();
  for (int f = 0; f < scene.t_p; ++f) {
    for (std::size_t u = 0; u < scene.n(); ++u) {
      for (std::size_t v = u + 1; v < scene.n(); ++v) {
        best = std::min(best, (scene.position(u, f) - scene.position(v, f)).norm());
      }
    }
  }
  return best;
}

CollisionLabel label_collisions(const Scene& scene, double d_col) {
  if (!(d_col > 0.0)) throw std::invalid_argument("d_col must be positive");
  CollisionLabel lab;
  lab.flagged.assign(scene.n(), false);
  for (std::size_t u = 0; u < scene.n(); ++u) {
    for (std::size_t v = u + 1; v < scene.n(); ++v) {
      for (int f = 0; f < scene.t_p; ++f) {
        if ((scene.position(u, f) - scene.position(v, f)).norm() < d_col) {
          lab.events.push_back({u, v, f});
          lab.flagged[u] = lab.flagged[v] = true;
        }
      }
    }
  }
  return lab;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  static constexpr std::array<std::pair<int, int>, 4> kAgentRange{{{3, 4}, {2, 3}, {2, 4}, {2, 4}}};
  Dataset ds;
  for (std::size_t k = 0; k < 4; ++k) {
    if (spec.counts[k] < 0) throw std::invalid_argument("scene counts must be >= 0");
    const ScenarioKind kind = kSimulatedKinds[k];
    for (int i = 0; i < spec.counts[k]; ++i) {
      const std::uint64_t scene_seed = splitmix64(spec.seed * 1000003ULL + k * 7919ULL + static_cast<std::uint64_t>(i));
      std::mt19937_64 pick(scene_seed);
      const auto [lo, hi] = kAgentRange[k];
      ScenarioConfig cfg;
      cfg.kind = kind;
      cfg.n_agents = std::uniform_int_distribution<int>(lo, hi)(pick);
      cfg.seed = scene_seed;
      cfg.noise_std = spec.noise_std;
      cfg.dt = spec.dt;
      cfg.t_h = spec.t_h;
      cfg.t_p = spec.t_p;
      Scene s = generate_scene(cfg);
      char id[64];
      std::snprintf(id, sizeof id, "%s_%04d", std::string(to_string(kind)).c_str(), i);
      s.scene_id = id;
      ds.scenes.push_back(std::move(s));
    }
  }
  return ds;
}

}  // namespace cftraj

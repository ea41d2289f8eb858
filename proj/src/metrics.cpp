#include "cftraj/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace cftraj {

namespace {

const Trajectories& prediction_for(const Predictions& preds, const Scene& s) {
  auto it = preds.find(s.scene_id);
  if (it == preds.end()) throw std::invalid_argument("no prediction for scene " + s.scene_id);
  const auto& tr = it->second;
  if (tr.size() != s.n()) throw std::invalid_argument("prediction for " + s.scene_id + " has the wrong agent count");
  for (const auto& a : tr) {
    if (a.size() != static_cast<std::size_t>(s.future_steps())) {
      throw std::invalid_argument("prediction for " + s.scene_id + " has the wrong length");
    }
  }
  return tr;
}

int horizon_steps(double h, const Scene& s) {
  const double steps = h / s.dt;
  const int k = static_cast<int>(std::lround(steps));
  if (std::abs(steps - k) > 1e-9 || k < 1 || k > s.future_steps()) {
    throw std::invalid_argument("horizon " + std::to_string(h) + " s is not a step inside the prediction window of " +
                                s.scene_id);
  }
  return k;
}

std::string horizon_key(double h) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%gs", h);
  return buf;
}

nlohmann::json rmse_json(const std::map<double, double>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [h, v] : m) j[horizon_key(h)] = v;
  return j;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string fmt_delta(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.4f", v);
  return buf;
}

}  // namespace

Scene with_predicted_future(const Scene& scene, const Trajectories& future) {
  Scene s = scene;
  for (std::size_t a = 0; a < s.n(); ++a) {
    for (int t = 0; t < s.future_steps(); ++t) {
      s.tracks[a].positions[static_cast<std::size_t>(s.t_h + t)] = future[a][static_cast<std::size_t>(t)];
    }
  }
  return s;
}

Trajectories constant_velocity(const Scene& scene) {
  Trajectories out(scene.n());
  for (std::size_t a = 0; a < scene.n(); ++a) {
    const Vec2 last = scene.position(a, scene.t_h - 1);
    const Vec2 v = last - scene.position(a, scene.t_h - 2);
    for (int t = 1; t <= scene.future_steps(); ++t) out[a].push_back(last + v * static_cast<double>(t));
  }
  return out;
}

CollisionCount count_collisions(const Predictions& preds, const std::vector<const Scene*>& scenes, double d_col) {
  CollisionCount c;
  for (const Scene* s : scenes) {
    const auto lab = label_collisions(with_predicted_future(*s, prediction_for(preds, *s)), d_col);
    for (bool f : lab.flagged) c.flagged += f ? 1 : 0;
    c.total += s->n();
  }
  return c;
}

double collision_rate(const Predictions& preds, const std::vector<const Scene*>& scenes, double d_col) {
  return count_collisions(preds, scenes, d_col).rate();
}

std::map<double, double> rmse_by_horizon(const Predictions& preds, const std::vector<const Scene*>& scenes,
                                         const std::vector<double>& horizons) {
  std::map<double, double> out;
  for (double h : horizons) {
    double sq = 0.0;
    std::size_t count = 0;
    for (const Scene* s : scenes) {
      const auto& tr = prediction_for(preds, *s);
      const int k = horizon_steps(h, *s);
      for (std::size_t a = 0; a < s->n(); ++a) {
        const Vec2 truth = s->position(a, s->t_h - 1 + k);
        sq += (tr[a][static_cast<std::size_t>(k - 1)] - truth).squared_norm();
        ++count;
      }
    }
    out[h] = count == 0 ? 0.0 : std::sqrt(sq / static_cast<double>(count));
  }
  return out;
}

EvalReport evaluate(const std::string& name, const Predictions& preds, const std::vector<const Scene*>& scenes,
                    double d_col, const std::vector<double>& horizons) {
  EvalReport r;
  r.name = name;
  r.collision_rate = collision_rate(preds, scenes, d_col);
  r.rmse = rmse_by_horizon(preds, scenes, horizons);
  r.scenes = scenes.size();
  for (const Scene* s : scenes) r.trajectories += s->n();
  std::map<std::string, std::vector<const Scene*>> by_kind;
  for (const Scene* s : scenes) by_kind[std::string(to_string(s->kind))].push_back(s);
  for (const auto& [kind, group] : by_kind) {
    ScenarioMetrics m;
    m.collision_rate = collision_rate(preds, group, d_col);
    m.rmse = rmse_by_horizon(preds, group, horizons);
    m.scenes = group.size();
    for (const Scene* s : group) m.trajectories += s->n();
    r.per_scenario[kind] = m;
  }
  return r;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [kind, m] : per_scenario) {
    per[kind] = {{"collision_rate", m.collision_rate},
                 {"rmse", rmse_json(m.rmse)},
                 {"scenes", m.scenes},
                 {"trajectories", m.trajectories}};
  }
  return {{"name", name},
          {"collision_rate", collision_rate},
          {"rmse", rmse_json(rmse)},
          {"per_scenario", per},
          {"scenes", scenes},
          {"trajectories", trajectories}};
}

std::string compare(const std::vector<EvalReport>& reports) {
  if (reports.size() < 2) throw std::invalid_argument("compare: need at least two reports");
  const EvalReport& base = reports.front();
  struct Row {
    std::string label;
    std::vector<double> values;
  };
  std::vector<Row> rows;
  auto add_rows = [&](const std::string& prefix, auto&& get_rate, auto&& get_rmse) {
    Row r{prefix + "collision_rate", {}};
    for (const auto& rep : reports) r.values.push_back(get_rate(rep));
    rows.push_back(r);
    for (const auto& [h, _] : base.rmse) {
      Row q{prefix + "rmse@" + horizon_key(h), {}};
      for (const auto& rep : reports) q.values.push_back(get_rmse(rep, h));
      rows.push_back(q);
    }
  };
  add_rows("", [](const EvalReport& r) { return r.collision_rate; },
           [](const EvalReport& r, double h) { return r.rmse.at(h); });
  for (const auto& [kind, _] : base.per_scenario) {
    add_rows(kind + ".",
             [&kind](const EvalReport& r) { return r.per_scenario.at(kind).collision_rate; },
             [&kind](const EvalReport& r, double h) { return r.per_scenario.at(kind).rmse.at(h); });
  }
  std::ostringstream out;
  out << "metric";
  for (const auto& r : reports) out << '\t' << r.name;
  for (std::size_t k = 1; k < reports.size(); ++k) out << '\t' << "delta(" << reports[k].name << ")";
  out << '\n';
  for (const auto& row : rows) {
    out << row.label;
    for (double v : row.values) out << '\t' << fmt(v);
    for (std::size_t k = 1; k < row.values.size(); ++k) out << '\t' << fmt_delta(row.values[k] - row.values[0]);
    out << '\n';
  }
  return out.str();
}

}  // namespace cftraj

#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cftraj/core_types.hpp"
#include "cftraj/simulator.hpp"

namespace cftraj {

/// Future positions per agent: [agent][step], steps covering frames t_h .. t_p - 1.
using Trajectories = std::vector<std::vector<Vec2>>;
/// Keyed by scene id.
using Predictions = std::map<std::string, Trajectories>;

inline const std::vector<double> kDefaultHorizons{1.0, 2.0, 3.0, 4.0, 5.0};

/// Ground-truth history followed by the predicted future.
Scene with_predicted_future(const Scene& scene, const Trajectories& future);

/// Extrapolates each agent's last observed displacement.
Trajectories constant_velocity(const Scene& scene);

struct CollisionCount {
  std::size_t flagged = 0;
  std::size_t total = 0;
  double rate() const { return total == 0 ? 0.0 : 100.0 * static_cast<double>(flagged) / static_cast<double>(total); }
};

/// Trajectories flagged by label_collisions on history + predicted future. Throws
/// std::invalid_argument when a scene has no prediction or a prediction has the wrong shape.
CollisionCount count_collisions(const Predictions& preds, const std::vector<const Scene*>& scenes,
                                double d_col = kDefaultCollisionDistance);

/// Percentage of flagged trajectories.
double collision_rate(const Predictions& preds, const std::vector<const Scene*>& scenes,
                      double d_col = kDefaultCollisionDistance);

/// Euclidean RMSE at the frame `h` seconds after the last observed frame, for each horizon h.
std::map<double, double> rmse_by_horizon(const Predictions& preds, const std::vector<const Scene*>& scenes,
                                         const std::vector<double>& horizons = kDefaultHorizons);

struct ScenarioMetrics {
  double collision_rate = 0.0;
  std::map<double, double> rmse;
  std::size_t scenes = 0;
  std::size_t trajectories = 0;
};

struct EvalReport {
  std::string name;
  double collision_rate = 0.0;
  std::map<double, double> rmse;
  std::map<std::string, ScenarioMetrics> per_scenario;
  std::size_t scenes = 0;
  std::size_t trajectories = 0;

  nlohmann::json to_json() const;
};

EvalReport evaluate(const std::string& name, const Predictions& preds, const std::vector<const Scene*>& scenes,
                    double d_col = kDefaultCollisionDistance,
                    const std::vector<double>& horizons = kDefaultHorizons);

/// Side-by-side table of collision rate and RMSE per horizon, overall and per scenario, with
/// each report's delta relative to the first one. Throws unless at least two reports are given.
std::string compare(const std::vector<EvalReport>& reports);

}  // namespace cftraj

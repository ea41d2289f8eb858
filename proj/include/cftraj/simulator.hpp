#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cftraj/core_types.hpp"

namespace cftraj {

inline constexpr double kDefaultCollisionDistance = 2.0;

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::following;
  int n_agents = 3;
  std::uint64_t seed = 0;
  double noise_std = 0.05;  // meters
  double dt = 0.2;
  int t_h = 15;
  int t_p = 40;
};

struct CollisionEvent {
  std::size_t u = 0;  // u < v, indices into the scene's tracks
  std::size_t v = 0;
  int frame = 0;      // 0-based
  bool operator==(const CollisionEvent&) const = default;
};

struct CollisionLabel {
  std::vector<CollisionEvent> events;  // one per (pair, frame) below the threshold
  std::vector<bool> flagged;           // per trajectory

  /// Contiguous frames of the same pair merged into one event (first frame kept).
  std::vector<CollisionEvent> merged_events() const;
};

/// Scripted kinematics for the four scenario kinds. Throws std::invalid_argument on a bad kind
/// or agent count. Identical configs give identical scenes.
Scene generate_scene(const ScenarioConfig& cfg);

/// Every (pair, frame) with distance < d_col, over all frames of the scene.
CollisionLabel label_collisions(const Scene& scene, double d_col = kDefaultCollisionDistance);

/// Minimum pairwise distance over all frames (infinity for single-agent scenes).
double min_pairwise_distance(const Scene& scene);

struct DatasetSpec {
  std::array<int, 4> counts{100, 100, 100, 100};  // following, overtaking, intersection, aggressive
  std::uint64_t seed = 0;
  double noise_std = 0.05;
  double dt = 0.2;
  int t_h = 15;
  int t_p = 40;
};

/// Scenes named "<kind>_<index>"; agent counts are drawn per kind. No split is assigned.
Dataset generate_dataset(const DatasetSpec& spec);

}  // namespace cftraj

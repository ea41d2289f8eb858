#pragma once

#include <string>
#include <vector>

#include "cftraj/core_types.hpp"

namespace cftraj {

inline constexpr double kDefaultWeightCap = 100.0;

/// Symmetric collision-time interaction graph for one frame.
struct FrameGraph {
  std::size_t n = 0;
  std::vector<double> weights;  // row-major n x n, zero diagonal

  explicit FrameGraph(std::size_t agents = 0) : n(agents), weights(agents * agents, 0.0) {}

  double& at(std::size_t u, std::size_t v) { return weights[u * n + v]; }
  double at(std::size_t u, std::size_t v) const { return weights[u * n + v]; }

  bool operator==(const FrameGraph&) const = default;
};

struct GraphSequence {
  std::vector<FrameGraph> graphs;  // one per observed frame
};

/// Nonnegative minimizer of |rel_pos + t * rel_vel|^2 over t >= 0.
/// Zero relative velocity yields 0 (no predicted approach).
double collision_time(Vec2 rel_pos, Vec2 rel_vel);

/// Edge weight 1/t_c capped at w_max, or 0 when t_c == 0. `frame` is 0-based and must be observed.
FrameGraph build_frame_graph(const Scene& scene, int frame, double w_max = kDefaultWeightCap);

GraphSequence build_graph_sequence(const Scene& scene, double w_max = kDefaultWeightCap);

/// One JSONL line {scene_id, t, weights} for graph dumps; `t` is the 0-based frame.
std::string graph_dump_line(const std::string& scene_id, int frame, const FrameGraph& g);

}  // namespace cftraj

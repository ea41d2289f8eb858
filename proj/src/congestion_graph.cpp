#include "cftraj/congestion_graph.hpp"

#include <algorithm>
#include <stdexcept>

#include <json.hpp>

namespace cftraj {

double collision_time(Vec2 rel_pos, Vec2 rel_vel) {
  const double denom = rel_vel.squared_norm();
  if (denom == 0.0) return 0.0;
  return std::max(-rel_pos.dot(rel_vel) / denom, 0.0);
}

FrameGraph build_frame_graph(const Scene& scene, int frame, double w_max) {
  if (frame < 0 || frame >= scene.t_h) throw std::out_of_range("graph frame must be observed");
  if (!(w_max > 0.0)) throw std::invalid_argument("w_max must be positive");
  const auto vel = derive_velocities(scene, frame);
  FrameGraph g(scene.n());
  for (std::size_t u = 0; u < g.n; ++u) {
    for (std::size_t v = u + 1; v < g.n; ++v) {
      const double tc = collision_time(scene.position(u, frame) - scene.position(v, frame), vel[u] - vel[v]);
      const double w = tc > 0.0 ? std::min(1.0 / tc, w_max) : 0.0;
      g.at(u, v) = w;
      g.at(v, u) = w;
    }
  }
  return g;
}

GraphSequence build_graph_sequence(const Scene& scene, double w_max) {
  GraphSequence seq;
  seq.graphs.reserve(static_cast<std::size_t>(scene.t_h));
  for (int t = 0; t < scene.t_h; ++t) seq.graphs.push_back(build_frame_graph(scene, t, w_max));
  return seq;
}

std::string graph_dump_line(const std::string& scene_id, int frame, const FrameGraph& g) {
  nlohmann::json j;
  j["scene_id"] = scene_id;
  j["t"] = frame;
  j["weights"] = g.weights;
  return j.dump();
}

}  // namespace cftraj

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cftraj {

/// Raised when an input file cannot be parsed. Carries the offending line.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Raised when a record parses but violates a domain invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator/(double s) const { return {x / s, y / s}; }
  Vec2& operator+=(const Vec2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  bool operator==(const Vec2&) const = default;

  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
  double squared_norm() const { return x * x + y * y; }
};

enum class ScenarioKind { following, overtaking, intersection, aggressive, external };

std::string_view to_string(ScenarioKind kind);
ScenarioKind scenario_kind_from_string(std::string_view name);

/// The four simulated kinds, in canonical order.
inline constexpr ScenarioKind kSimulatedKinds[] = {ScenarioKind::following, ScenarioKind::overtaking,
                                                   ScenarioKind::intersection,
                                                   ScenarioKind::aggressive};

struct AgentTrack {
  int agent_id = 0;
  std::vector<Vec2> positions;  // one per frame, scene-local meters

  bool operator==(const AgentTrack&) const = default;
};

/// A multi-agent clip. Frames [0, t_h) are observed history; [t_h, t_p) are the future.
struct Scene {
  std::string scene_id;
  ScenarioKind kind = ScenarioKind::external;
  double dt = 0.2;
  int t_h = 15;
  int t_p = 40;
  std::vector<AgentTrack> tracks;

  std::size_t n() const { return tracks.size(); }
  int future_steps() const { return t_p - t_h; }
  const Vec2& position(std::size_t agent, int frame) const {
    return tracks[agent].positions[static_cast<std::size_t>(frame)];
  }

  /// Throws ValidationError naming the scene when an invariant does not hold.
  void validate() const;

  bool operator==(const Scene&) const = default;
};

enum class Split { train, test };

struct Dataset {
  std::vector<Scene> scenes;
  std::map<std::string, Split> split;

  std::vector<const Scene*> scenes_in(Split which) const;
  const Scene* find(const std::string& scene_id) const;
};

// JSONL scene format, one scene per line.
Scene scene_from_json_line(std::string_view line, std::size_t line_no);
std::string scene_to_json_line(const Scene& scene);

/// Loads a JSONL scene file. Scenes are validated; no split is assigned.
Dataset load_scenes(const std::filesystem::path& path);
void save_scenes(const Dataset& ds, const std::filesystem::path& path);

/// Split map as JSON object {scene_id: "train"|"test"}.
void save_split(const Dataset& ds, const std::filesystem::path& path);
void load_split(Dataset& ds, const std::filesystem::path& path);

/// Per-agent velocity at `frame` (0-based) by backward difference; frame 0 copies frame 1.
std::vector<Vec2> derive_velocities(const Scene& scene, int frame);

/// Seeded shuffle of scene ids; round(ratio * N) scenes go to train.
Dataset split_dataset(Dataset ds, double ratio, std::uint64_t seed);

/// CSV ingestion: columns scene_id, agent_id, frame, x, y (header required).
Dataset convert_csv(const std::filesystem::path& path, ScenarioKind kind, double dt, int t_h);

}  // namespace cftraj

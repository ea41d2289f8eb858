#pragma once

// Flat key=value run configuration. Every tunable of the pipeline has one key; files and
// --set overrides use the same syntax. Unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cftraj/cpm.hpp"
#include "cftraj/simulator.hpp"
#include "cftraj/student.hpp"
#include "cftraj/teacher.hpp"

namespace cftraj {

struct RunConfig {
  std::uint64_t seed = 0;
  double dt = 0.2;
  int t_h = 15;
  int t_p = 40;
  std::array<int, 4> scenes{100, 100, 100, 100};  // following, overtaking, intersection, aggressive
  double noise_std = 0.05;
  double split_ratio = 0.75;
  double d_col = kDefaultCollisionDistance;
  TeacherConfig teacher;
  StudentConfig student;
  CpmConfig cpm;
  std::size_t mc_samples = 0;  // cpm-solve Monte-Carlo check; 0 disables

  RunConfig();

  /// Applies one "key=value" assignment. Throws ValidationError for unknown keys or bad values.
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);
  /// Reads a file of assignments; blank lines and '#' comments are skipped.
  void load_file(const std::filesystem::path& path);
  /// Range checks across keys. Throws ValidationError.
  void validate() const;

  /// Every key with its canonical value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);

  static std::vector<std::string> keys();

  DatasetSpec dataset_spec() const;
  TeacherConfig teacher_config() const;
  StudentConfig student_config() const;
};

}  // namespace cftraj

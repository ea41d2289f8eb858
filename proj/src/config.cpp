#include "cftraj/config.hpp"

#include <charconv>
#include <fstream>
#include <type_traits>
#include <variant>

namespace cftraj {

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>);
using Field = std::variant<double*, int*, std::size_t*, bool*>;

std::vector<std::pair<const char*, Field>> fields(RunConfig& c) {
  return {
      {"seed", &c.seed},
      {"dt", &c.dt},
      {"t_h", &c.t_h},
      {"t_p", &c.t_p},
      {"scenes.following", &c.scenes[0]},
      {"scenes.overtaking", &c.scenes[1]},
      {"scenes.intersection", &c.scenes[2]},
      {"scenes.aggressive", &c.scenes[3]},
      {"noise_std", &c.noise_std},
      {"split_ratio", &c.split_ratio},
      {"d_col", &c.d_col},
      {"w_max", &c.teacher.w_max},
      {"d_z", &c.teacher.d_z},
      {"teacher.hidden", &c.teacher.hidden},
      {"teacher.m_q", &c.teacher.m_q},
      {"teacher.lr", &c.teacher.lr},
      {"teacher.epochs", &c.teacher.epochs},
      {"teacher.batch", &c.teacher.batch_graphs},
      {"teacher.kl_weight", &c.teacher.kl_weight},
      {"teacher.em_iters", &c.teacher.em_iters},
      {"student.enc_hidden", &c.student.enc_hidden},
      {"student.dec_hidden", &c.student.dec_hidden},
      {"student.embed", &c.student.embed},
      {"student.conv_channels", &c.student.conv_channels},
      {"student.grid_cols", &c.student.grid_cols},
      {"student.grid_rows", &c.student.grid_rows},
      {"student.cell_length", &c.student.cell_length},
      {"student.cell_width", &c.student.cell_width},
      {"student.m_p", &c.student.m_p},
      {"student.disp_scale", &c.student.disp_scale},
      {"student.gamma", &c.student.gamma},
      {"student.use_cpm", &c.student.use_cpm},
      {"student.k_inner", &c.student.k_inner},
      {"student.batch_coupling", &c.student.batch_coupling},
      {"student.lr", &c.student.lr},
      {"student.lr_drop", &c.student.lr_drop},
      {"student.clip_norm", &c.student.clip_norm},
      {"student.epochs", &c.student.epochs},
      {"student.batch", &c.student.batch_scenes},
      {"cpm.max_iters", &c.cpm.max_iters},
      {"cpm.rel_tol", &c.cpm.rel_tol},
      {"cpm.abs_tol", &c.cpm.abs_tol},
      {"cpm.optimize_weights", &c.cpm.optimize_weights},
      {"cpm.mc_samples", &c.mc_samples},
  };
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ValidationError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

std::string format(const Field& f) {
  return std::visit(
      [](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, bool>) {
          return *p ? "true" : "false";
        } else {
          char buf[64];
          auto [end, ec] = std::to_chars(buf, buf + sizeof buf, *p);
          return std::string(buf, end);
        }
      },
      f);
}

}  // namespace

RunConfig::RunConfig() {
  teacher.d_z = 8;
  teacher.hidden = 64;
  teacher.lr = 3e-3;
  teacher.epochs = 100;
  student.d_z = teacher.d_z;
}

std::vector<std::string> RunConfig::keys() {
  RunConfig c;
  std::vector<std::string> out;
  for (const auto& [k, _] : fields(c)) out.emplace_back(k);
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (auto& [k, f] : fields(*this)) {
    if (key != k) continue;
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, bool>) {
            if (value == "true" || value == "1") {
              *p = true;
            } else if (value == "false" || value == "0") {
              *p = false;
            } else {
              throw ValidationError("config key '" + key + "': expected true or false, got '" + value + "'");
            }
          } else {
            *p = parse_number<T>(key, value);
          }
        },
        f);
    student.d_z = teacher.d_z;
    return;
  }
  throw ValidationError("unknown config key '" + key + "'");
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ValidationError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      set(line);
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(no) + ": " + e.what());
    }
  }
}

void RunConfig::validate() const {
  auto fail = [](const std::string& why) { throw ValidationError("invalid config: " + why); };
  if (!(dt > 0.0)) fail("dt must be positive");
  if (t_h < 2 || t_h >= t_p) fail("require 2 <= t_h < t_p");
  for (int n : scenes) {
    if (n < 0) fail("scene counts must be >= 0");
  }
  if (noise_std < 0.0) fail("noise_std must be >= 0");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) fail("split_ratio must lie in (0, 1)");
  if (!(d_col > 0.0)) fail("d_col must be positive");
  if (!(teacher.w_max > 0.0)) fail("w_max must be positive");
  if (teacher.d_z == 0 || teacher.hidden == 0 || teacher.m_q == 0 || teacher.batch_graphs == 0) {
    fail("teacher sizes must be >= 1");
  }
  if (!(teacher.lr > 0.0) || teacher.epochs < 0 || teacher.em_iters < 1 || teacher.kl_weight < 0.0) {
    fail("teacher optimisation settings out of range");
  }
  const auto& s = student;
  if (s.enc_hidden == 0 || s.dec_hidden == 0 || s.embed == 0 || s.conv_channels == 0 || s.m_p == 0 ||
      s.batch_scenes == 0) {
    fail("student sizes must be >= 1");
  }
  if (s.grid_cols < 3 || s.grid_rows < 3) fail("student grid must be at least 3 x 3");
  if (!(s.cell_length > 0.0 && s.cell_width > 0.0 && s.disp_scale > 0.0)) fail("student cell sizes must be positive");
  if (s.gamma < 0.0 || s.k_inner < 0 || !(s.lr > 0.0) || !(s.lr_drop > 0.0) || s.clip_norm < 0.0 || s.epochs < 0) {
    fail("student optimisation settings out of range");
  }
  if (cpm.max_iters < 1 || !(cpm.rel_tol >= 0.0) || !(cpm.abs_tol >= 0.0)) fail("cpm settings out of range");
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [k, f] : fields(const_cast<RunConfig&>(*this))) out.emplace_back(k, format(f));
  return out;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : entries()) j[k] = v;
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  for (const auto& [k, v] : j.items()) c.set(k, v.get<std::string>());
  c.validate();
  return c;
}

DatasetSpec RunConfig::dataset_spec() const {
  DatasetSpec d;
  d.counts = scenes;
  d.seed = seed;
  d.noise_std = noise_std;
  d.dt = dt;
  d.t_h = t_h;
  d.t_p = t_p;
  return d;
}

TeacherConfig RunConfig::teacher_config() const {
  TeacherConfig t = teacher;
  t.seed = seed;
  return t;
}

StudentConfig RunConfig::student_config() const {
  StudentConfig s = student;
  s.seed = seed;
  s.d_z = teacher.d_z;
  return s;
}

}  // namespace cftraj

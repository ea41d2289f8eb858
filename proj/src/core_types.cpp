#include "cftraj/core_types.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace cftraj {

using nlohmann::json;

std::string_view to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::following: return "following";
    case ScenarioKind::overtaking: return "overtaking";
    case ScenarioKind::intersection: return "intersection";
    case ScenarioKind::aggressive: return "aggressive";
    case ScenarioKind::external: return "external";
  }
  return "external";
}

ScenarioKind scenario_kind_from_string(std::string_view name) {
  if (name == "following") return ScenarioKind::following;
  if (name == "overtaking") return ScenarioKind::overtaking;
  if (name == "intersection") return ScenarioKind::intersection;
  if (name == "aggressive") return ScenarioKind::aggressive;
  if (name == "external") return ScenarioKind::external;
  throw std::invalid_argument("unknown scenario kind '" + std::string(name) + "'");
}

void Scene::validate() const {
  auto fail = [&](const std::string& why) {
    throw ValidationError("scene '" + scene_id + "': " + why);
  };
  if (!(dt > 0.0) || !std::isfinite(dt)) fail("dt must be positive");
  if (t_h <= 0 || t_h >= t_p) fail("require 0 < t_h < t_p");
  if (tracks.empty()) fail("scene has no tracks");
  for (const auto& track : tracks) {
    if (track.positions.size() != static_cast<std::size_t>(t_p)) {
      fail("track " + std::to_string(track.agent_id) + " has " +
           std::to_string(track.positions.size()) + " frames, expected " + std::to_string(t_p));
    }
    for (const auto& p : track.positions) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
        fail("track " + std::to_string(track.agent_id) + " has non-finite coordinates");
      }
    }
  }
}

std::vector<const Scene*> Dataset::scenes_in(Split which) const {
  std::vector<const Scene*> out;
  for (const auto& s : scenes) {
    auto it = split.find(s.scene_id);
    if (it != split.end() && it->second == which) out.push_back(&s);
  }
  return out;
}

const Scene* Dataset::find(const std::string& scene_id) const {
  for (const auto& s : scenes) {
    if (s.scene_id == scene_id) return &s;
  }
  return nullptr;
}

Scene scene_from_json_line(std::string_view line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
  }
  Scene s;
  try {
    s.scene_id = j.at("scene_id").get<std::string>();
    s.kind = scenario_kind_from_string(j.at("kind").get<std::string>());
    s.dt = j.at("dt").get<double>();
    s.t_h = j.at("t_h").get<int>();
    s.t_p = j.at("t_p").get<int>();
    for (const auto& jt : j.at("tracks")) {
      AgentTrack track;
      track.agent_id = jt.at("agent_id").get<int>();
      for (const auto& xy : jt.at("xy")) {
        if (!xy.is_array() || xy.size() != 2) throw std::invalid_argument("xy entry must be [x, y]");
        track.positions.push_back({xy[0].get<double>(), xy[1].get<double>()});
      }
      s.tracks.push_back(std::move(track));
    }
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(line_no, std::string("bad scene record: ") + e.what());
  }
  return s;
}

std::string scene_to_json_line(const Scene& scene) {
  json j;
  j["scene_id"] = scene.scene_id;
  j["kind"] = std::string(to_string(scene.kind));
  j["dt"] = scene.dt;
  j["t_h"] = scene.t_h;
  j["t_p"] = scene.t_p;
  json tracks = json::array();
  for (const auto& t : scene.tracks) {
    json xy = json::array();
    for (const auto& p : t.positions) xy.push_back({p.x, p.y});
    tracks.push_back({{"agent_id", t.agent_id}, {"xy", std::move(xy)}});
  }
  j["tracks"] = std::move(tracks);
  return j.dump();
}

Dataset load_scenes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open scene file " + path.string());
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Scene s = scene_from_json_line(line, line_no);
    s.validate();
    ds.scenes.push_back(std::move(s));
  }
  return ds;
}

void save_scenes(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scene file " + path.string());
  for (const auto& s : ds.scenes) out << scene_to_json_line(s) << '\n';
}

void save_split(const Dataset& ds, const std::filesystem::path& path) {
  json j = json::object();
  for (const auto& [id, which] : ds.split) j[id] = which == Split::train ? "train" : "test";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write split file " + path.string());
  out << j.dump(1) << '\n';
}

void load_split(Dataset& ds, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open split file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(1, std::string("malformed split JSON: ") + e.what());
  }
  ds.split.clear();
  for (const auto& s : ds.scenes) {
    if (!j.contains(s.scene_id)) throw ValidationError("split has no entry for scene '" + s.scene_id + "'");
    const auto v = j.at(s.scene_id).get<std::string>();
    if (v != "train" && v != "test") throw ValidationError("bad split value '" + v + "'");
    ds.split[s.scene_id] = v == "train" ? Split::train : Split::test;
  }
}

std::vector<Vec2> derive_velocities(const Scene& scene, int frame) {
  if (frame < 0 || frame >= scene.t_p) throw std::out_of_range("frame out of range");
  const int f = std::max(frame, 1);
  std::vector<Vec2> v(scene.n());
  for (std::size_t a = 0; a < scene.n(); ++a) {
    v[a] = (scene.position(a, f) - scene.position(a, f - 1)) / scene.dt;
  }
  return v;
}

Dataset split_dataset(Dataset ds, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must lie in (0, 1)");
  if (ds.scenes.size() < 2) throw std::invalid_argument("need at least 2 scenes to split");
  std::vector<std::size_t> order(ds.scenes.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = ds.scenes.size();
  auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  ds.split.clear();
  for (std::size_t k = 0; k < n; ++k) {
    ds.split[ds.scenes[order[k]].scene_id] = k < n_train ? Split::train : Split::test;
  }
  return ds;
}

Dataset convert_csv(const std::filesystem::path& path, ScenarioKind kind, double dt, int t_h) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open CSV " + path.string());
  // scene -> agent -> frame -> position
  std::map<std::string, std::map<int, std::map<int, Vec2>>> rows;
  std::vector<std::string> scene_order;
  std::string line;
  std::size_t line_no = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("scene_id", 0) == 0) continue;
    }
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw ParseError(line_no, "expected 5 columns");
    try {
      const int agent = std::stoi(cells[1]);
      const int frame = std::stoi(cells[2]);
      const Vec2 p{std::stod(cells[3]), std::stod(cells[4])};
      if (!rows.count(cells[0])) scene_order.push_back(cells[0]);
      rows[cells[0]][agent][frame] = p;
    } catch (const std::exception& e) {
      throw ParseError(line_no, std::string("bad numeric field: ") + e.what());
    }
  }
  Dataset ds;
  for (const auto& id : scene_order) {
    Scene s;
    s.scene_id = id;
    s.kind = kind;
    s.dt = dt;
    s.t_h = t_h;
    int t_p = -1;
    for (const auto& [agent, frames] : rows[id]) {
      AgentTrack track{agent, {}};
      int expected = 0;
      for (const auto& [frame, p] : frames) {
        if (frame != expected) {
          throw ValidationError("scene '" + id + "': agent " + std::to_string(agent) +
                                " has a gap at frame " + std::to_string(expected));
        }
        track.positions.push_back(p);
        ++expected;
      }
      if (t_p < 0) t_p = expected;
      s.tracks.push_back(std::move(track));
    }
    s.t_p = t_p;
    s.validate();
    ds.scenes.push_back(std::move(s));
  }
  return ds;
}

}  // namespace cftraj

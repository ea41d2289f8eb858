#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "cftraj/core_types.hpp"
#include "test_util.hpp"

using namespace cftraj;

TEST_CASE("scenario kind names round trip") {
  for (auto k : {ScenarioKind::following, ScenarioKind::overtaking, ScenarioKind::intersection,
                 ScenarioKind::aggressive, ScenarioKind::external}) {
    CHECK(scenario_kind_from_string(to_string(k)) == k);
  }
  CHECK_THROWS_AS(scenario_kind_from_string("merging"), std::invalid_argument);
}

TEST_CASE("random scenes survive a JSONL round trip") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    const Scene s = testutil::random_scene(rng, 1 + rep % 5, 6 + rep % 7);
    const Scene back = scene_from_json_line(scene_to_json_line(s), 1);
    CHECK(back == s);
  }
}

TEST_CASE("malformed scene lines raise ParseError carrying the line number") {
  try {
    scene_from_json_line("{\"scene_id\": \"a\", ", 7);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 7);
  }
  CHECK_THROWS_AS(scene_from_json_line(R"({"scene_id":"a","kind":"following","dt":0.2,"t_h":1,"t_p":2})", 3),
                  ParseError);
  CHECK_THROWS_AS(
      scene_from_json_line(
          R"({"scene_id":"a","kind":"following","dt":0.2,"t_h":1,"t_p":2,"tracks":[{"agent_id":0,"xy":[[1]]}]})", 3),
      ParseError);
}

TEST_CASE("scene validation rejects broken invariants") {
  std::mt19937_64 rng(3);
  Scene s = testutil::random_scene(rng, 2, 8);
  CHECK_NOTHROW(s.validate());

  Scene short_track = s;
  short_track.tracks[1].positions.pop_back();
  CHECK_THROWS_AS(short_track.validate(), ValidationError);

  Scene bad_horizon = s;
  bad_horizon.t_h = bad_horizon.t_p;
  CHECK_THROWS_AS(bad_horizon.validate(), ValidationError);

  Scene nan_pos = s;
  nan_pos.tracks[0].positions[2].x = std::nan("");
  CHECK_THROWS_AS(nan_pos.validate(), ValidationError);

  Scene empty = s;
  empty.tracks.clear();
  CHECK_THROWS_AS(empty.validate(), ValidationError);
}

TEST_CASE("velocities are backward differences and frame 0 copies frame 1") {
  std::mt19937_64 rng(5);
  const Scene s = testutil::random_scene(rng, 3, 10);
  for (int t = 0; t < s.t_p; ++t) {
    const auto v = derive_velocities(s, t);
    REQUIRE(v.size() == s.n());
    const int a = t == 0 ? 1 : t;
    for (std::size_t i = 0; i < s.n(); ++i) {
      const double ex = (s.position(i, a).x - s.position(i, a - 1).x) / s.dt;
      const double ey = (s.position(i, a).y - s.position(i, a - 1).y) / s.dt;
      CHECK(v[i].x == doctest::Approx(ex).epsilon(1e-12));
      CHECK(v[i].y == doctest::Approx(ey).epsilon(1e-12));
    }
  }
  CHECK_THROWS(derive_velocities(s, s.t_p));
}

TEST_CASE("split is a seeded partition of the requested size") {
  std::mt19937_64 rng(9);
  Dataset ds;
  for (int i = 0; i < 37; ++i) {
    Scene s = testutil::random_scene(rng, 2, 6);
    s.scene_id = "s" + std::to_string(i);
    ds.scenes.push_back(s);
  }
  const Dataset a = split_dataset(ds, 0.75, 42);
  const Dataset b = split_dataset(ds, 0.75, 42);
  const Dataset c = split_dataset(ds, 0.75, 43);
  CHECK(a.split == b.split);
  CHECK(a.split != c.split);
  CHECK(a.split.size() == 37);
  CHECK(a.scenes_in(Split::train).size() == 28);  // round(0.75 * 37)
  CHECK(a.scenes_in(Split::test).size() == 9);
  CHECK_THROWS_AS(split_dataset(ds, 1.0, 1), std::invalid_argument);
}

TEST_CASE("scene files and split files round trip on disk") {
  testutil::TempDir dir("core");
  std::mt19937_64 rng(2);
  Dataset ds;
  for (int i = 0; i < 5; ++i) {
    Scene s = testutil::random_scene(rng, 2 + i % 2, 7);
    s.scene_id = "x" + std::to_string(i);
    ds.scenes.push_back(s);
  }
  ds = split_dataset(ds, 0.6, 1);
  save_scenes(ds, dir.path / "d.jsonl");
  save_split(ds, dir.path / "split.json");
  Dataset back = load_scenes(dir.path / "d.jsonl");
  load_split(back, dir.path / "split.json");
  CHECK(back.scenes == ds.scenes);
  CHECK(back.split == ds.split);
  CHECK(back.find("x3") != nullptr);
  CHECK(back.find("nope") == nullptr);
}

TEST_CASE("CSV conversion groups rows by scene and agent") {
  testutil::TempDir dir("csv");
  {
    std::ofstream f(dir.path / "a.csv");
    f << "scene_id,agent_id,frame,x,y\n";
    for (int t = 2; t >= 0; --t) f << "s1,4," << t << "," << t * 1.5 << ",0\n";
    for (int t = 0; t < 3; ++t) f << "s1,2," << t << ",0," << -t << "\n";
  }
  const Dataset ds = convert_csv(dir.path / "a.csv", ScenarioKind::external, 0.1, 2);
  REQUIRE(ds.scenes.size() == 1);
  const Scene& s = ds.scenes[0];
  CHECK(s.t_p == 3);
  CHECK(s.t_h == 2);
  REQUIRE(s.n() == 2);
  CHECK(s.tracks[0].agent_id == 2);
  CHECK(s.tracks[1].agent_id == 4);
  CHECK(s.position(1, 2) == Vec2{3.0, 0.0});
  CHECK(s.position(0, 1) == Vec2{0.0, -1.0});

  {
    std::ofstream f(dir.path / "gap.csv");
    f << "scene_id,agent_id,frame,x,y\ns,0,0,0,0\ns,0,2,0,0\n";
  }
  CHECK_THROWS_AS(convert_csv(dir.path / "gap.csv", ScenarioKind::external, 0.1, 1), ValidationError);
  {
    std::ofstream f(dir.path / "num.csv");
    f << "scene_id,agent_id,frame,x,y\ns,0,0,abc,0\n";
  }
  try {
    convert_csv(dir.path / "num.csv", ScenarioKind::external, 0.1, 1);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

#include <doctest.h>

#include <cmath>
#include <random>

#include "cftraj/simulator.hpp"
#include "cftraj/student.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cftraj;
using diff::Tape;
using diff::Tensor;
using diff::Var;

namespace {

// Agents driving along +x at 10 m/s; `offsets` are their positions at the last observed frame.
Scene convoy(const std::vector<Vec2>& offsets, int t_h = 6, int t_p = 10) {
  Scene s;
  s.scene_id = "convoy";
  s.dt = 0.2;
  s.t_h = t_h;
  s.t_p = t_p;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    AgentTrack tr{static_cast<int>(i), {}};
    for (int t = 0; t < t_p; ++t) tr.positions.push_back(offsets[i] + Vec2{2.0 * (t - (t_h - 1)), 0.0});
    s.tracks.push_back(tr);
  }
  return s;
}

StudentConfig small_config() {
  StudentConfig c;
  c.enc_hidden = 6;
  c.dec_hidden = 5;
  c.embed = 4;
  c.conv_channels = 3;
  c.grid_cols = 5;
  c.grid_rows = 3;
  c.m_p = 2;
  c.d_z = 3;
  c.seed = 7;
  return c;
}

// Bivariate normal log density through the explicit 2x2 covariance inverse.
double bivariate_nll_by_matrix(double dx, double dy, double sx, double sy, double rho) {
  const double c00 = sx * sx, c11 = sy * sy, c01 = rho * sx * sy;
  const double det = c00 * c11 - c01 * c01;
  const double q = (c11 * dx * dx - 2.0 * c01 * dx * dy + c00 * dy * dy) / det;
  return std::log(2.0 * M_PI) + 0.5 * std::log(det) + 0.5 * q;
}

}  // namespace

TEST_CASE("bivariate NLL at the mode of a unit Gaussian is log two pi") {
  CHECK(bivariate_nll(0, 0, 1, 1, 0) == doctest::Approx(std::log(2.0 * M_PI)));
}

TEST_CASE("bivariate NLL agrees with the covariance form") {
  std::mt19937_64 rng(157);
  std::uniform_real_distribution<double> d(-3, 3), s(0.05, 3), r(-0.99, 0.99);
  for (int k = 0; k < 200; ++k) {
    const double dx = d(rng), dy = d(rng), sx = s(rng), sy = s(rng), rho = r(rng);
    CHECK(bivariate_nll(dx, dy, sx, sy, rho) ==
          doctest::Approx(bivariate_nll_by_matrix(dx, dy, sx, sy, rho)).epsilon(1e-10));
  }
}

TEST_CASE("occupancy places neighbours in heading-aligned cells") {
  StudentConfig c;  // 13 x 3 grid of 5 m x 4 m
  const Scene s = convoy({{0, 0}, {7, 0}, {-12, 3}, {200, 0}});
  const Tensor occ = grid_occupancy(s, c);
  const std::size_t cells = 39;
  CHECK(occ.rows() == 4 * cells);
  // Ego 0 sits in column 6, row 1. Agent 1 is 7 m ahead: column 7, row 1.
  CHECK(occ.at(0 * cells + 1 * 13 + 7, 1) == 1.0);
  // Agent 2 is 12 m behind and 3 m to the left: column floor(-2.4 + 6.5) = 4, row floor(0.75 + 1.5) = 2.
  CHECK(occ.at(0 * cells + 2 * 13 + 4, 2) == 1.0);
  // Agent 3 lies outside the grid; egos never see themselves.
  double total = 0.0;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    CHECK(occ.at(0 * cells + cell, 3) == 0.0);
    CHECK(occ.at(0 * cells + cell, 0) == 0.0);
    total += occ.at(0 * cells + cell, 1) + occ.at(0 * cells + cell, 2);
  }
  CHECK(total == 2.0);
}

TEST_CASE("two neighbours in one cell contribute the sum of their states") {
  StudentConfig c = small_config();
  const StudentModel m = init_student(c);
  // Agents 1 and 2 share a cell ahead of agent 0.
  const Scene s = convoy({{0, 0}, {6, 0.5}, {7, -0.5}});
  Tape t;
  StudentNet net(m, t, false);
  const Var h = net.encode_history(s);
  const auto [social, feat] = net.social_pool(h, s);
  // Replace the two neighbours' states by one neighbour carrying their sum: the ego's social
  // tensor must not change.
  Tensor summed = h.value();
  for (std::size_t k = 0; k < summed.cols(); ++k) {
    summed.at(1, k) = h.value().at(1, k) + h.value().at(2, k);
    summed.at(2, k) = 0.0;
  }
  const auto [social2, feat2] = net.social_pool(t.constant(summed), s);
  for (std::size_t k = 0; k < social.value().cols(); ++k) {
    CHECK(social2.value().at(0, k) == doctest::Approx(social.value().at(0, k)).epsilon(1e-12));
  }
  double mean0 = 0.0;
  for (std::size_t r = 0; r < 3; ++r) mean0 += social.value().at(r, 0) / 3.0;
  CHECK(feat.value().at(0, 0) == doctest::Approx(mean0).epsilon(1e-12));
}

TEST_CASE("encoder is shared across agents and stationary agents match a zero history") {
  const StudentModel m = init_student(small_config());
  std::mt19937_64 rng(163);
  const Scene s = testutil::random_scene(rng, 3, 10);
  Scene perm = s;
  std::swap(perm.tracks[0], perm.tracks[2]);
  Tape t;
  StudentNet net(m, t, false);
  const Tensor a = net.encode_history(s).value(), b = net.encode_history(perm).value();
  for (std::size_t k = 0; k < a.cols(); ++k) {
    CHECK(b.at(0, k) == a.at(2, k));
    CHECK(b.at(1, k) == a.at(1, k));
  }
  CHECK(a.cols() == 6);
  Scene still = s;
  for (auto& p : still.tracks[1].positions) p = {4.0, 4.0};
  Scene other_still = still;
  for (auto& p : other_still.tracks[1].positions) p = {-9.0, 1.0};
  const Tensor x = net.encode_history(still).value(), y = net.encode_history(other_still).value();
  for (std::size_t k = 0; k < x.cols(); ++k) CHECK(x.at(1, k) == y.at(1, k));
}

TEST_CASE("L2 equals the summed per-step NLL averaged over agents") {
  const StudentModel m = init_student(small_config());
  std::mt19937_64 rng(167);
  const Scene s = testutil::random_scene(rng, 3, 10);
  Tape t;
  StudentNet net(m, t, false);
  const StudentForward f = net.forward(s);
  double want = 0.0;
  for (std::size_t a = 0; a < s.n(); ++a) {
    const Vec2 last = s.position(a, s.t_h - 1);
    for (std::size_t k = 0; k < f.mu_x.size(); ++k) {
      const Vec2 gt = s.position(a, s.t_h + static_cast<int>(k)) - last;
      want += bivariate_nll_by_matrix(gt.x - f.mu_x[k].value()[a], gt.y - f.mu_y[k].value()[a],
                                      f.sigma_x[k].value()[a], f.sigma_y[k].value()[a], f.rho[k].value()[a]);
    }
  }
  CHECK(nll_loss_L2(f, s).value().item() == doctest::Approx(want / s.n()).epsilon(1e-10));
  for (std::size_t k = 0; k < f.rho.size(); ++k) {
    for (std::size_t a = 0; a < s.n(); ++a) {
      CHECK(std::abs(f.rho[k].value()[a]) <= 0.99);
      CHECK(f.sigma_x[k].value()[a] >= 1e-3);
    }
  }
}

TEST_CASE("head emits a valid mixture") {
  const StudentModel m = init_student(small_config());
  std::mt19937_64 rng(173);
  const Scene s = testutil::random_scene(rng, 2, 10);
  Tape t;
  StudentNet net(m, t, false);
  const auto f = net.forward(s);
  const auto head = net.cpm_head(f.scene_feature);
  const GaussianMixture g = head_mixture(head);
  CHECK_NOTHROW(g.validate());
  CHECK(g.size() == 2);
  CHECK(g.dim() == 3);
}

TEST_CASE("differentiable bound matches the coupling module's bound") {
  std::mt19937_64 rng(179);
  const StudentModel m = init_student(small_config());
  const Scene s = testutil::random_scene(rng, 3, 10);
  for (int rep = 0; rep < 5; ++rep) {
    const GaussianMixture q = oracle::random_mixture(rng, 3, 3);
    Tape t;
    StudentNet net(m, t, false);
    const auto head = net.cpm_head(net.forward(s).scene_feature);
    const GaussianMixture p = head_mixture(head);
    const VariationalCoupling c = inner_coupling(p, q, 1 + rep);
    CouplingMatrix a = c.alpha;
    for (std::size_t j = 0; j < a.cols; ++j) {
      for (std::size_t i = 0; i < a.rows; ++i) a(i, j) /= p.weights[j];
    }
    CHECK(cpm_bound(head, q, a, c.beta).value().item() ==
          doctest::Approx(upper_bound_L1(p, q, c)).epsilon(1e-10));
  }
}

TEST_CASE("gradient checks for L2 and L2 plus gamma L1") {
  std::mt19937_64 rng(181);
  StudentModel m = init_student(small_config());
  const Scene s = testutil::random_scene(rng, 3, 9);
  const GaussianMixture q = oracle::random_mixture(rng, 2, 3);
  // Fix the coupling at the initial parameters; the bound is differentiated with it held constant.
  CouplingMatrix a, beta;
  {
    Tape t;
    StudentNet net(m, t, false);
    const GaussianMixture p = head_mixture(net.cpm_head(net.forward(s).scene_feature));
    const VariationalCoupling c = inner_coupling(p, q, 3);
    a = c.alpha;
    for (std::size_t j = 0; j < a.cols; ++j) {
      for (std::size_t i = 0; i < a.rows; ++i) a(i, j) /= p.weights[j];
    }
    beta = c.beta;
  }
  for (std::size_t k = 0; k < m.params.size(); ++k) {
    const std::string& name = m.params.name(k);
    auto l2 = [&](const Var& x) {
      Tape& t = *x.tape();
      StudentNet net(m, t, false, {{k, x}});
      const StudentForward f = net.forward(s);
      return nll_loss_L2(f, s);
    };
    auto joint = [&](const Var& x) {
      Tape& t = *x.tape();
      StudentNet net(m, t, false, {{k, x}});
      const StudentForward f = net.forward(s);
      const auto head = net.cpm_head(f.scene_feature);
      return diff::add(nll_loss_L2(f, s), diff::scale(cpm_bound(head, q, a, beta), 0.7));
    };
    CAPTURE(name);
    if (name.rfind("head_", 0) != 0) CHECK(diff::grad_check(l2, m.params.value(k)) < 1e-4);
    CHECK(diff::grad_check(joint, m.params.value(k)) < 1e-4);
  }
}

TEST_CASE("teacher mixture of a scene reweights Q by its pattern weights") {
  DatasetSpec spec;
  spec.counts = {2, 2, 2, 2};
  Dataset ds = split_dataset(generate_dataset(spec), 0.75, 1);
  TeacherConfig tc;
  tc.d_z = 3;
  tc.hidden = 4;
  tc.epochs = 1;
  tc.m_q = 2;
  tc.em_iters = 10;
  const TeacherModel teacher = train_teacher(ds, tc).model;
  const Scene& s = ds.scenes.front();
  const GaussianMixture qo = scene_teacher_mixture(teacher, s);
  CHECK(qo.components == teacher.q_mixture.components);
  CHECK(qo.weights == scene_pattern_weights(teacher, s));
}

TEST_CASE("gamma zero training is bit-identical to training without the head") {
  DatasetSpec spec;
  spec.counts = {3, 3, 3, 3};
  spec.seed = 2;
  Dataset ds = split_dataset(generate_dataset(spec), 0.75, 2);
  TeacherConfig tc;
  tc.d_z = 3;
  tc.hidden = 4;
  tc.epochs = 1;
  tc.m_q = 2;
  tc.em_iters = 10;
  const TeacherModel teacher = train_teacher(ds, tc).model;
  StudentConfig c = small_config();
  c.epochs = 2;
  c.batch_scenes = 4;
  StudentConfig zero = c;
  zero.gamma = 0.0;
  StudentConfig plain = c;
  plain.use_cpm = false;
  const auto a = train_student(ds, &teacher, zero);
  const auto b = train_student(ds, nullptr, plain);
  CHECK(a.model.params == b.model.params);
  REQUIRE(a.log.size() == 2);
  for (std::size_t e = 0; e < 2; ++e) CHECK(a.log[e].l2 == b.log[e].l2);
  // The bound is still reported for the gamma = 0 run.
  CHECK(a.log[0].l1 > 0.0);
  CHECK_THROWS_AS(train_student(ds, nullptr, c), std::invalid_argument);

  const auto with = train_student(ds, &teacher, c);
  CHECK_FALSE(with.model.params == a.model.params);
}

TEST_CASE("training lowers L2, predictions have the right shape, checkpoints round trip") {
  DatasetSpec spec;
  spec.counts = {4, 4, 4, 4};
  spec.seed = 3;
  Dataset ds = split_dataset(generate_dataset(spec), 0.75, 3);
  StudentConfig c = small_config();
  c.use_cpm = false;
  c.epochs = 6;
  const auto r = train_student(ds, nullptr, c);
  CHECK(r.log.back().l2 < r.log.front().l2);
  const Scene& s = ds.scenes.front();
  const auto pred = predict(r.model, s);
  REQUIRE(pred.size() == s.n());
  CHECK(pred[0].size() == static_cast<std::size_t>(s.future_steps()));
  const PredictionOutput dist = predict_distribution(r.model, s);
  CHECK(dist.agents == s.n());
  CHECK(pred[1][3].x == doctest::Approx(s.position(1, s.t_h - 1).x + dist.mu_x[1 * dist.steps + 3]));

  testutil::TempDir dir("student");
  save_student(r.model, dir.path / "s.json");
  const StudentModel back = load_student(dir.path / "s.json");
  CHECK(back.params == r.model.params);
  CHECK(predict(back, s) == pred);
  CHECK_THROWS_AS(load_student(dir.path / "nope.json"), ValidationError);
}

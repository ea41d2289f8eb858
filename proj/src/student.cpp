#include "cftraj/student.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace cftraj {

using diff::Tensor;
using diff::Var;

namespace {

constexpr int kCheckpointVersion = 1;
constexpr double kSigmaFloor = 1e-3;
constexpr double kRhoLimit = 0.99;

std::size_t out_cells(const StudentConfig& c) {
  return static_cast<std::size_t>((c.grid_cols - 2) * (c.grid_rows - 2));
}

std::size_t social_width(const StudentConfig& c) { return out_cells(c) * c.conv_channels; }

std::mt19937_64 group_rng(std::uint64_t seed, std::uint64_t group) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(group)};
  return std::mt19937_64(seq);
}

Tensor scaled(Tensor t, double s) {
  for (auto& v : t.data()) v *= s;
  return t;
}

// i, f, g, o gate blocks of width h; forget gate bias starts at 1.
Tensor lstm_bias(std::size_t h) {
  Tensor b = Tensor::zeros(1, 4 * h);
  for (std::size_t k = h; k < 2 * h; ++k) b[k] = 1.0;
  return b;
}

struct LstmState {
  Var h, c;
};

LstmState lstm_step(const Var& x, const LstmState& s, const Var& w, const Var& b, std::size_t h) {
  Var gates = diff::add_bias(diff::matmul(diff::concat_cols({x, s.h}), w), b);
  Var i = diff::sigmoid(diff::slice_cols(gates, 0, h));
  Var f = diff::sigmoid(diff::slice_cols(gates, h, 2 * h));
  Var g = diff::tanh(diff::slice_cols(gates, 2 * h, 3 * h));
  Var o = diff::sigmoid(diff::slice_cols(gates, 3 * h, 4 * h));
  Var c = diff::add(diff::mul(f, s.c), diff::mul(i, g));
  return {diff::mul(o, diff::tanh(c)), c};
}

Vec2 ego_heading(const Scene& s, std::size_t a) {
  const int last = s.t_h - 1;
  for (int back : {5, last}) {
    const int first = std::max(0, last - back);
    const Vec2 d = s.position(a, last) - s.position(a, first);
    if (d.norm() > 0.5) return d / d.norm();
  }
  return {1.0, 0.0};
}

Vec2 last_displacement(const Scene& s, std::size_t a) {
  return s.position(a, s.t_h - 1) - s.position(a, s.t_h - 2);
}

}  // namespace

StudentModel init_student(const StudentConfig& cfg) {
  if (cfg.grid_cols < 3 || cfg.grid_rows < 3) throw std::invalid_argument("student: grid must be at least 3 x 3");
  if (cfg.enc_hidden == 0 || cfg.dec_hidden == 0 || cfg.embed == 0 || cfg.conv_channels == 0 || cfg.m_p == 0 ||
      cfg.d_z == 0) {
    throw std::invalid_argument("student: layer sizes must be >= 1");
  }
  StudentModel m;
  m.cfg = cfg;
  auto& ps = m.params;
  const std::size_t H = cfg.enc_hidden, E = cfg.embed, C = cfg.conv_channels, D = cfg.dec_hidden;
  const std::size_t S = social_width(cfg);

  auto enc = group_rng(cfg.seed, 1);
  ps.add("enc_We", diff::xavier(2, E, enc));
  ps.add("enc_be", Tensor::zeros(1, E));
  ps.add("enc_W", diff::xavier(E + H, 4 * H, enc));
  ps.add("enc_b", lstm_bias(H));

  auto pool = group_rng(cfg.seed, 2);
  ps.add("conv_W", diff::xavier(H, 9 * C, pool));
  ps.add("conv_b", Tensor::zeros(1, C));

  auto dec = group_rng(cfg.seed, 3);
  ps.add("ctx_W", diff::xavier(H + S, D, dec));
  ps.add("ctx_b", Tensor::zeros(1, D));
  ps.add("dec_W", diff::xavier(2 + D + D, 4 * D, dec));
  ps.add("dec_b", lstm_bias(D));
  ps.add("out_W", scaled(diff::xavier(D, 5, dec), 0.1));
  ps.add("out_b", Tensor::zeros(1, 5));

  auto head = group_rng(cfg.seed, 4);
  const std::size_t K = cfg.m_p * (1 + 2 * cfg.d_z);
  ps.add("head_W", diff::xavier(S, K, head));
  ps.add("head_b", Tensor::zeros(1, K));
  return m;
}

StudentNet::StudentNet(const StudentModel& model, diff::Tape& tape, bool trainable,
                       const std::vector<std::pair<std::size_t, Var>>& overrides)
    : model_(model), tape_(tape), p_(trainable ? model.params.bind(tape) : model.params.bind_constant(tape)) {
  for (const auto& [k, v] : overrides) p_.at(k) = v;
}

Var StudentNet::p(const char* name) const { return p_[model_.params.index_of(name)]; }

std::vector<Tensor> history_inputs(const Scene& scene, double disp_scale) {
  if (scene.t_h < 2) throw std::invalid_argument("student: need at least two observed frames");
  const std::size_t n = scene.n();
  std::vector<Tensor> steps;
  for (int t = 0; t < scene.t_h; ++t) {
    const int f = std::max(t, 1);  // frame 0 has no predecessor; reuse frame 1's displacement
    Tensor x = Tensor::zeros(n, 2);
    for (std::size_t a = 0; a < n; ++a) {
      const Vec2 d = scene.position(a, f) - scene.position(a, f - 1);
      x.at(a, 0) = d.x / disp_scale;
      x.at(a, 1) = d.y / disp_scale;
    }
    steps.push_back(std::move(x));
  }
  return steps;
}

Var StudentNet::encode_history(const Scene& scene) const {
  const auto& c = model_.cfg;
  const std::size_t n = scene.n();
  LstmState s{tape_.constant(Tensor::zeros(n, c.enc_hidden)), tape_.constant(Tensor::zeros(n, c.enc_hidden))};
  const Var we = p("enc_We"), be = p("enc_be"), w = p("enc_W"), b = p("enc_b");
  for (const auto& x : history_inputs(scene, c.disp_scale)) {
    Var e = diff::tanh(diff::add_bias(diff::matmul(tape_.constant(x), we), be));
    s = lstm_step(e, s, w, b, c.enc_hidden);
  }
  return s.h;
}

Tensor grid_occupancy(const Scene& scene, const StudentConfig& cfg) {
  const std::size_t n = scene.n();
  const std::size_t cells = static_cast<std::size_t>(cfg.grid_cols * cfg.grid_rows);
  Tensor occ = Tensor::zeros(n * cells, n);
  const int last = scene.t_h - 1;
  for (std::size_t e = 0; e < n; ++e) {
    const Vec2 h = ego_heading(scene, e);
    const Vec2 left{-h.y, h.x};
    for (std::size_t nb = 0; nb < n; ++nb) {
      if (nb == e) continue;
      const Vec2 rel = scene.position(nb, last) - scene.position(e, last);
      const double col = std::floor(rel.dot(h) / cfg.cell_length + 0.5 * cfg.grid_cols);
      const double row = std::floor(rel.dot(left) / cfg.cell_width + 0.5 * cfg.grid_rows);
      if (col < 0 || col >= cfg.grid_cols || row < 0 || row >= cfg.grid_rows) continue;
      const std::size_t cell = static_cast<std::size_t>(row) * static_cast<std::size_t>(cfg.grid_cols) +
                               static_cast<std::size_t>(col);
      occ.at(e * cells + cell, nb) = 1.0;
    }
  }
  return occ;
}

std::pair<Var, Var> StudentNet::social_pool(const Var& hidden, const Scene& scene) const {
  const auto& c = model_.cfg;
  const std::size_t n = scene.n();
  const std::size_t cells = static_cast<std::size_t>(c.grid_cols * c.grid_rows);
  const std::size_t ocols = static_cast<std::size_t>(c.grid_cols - 2);
  const std::size_t O = out_cells(c);
  const Tensor occ = grid_occupancy(scene, c);
  // A valid 3x3 convolution over the summed grid, written as scatter * (hidden * kernels):
  // row (ego, out cell) of the scatter picks, for each kernel tap k, the neighbours in the
  // grid cell under that tap.
  Tensor scatter = Tensor::zeros(n * O, 9 * n);
  for (std::size_t e = 0; e < n; ++e) {
    for (std::size_t o = 0; o < O; ++o) {
      const std::size_t orow = o / ocols, ocol = o % ocols;
      for (std::size_t k = 0; k < 9; ++k) {
        const std::size_t cell = (orow + k / 3) * static_cast<std::size_t>(c.grid_cols) + ocol + k % 3;
        for (std::size_t nb = 0; nb < n; ++nb) scatter.at(e * O + o, nb * 9 + k) = occ.at(e * cells + cell, nb);
      }
    }
  }
  Var taps = diff::reshape(diff::matmul(hidden, p("conv_W")), n * 9, c.conv_channels);
  Var conv = diff::tanh(diff::add_bias(diff::matmul(tape_.constant(scatter), taps), p("conv_b")));
  Var social = diff::reshape(conv, n, O * c.conv_channels);
  Var scene_feature = diff::scale(diff::matmul(tape_.constant(Tensor(std::vector<std::size_t>{1, n}, 1.0)), social),
                                  1.0 / static_cast<double>(n));
  return {social, scene_feature};
}

StudentNet::Head StudentNet::cpm_head(const Var& scene_feature) const {
  const auto& c = model_.cfg;
  const std::size_t M = c.m_p, d = c.d_z;
  Var out = diff::add_bias(diff::matmul(scene_feature, p("head_W")), p("head_b"));
  Head h;
  h.weights = diff::softmax(diff::slice_cols(out, 0, M));
  h.means = diff::reshape(diff::slice_cols(out, M, M + M * d), M, d);
  h.vars = diff::add_scalar(diff::softplus(diff::reshape(diff::slice_cols(out, M + M * d, M + 2 * M * d), M, d)),
                            kVarianceFloor);
  return h;
}

StudentForward StudentNet::forward(const Scene& scene) const {
  const auto& c = model_.cfg;
  const std::size_t n = scene.n(), D = c.dec_hidden;
  StudentForward f;
  f.enc_hidden = encode_history(scene);
  std::tie(f.social, f.scene_feature) = social_pool(f.enc_hidden, scene);
  Var ctx = diff::tanh(diff::add_bias(diff::matmul(diff::concat_cols({f.enc_hidden, f.social}), p("ctx_W")),
                                      p("ctx_b")));
  LstmState s{ctx, tape_.constant(Tensor::zeros(n, D))};
  const Var w = p("dec_W"), b = p("dec_b"), wo = p("out_W"), bo = p("out_b");
  // Scaled displacement of the previous step; starts at the last observed one.
  Tensor d0 = Tensor::zeros(n, 2);
  for (std::size_t a = 0; a < n; ++a) {
    const Vec2 d = last_displacement(scene, a);
    d0.at(a, 0) = d.x / c.disp_scale;
    d0.at(a, 1) = d.y / c.disp_scale;
  }
  Var disp = tape_.constant(d0);
  Var pos;  // cumulative offset in meters
  for (int t = 0; t < scene.future_steps(); ++t) {
    s = lstm_step(diff::concat_cols({disp, ctx}), s, w, b, D);
    Var o = diff::add_bias(diff::matmul(s.h, wo), bo);
    disp = diff::add(disp, diff::slice_cols(o, 0, 2));
    Var step = diff::scale(disp, c.disp_scale);
    pos = t == 0 ? step : diff::add(pos, step);
    f.mu_x.push_back(diff::slice_cols(pos, 0, 1));
    f.mu_y.push_back(diff::slice_cols(pos, 1, 2));
    f.sigma_x.push_back(diff::add_scalar(diff::softplus(diff::slice_cols(o, 2, 3)), kSigmaFloor));
    f.sigma_y.push_back(diff::add_scalar(diff::softplus(diff::slice_cols(o, 3, 4)), kSigmaFloor));
    f.rho.push_back(diff::scale(diff::tanh(diff::slice_cols(o, 4, 5)), kRhoLimit));
  }
  return f;
}

double bivariate_nll(double dx, double dy, double sx, double sy, double rho) {
  const double om = 1.0 - rho * rho;
  const double zx = dx / sx, zy = dy / sy;
  const double q = (zx * zx + zy * zy - 2.0 * rho * zx * zy) / om;
  return std::log(2.0 * std::numbers::pi) + std::log(sx) + std::log(sy) + 0.5 * std::log(om) + 0.5 * q;
}

Var nll_loss_L2(const StudentForward& f, const Scene& scene) {
  const std::size_t n = scene.n();
  const std::size_t T = static_cast<std::size_t>(scene.future_steps());
  if (f.mu_x.size() != T) throw std::invalid_argument("nll_loss_L2: prediction length does not match scene");
  diff::Tape& tape = *f.mu_x.front().tape();
  Tensor tx = Tensor::zeros(n, T), ty = Tensor::zeros(n, T);
  for (std::size_t a = 0; a < n; ++a) {
    const Vec2 origin = scene.position(a, scene.t_h - 1);
    for (std::size_t t = 0; t < T; ++t) {
      const Vec2 d = scene.position(a, scene.t_h + static_cast<int>(t)) - origin;
      tx.at(a, t) = d.x;
      ty.at(a, t) = d.y;
    }
  }
  Var zx = diff::div(diff::sub(tape.constant(tx), diff::concat_cols(f.mu_x)), diff::concat_cols(f.sigma_x));
  Var zy = diff::div(diff::sub(tape.constant(ty), diff::concat_cols(f.mu_y)), diff::concat_cols(f.sigma_y));
  Var sx = diff::concat_cols(f.sigma_x), sy = diff::concat_cols(f.sigma_y), rho = diff::concat_cols(f.rho);
  Var om = diff::add_scalar(diff::scale(diff::square(rho), -1.0), 1.0);
  Var quad = diff::sub(diff::add(diff::square(zx), diff::square(zy)), diff::scale(diff::mul(rho, diff::mul(zx, zy)), 2.0));
  Var per = diff::add(diff::add(diff::log(sx), diff::log(sy)), diff::scale(diff::log(om), 0.5));
  per = diff::add(per, diff::scale(diff::div(quad, om), 0.5));
  const double c = std::log(2.0 * std::numbers::pi) * static_cast<double>(T);
  return diff::add_scalar(diff::scale(diff::sum(per), 1.0 / static_cast<double>(n)), c);
}

GaussianMixture head_mixture(const StudentNet::Head& h) {
  const Tensor& w = h.weights.value();
  const Tensor& m = h.means.value();
  const Tensor& v = h.vars.value();
  GaussianMixture g;
  g.weights.assign(w.values().begin(), w.values().end());
  for (std::size_t j = 0; j < m.rows(); ++j) {
    DiagGaussian comp;
    for (std::size_t k = 0; k < m.cols(); ++k) {
      comp.mean.push_back(m.at(j, k));
      comp.var.push_back(v.at(j, k));
    }
    g.components.push_back(std::move(comp));
  }
  return g;
}

Var cpm_bound(const StudentNet::Head& head, const GaussianMixture& q, const CouplingMatrix& a,
              const CouplingMatrix& beta) {
  diff::Tape& tape = *head.weights.tape();
  const std::size_t M = head.means.value().rows(), d = head.means.value().cols(), Q = q.size();
  if (q.dim() != d || a.rows != Q || a.cols != M || beta.rows != Q || beta.cols != M) {
    throw std::invalid_argument("cpm_bound: shapes of head, teacher mixture and coupling disagree");
  }
  // KL(p_j || q_i) as an M x Q matrix, column by column.
  Var log_vp = diff::log(head.vars);
  Var ones_d = tape.constant(Tensor(std::vector<std::size_t>{d, 1}, 1.0));
  std::vector<Var> cols;
  for (std::size_t i = 0; i < Q; ++i) {
    Tensor qm = Tensor::zeros(M, d), inv_qv = Tensor::zeros(M, d);
    double log_det = 0.0;
    for (std::size_t k = 0; k < d; ++k) log_det += std::log(q.components[i].var[k]);
    for (std::size_t j = 0; j < M; ++j) {
      for (std::size_t k = 0; k < d; ++k) {
        qm.at(j, k) = q.components[i].mean[k];
        inv_qv.at(j, k) = 1.0 / q.components[i].var[k];
      }
    }
    Var iv = tape.constant(inv_qv);
    Var t = diff::mul(diff::add(head.vars, diff::square(diff::sub(head.means, tape.constant(qm)))), iv);
    t = diff::sub(t, log_vp);
    Var kl = diff::scale(diff::add_scalar(diff::matmul(t, ones_d), log_det - static_cast<double>(d)), 0.5);
    cols.push_back(kl);
  }
  Var kl = diff::concat_cols(cols);  // M x Q
  Tensor at = Tensor::zeros(M, Q), ct = Tensor::zeros(M, Q);
  for (std::size_t i = 0; i < Q; ++i) {
    for (std::size_t j = 0; j < M; ++j) {
      at.at(j, i) = a(i, j);
      if (a(i, j) > 0.0) ct.at(j, i) = std::log(a(i, j)) - std::log(beta(i, j));
    }
  }
  Var omega = diff::transpose(head.weights);  // M x 1
  Var log_omega = diff::transpose(diff::log(head.weights));
  Var row_cost = diff::matmul(diff::mul(tape.constant(at), diff::add(kl, tape.constant(ct))),
                              tape.constant(Tensor(std::vector<std::size_t>{Q, 1}, 1.0)));  // M x 1
  return diff::sum(diff::mul(omega, diff::add(row_cost, log_omega)));
}

GaussianMixture scene_teacher_mixture(const TeacherModel& teacher, const Scene& scene) {
  GaussianMixture q = teacher.q_mixture;
  q.weights = scene_pattern_weights(teacher, scene);
  return q;
}

VariationalCoupling inner_coupling(const GaussianMixture& p, const GaussianMixture& q, int k) {
  VariationalCoupling c = independence_coupling(p, q);
  for (int it = 0; it < k; ++it) {
    c.alpha = update_alpha(p, q, c);
    c.beta = update_beta(c, q.weights);
  }
  return c;
}

StudentTrainResult train_student(const Dataset& ds, const TeacherModel* teacher, const StudentConfig& cfg) {
  const auto train = ds.scenes_in(Split::train);
  if (train.empty()) throw std::invalid_argument("train_student: the train split is empty");
  if (cfg.use_cpm) {
    if (teacher == nullptr) throw std::invalid_argument("train_student: CPM training needs a teacher");
    if (teacher->d_z != cfg.d_z) {
      throw std::invalid_argument("train_student: teacher latent size " + std::to_string(teacher->d_z) +
                                  " != student d_z " + std::to_string(cfg.d_z));
    }
  }
  if (cfg.batch_scenes == 0) throw std::invalid_argument("train_student: batch size must be >= 1");
  StudentTrainResult res;
  res.model = init_student(cfg);
  StudentModel& model = res.model;

  std::vector<GaussianMixture> q_scene;
  if (cfg.use_cpm) {
    for (const Scene* s : train) q_scene.push_back(scene_teacher_mixture(*teacher, *s));
  }

  diff::AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.clip_norm = cfg.clip_norm;
  diff::Adam opt(model.params, acfg);
  auto shuffle_rng = group_rng(cfg.seed, 5);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (4 * (epoch - 1) >= 3 * cfg.epochs) opt.set_lr(cfg.lr * cfg.lr_drop);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    StudentEpochLog log;
    log.epoch = epoch;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_scenes) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_scenes);
      const double inv_b = 1.0 / static_cast<double>(stop - start);
      diff::Tape tape;
      StudentNet net(model, tape, true);
      Var l2_total, l1_total;
      bool have_l1 = false;
      // Adds one L1 term between the head mixture at `feature` and `q`.
      auto add_l1 = [&](const Var& feature, const GaussianMixture& q) {
        if (cfg.gamma == 0.0) {
          // Logged only; evaluated off the training tape so the update matches a run without CPM.
          diff::Tape side;
          StudentNet frozen(model, side, false);
          const GaussianMixture p = head_mixture(frozen.cpm_head(side.constant(feature.value())));
          return upper_bound_L1(p, q, inner_coupling(p, q, cfg.k_inner));
        }
        const auto head = net.cpm_head(feature);
        const auto coupling = inner_coupling(head_mixture(head), q, cfg.k_inner);
        CouplingMatrix a = coupling.alpha;
        const auto& w = head.weights.value();
        for (std::size_t i = 0; i < a.rows; ++i) {
          for (std::size_t j = 0; j < a.cols; ++j) a(i, j) /= w[j];
        }
        Var l1 = cpm_bound(head, q, a, coupling.beta);
        l1_total = have_l1 ? diff::add(l1_total, l1) : l1;
        have_l1 = true;
        return l1.value().item();
      };
      std::vector<Var> features;
      std::vector<double> mean_lambda;
      for (std::size_t k = start; k < stop; ++k) {
        const Scene& s = *train[order[k]];
        const StudentForward f = net.forward(s);
        Var l2 = nll_loss_L2(f, s);
        l2_total = k == start ? l2 : diff::add(l2_total, l2);
        log.l2 += l2.value().item();
        if (!cfg.use_cpm) continue;
        const GaussianMixture& q = q_scene[order[k]];
        if (!cfg.batch_coupling) {
          log.l1 += add_l1(f.scene_feature, q);
          continue;
        }
        features.push_back(f.scene_feature);
        mean_lambda.resize(q.size(), 0.0);
        for (std::size_t i = 0; i < q.size(); ++i) mean_lambda[i] += q.weights[i] * inv_b;
      }
      if (!features.empty()) {
        // With gamma = 0 the mean is built on a side tape, leaving the training tape untouched.
        diff::Tape side;
        diff::Tape& mt = cfg.gamma == 0.0 ? side : tape;
        std::vector<Var> rows;
        for (const Var& v : features) rows.push_back(cfg.gamma == 0.0 ? side.constant(v.value()) : v);
        const Var mean_feature = diff::scale(
            diff::matmul(mt.constant(Tensor(std::vector<std::size_t>{1, rows.size()}, 1.0)), diff::concat_rows(rows)),
            inv_b);
        GaussianMixture q = teacher->q_mixture;
        q.weights = mean_lambda;
        // Logged per scene so the column is comparable across both coupling scopes.
        log.l1 += add_l1(mean_feature, q) * static_cast<double>(features.size());
        if (have_l1) l1_total = diff::scale(l1_total, static_cast<double>(features.size()));
      }
      Var loss = diff::scale(l2_total, inv_b);
      if (have_l1) loss = diff::add(loss, diff::scale(l1_total, cfg.gamma * inv_b));
      if (!loss.value().all_finite()) {
        throw std::runtime_error("train_student: non-finite loss at epoch " + std::to_string(epoch) + " (L2 " +
                                 std::to_string(l2_total.value().item()) + ", L1 " +
                                 (have_l1 ? std::to_string(l1_total.value().item()) : std::string("-")) + ")");
      }
      const auto grads = tape.backward(loss);
      std::vector<Tensor> g;
      for (const auto& v : net.params()) g.push_back(grads.of(v));
      opt.step(model.params, g);
      seen += stop - start;
    }
    log.l2 /= static_cast<double>(seen);
    log.l1 /= static_cast<double>(seen);
    log.total = log.l2 + cfg.gamma * log.l1;
    res.log.push_back(log);
  }
  return res;
}

PredictionOutput predict_distribution(const StudentModel& model, const Scene& scene) {
  diff::Tape tape;
  StudentNet net(model, tape, false);
  const StudentForward f = net.forward(scene);
  PredictionOutput out;
  out.agents = scene.n();
  out.steps = f.mu_x.size();
  const std::size_t total = out.agents * out.steps;
  for (auto* v : {&out.mu_x, &out.mu_y, &out.sigma_x, &out.sigma_y, &out.rho}) v->resize(total);
  for (std::size_t t = 0; t < out.steps; ++t) {
    for (std::size_t a = 0; a < out.agents; ++a) {
      const std::size_t k = a * out.steps + t;
      out.mu_x[k] = f.mu_x[t].value()[a];
      out.mu_y[k] = f.mu_y[t].value()[a];
      out.sigma_x[k] = f.sigma_x[t].value()[a];
      out.sigma_y[k] = f.sigma_y[t].value()[a];
      out.rho[k] = f.rho[t].value()[a];
    }
  }
  return out;
}

std::vector<std::vector<Vec2>> predict(const StudentModel& model, const Scene& scene) {
  const PredictionOutput d = predict_distribution(model, scene);
  std::vector<std::vector<Vec2>> out(d.agents);
  for (std::size_t a = 0; a < d.agents; ++a) {
    const Vec2 origin = scene.position(a, scene.t_h - 1);
    for (std::size_t t = 0; t < d.steps; ++t) {
      const std::size_t k = a * d.steps + t;
      out[a].push_back(origin + Vec2{d.mu_x[k], d.mu_y[k]});
    }
  }
  return out;
}

namespace {

nlohmann::json config_json(const StudentConfig& c) {
  return {{"enc_hidden", c.enc_hidden}, {"dec_hidden", c.dec_hidden}, {"embed", c.embed},
          {"conv_channels", c.conv_channels}, {"grid_cols", c.grid_cols}, {"grid_rows", c.grid_rows},
          {"cell_length", c.cell_length}, {"cell_width", c.cell_width}, {"m_p", c.m_p}, {"d_z", c.d_z},
          {"disp_scale", c.disp_scale}, {"gamma", c.gamma}, {"use_cpm", c.use_cpm}, {"k_inner", c.k_inner},
          {"batch_coupling", c.batch_coupling},
          {"lr", c.lr}, {"lr_drop", c.lr_drop}, {"clip_norm", c.clip_norm}, {"epochs", c.epochs}, {"batch_scenes", c.batch_scenes},
          {"seed", c.seed}};
}

StudentConfig config_from_json(const nlohmann::json& j) {
  StudentConfig c;
  c.enc_hidden = j.at("enc_hidden");
  c.dec_hidden = j.at("dec_hidden");
  c.embed = j.at("embed");
  c.conv_channels = j.at("conv_channels");
  c.grid_cols = j.at("grid_cols");
  c.grid_rows = j.at("grid_rows");
  c.cell_length = j.at("cell_length");
  c.cell_width = j.at("cell_width");
  c.m_p = j.at("m_p");
  c.d_z = j.at("d_z");
  c.disp_scale = j.at("disp_scale");
  c.gamma = j.at("gamma");
  c.use_cpm = j.at("use_cpm");
  c.k_inner = j.at("k_inner");
  c.lr_drop = j.at("lr_drop");
  c.batch_coupling = j.at("batch_coupling");
  c.lr = j.at("lr");
  c.clip_norm = j.at("clip_norm");
  c.epochs = j.at("epochs");
  c.batch_scenes = j.at("batch_scenes");
  c.seed = j.at("seed");
  return c;
}

}  // namespace

nlohmann::json StudentModel::to_json() const {
  return {{"version", kCheckpointVersion}, {"kind", "student"}, {"config", config_json(cfg)},
          {"weights", params.to_json()}};
}

StudentModel StudentModel::from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "student") throw std::invalid_argument("checkpoint is not a student model");
  if (j.at("version").get<int>() != kCheckpointVersion) throw std::invalid_argument("unsupported student version");
  StudentModel m = init_student(config_from_json(j.at("config")));
  const auto stored = diff::ParamStore::from_json(j.at("weights"));
  if (stored.size() != m.params.size()) throw std::invalid_argument("student checkpoint: wrong parameter count");
  for (std::size_t i = 0; i < stored.size(); ++i) {
    if (stored.name(i) != m.params.name(i) || !stored.value(i).same_shape(m.params.value(i))) {
      throw std::invalid_argument("student checkpoint: parameter '" + stored.name(i) + "' does not match config");
    }
  }
  m.params = stored;
  return m;
}

void save_student(const StudentModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << model.to_json().dump() << '\n';
}

StudentModel load_student(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open student checkpoint " + path.string());
  try {
    return StudentModel::from_json(nlohmann::json::parse(in));
  } catch (const std::exception& e) {
    throw ValidationError("bad student checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace cftraj

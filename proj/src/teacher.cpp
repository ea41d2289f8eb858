#include "cftraj/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace cftraj {

using diff::Tensor;
using diff::Var;

namespace {

constexpr int kCheckpointVersion = 1;

enum Param : std::size_t { W0, B0, WMU, BMU, WLV, BLV, kParamCount };

Var kl_to_standard_normal(const Var& mu, const Var& logvar) {
  // 0.5 * (mu^2 + exp(logvar) - 1 - logvar), summed
  Var t = diff::sub(diff::add(diff::square(mu), diff::exp(logvar)), diff::add_scalar(logvar, 1.0));
  return diff::scale(diff::sum(t), 0.5);
}

std::vector<double> row_mean(const Tensor& m) {
  std::vector<double> out(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += m.at(r, c);
  }
  for (auto& v : out) v /= static_cast<double>(m.rows());
  return out;
}

}  // namespace

diff::ParamStore init_teacher_params(std::size_t hidden, std::size_t d_z, std::mt19937_64& rng) {
  if (hidden == 0 || d_z == 0) throw std::invalid_argument("teacher: hidden and d_z must be >= 1");
  diff::ParamStore ps;
  ps.add("W0", diff::xavier(4, hidden, rng));
  ps.add("b0", Tensor::zeros(1, hidden));
  ps.add("Wmu", diff::xavier(hidden, d_z, rng));
  ps.add("bmu", Tensor::zeros(1, d_z));
  Tensor wlv = diff::xavier(hidden, d_z, rng);
  for (auto& v : wlv.data()) v *= 0.1;
  ps.add("Wlogvar", std::move(wlv));
  ps.add("blogvar", Tensor::zeros(1, d_z));
  return ps;
}

Tensor normalize_adjacency(const FrameGraph& g) {
  const std::size_t n = g.n;
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t u = 0; u < n; ++u) {
    double d = 1.0;
    for (std::size_t v = 0; v < n; ++v) {
      if (v != u) d += g.at(u, v);
    }
    inv_sqrt_deg[u] = 1.0 / std::sqrt(d);
  }
  Tensor a = Tensor::zeros(n, n);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) {
      const double w = u == v ? 1.0 : g.at(u, v);
      a.at(u, v) = inv_sqrt_deg[u] * w * inv_sqrt_deg[v];
    }
  }
  return a;
}

Tensor raw_node_features(const Scene& scene, int frame) {
  const std::size_t n = scene.n();
  Vec2 centroid;
  for (std::size_t a = 0; a < n; ++a) centroid += scene.position(a, frame);
  centroid = centroid / static_cast<double>(n);
  const auto vel = derive_velocities(scene, frame);
  Vec2 drift;
  for (const auto& v : vel) drift += v;
  drift = drift / static_cast<double>(n);
  Tensor x = Tensor::zeros(n, 4);
  for (std::size_t a = 0; a < n; ++a) {
    const Vec2 p = scene.position(a, frame) - centroid;
    const Vec2 v = vel[a] - drift;
    x.at(a, 0) = p.x;
    x.at(a, 1) = p.y;
    x.at(a, 2) = v.x;
    x.at(a, 3) = v.y;
  }
  return x;
}

Tensor node_features(const Scene& scene, int frame, const FeatureNorm& norm) {
  Tensor x = raw_node_features(scene, frame);
  for (std::size_t a = 0; a < x.rows(); ++a) {
    for (std::size_t c = 0; c < 4; ++c) x.at(a, c) = (x.at(a, c) - norm.mean[c]) / norm.std[c];
  }
  return x;
}

FeatureNorm fit_feature_norm(const std::vector<const Scene*>& scenes) {
  std::array<double, 4> s{}, s2{};
  double count = 0.0;
  for (const Scene* sc : scenes) {
    for (int f = 0; f < sc->t_h; ++f) {
      const Tensor x = raw_node_features(*sc, f);
      for (std::size_t a = 0; a < x.rows(); ++a) {
        for (std::size_t c = 0; c < 4; ++c) s[c] += x.at(a, c);
      }
      count += static_cast<double>(x.rows());
    }
  }
  FeatureNorm norm;
  if (count == 0.0) return norm;
  for (std::size_t c = 0; c < 4; ++c) norm.mean[c] = s[c] / count;
  for (const Scene* sc : scenes) {
    for (int f = 0; f < sc->t_h; ++f) {
      const Tensor x = raw_node_features(*sc, f);
      for (std::size_t a = 0; a < x.rows(); ++a) {
        for (std::size_t c = 0; c < 4; ++c) s2[c] += (x.at(a, c) - norm.mean[c]) * (x.at(a, c) - norm.mean[c]);
      }
    }
  }
  for (std::size_t c = 0; c < 4; ++c) {
    const double sd = std::sqrt(s2[c] / count);
    norm.std[c] = sd > 1e-9 ? sd : 1.0;
  }
  return norm;
}

Encoded encode(const std::vector<Var>& p, const Var& adj, const Var& features) {
  if (p.size() != kParamCount) throw std::invalid_argument("teacher encode: expected 6 parameter tensors");
  if (features.value().cols() != 4 || features.value().rows() != adj.value().rows()) {
    throw std::invalid_argument("teacher encode: features " + features.value().shape_str() +
                                " do not match adjacency " + adj.value().shape_str());
  }
  Var h = diff::relu(diff::add_bias(diff::matmul(adj, diff::matmul(features, p[W0])), p[B0]));
  Var ah = diff::matmul(adj, h);
  Var mu = diff::add_bias(diff::matmul(ah, p[WMU]), p[BMU]);
  Var logvar = diff::add_bias(diff::matmul(ah, p[WLV]), p[BLV]);
  return {mu, logvar};
}

Var decode_logits(const Var& z) { return diff::matmul(z, diff::transpose(z)); }

Var decode(const Var& z) { return diff::sigmoid(decode_logits(z)); }

GraphBatch make_batch(const std::vector<const GraphSample*>& graphs) {
  GraphBatch b;
  for (const auto* g : graphs) b.nodes += g->graph.n;
  const std::size_t N = b.nodes;
  b.adj = Tensor::zeros(N, N);
  b.features = Tensor::zeros(N, 4);
  b.target = Tensor::zeros(N, N);
  b.mask = Tensor::zeros(N, N);
  std::size_t pos = 0, neg = 0;
  for (const auto* g : graphs) {
    for (double w : g->graph.weights) (w > 0.0 ? pos : neg) += 1;
    neg -= g->graph.n;  // diagonal
  }
  const double pos_weight = pos > 0 ? std::max(1.0, static_cast<double>(neg) / static_cast<double>(pos)) : 1.0;
  std::size_t off = 0;
  for (const auto* g : graphs) {
    const std::size_t n = g->graph.n;
    const Tensor a = normalize_adjacency(g->graph);
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t c = 0; c < 4; ++c) b.features.at(off + u, c) = g->features.at(u, c);
      for (std::size_t v = 0; v < n; ++v) {
        b.adj.at(off + u, off + v) = a.at(u, v);
        if (u == v) continue;
        const double w = g->graph.at(u, v);
        b.target.at(off + u, off + v) = w / (1.0 + w);
        b.mask.at(off + u, off + v) = w > 0.0 ? pos_weight : 1.0;
      }
    }
    off += n;
  }
  return b;
}

Var elbo_loss(const std::vector<Var>& p, const GraphBatch& batch, const Tensor& eps, double kl_weight) {
  diff::Tape& tape = *p.front().tape();
  Var adj = tape.constant(batch.adj);
  Var x = tape.constant(batch.features);
  const Encoded e = encode(p, adj, x);
  if (eps.rows() != batch.nodes || eps.cols() != e.mu.value().cols()) {
    throw std::invalid_argument("elbo_loss: noise shape " + eps.shape_str() + " does not match latents");
  }
  Var z = diff::add(e.mu, diff::mul(diff::exp(diff::scale(e.logvar, 0.5)), tape.constant(eps)));
  Var logits = decode_logits(z);
  // BCE with logits: softplus(l) - t * l
  Var bce = diff::sub(diff::softplus(logits), diff::mul(tape.constant(batch.target), logits));
  double mask_total = 0.0;
  for (double m : batch.mask.values()) mask_total += m;
  Var recon = diff::sum(diff::mul(tape.constant(batch.mask), bce));
  recon = diff::scale(recon, mask_total > 0.0 ? 1.0 / mask_total : 0.0);
  // The batch is one disjoint-union graph of N nodes; the KL sum is scaled by 1 / N^2.
  const double n = static_cast<double>(batch.nodes);
  Var kl = diff::scale(kl_to_standard_normal(e.mu, e.logvar), 1.0 / (n * n));
  return diff::add(recon, diff::scale(kl, kl_weight));
}

Tensor node_means(const TeacherModel& model, const FrameGraph& g, const Tensor& features) {
  diff::Tape tape;
  const auto p = model.params.bind_constant(tape);
  const Encoded e = encode(p, tape.constant(normalize_adjacency(g)), tape.constant(features));
  return e.mu.value();
}

std::vector<std::vector<double>> extract_pattern(const TeacherModel& model, const Scene& scene) {
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<std::size_t>(scene.t_h));
  for (int f = 0; f < scene.t_h; ++f) {
    const FrameGraph g = build_frame_graph(scene, f, model.w_max);
    out.push_back(row_mean(node_means(model, g, node_features(scene, f, model.norm))));
  }
  return out;
}

std::vector<std::vector<double>> pattern_responsibilities(const TeacherModel& model, const Scene& scene) {
  std::vector<std::vector<double>> out;
  for (const auto& z : extract_pattern(model, scene)) out.push_back(gmm_responsibilities(model.q_mixture, z));
  return out;
}

std::vector<double> scene_pattern_weights(const TeacherModel& model, const Scene& scene) {
  const auto resp = pattern_responsibilities(model, scene);
  std::vector<double> lambda(model.q_mixture.size(), 0.0);
  for (const auto& r : resp) {
    for (std::size_t i = 0; i < r.size(); ++i) lambda[i] += r[i];
  }
  double total = 0.0;
  for (double v : lambda) total += v;
  for (auto& v : lambda) v /= total;
  return lambda;
}

TeacherTrainResult train_teacher(const Dataset& ds, const TeacherConfig& cfg) {
  const auto train = ds.scenes_in(Split::train);
  if (train.empty()) throw std::invalid_argument("train_teacher: the train split is empty");
  if (cfg.m_q == 0) throw std::invalid_argument("train_teacher: M_Q must be >= 1");
  if (cfg.batch_graphs == 0) throw std::invalid_argument("train_teacher: batch size must be >= 1");

  std::mt19937_64 rng(cfg.seed);
  TeacherTrainResult res;
  TeacherModel& model = res.model;
  model.d_z = cfg.d_z;
  model.hidden = cfg.hidden;
  model.w_max = cfg.w_max;
  model.params = init_teacher_params(cfg.hidden, cfg.d_z, rng);
  model.norm = fit_feature_norm(train);

  std::vector<GraphSample> samples;
  for (const Scene* s : train) {
    for (int f = 0; f < s->t_h; ++f) {
      samples.push_back({build_frame_graph(*s, f, cfg.w_max), node_features(*s, f, model.norm)});
    }
  }

  diff::AdamConfig acfg;
  acfg.lr = cfg.lr;
  diff::Adam opt(model.params, acfg);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_graphs) {
      std::vector<const GraphSample*> chunk;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_graphs); ++k) {
        chunk.push_back(&samples[order[k]]);
      }
      const GraphBatch batch = make_batch(chunk);
      Tensor eps = Tensor::zeros(batch.nodes, cfg.d_z);
      for (auto& v : eps.data()) v = n01(rng);
      diff::Tape tape;
      const auto p = model.params.bind(tape);
      Var loss = elbo_loss(p, batch, eps, cfg.kl_weight);
      const auto grads = tape.backward(loss);
      std::vector<Tensor> g;
      for (const auto& v : p) g.push_back(grads.of(v));
      opt.step(model.params, g);
      total += loss.value().item();
      ++batches;
    }
    res.epoch_loss.push_back(total / static_cast<double>(batches));
  }

  std::vector<std::vector<double>> codes;
  for (const Scene* s : train) {
    for (auto& z : extract_pattern(model, *s)) codes.push_back(std::move(z));
  }
  EmOptions em;
  em.components = cfg.m_q;
  em.seed = cfg.seed + 1;
  em.max_iters = cfg.em_iters;
  auto fit = fit_em(codes, em);
  model.q_mixture = std::move(fit.mixture);
  res.em_log_likelihood = std::move(fit.log_likelihood);
  return res;
}

double auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  if (pos.empty() || neg.empty()) throw std::invalid_argument("auc: need both positive and negative scores");
  std::vector<std::pair<double, int>> all;
  all.reserve(pos.size() + neg.size());
  for (double s : pos) all.emplace_back(s, 1);
  for (double s : neg) all.emplace_back(s, 0);
  std::sort(all.begin(), all.end());
  // Sum of positive ranks, ties receive their average rank.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::size_t p = 0;
    while (j < all.size() && all[j].first == all[i].first) p += static_cast<std::size_t>(all[j++].second);
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += avg_rank * static_cast<double>(p);
    i = j;
  }
  const double np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double reconstruction_auc(const TeacherModel& model, const std::vector<const Scene*>& scenes) {
  std::vector<double> pos, neg;
  for (const Scene* s : scenes) {
    for (int f = 0; f < s->t_h; ++f) {
      const FrameGraph g = build_frame_graph(*s, f, model.w_max);
      const Tensor mu = node_means(model, g, node_features(*s, f, model.norm));
      for (std::size_t u = 0; u < g.n; ++u) {
        for (std::size_t v = u + 1; v < g.n; ++v) {
          double dot = 0.0;
          for (std::size_t k = 0; k < mu.cols(); ++k) dot += mu.at(u, k) * mu.at(v, k);
          const double score = 1.0 / (1.0 + std::exp(-dot));
          (g.at(u, v) > 0.0 ? pos : neg).push_back(score);
        }
      }
    }
  }
  return auc(pos, neg);
}

nlohmann::json TeacherModel::to_json() const {
  return {{"version", kCheckpointVersion},
          {"kind", "teacher"},
          {"d_z", d_z},
          {"hidden", hidden},
          {"w_max", w_max},
          {"weights", params.to_json()},
          {"norm", {{"mean", norm.mean}, {"std", norm.std}}},
          {"q_mixture", q_mixture.to_json()}};
}

TeacherModel TeacherModel::from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "teacher") throw std::invalid_argument("checkpoint is not a teacher model");
  if (j.at("version").get<int>() != kCheckpointVersion) throw std::invalid_argument("unsupported teacher version");
  TeacherModel m;
  m.d_z = j.at("d_z").get<std::size_t>();
  m.hidden = j.at("hidden").get<std::size_t>();
  m.w_max = j.at("w_max").get<double>();
  m.params = diff::ParamStore::from_json(j.at("weights"));
  if (m.params.size() != kParamCount) throw std::invalid_argument("teacher checkpoint: wrong parameter count");
  m.norm.mean = j.at("norm").at("mean").get<std::array<double, 4>>();
  m.norm.std = j.at("norm").at("std").get<std::array<double, 4>>();
  m.q_mixture = GaussianMixture::from_json(j.at("q_mixture"));
  if (m.q_mixture.dim() != m.d_z) throw std::invalid_argument("teacher checkpoint: mixture dimension != d_z");
  return m;
}

void save_teacher(const TeacherModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << model.to_json().dump() << '\n';
}

TeacherModel load_teacher(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open teacher checkpoint " + path.string());
  try {
    return TeacherModel::from_json(nlohmann::json::parse(in));
  } catch (const std::exception& e) {
    throw ValidationError("bad teacher checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace cftraj

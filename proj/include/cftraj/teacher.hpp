#pragma once

// Graph VAE over collision-time graphs. Each observed frame of a scene becomes one graph whose
// latent node means are pooled into a scene-frame code z; a Gaussian mixture Q is fitted to the
// codes of the training split.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include <json.hpp>

#include "cftraj/congestion_graph.hpp"
#include "cftraj/core_types.hpp"
#include "cftraj/diffcore.hpp"
#include "cftraj/gaussian.hpp"

namespace cftraj {

struct TeacherConfig {
  std::size_t d_z = 16;
  std::size_t hidden = 32;
  std::size_t m_q = 4;
  double lr = 1e-4;
  int epochs = 30;
  std::size_t batch_graphs = 32;
  double kl_weight = 1.0;
  double w_max = kDefaultWeightCap;
  int em_iters = 200;
  std::uint64_t seed = 0;
};

/// Per-column standardization of node features (x, y, vx, vy).
struct FeatureNorm {
  std::array<double, 4> mean{0.0, 0.0, 0.0, 0.0};
  std::array<double, 4> std{1.0, 1.0, 1.0, 1.0};
};

struct TeacherModel {
  std::size_t d_z = 0;
  std::size_t hidden = 0;
  double w_max = kDefaultWeightCap;
  diff::ParamStore params;  // W0, b0, Wmu, bmu, Wlogvar, blogvar
  FeatureNorm norm;
  GaussianMixture q_mixture;

  nlohmann::json to_json() const;
  static TeacherModel from_json(const nlohmann::json& j);
};

/// Fresh parameters for the given sizes.
diff::ParamStore init_teacher_params(std::size_t hidden, std::size_t d_z, std::mt19937_64& rng);

/// D^-1/2 (W + I) D^-1/2, D the degree matrix of W + I.
diff::Tensor normalize_adjacency(const FrameGraph& g);

/// Raw node features at `frame`: position and velocity relative to the agents' centroid and
/// mean velocity (a frame moving with the scene).
diff::Tensor raw_node_features(const Scene& scene, int frame);
diff::Tensor node_features(const Scene& scene, int frame, const FeatureNorm& norm);

/// Statistics of raw node features over every observed frame of `scenes`.
FeatureNorm fit_feature_norm(const std::vector<const Scene*>& scenes);

struct Encoded {
  diff::Var mu;
  diff::Var logvar;
};

/// Two graph-convolution layers. `params` are the bound ParamStore entries in store order.
Encoded encode(const std::vector<diff::Var>& params, const diff::Var& adj, const diff::Var& features);

/// Inner-product decoder logits z z^T.
diff::Var decode_logits(const diff::Var& z);
/// sigmoid(z z^T).
diff::Var decode(const diff::Var& z);

/// Several graphs stacked block-diagonally so one tape pass handles a minibatch.
struct GraphBatch {
  diff::Tensor adj;       // N x N normalized adjacency, block diagonal
  diff::Tensor features;  // N x 4
  diff::Tensor target;    // N x N, w / (1 + w)
  diff::Tensor mask;      // N x N loss weights; zero on the diagonal and across graphs
  std::size_t nodes = 0;
};

struct GraphSample {
  FrameGraph graph;
  diff::Tensor features;  // n x 4, standardized
};

GraphBatch make_batch(const std::vector<const GraphSample*>& graphs);

/// Negative ELBO: positively weighted BCE over within-graph node pairs plus kl_weight times the
/// summed KL to N(0, I) divided by N^2 (N nodes in the batch). `eps` (N x d_z) is the
/// reparameterization noise.
diff::Var elbo_loss(const std::vector<diff::Var>& params, const GraphBatch& batch, const diff::Tensor& eps,
                    double kl_weight);

/// Node posterior means for one graph, no sampling.
diff::Tensor node_means(const TeacherModel& model, const FrameGraph& g, const diff::Tensor& features);

/// One graph-level code per observed frame: the mean of the node posterior means.
std::vector<std::vector<double>> extract_pattern(const TeacherModel& model, const Scene& scene);

/// Posterior mixture responsibilities of each frame's code under Q.
std::vector<std::vector<double>> pattern_responsibilities(const TeacherModel& model, const Scene& scene);

/// Mean responsibilities over the observed frames: the scene's pattern weights lambda(o).
std::vector<double> scene_pattern_weights(const TeacherModel& model, const Scene& scene);

struct TeacherTrainResult {
  TeacherModel model;
  std::vector<double> epoch_loss;  // mean negative ELBO per epoch
  std::vector<double> em_log_likelihood;
};

/// Trains on every observed frame of the train split, then fits Q by EM over the extracted codes.
TeacherTrainResult train_teacher(const Dataset& ds, const TeacherConfig& cfg);

/// AUC of decoded scores for positive- versus zero-weight node pairs, pooled over every
/// observed frame of `scenes`.
double reconstruction_auc(const TeacherModel& model, const std::vector<const Scene*>& scenes);

/// Mann-Whitney AUC with ties counted half.
double auc(const std::vector<double>& positive_scores, const std::vector<double>& negative_scores);

void save_teacher(const TeacherModel& model, const std::filesystem::path& path);
TeacherModel load_teacher(const std::filesystem::path& path);

}  // namespace cftraj

#pragma once

// Encoder / social pooling / decoder trajectory predictor with a mixture head. The head emits
// the student mixture P(o) in the teacher's latent space; training adds gamma times the
// variational KL bound between P(o) and the teacher's Q(o) to the trajectory NLL.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include <json.hpp>

#include "cftraj/core_types.hpp"
#include "cftraj/cpm.hpp"
#include "cftraj/diffcore.hpp"
#include "cftraj/gaussian.hpp"
#include "cftraj/teacher.hpp"

namespace cftraj {

struct StudentConfig {
  std::size_t enc_hidden = 32;
  std::size_t dec_hidden = 32;
  std::size_t embed = 16;
  std::size_t conv_channels = 16;
  int grid_cols = 13;       // longitudinal cells
  int grid_rows = 3;        // lateral cells
  double cell_length = 5.0; // meters along the ego heading
  double cell_width = 4.0;  // meters across it
  std::size_t m_p = 4;
  std::size_t d_z = 16;     // must equal the teacher's latent size
  double disp_scale = 4.0;  // meters per step mapped to unit input
  double gamma = 1.0;
  bool use_cpm = true;      // false: the head is never evaluated during training
  int k_inner = 5;
  /// true: one L1 per batch between the head mixture of the batch-mean scene feature and the
  /// teacher mixture with batch-mean pattern weights. false: one L1 per scene.
  bool batch_coupling = true;
  double lr = 3e-3;
  double lr_drop = 0.1;     // lr multiplier for the last quarter of the epochs; 1 disables
  double clip_norm = 5.0;
  int epochs = 40;
  std::size_t batch_scenes = 8;
  std::uint64_t seed = 0;
};

struct StudentModel {
  StudentConfig cfg;
  diff::ParamStore params;

  nlohmann::json to_json() const;
  static StudentModel from_json(const nlohmann::json& j);
};

/// Parameter groups draw from separate RNG streams so adding or dropping one group never
/// changes the others' initial values.
StudentModel init_student(const StudentConfig& cfg);

/// Bivariate Gaussian over each future step, per agent. Displacements are in meters relative to
/// the last observed position (cumulative).
struct PredictionOutput {
  std::size_t agents = 0;
  std::size_t steps = 0;
  // row-major [agent][step]
  std::vector<double> mu_x, mu_y, sigma_x, sigma_y, rho;
};

/// Tape-level forward pass of one scene.
struct StudentForward {
  diff::Var enc_hidden;    // n x enc_hidden
  diff::Var social;        // n x (cells_out * channels)
  diff::Var scene_feature; // 1 x (cells_out * channels)
  // per future step: n x 1 each; means are cumulative offsets from the last observed position
  std::vector<diff::Var> mu_x, mu_y, sigma_x, sigma_y, rho;
};

class StudentNet {
 public:
  /// Parameters named by index in `overrides` use the given nodes instead of the stored values.
  StudentNet(const StudentModel& model, diff::Tape& tape, bool trainable,
             const std::vector<std::pair<std::size_t, diff::Var>>& overrides = {});
  const std::vector<diff::Var>& params() const { return p_; }

  diff::Var encode_history(const Scene& scene) const;
  /// Social tensor per agent and the scene feature (mean over agents).
  std::pair<diff::Var, diff::Var> social_pool(const diff::Var& hidden, const Scene& scene) const;
  /// Mixture head outputs: weights 1 x M_P, means M_P x d_z, variances M_P x d_z.
  struct Head {
    diff::Var weights, means, vars;
  };
  Head cpm_head(const diff::Var& scene_feature) const;
  StudentForward forward(const Scene& scene) const;

 private:
  diff::Var p(const char* name) const;
  const StudentModel& model_;
  diff::Tape& tape_;
  std::vector<diff::Var> p_;
};

/// Scaled per-step displacements of the observed history, n x t_h x 2 flattened per step.
std::vector<diff::Tensor> history_inputs(const Scene& scene, double disp_scale);

/// Occupancy operator: entry (cell * n + ego, neighbor) = 1 when the neighbor falls in that
/// ego-centred, heading-aligned grid cell at the last observed frame.
diff::Tensor grid_occupancy(const Scene& scene, const StudentConfig& cfg);

/// Mean over agents of the summed per-step bivariate negative log densities.
diff::Var nll_loss_L2(const StudentForward& f, const Scene& scene);

/// Closed-form bivariate NLL of one step (used by tests and metrics).
double bivariate_nll(double dx, double dy, double sx, double sy, double rho);

/// Differentiable L1 for fixed coupling: sum_ij alpha_ij KL(p_j || q_i) + KL(alpha || beta) with
/// alpha_ij = omega_j * a_ij. `a` (column-conditionals) and `beta` are constants.
diff::Var cpm_bound(const StudentNet::Head& head, const GaussianMixture& q, const CouplingMatrix& a,
                    const CouplingMatrix& beta);

GaussianMixture head_mixture(const StudentNet::Head& head);

/// The scene's teacher mixture Q(o): Q's components with weights lambda(o).
GaussianMixture scene_teacher_mixture(const TeacherModel& teacher, const Scene& scene);

/// k closed-form alpha/beta updates from the independence coupling.
VariationalCoupling inner_coupling(const GaussianMixture& p, const GaussianMixture& q, int k);

struct StudentEpochLog {
  int epoch = 0;
  double l2 = 0.0;
  double l1 = 0.0;
  double total = 0.0;
};

struct StudentTrainResult {
  StudentModel model;
  std::vector<StudentEpochLog> log;
};

/// `teacher` may be null only when cfg.use_cpm is false.
StudentTrainResult train_student(const Dataset& ds, const TeacherModel* teacher, const StudentConfig& cfg);

PredictionOutput predict_distribution(const StudentModel& model, const Scene& scene);

/// MAP future positions: n x (t_p - t_h) absolute positions.
std::vector<std::vector<Vec2>> predict(const StudentModel& model, const Scene& scene);

void save_student(const StudentModel& model, const std::filesystem::path& path);
StudentModel load_student(const std::filesystem::path& path);

}  // namespace cftraj

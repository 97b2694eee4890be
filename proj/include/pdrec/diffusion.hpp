#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pdrec/autodiff.hpp"
#include "pdrec/data.hpp"
#include "pdrec/nn.hpp"

namespace pdrec {

// Fixed variance schedule. Steps are 1-based; alpha_bar(0) is 1.
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar_table;

  int steps() const { return static_cast<int>(beta.size()); }
  double beta_at(int t) const { return beta.at(static_cast<std::size_t>(t - 1)); }
  double alpha_at(int t) const { return alpha.at(static_cast<std::size_t>(t - 1)); }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_table.at(static_cast<std::size_t>(t - 1)); }
};

NoiseSchedule linear_schedule(int steps, double beta_start, double beta_end);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Eigen::VectorXd q_sample(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& eps, const NoiseSchedule& sched);

// Applies the one-step kernel x_s = sqrt(1 - beta_s) x_{s-1} + sqrt(beta_s) n_s for s = 1..t.
Eigen::VectorXd q_sample_iterative(const Eigen::VectorXd& x0, int t, const std::vector<Eigen::VectorXd>& noises,
                                   const NoiseSchedule& sched);

// Gaussian posterior mean of x_{t-1} given x_t and a predicted x0.
Eigen::VectorXd p_mean(const Eigen::VectorXd& x0_hat, const Eigen::VectorXd& x_t, int t, const NoiseSchedule& sched);

// Sinusoidal step features, one row per step.
Eigen::MatrixXd step_features(std::span<const int> steps, int dim);

struct DenoiserConfig {
  std::size_t n_items = 0;
  int hidden = 64;
  int emb_dim = 16;
};

// x0-predicting MLP: [x_t, W_e phi(t) + b_e] -> tanh hidden -> |I| outputs.
class DenoiserModel {
 public:
  DenoiserModel(DenoiserConfig config, NoiseSchedule schedule, std::uint64_t init_seed);

  const DenoiserConfig& config() const { return config_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }
  void zero_output_layer();

  // Rows of x_t are independent samples, `steps` holds each row's t.
  ad::Var forward(ad::Tape& tape, ad::Var x_t, std::span<const int> steps);
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x_t, std::span<const int> steps) const;
  Eigen::VectorXd predict(const Eigen::VectorXd& x_t, int t) const;

  Checkpoint to_checkpoint() const;
  static DenoiserModel from_checkpoint(const Checkpoint& ckpt);

 private:
  DenoiserConfig config_;
  NoiseSchedule schedule_;
  ParamSet params_;
  bool trained_ = false;
};

using X0Predictor = std::function<Eigen::VectorXd(const Eigen::VectorXd& x_t, int t)>;

// Mean-only reverse chain of `steps` steps that treats `start` as x_steps.
Eigen::VectorXd reverse_chain(const X0Predictor& predict, const Eigen::VectorXd& start, int steps,
                              const NoiseSchedule& sched);

struct PreferenceVector {
  UserId owner = 0;
  Eigen::VectorXd values;
  std::string model_hash;
  int infer_steps = 0;
};

PreferenceVector reverse_infer(const DenoiserModel& model, const InteractionVector& seed, int infer_steps,
                               const std::string& model_hash = {});

struct DiffusionTrainConfig {
  int steps = 20;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int hidden = 64;
  int emb_dim = 16;
  double lr = 5e-3;
  int epochs = 100;
  int batch_size = 64;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct DiffusionTrainResult {
  DenoiserModel model;
  std::vector<double> epoch_loss;
  double initial_holdout_loss = 0.0;
  double final_holdout_loss = 0.0;
};

// Mean over rows of ||denoiser(x_t, t) - x0||^2.
ad::Var diffusion_loss(ad::Tape& tape, DenoiserModel& model, const Eigen::MatrixXd& x0, std::span<const int> steps,
                       const Eigen::MatrixXd& eps);

DiffusionTrainResult train_diffusion(const std::vector<InteractionVector>& data, const DiffusionTrainConfig& config);

std::string model_hash(const DenoiserModel& model);
void save_denoiser(const std::filesystem::path& path, const DenoiserModel& model);
DenoiserModel load_denoiser(const std::filesystem::path& path);

}  // namespace pdrec

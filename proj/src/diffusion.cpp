#include "pdrec/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pdrec/error.hpp"

namespace pdrec {

NoiseSchedule linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw Error("linear_schedule: need at least one step");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw Error("linear_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  double bar = 1.0;
  for (int t = 0; t < steps; ++t) {
    const double b = steps == 1 ? beta_start
                                : beta_start + (beta_end - beta_start) * static_cast<double>(t) / (steps - 1);
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    bar *= 1.0 - b;
    s.alpha_bar_table.push_back(bar);
  }
  return s;
}

namespace {

void check_step(int t, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.steps())
    throw Error("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(sched.steps()) + "]");
}

}  // namespace

Eigen::VectorXd q_sample(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& eps, const NoiseSchedule& sched) {
  check_step(t, sched);
  if (x0.size() != eps.size()) throw Error("q_sample: noise and x0 differ in length");
  const double ab = sched.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Eigen::VectorXd q_sample_iterative(const Eigen::VectorXd& x0, int t, const std::vector<Eigen::VectorXd>& noises,
                                   const NoiseSchedule& sched) {
  check_step(t, sched);
  if (noises.size() != static_cast<std::size_t>(t)) throw Error("q_sample_iterative: need one noise vector per step");
  Eigen::VectorXd x = x0;
  for (int s = 1; s <= t; ++s) {
    const auto& n = noises[static_cast<std::size_t>(s - 1)];
    if (n.size() != x0.size()) throw Error("q_sample_iterative: noise and x0 differ in length");
    x = std::sqrt(1.0 - sched.beta_at(s)) * x + std::sqrt(sched.beta_at(s)) * n;
  }
  return x;
}

Eigen::VectorXd p_mean(const Eigen::VectorXd& x0_hat, const Eigen::VectorXd& x_t, int t, const NoiseSchedule& sched) {
  check_step(t, sched);
  if (x0_hat.size() != x_t.size()) throw Error("p_mean: length mismatch");
  const double ab_t = sched.alpha_bar(t), ab_prev = sched.alpha_bar(t - 1);
  const double c0 = std::sqrt(ab_prev) * sched.beta_at(t) / (1.0 - ab_t);
  const double ct = std::sqrt(sched.alpha_at(t)) * (1.0 - ab_prev) / (1.0 - ab_t);
  return c0 * x0_hat + ct * x_t;
}

Eigen::MatrixXd step_features(std::span<const int> steps, int dim) {
  Eigen::MatrixXd f(static_cast<Eigen::Index>(steps.size()), dim);
  const int half = dim / 2;
  for (std::size_t r = 0; r < steps.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / std::max(half, 1));
      f(row, k) = std::cos(steps[r] * freq);
      f(row, half + k) = std::sin(steps[r] * freq);
    }
    if (dim % 2 == 1) f(row, dim - 1) = 0.0;
  }
  return f;
}

DenoiserModel::DenoiserModel(DenoiserConfig config, NoiseSchedule schedule, std::uint64_t init_seed)
    : config_(config), schedule_(std::move(schedule)) {
  if (config_.n_items == 0 || config_.hidden < 1 || config_.emb_dim < 1) throw Error("denoiser: bad dimensions");
  Rng rng(derive_seed(init_seed, {stream_tag("denoiser-init")}));
  const auto n = static_cast<Eigen::Index>(config_.n_items);
  const Eigen::Index h = config_.hidden, e = config_.emb_dim;
  auto xavier = [&](Eigen::Index in, Eigen::Index out) {
    return gaussian_matrix(in, out, std::sqrt(2.0 / static_cast<double>(in + out)), rng);
  };
  params_.add("emb_w", xavier(e, e));
  params_.add("emb_b", ad::Matrix::Zero(1, e));
  // The input layer acts on [x_t, emb] jointly, so both halves share its fan.
  const double in_std = std::sqrt(2.0 / static_cast<double>(n + e + h));
  params_.add("in_x", gaussian_matrix(n, h, in_std, rng));
  params_.add("in_e", gaussian_matrix(e, h, in_std, rng));
  params_.add("in_b", ad::Matrix::Zero(1, h));
  params_.add("out_w", xavier(h, n));
  params_.add("out_b", ad::Matrix::Zero(1, n));
  params_.round_to_f32();
}

void DenoiserModel::zero_output_layer() {
  params_.at("out_w").value.setZero();
  params_.at("out_b").value.setZero();
}

ad::Var DenoiserModel::forward(ad::Tape& tape, ad::Var x_t, std::span<const int> steps) {
  if (x_t.cols() != static_cast<Eigen::Index>(config_.n_items) || x_t.rows() != static_cast<Eigen::Index>(steps.size()))
    throw Error("denoiser input has the wrong shape");
  for (int t : steps) check_step(t, schedule_);
  auto p = [&](const char* name) { return tape.param(params_.at(name)); };
  ad::Var phi = tape.constant(step_features(steps, config_.emb_dim));
  ad::Var emb = ad::add_row(ad::matmul(phi, p("emb_w")), p("emb_b"));
  ad::Var pre = ad::add(ad::matmul(x_t, p("in_x")), ad::matmul(emb, p("in_e")));
  ad::Var hidden = ad::tanh(ad::add_row(pre, p("in_b")));
  return ad::add_row(ad::matmul(hidden, p("out_w")), p("out_b"));
}

Eigen::MatrixXd DenoiserModel::predict(const Eigen::MatrixXd& x_t, std::span<const int> steps) const {
  ad::Tape tape(false);
  // Inference tapes never write to params.
  auto& self = const_cast<DenoiserModel&>(*this);
  return self.forward(tape, tape.constant(x_t), steps).value();
}

Eigen::VectorXd DenoiserModel::predict(const Eigen::VectorXd& x_t, int t) const {
  const int steps[1] = {t};
  return predict(Eigen::MatrixXd(x_t.transpose()), steps).row(0).transpose();
}

Checkpoint DenoiserModel::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.header = {{"kind", "denoiser"},
                 {"n_items", config_.n_items},
                 {"hidden", config_.hidden},
                 {"emb_dim", config_.emb_dim},
                 {"trained", trained_},
                 {"beta", schedule_.beta}};
  ckpt.tensors = params_.to_tensors();
  return ckpt;
}

DenoiserModel DenoiserModel::from_checkpoint(const Checkpoint& ckpt) {
  const auto& h = ckpt.header;
  if (h.value("kind", "") != "denoiser") throw Error("checkpoint is not a denoiser");
  NoiseSchedule sched;
  double bar = 1.0;
  for (double b : h.at("beta").get<std::vector<double>>()) {
    sched.beta.push_back(b);
    sched.alpha.push_back(1.0 - b);
    bar *= 1.0 - b;
    sched.alpha_bar_table.push_back(bar);
  }
  DenoiserConfig cfg{h.at("n_items").get<std::size_t>(), h.at("hidden").get<int>(), h.at("emb_dim").get<int>()};
  DenoiserModel model(cfg, std::move(sched), 0);
  model.params_.load_tensors(ckpt);
  model.trained_ = h.at("trained").get<bool>();
  return model;
}

Eigen::VectorXd reverse_chain(const X0Predictor& predict, const Eigen::VectorXd& start, int steps,
                              const NoiseSchedule& sched) {
  if (steps < 0 || steps > sched.steps()) throw Error("reverse chain length outside [0, T]");
  Eigen::VectorXd x = start;
  for (int t = steps; t >= 1; --t) x = p_mean(predict(x, t), x, t, sched);
  return x;
}

PreferenceVector reverse_infer(const DenoiserModel& model, const InteractionVector& seed, int infer_steps,
                               const std::string& model_hash) {
  if (!model.trained()) throw Error("reverse_infer: denoiser has not been trained");
  if (seed.values.size() != model.config().n_items) throw Error("reverse_infer: seed vector length mismatch");
  const Eigen::VectorXd start = Eigen::Map<const Eigen::VectorXd>(seed.values.data(),
                                                                  static_cast<Eigen::Index>(seed.values.size()));
  auto predict = [&model](const Eigen::VectorXd& x, int t) { return model.predict(x, t); };
  return {seed.owner, reverse_chain(predict, start, infer_steps, model.schedule()), model_hash, infer_steps};
}

ad::Var diffusion_loss(ad::Tape& tape, DenoiserModel& model, const Eigen::MatrixXd& x0, std::span<const int> steps,
                       const Eigen::MatrixXd& eps) {
  Eigen::MatrixXd x_t(x0.rows(), x0.cols());
  for (Eigen::Index r = 0; r < x0.rows(); ++r) {
    const double ab = model.schedule().alpha_bar(steps[static_cast<std::size_t>(r)]);
    x_t.row(r) = std::sqrt(ab) * x0.row(r) + std::sqrt(1.0 - ab) * eps.row(r);
  }
  ad::Var pred = model.forward(tape, tape.constant(std::move(x_t)), steps);
  return ad::scale(ad::squared_error(pred, x0), 1.0 / static_cast<double>(x0.rows()));
}

namespace {

struct NoisyBatch {
  Eigen::MatrixXd x0;
  std::vector<int> steps;
  Eigen::MatrixXd eps;
};

NoisyBatch draw_batch(const std::vector<InteractionVector>& data, std::span<const std::size_t> rows, int T, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(data.front().values.size());
  NoisyBatch b{Eigen::MatrixXd(static_cast<Eigen::Index>(rows.size()), n), {},
               Eigen::MatrixXd(static_cast<Eigen::Index>(rows.size()), n)};
  Gaussian gauss;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& v = data[rows[k]].values;
    const auto r = static_cast<Eigen::Index>(k);
    for (Eigen::Index i = 0; i < n; ++i) b.x0(r, i) = v[static_cast<std::size_t>(i)];
    b.steps.push_back(1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(T))));
    for (Eigen::Index i = 0; i < n; ++i) b.eps(r, i) = gauss(rng);
  }
  return b;
}

double batch_loss(DenoiserModel& model, const NoisyBatch& b) {
  ad::Tape tape(false);
  return diffusion_loss(tape, model, b.x0, b.steps, b.eps).scalar();
}

}  // namespace

DiffusionTrainResult train_diffusion(const std::vector<InteractionVector>& data, const DiffusionTrainConfig& config) {
  if (data.empty()) throw Error("train_diffusion: empty dataset");
  const std::size_t n_items = data.front().values.size();
  for (const auto& v : data)
    if (v.values.size() != n_items) throw Error("train_diffusion: interaction vectors differ in length");
  if (config.epochs < 0 || config.batch_size < 1) throw Error("train_diffusion: bad epochs/batch size");
  if (config.holdout_fraction < 0.0 || config.holdout_fraction >= 1.0)
    throw Error("train_diffusion: holdout_fraction must be in [0, 1)");

  DiffusionTrainResult result{
      DenoiserModel({n_items, config.hidden, config.emb_dim},
                    linear_schedule(config.steps, config.beta_start, config.beta_end), config.seed),
      {}, 0.0, 0.0};
  DenoiserModel& model = result.model;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(config.seed, {stream_tag("diffusion-holdout-split")}));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(split_rng, i)]);
  const auto n_holdout = static_cast<std::size_t>(config.holdout_fraction * static_cast<double>(data.size()));
  std::vector<std::size_t> holdout(order.end() - static_cast<std::ptrdiff_t>(n_holdout), order.end());
  std::vector<std::size_t> train(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_holdout));
  if (train.empty()) throw Error("train_diffusion: holdout leaves no training data");
  std::sort(train.begin(), train.end());
  if (holdout.empty()) holdout = train;

  Rng holdout_rng(derive_seed(config.seed, {stream_tag("diffusion-holdout-noise")}));
  const NoisyBatch holdout_batch = draw_batch(data, holdout, config.steps, holdout_rng);
  result.initial_holdout_loss = batch_loss(model, holdout_batch);

  Adam adam(model.params(), {.lr = config.lr});
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, {stream_tag("diffusion-epoch"), static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = train.size(); i > 1; --i) std::swap(train[i - 1], train[uniform_index(rng, i)]);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(train.size(), start + static_cast<std::size_t>(config.batch_size));
      const NoisyBatch b = draw_batch(data, std::span(train).subspan(start, end - start), config.steps, rng);
      model.params().zero_grad();
      ad::Tape tape;
      ad::Var loss = diffusion_loss(tape, model, b.x0, b.steps, b.eps);
      if (!std::isfinite(loss.scalar()))
        throw Error("train_diffusion: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(batches));
      tape.backward(loss);
      adam.step(model.params());
      if (!model.params().all_finite())
        throw Error("train_diffusion: parameters became non-finite at epoch " + std::to_string(epoch));
      epoch_loss += loss.scalar();
      ++batches;
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(batches, 1)));
  }

  model.params().round_to_f32();
  model.mark_trained();
  result.final_holdout_loss = batch_loss(model, holdout_batch);
  return result;
}

std::string model_hash(const DenoiserModel& model) {
  const std::string bytes = encode_checkpoint(model.to_checkpoint());
  return fnv1a_hex(bytes.data(), bytes.size());
}

void save_denoiser(const std::filesystem::path& path, const DenoiserModel& model) {
  save_checkpoint(path, model.to_checkpoint());
}

DenoiserModel load_denoiser(const std::filesystem::path& path) {
  return DenoiserModel::from_checkpoint(load_checkpoint(path));
}

}  // namespace pdrec

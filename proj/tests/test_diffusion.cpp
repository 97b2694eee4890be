#include <cmath>

#include "doctest.h"
#include "pdrec/diffusion.hpp"
#include "pdrec/error.hpp"
#include "pdrec/synthetic.hpp"
#include "support.hpp"

using namespace pdrec;

namespace {

Eigen::VectorXd gaussian_vector(Rng& rng, Gaussian& g, Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

DiffusionTrainConfig tiny_config() {
  DiffusionTrainConfig c;
  c.hidden = 8;
  c.emb_dim = 4;
  c.epochs = 5;
  c.batch_size = 8;
  c.seed = 3;
  return c;
}

std::vector<InteractionVector> random_vectors(Rng& rng, std::size_t users, std::size_t items) {
  std::vector<InteractionVector> out;
  for (UserId u = 0; u < users; ++u) {
    InteractionVector v{u, std::vector<double>(items, 0.0)};
    for (int k = 0; k < 3; ++k) v.values[uniform_index(rng, items)] = 0.1 + 0.9 * uniform01(rng);
    out.push_back(v);
  }
  return out;
}

}  // namespace

TEST_SUITE("diffusion") {

TEST_CASE("single-step schedule") {
  const auto s = linear_schedule(1, 0.1, 0.1);
  CHECK(s.beta == std::vector<double>{0.1});
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9));
  CHECK(s.alpha_bar(0) == 1.0);
}

TEST_CASE("two-step schedule multiplies alphas") {
  const auto s = linear_schedule(2, 0.1, 0.3);
  CHECK(s.beta[1] == doctest::Approx(0.3));
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9));
  CHECK(s.alpha_bar(2) == doctest::Approx(0.9 * 0.7));
}

TEST_CASE("schedule bounds are enforced") {
  CHECK_THROWS_AS(linear_schedule(0, 0.1, 0.2), Error);
  CHECK_THROWS_AS(linear_schedule(3, 0.0, 0.2), Error);
  CHECK_THROWS_AS(linear_schedule(3, 0.3, 0.2), Error);
  CHECK_THROWS_AS(linear_schedule(3, 0.1, 1.0), Error);
}

TEST_CASE("property: alpha_bar strictly decreases and betas stay in (0, 1)") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int T = 1 + static_cast<int>(uniform_index(rng, 50));
    const double lo = 1e-5 + 0.2 * uniform01(rng);
    const double hi = lo + (0.99 - lo) * uniform01(rng);
    const auto s = linear_schedule(T, lo, hi);
    CHECK(s.beta.front() == lo);
    if (T > 1) CHECK(s.beta.back() == doctest::Approx(hi).epsilon(1e-12));
    for (int t = 1; t <= T; ++t) {
      CHECK(s.beta_at(t) > 0.0);
      CHECK(s.beta_at(t) < 1.0);
      CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
  }
}

TEST_CASE("q_sample special cases") {
  const auto s = linear_schedule(20, 1e-4, 0.02);
  Eigen::VectorXd x0(3), e(3);
  x0 << 1.0, 0.0, 0.5;
  e << 0.3, -1.0, 2.0;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
  for (int t : {1, 7, 20}) {
    const auto a = q_sample(x0, t, zero, s);
    for (int i = 0; i < 3; ++i) CHECK(a[i] == std::sqrt(s.alpha_bar(t)) * x0[i]);
    // Zero noise keeps the support.
    CHECK(a[1] == 0.0);
    const auto b = q_sample(zero, t, e, s);
    for (int i = 0; i < 3; ++i) CHECK(b[i] == std::sqrt(1.0 - s.alpha_bar(t)) * e[i]);
  }
  CHECK_THROWS_AS(q_sample(x0, 0, e, s), Error);
  CHECK_THROWS_AS(q_sample(x0, 21, e, s), Error);
  CHECK_THROWS_AS(q_sample(x0, 1, Eigen::VectorXd::Zero(2), s), Error);
}

TEST_CASE("iterative kernel agrees with the closed form without noise and at t = 1") {
  const auto s = linear_schedule(20, 1e-4, 0.02);
  Eigen::VectorXd x0(4);
  x0 << 1.0, 0.1, 0.0, 0.7;
  for (int t = 1; t <= 20; ++t) {
    const std::vector<Eigen::VectorXd> zeros(static_cast<std::size_t>(t), Eigen::VectorXd::Zero(4));
    CHECK((q_sample_iterative(x0, t, zeros, s) - q_sample(x0, t, Eigen::VectorXd::Zero(4), s)).cwiseAbs().maxCoeff() <
          1e-15);
  }
  Eigen::VectorXd e(4);
  e << 0.5, -0.5, 1.0, 2.0;
  CHECK((q_sample_iterative(x0, 1, {e}, s) - q_sample(x0, 1, e, s)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(q_sample_iterative(x0, 2, {e}, s), Error);
}

TEST_CASE("iterative kernel matches the closed-form marginal (Monte Carlo)") {
  const auto s = linear_schedule(20, 1e-4, 0.02);
  Rng rng(8);
  Gaussian g;
  const Eigen::Index d = 4;
  Eigen::VectorXd x0 = Eigen::VectorXd::Constant(d, 1.0);
  const int t = 10, n = 10000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  double sq = 0.0;
  for (int k = 0; k < n; ++k) {
    std::vector<Eigen::VectorXd> noises;
    for (int j = 0; j < t; ++j) noises.push_back(gaussian_vector(rng, g, d));
    const Eigen::VectorXd x = q_sample_iterative(x0, t, noises, s);
    sum += x;
    sq += (x - std::sqrt(s.alpha_bar(t)) * x0).squaredNorm();
  }
  const double mean_target = std::sqrt(s.alpha_bar(t));
  for (Eigen::Index i = 0; i < d; ++i) CHECK(std::abs(sum[i] / n - mean_target) / mean_target < 0.02);
  const double var = sq / (static_cast<double>(n) * d);
  CHECK(std::abs(var - (1.0 - s.alpha_bar(t))) / (1.0 - s.alpha_bar(t)) < 0.02);
}

TEST_CASE("p_mean at t = 1 returns the prediction") {
  const auto s = linear_schedule(5, 0.01, 0.05);
  Eigen::VectorXd xh(2), xt(2);
  xh << 0.3, -0.2;
  xt << 5.0, 7.0;
  CHECK((p_mean(xh, xt, 1, s) - xh).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("p_mean with a perfect denoiser and noiseless input") {
  const auto s = linear_schedule(20, 1e-4, 0.02);
  Eigen::VectorXd x0(3);
  x0 << 1.0, 0.25, 0.0;
  for (int t = 1; t <= 20; ++t) {
    const Eigen::VectorXd xt = q_sample(x0, t, Eigen::VectorXd::Zero(3), s);
    // Substituting x_hat = x0 and x_t = sqrt(abar_t) x0 into the posterior
    // mean gives sqrt(abar_{t-1}) x0.
    const Eigen::VectorXd expect = std::sqrt(s.alpha_bar(t - 1)) * x0;
    CHECK((p_mean(x0, xt, t, s) - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("property: p_mean is linear in its inputs") {
  const auto s = linear_schedule(20, 1e-4, 0.02);
  Rng rng(12);
  Gaussian g;
  for (int trial = 0; trial < 50; ++trial) {
    const int t = 1 + static_cast<int>(uniform_index(rng, 20));
    const auto a1 = gaussian_vector(rng, g, 5), a2 = gaussian_vector(rng, g, 5);
    const auto b1 = gaussian_vector(rng, g, 5), b2 = gaussian_vector(rng, g, 5);
    const double c = g(rng);
    const Eigen::VectorXd lhs = p_mean(a1 + c * a2, b1 + c * b2, t, s);
    const Eigen::VectorXd rhs = p_mean(a1, b1, t, s) + c * p_mean(a2, b2, t, s);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("identity denoiser is a fixed point of one reverse step") {
  const auto s = linear_schedule(20, 1e-4, 0.02);
  Eigen::VectorXd x(3);
  x << 0.1, 0.9, 0.0;
  auto identity = [](const Eigen::VectorXd& v, int) { return v; };
  CHECK((reverse_chain(identity, x, 1, s) - x).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(reverse_chain(identity, x, 0, s) == x);
  CHECK_THROWS_AS(reverse_chain(identity, x, 21, s), Error);
}

TEST_CASE("zeroed output layer predicts zeros, deterministically") {
  DenoiserModel m({6, 8, 4}, linear_schedule(20, 1e-4, 0.02), 1);
  Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(6, 0.0, 1.0);
  const auto before = m.predict(x, 3);
  CHECK(before == m.predict(x, 3));
  m.zero_output_layer();
  CHECK(m.predict(x, 3) == Eigen::VectorXd::Zero(6));
}

TEST_CASE("diffusion loss gradients match finite differences") {
  DenoiserModel m({6, 5, 4}, linear_schedule(20, 1e-4, 0.02), 2);
  REQUIRE(m.params().parameter_count() <= 1000);
  Rng rng(5);
  Gaussian g;
  Eigen::MatrixXd x0(3, 6), eps(3, 6);
  for (Eigen::Index k = 0; k < x0.size(); ++k) {
    x0.data()[k] = uniform01(rng);
    eps.data()[k] = g(rng);
  }
  const std::vector<int> steps{1, 10, 20};
  const double err = testing::max_gradient_error(
      m.params(), [&](ad::Tape& tape) { return diffusion_loss(tape, m, x0, steps, eps); });
  CHECK(err < 1e-4);
}

TEST_CASE("reverse_infer requires a trained model") {
  DenoiserModel m({4, 4, 4}, linear_schedule(5, 0.01, 0.05), 1);
  InteractionVector v{0, {1, 0, 0, 0}};
  CHECK_THROWS_AS(reverse_infer(m, v, 5), Error);
  m.mark_trained();
  CHECK(reverse_infer(m, v, 0).values == Eigen::Vector4d(1, 0, 0, 0));
  const auto a = reverse_infer(m, v, 5), b = reverse_infer(m, v, 5);
  CHECK(a.values == b.values);
  CHECK(a.values.allFinite());
  CHECK_THROWS_AS(reverse_infer(m, v, 6), Error);
}

TEST_CASE("training with zero learning rate leaves parameters unchanged") {
  Rng rng(4);
  const auto data = random_vectors(rng, 20, 10);
  auto c = tiny_config();
  c.epochs = 0;
  const auto initial = train_diffusion(data, c);
  c.epochs = 3;
  c.lr = 0.0;
  const auto frozen = train_diffusion(data, c);
  for (std::size_t k = 0; k < initial.model.params().all().size(); ++k)
    CHECK(initial.model.params().all()[k].value == frozen.model.params().all()[k].value);
}

TEST_CASE("training is seed-deterministic and lowers the holdout loss") {
  Rng rng(6);
  const auto data = random_vectors(rng, 60, 12);
  auto c = tiny_config();
  c.epochs = 40;
  const auto a = train_diffusion(data, c);
  const auto b = train_diffusion(data, c);
  CHECK(encode_checkpoint(a.model.to_checkpoint()) == encode_checkpoint(b.model.to_checkpoint()));
  CHECK(a.epoch_loss == b.epoch_loss);
  CHECK(a.final_holdout_loss < a.initial_holdout_loss);
  CHECK(a.model.trained());
}

TEST_CASE("overfitting a single vector cuts the t = 1 reconstruction error") {
  std::vector<InteractionVector> data(16, InteractionVector{0, {0.1, 0.0, 1.0, 0.0, 0.55, 0.0}});
  auto c = tiny_config();
  c.batch_size = 16;
  c.holdout_fraction = 0.0;
  c.epochs = 0;
  const auto before = train_diffusion(data, c);
  c.epochs = 500;
  const auto after = train_diffusion(data, c);

  const Eigen::VectorXd x0 = Eigen::Map<const Eigen::VectorXd>(data[0].values.data(), 6);
  Rng rng(10);
  Gaussian g;
  double mse_before = 0.0, mse_after = 0.0;
  for (int k = 0; k < 20; ++k) {
    const Eigen::VectorXd xt = q_sample(x0, 1, gaussian_vector(rng, g, 6), before.model.schedule());
    mse_before += (before.model.predict(xt, 1) - x0).squaredNorm();
    mse_after += (after.model.predict(xt, 1) - x0).squaredNorm();
  }
  CHECK(mse_after < 0.1 * mse_before);
}

TEST_CASE("checkpoint round-trip reproduces predictions") {
  Rng rng(7);
  const auto data = random_vectors(rng, 20, 8);
  const auto trained = train_diffusion(data, tiny_config()).model;
  const auto dir = testing::scratch_dir("denoiser");
  save_denoiser(dir / "m.ckpt", trained);
  const auto loaded = load_denoiser(dir / "m.ckpt");
  CHECK(loaded.trained());
  Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(8, 0.0, 1.0);
  CHECK(loaded.predict(x, 4) == trained.predict(x, 4));
  CHECK(model_hash(loaded) == model_hash(trained));
  CHECK(model_hash(loaded) == file_hash(dir / "m.ckpt"));
}

TEST_CASE("in-cluster unobserved items outscore out-of-cluster items") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    PlantedConfig pc;
    pc.n_users = 80;
    pc.n_items = 20;
    pc.n_clusters = 4;
    pc.min_len = 3;
    pc.max_len = 4;
    pc.switch_lo = pc.switch_hi = 2.0;  // no drift
    pc.noise_prob = 0.0;
    pc.seed = seed;
    const auto planted = generate_planted(pc);
    const auto seqs = build_sequences(planted.log);
    std::vector<InteractionVector> data;
    for (const auto& s : seqs) data.push_back(to_interaction_vector(s, time_interval_weights(s, 0.1, 1.0), 20));

    DiffusionTrainConfig c;
    c.hidden = 16;
    c.emb_dim = 8;
    c.epochs = 60;
    c.batch_size = 16;
    c.seed = seed;
    const auto model = train_diffusion(data, c).model;

    double in_sum = 0.0, out_sum = 0.0;
    std::size_t in_n = 0, out_n = 0;
    for (const auto& v : data) {
      const auto pref = reverse_infer(model, v, 20);
      const std::size_t cluster = planted.final_cluster[v.owner];
      for (std::size_t i = 0; i < 20; ++i) {
        if (v.values[i] != 0.0) continue;
        if (planted.item_cluster[i] == cluster) {
          in_sum += pref.values[static_cast<Eigen::Index>(i)];
          ++in_n;
        } else {
          out_sum += pref.values[static_cast<Eigen::Index>(i)];
          ++out_n;
        }
      }
    }
    CHECK(in_sum / in_n > out_sum / out_n);
  }
}

}  // TEST_SUITE

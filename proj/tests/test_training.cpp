#include <cmath>
#include <sstream>

#include "doctest.h"
#include "pdrec/error.hpp"
#include "pdrec/synthetic.hpp"
#include "pdrec/training.hpp"
#include "support.hpp"

using namespace pdrec;

namespace {

struct Fixture {
  SplitDataset split;
  PreferenceCache cache;
  EncoderConfig enc;
  TrainConfig cfg;
  EvalProtocol valid;

  explicit Fixture(std::uint64_t seed = 1, std::size_t n_items = 40) {
    PlantedConfig pc;
    pc.n_users = 30;
    pc.n_items = n_items;
    pc.n_clusters = 4;
    pc.min_len = 5;
    pc.max_len = 9;
    pc.seed = seed;
    const auto log = generate_planted(pc).log;
    split = leave_one_out_split(build_sequences(log), log.n_users, log.n_items);
    cache = PreferenceCache(log.n_users, log.n_items);
    Rng rng(seed + 100);
    for (std::size_t u = 0; u < log.n_users; ++u) {
      Eigen::VectorXd row(static_cast<Eigen::Index>(log.n_items));
      for (Eigen::Index i = 0; i < row.size(); ++i) row[i] = uniform01(rng);
      cache.set_row(u, row);
    }
    enc.arch = Architecture::kSelfAttentive;
    enc.n_items = log.n_items;
    enc.dim = 8;
    enc.max_len = 10;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.m = 10;
    cfg.n = 3;
    cfg.seed = seed;
    valid.n_negatives = 20;
    valid.seed = seed;
  }

  std::vector<UserId> users() const {
    std::vector<UserId> u;
    for (const auto& s : split.train) u.push_back(s.user);
    return u;
  }
};

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST_SUITE("training") {

TEST_CASE("plugin flag parsing") {
  CHECK(PluginFlags::parse("none") == PluginFlags{});
  CHECK(PluginFlags::parse("all") == PluginFlags{true, true, true});
  CHECK(PluginFlags::parse("nns,hbr") == PluginFlags{true, false, true});
  CHECK(PluginFlags::parse("nns,hbr").to_string() == "hbr,nns");
  CHECK(PluginFlags{}.to_string() == "none");
  CHECK_THROWS_AS(PluginFlags::parse("hbr,xyz"), ConfigError);
}

TEST_CASE("recommendation loss examples") {
  const std::vector<double> z{0.0}, y{1.0};
  CHECK(weighted_bce_loss(z, y, std::vector<double>{1.0}) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(weighted_bce_loss(z, y, std::vector<double>{2.0}) == doctest::Approx(1.386294).epsilon(1e-6));
  CHECK_THROWS_AS(weighted_bce_loss(z, y, std::vector<double>{}), Error);
  // Extreme logits stay finite.
  CHECK(std::isfinite(weighted_bce_loss(std::vector<double>{-800.0}, y, std::vector<double>{1.0})));
}

TEST_CASE("distillation and total loss examples") {
  CHECK(distill_loss({}) == 0.0);
  CHECK(distill_loss(std::vector<double>{0.0}) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(total_loss(3.0, 5.0, 0.0) == 3.0);
  CHECK(total_loss(1.0, 2.0, 0.3) == doctest::Approx(1.6));
}

TEST_CASE("property: losses equal naive per-term sums") {
  Rng rng(89);
  Gaussian g;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 20);
    std::vector<double> z(n), y(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      z[i] = 3.0 * g(rng);
      y[i] = static_cast<double>(uniform_index(rng, 2));
      w[i] = 0.1 + 3.0 * uniform01(rng);
    }
    double naive = 0.0, naive_d = 0.0, unweighted = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(z[i]);
      naive -= w[i] * y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
      unweighted -= y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
      naive_d -= std::log(p);
    }
    CHECK(std::abs(weighted_bce_loss(z, y, w) - naive) < 1e-10);
    CHECK(std::abs(distill_loss(z) - naive_d) < 1e-10);
    CHECK(std::abs(weighted_bce_loss(z, y, std::vector<double>(n, 1.0)) - unweighted) < 1e-10);
  }
}

TEST_CASE("unit weights reproduce unweighted BCE exactly") {
  const std::vector<double> z{0.3, -1.2, 2.0}, y{1, 0, 1};
  const double unweighted = ad::softplus(-0.3) + ad::softplus(-1.2) + ad::softplus(-2.0);
  CHECK(weighted_bce_loss(z, y, std::vector<double>{1, 1, 1}) == unweighted);
}

TEST_CASE("missing cache rows are reported by user") {
  Fixture f;
  PreferenceCache small(5, f.split.n_items);
  f.cfg.flags = PluginFlags::parse("hbr");
  try {
    PluginContext ctx(f.split, small, f.cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("no row for user 5") != std::string::npos);
  }
  PreferenceCache wrong(30, 3);
  CHECK_THROWS_AS(PluginContext(f.split, wrong, f.cfg), Error);
}

TEST_CASE("flags off: batches do not depend on the cache") {
  Fixture f;
  const Encoder enc(f.enc, 1);
  const PluginContext ctx(f.split, f.cache, f.cfg);
  const auto users = f.users();
  const auto with = build_batch(f.split, &ctx, enc, f.cfg, users, 42);
  const auto without = build_batch(f.split, nullptr, enc, f.cfg, users, 42);
  REQUIRE(with.examples.size() == without.examples.size());
  for (std::size_t k = 0; k < with.examples.size(); ++k) {
    const auto& a = with.examples[k];
    const auto& b = without.examples[k];
    CHECK(a.targets == b.targets);
    CHECK(a.uniform_negatives == b.uniform_negatives);
    CHECK(a.target_weights == std::vector<double>(a.targets.size(), 1.0));
    CHECK(a.soft_positives.empty());
    for (const auto& n : a.nns_negatives) CHECK(n.empty());
  }
}

TEST_CASE("plugins add to the vanilla batch without perturbing it") {
  Fixture f;
  const Encoder enc(f.enc, 1);
  const auto users = f.users();
  const auto vanilla = build_batch(f.split, nullptr, enc, f.cfg, users, 42);
  f.cfg.flags = PluginFlags::parse("all");
  const PluginContext ctx(f.split, f.cache, f.cfg);
  const auto full = build_batch(f.split, &ctx, enc, f.cfg, users, 42);
  for (std::size_t k = 0; k < full.examples.size(); ++k) {
    CHECK(full.examples[k].inputs == vanilla.examples[k].inputs);
    CHECK(full.examples[k].uniform_negatives == vanilla.examples[k].uniform_negatives);
  }
}

TEST_CASE("batch contents agree with the plugin operations") {
  Fixture f;
  f.cfg.flags = PluginFlags::parse("all");
  f.cfg.n_uniform = 2;
  f.cfg.n_nns = 3;
  const Encoder enc(f.enc, 1);
  const PluginContext ctx(f.split, f.cache, f.cfg);
  std::ostringstream audit;
  const auto batch = build_batch(f.split, &ctx, enc, f.cfg, f.users(), 7, &audit);
  CHECK_FALSE(audit.str().empty());
  for (const auto& ex : batch.examples) {
    const auto positives = f.split.train_items(ex.user);
    const auto sp = split_preferences(f.cache.row(ex.user), positives);
    const auto* seq = f.split.train_of(ex.user);
    const auto w = hbr_reweight(sp, seq->size(), f.cfg.hbr);
    const NnsDistribution nns(sp, f.cfg.omega_m);
    const auto tail = nns.eligible();
    for (std::size_t j = 0; j < ex.targets.size(); ++j) {
      CHECK(ex.target_weights[j] == w.weight_of(ex.targets[j]));
      CHECK(ex.target_weights[j] > 0.0);
      CHECK(ex.uniform_negatives[j].size() == 2);
      CHECK(ex.nns_negatives[j].size() == 3);
      for (ItemId i : ex.nns_negatives[j]) CHECK(std::find(tail.begin(), tail.end(), i) != tail.end());
      for (ItemId i : ex.uniform_negatives[j]) CHECK_FALSE(std::binary_search(positives.begin(), positives.end(), i));
    }
    const Eigen::VectorXd h = enc.encode(seq->items);
    const auto cands = dpa_candidates(sp, static_cast<std::size_t>(f.cfg.m));
    CHECK(ex.soft_positives ==
          dpa_select(std::span<const double>(h.data(), static_cast<std::size_t>(h.size())), cands,
                     enc.item_embeddings(), static_cast<std::size_t>(f.cfg.n))
              .items);
    for (ItemId i : ex.soft_positives) CHECK_FALSE(std::binary_search(positives.begin(), positives.end(), i));
  }
}

TEST_CASE("property: sampled items never hit training positives (small corpora)") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Fixture f(seed, 12);
    f.cfg.flags = PluginFlags::parse("all");
    f.cfg.n_uniform = 3;
    f.cfg.n_nns = 3;
    f.cfg.m = 4;
    f.cfg.n = 4;
    const Encoder enc(f.enc, seed);
    const PluginContext ctx(f.split, f.cache, f.cfg);
    for (std::uint64_t epoch = 0; epoch < 5; ++epoch) {
      for (const auto& ex : build_batch(f.split, &ctx, enc, f.cfg, f.users(), epoch).examples) {
        const auto pos = f.split.train_items(ex.user);
        auto check = [&](ItemId i) { CHECK_FALSE(std::binary_search(pos.begin(), pos.end(), i)); };
        for (const auto& v : ex.uniform_negatives) std::for_each(v.begin(), v.end(), check);
        for (const auto& v : ex.nns_negatives) std::for_each(v.begin(), v.end(), check);
        std::for_each(ex.soft_positives.begin(), ex.soft_positives.end(), check);
      }
    }
  }
}

TEST_CASE("total loss gradients match finite differences and split linearly") {
  Fixture f;
  f.cfg.flags = PluginFlags::parse("all");
  EncoderConfig ec = f.enc;
  ec.dim = 6;
  ec.dropout = 0.0;
  Encoder enc(ec, 3);
  REQUIRE(enc.params().parameter_count() <= 1000);
  const PluginContext ctx(f.split, f.cache, f.cfg);
  const auto users = f.users();
  const auto batch = build_batch(f.split, &ctx, enc, f.cfg, std::span(users).first(3), 5);
  const TrainingExample& ex = batch.examples.front();
  REQUIRE_FALSE(ex.soft_positives.empty());

  const double omega_d = 0.3;
  CHECK(testing::max_gradient_error(
            enc.params(), [&](ad::Tape& t) { return example_loss(t, enc, ex, omega_d, nullptr).total; }) < 1e-4);

  // d(L_R + w L_D) = dL_R + w dL_D.
  auto grads = [&](double wd) {
    enc.params().zero_grad();
    ad::Tape t;
    t.backward(example_loss(t, enc, ex, wd, nullptr).total);
    return enc.params().at("item_emb").grad;
  };
  const Eigen::MatrixXd g_total = grads(omega_d), g_rec = grads(0.0), g_one = grads(1.0);
  CHECK((g_total - (g_rec + omega_d * (g_one - g_rec))).cwiseAbs().maxCoeff() < 1e-10);

  ad::Tape t(false);
  const auto parts = example_loss(t, enc, ex, omega_d, nullptr);
  CHECK(parts.total.scalar() == doctest::Approx(total_loss(parts.recommendation, parts.distill, omega_d)));
}

TEST_CASE("zero learning rate keeps the model and the metrics fixed") {
  Fixture f;
  f.cfg.lr = 0.0;
  f.cfg.patience = 100;
  const auto r = train_recommender(f.split, nullptr, f.enc, f.cfg, f.valid);
  const Encoder init(f.enc, derive_seed(f.cfg.seed, {stream_tag("encoder")}));
  for (std::size_t k = 0; k < init.params().all().size(); ++k)
    CHECK(r.model.params().all()[k].value == init.params().all()[k].value);
  REQUIRE(r.trace.size() == 3);
  CHECK(r.trace[0].valid == r.trace[2].valid);
}

TEST_CASE("training is seed-deterministic; flags off ignores the cache") {
  Fixture f;
  const auto a = train_recommender(f.split, nullptr, f.enc, f.cfg, f.valid);
  const auto b = train_recommender(f.split, &f.cache, f.enc, f.cfg, f.valid);
  CHECK(trace_jsonl(a.trace) == trace_jsonl(b.trace));
  CHECK(encode_checkpoint(a.model.to_checkpoint()) == encode_checkpoint(b.model.to_checkpoint()));
  f.cfg.flags = PluginFlags::parse("all");
  const auto c = train_recommender(f.split, &f.cache, f.enc, f.cfg, f.valid);
  const auto d = train_recommender(f.split, &f.cache, f.enc, f.cfg, f.valid);
  CHECK(trace_jsonl(c.trace) == trace_jsonl(d.trace));
  CHECK_THROWS_AS(train_recommender(f.split, nullptr, f.enc, f.cfg, f.valid), Error);
}

TEST_CASE("trace lines carry epoch, loss and validation metrics") {
  Fixture f;
  const auto r = train_recommender(f.split, nullptr, f.enc, f.cfg, f.valid);
  std::istringstream in(trace_jsonl(r.trace));
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["epoch"] == n++);
    for (const char* k : {"loss", "N@10", "HR@10", "AUC"}) CHECK(j[k].is_number());
  }
  CHECK(n == 3);
  CHECK(r.best_epoch >= 0);
}

TEST_CASE("encoder training lowers the loss on planted data") {
  Fixture f;
  f.cfg.epochs = 15;
  f.cfg.patience = 100;
  const auto r = train_recommender(f.split, nullptr, f.enc, f.cfg, f.valid);
  CHECK(r.trace.back().loss < r.trace.front().loss);
}

}  // TEST_SUITE

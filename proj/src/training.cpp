#include "pdrec/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "pdrec/error.hpp"

namespace pdrec {

PluginFlags PluginFlags::parse(const std::string& text) {
  PluginFlags f;
  if (text == "none" || text.empty()) return f;
  if (text == "all") return {true, true, true};
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "hbr")
      f.hbr = true;
    else if (tok == "dpa")
      f.dpa = true;
    else if (tok == "nns")
      f.nns = true;
    else
      throw ConfigError("unknown plugin flag '" + tok + "' (expected hbr, dpa, nns, all or none)");
  }
  return f;
}

std::string PluginFlags::to_string() const {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += ',';
    s += name;
  };
  add(hbr, "hbr");
  add(dpa, "dpa");
  add(nns, "nns");
  return s.empty() ? "none" : s;
}

double weighted_bce_loss(std::span<const double> logits, std::span<const double> labels,
                         std::span<const double> weights) {
  if (logits.size() != labels.size() || logits.size() != weights.size())
    throw Error("weighted_bce_loss: inputs differ in length");
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    loss += weights[i] * labels[i] * ad::softplus(-logits[i]) + (1.0 - labels[i]) * ad::softplus(logits[i]);
  return loss;
}

double distill_loss(std::span<const double> logits) {
  double loss = 0.0;
  for (double z : logits) loss += ad::softplus(-z);
  return loss;
}

double total_loss(double recommendation_loss, double distill, double omega_d) {
  return recommendation_loss + omega_d * distill;
}

PluginContext::PluginContext(const SplitDataset& split, const PreferenceCache& cache, const TrainConfig& config) {
  if (cache.n_items() != split.n_items)
    throw Error("preference cache covers " + std::to_string(cache.n_items()) + " items, dataset has " +
                std::to_string(split.n_items));
  users_.resize(split.n_users);
  for (const auto& seq : split.train) {
    if (seq.user >= cache.n_users())
      throw Error("preference cache has no row for user " + std::to_string(seq.user));
    const auto prefs = cache.row(seq.user);
    const auto positives = split.train_items(seq.user);
    const SplitPreferences sp = split_preferences(prefs, positives);
    UserPluginState state;
    if (config.flags.hbr) state.weights = hbr_reweight(sp, seq.size(), config.hbr);
    if (config.flags.nns && !sp.unobserved.empty()) state.nns.emplace(sp, config.omega_m);
    if (config.flags.dpa) state.candidates = dpa_candidates(sp, static_cast<std::size_t>(config.m));
    users_[seq.user] = std::move(state);
  }
}

const UserPluginState& PluginContext::user(UserId user) const {
  if (user >= users_.size() || !users_[user]) throw Error("no preference cache row for user " + std::to_string(user));
  return *users_[user];
}

namespace {

std::vector<ItemId> uniform_negatives(const std::vector<ItemId>& positives, std::size_t n_items, std::size_t count,
                                      Rng& rng) {
  if (positives.size() >= n_items) throw Error("user has interacted with every item; no negatives available");
  std::vector<ItemId> out;
  while (out.size() < count) {
    const auto item = static_cast<ItemId>(uniform_index(rng, n_items));
    if (!std::binary_search(positives.begin(), positives.end(), item)) out.push_back(item);
  }
  return out;
}

}  // namespace

TrainingBatch build_batch(const SplitDataset& split, const PluginContext* plugins, const Encoder& encoder,
                          const TrainConfig& config, std::span<const UserId> users, std::uint64_t epoch_seed,
                          std::ostream* audit) {
  if (config.flags.any() && plugins == nullptr) throw Error("build_batch: plugins are on but no preference cache was given");
  TrainingBatch batch;
  const auto max_len = static_cast<std::size_t>(encoder.config().max_len);
  for (UserId u : users) {
    const UserSequence* seq = split.train_of(u);
    if (seq == nullptr || seq->size() < 2) continue;
    TrainingExample ex;
    ex.user = u;
    const std::size_t positions = std::min(seq->size() - 1, max_len);
    const std::size_t first = seq->size() - 1 - positions;
    ex.inputs.assign(seq->items.begin() + static_cast<std::ptrdiff_t>(first), seq->items.end() - 1);
    ex.targets.assign(seq->items.begin() + static_cast<std::ptrdiff_t>(first) + 1, seq->items.end());

    const UserPluginState* state = config.flags.any() ? &plugins->user(u) : nullptr;
    for (ItemId t : ex.targets) ex.target_weights.push_back(config.flags.hbr ? state->weights.weight_of(t) : 1.0);

    const auto positives = split.train_items(u);
    Rng neg_rng(derive_seed(epoch_seed, {stream_tag("uniform-negatives"), u}));
    for (std::size_t j = 0; j < positions; ++j)
      ex.uniform_negatives.push_back(
          uniform_negatives(positives, split.n_items, static_cast<std::size_t>(config.n_uniform), neg_rng));

    ex.nns_negatives.assign(positions, {});
    if (config.flags.nns && config.n_nns > 0) {
      if (!state->nns) throw Error("user " + std::to_string(u) + " has no unobserved items for NNS");
      const auto drawn = state->nns->sample(positions * static_cast<std::size_t>(config.n_nns),
                                            derive_seed(epoch_seed, {stream_tag("nns-negatives"), u}));
      for (std::size_t j = 0; j < positions; ++j)
        ex.nns_negatives[j].assign(drawn.begin() + static_cast<std::ptrdiff_t>(j * config.n_nns),
                                   drawn.begin() + static_cast<std::ptrdiff_t>((j + 1) * config.n_nns));
      if (audit) {
        std::vector<double> probs;
        for (ItemId i : drawn) probs.push_back(state->nns->probability(i));
        write_audit_line(*audit, u, "nns", drawn, probs);
      }
    }

    if (config.flags.dpa && !state->candidates.empty() && config.n > 0) {
      const Eigen::VectorXd h = encoder.encode(seq->items);
      const std::size_t n = std::min(static_cast<std::size_t>(config.n), state->candidates.size());
      SoftPositives soft = dpa_select(std::span<const double>(h.data(), static_cast<std::size_t>(h.size())),
                                      state->candidates, encoder.item_embeddings(), n);
      if (audit) write_audit_line(*audit, u, "dpa", soft.items, soft.scores);
      ex.soft_positives = std::move(soft.items);
    }
    batch.examples.push_back(std::move(ex));
  }
  return batch;
}

LossParts example_loss(ad::Tape& tape, Encoder& encoder, const TrainingExample& example, double omega_d,
                       Rng* dropout_rng) {
  ad::Var states = encoder.forward(tape, example.inputs, dropout_rng);
  ad::Var table = tape.param(encoder.item_embedding_param());

  std::vector<int> rows, items;
  std::vector<double> labels, weights;
  auto add = [&](std::size_t j, ItemId item, double label, double weight) {
    rows.push_back(static_cast<int>(j));
    items.push_back(static_cast<int>(item));
    labels.push_back(label);
    weights.push_back(weight);
  };
  for (std::size_t j = 0; j < example.targets.size(); ++j) {
    add(j, example.targets[j], 1.0, example.target_weights[j]);
    for (ItemId i : example.uniform_negatives[j]) add(j, i, 0.0, 1.0);
    for (ItemId i : example.nns_negatives[j]) add(j, i, 0.0, 1.0);
  }
  ad::Var logits = ad::rowwise_dot(ad::gather_rows(states, rows), ad::gather_rows(table, items));
  ad::Var rec = ad::weighted_bce_with_logits(logits, labels, weights);

  LossParts out{rec, rec.scalar(), 0.0};
  if (!example.soft_positives.empty()) {
    const std::vector<int> last(example.soft_positives.size(), static_cast<int>(example.targets.size() - 1));
    std::vector<int> soft(example.soft_positives.begin(), example.soft_positives.end());
    ad::Var soft_logits = ad::rowwise_dot(ad::gather_rows(states, last), ad::gather_rows(table, soft));
    ad::Var distill = ad::neg_log_sigmoid_sum(soft_logits);
    out.distill = distill.scalar();
    out.total = ad::add(rec, ad::scale(distill, omega_d));
  }
  return out;
}

Scorer encoder_scorer(const Encoder& encoder) {
  return [&encoder](std::span<const ItemId> context, std::span<const ItemId> items) {
    return encoder.score_items(context, items);
  };
}

TrainResult train_recommender(const SplitDataset& split, const PreferenceCache* cache, const EncoderConfig& encoder_config,
                              const TrainConfig& config, const EvalProtocol& valid_protocol, std::ostream* audit) {
  if (config.batch_size < 1 || config.epochs < 1) throw Error("train_recommender: bad epochs/batch size");
  if (config.n_uniform < 0 || config.n_nns < 0) throw Error("train_recommender: negative sample counts");
  if (config.omega_d < 0.0) throw Error("train_recommender: omega_d must be non-negative");
  EncoderConfig enc_cfg = encoder_config;
  enc_cfg.n_items = split.n_items;

  std::optional<PluginContext> plugins;
  if (config.flags.any()) {
    if (cache == nullptr) throw Error("train_recommender: plugins " + config.flags.to_string() + " need a preference cache");
    plugins.emplace(split, *cache, config);
  }

  EvalProtocol valid = valid_protocol;
  if (std::find(valid.ks.begin(), valid.ks.end(), 10) == valid.ks.end()) valid.ks.push_back(10);

  TrainResult result{Encoder(enc_cfg, derive_seed(config.seed, {stream_tag("encoder")})), {}, -1};
  Encoder encoder = result.model;
  Adam adam(encoder.params(), {.lr = config.lr});

  std::vector<UserId> users;
  for (const auto& s : split.train)
    if (s.size() >= 2) users.push_back(s.user);
  if (users.empty()) throw Error("train_recommender: no user has two training behaviors");

  double best = -std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const std::uint64_t epoch_seed = derive_seed(config.seed, {stream_tag("epoch"), static_cast<std::uint64_t>(epoch)});
    Rng shuffle_rng(derive_seed(epoch_seed, {stream_tag("shuffle")}));
    for (std::size_t i = users.size(); i > 1; --i) std::swap(users[i - 1], users[uniform_index(shuffle_rng, i)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < users.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t count = std::min(users.size() - start, static_cast<std::size_t>(config.batch_size));
      const TrainingBatch batch = build_batch(split, plugins ? &*plugins : nullptr, encoder, config,
                                              std::span(users).subspan(start, count), epoch_seed, audit);
      encoder.params().zero_grad();
      for (const auto& ex : batch.examples) {
        Rng dropout_rng(derive_seed(epoch_seed, {stream_tag("dropout"), ex.user}));
        ad::Tape tape;
        LossParts loss = example_loss(tape, encoder, ex, config.omega_d, &dropout_rng);
        if (!std::isfinite(loss.total.scalar()))
          throw Error("train_recommender: non-finite loss for user " + std::to_string(ex.user) + " at epoch " +
                      std::to_string(epoch));
        tape.backward(loss.total);
        epoch_loss += loss.total.scalar();
      }
      adam.step(encoder.params());
    }

    EpochRecord rec{epoch, epoch_loss, {}};
    if (!split.valid.empty()) rec.valid = evaluate(encoder_scorer(encoder), split.valid, split, valid);
    const double score = split.valid.empty() ? -epoch_loss : rec.valid.at("N@10");
    result.trace.push_back(std::move(rec));
    if (score > best) {
      best = score;
      since_best = 0;
      result.model = encoder;
      result.best_epoch = epoch;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  result.model.params().round_to_f32();
  return result;
}

std::string trace_jsonl(const std::vector<EpochRecord>& trace) {
  std::string out;
  for (const auto& r : trace) {
    nlohmann::json j = {{"epoch", r.epoch}, {"loss", r.loss}};
    for (const char* key : {"N@10", "HR@10", "AUC"})
      j[key] = r.valid.count(key) ? nlohmann::json(r.valid.at(key)) : nlohmann::json(nullptr);
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace pdrec

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pdrec/binary_io.hpp"
#include "pdrec/data.hpp"
#include "pdrec/encoders.hpp"
#include "pdrec/eval.hpp"
#include "pdrec/plugin.hpp"

namespace pdrec {

struct PluginFlags {
  bool hbr = false;
  bool dpa = false;
  bool nns = false;

  bool any() const { return hbr || dpa || nns; }
  // "none", "all", or a comma list drawn from hbr, dpa, nns.
  static PluginFlags parse(const std::string& text);
  std::string to_string() const;
  bool operator==(const PluginFlags&) const = default;
};

struct TrainConfig {
  double lr = 5e-3;
  int epochs = 200;
  int batch_size = 128;
  int patience = 10;
  int n_uniform = 1;
  int n_nns = 1;
  double omega_d = 0.3;
  HbrParams hbr;
  double omega_m = 0.5;
  int m = 50;
  int n = 5;
  std::uint64_t seed = 0;
  PluginFlags flags;
};

// -sum [w y log s(z) + (1 - y) log(1 - s(z))] over logits z.
double weighted_bce_loss(std::span<const double> logits, std::span<const double> labels,
                         std::span<const double> weights);
// -sum log s(z) over soft-positive logits; 0 when there are none.
double distill_loss(std::span<const double> logits);
double total_loss(double recommendation_loss, double distill, double omega_d);

struct UserPluginState {
  ReweightVector weights;
  std::optional<NnsDistribution> nns;
  std::vector<ItemId> candidates;
};

// Everything the plugins derive from the preference cache, computed once
// before training.
class PluginContext {
 public:
  PluginContext(const SplitDataset& split, const PreferenceCache& cache, const TrainConfig& config);
  const UserPluginState& user(UserId user) const;

 private:
  std::vector<std::optional<UserPluginState>> users_;
};

struct TrainingExample {
  UserId user = 0;
  std::vector<ItemId> inputs;
  std::vector<ItemId> targets;
  std::vector<double> target_weights;
  // Per position.
  std::vector<std::vector<ItemId>> uniform_negatives;
  std::vector<std::vector<ItemId>> nns_negatives;
  std::vector<ItemId> soft_positives;
};

struct TrainingBatch {
  std::vector<TrainingExample> examples;
};

// Assembles one example per user with at least two training behaviors.
// Random draws come from per-user streams of `epoch_seed`, so a user's
// samples do not depend on batch composition or on which plugins are on.
TrainingBatch build_batch(const SplitDataset& split, const PluginContext* plugins, const Encoder& encoder,
                          const TrainConfig& config, std::span<const UserId> users, std::uint64_t epoch_seed,
                          std::ostream* audit = nullptr);

struct LossParts {
  ad::Var total;
  double recommendation = 0.0;
  double distill = 0.0;
};

LossParts example_loss(ad::Tape& tape, Encoder& encoder, const TrainingExample& example, double omega_d,
                       Rng* dropout_rng);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  Metrics valid;
};

struct TrainResult {
  Encoder model;
  std::vector<EpochRecord> trace;
  int best_epoch = -1;
};

TrainResult train_recommender(const SplitDataset& split, const PreferenceCache* cache, const EncoderConfig& encoder_config,
                              const TrainConfig& config, const EvalProtocol& valid_protocol,
                              std::ostream* audit = nullptr);

// One JSON object per epoch: {epoch, loss, N@10, HR@10, AUC}.
std::string trace_jsonl(const std::vector<EpochRecord>& trace);

Scorer encoder_scorer(const Encoder& encoder);

}  // namespace pdrec

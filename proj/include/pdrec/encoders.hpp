#pragma once

#include <cstdint>
#include <span>
#include <string>

#include <Eigen/Core>

#include "pdrec/autodiff.hpp"
#include "pdrec/data.hpp"
#include "pdrec/nn.hpp"

namespace pdrec {

enum class Architecture { kRecurrent, kSelfAttentive };

std::string to_string(Architecture arch);
Architecture parse_architecture(const std::string& name);

struct EncoderConfig {
  Architecture arch = Architecture::kSelfAttentive;
  std::size_t n_items = 0;
  int dim = 32;
  int max_len = 200;
  int heads = 1;
  int blocks = 1;
  double dropout = 0.2;
};

// Sequential encoder with a shared item embedding table used both for the
// inputs and for scoring. Output row j is the state after reading position j
// of the (last max_len items of the) sequence.
class Encoder {
 public:
  Encoder(EncoderConfig config, std::uint64_t init_seed);

  const EncoderConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const Eigen::MatrixXd& item_embeddings() const { return params_.at("item_emb").value; }
  ad::Param& item_embedding_param() { return params_.at("item_emb"); }

  // Dropout is applied iff `dropout_rng` is non-null (training mode).
  ad::Var forward(ad::Tape& tape, std::span<const ItemId> seq, Rng* dropout_rng);

  Eigen::MatrixXd encode_positions(std::span<const ItemId> seq) const;
  // State of the last position, h_u.
  Eigen::VectorXd encode(std::span<const ItemId> seq) const;
  std::vector<double> score_items(std::span<const ItemId> seq, std::span<const ItemId> items) const;

  // Zeroes every weight and bias outside the embedding tables (layer-norm
  // gains stay at 1).
  void zero_non_embedding();

  Checkpoint to_checkpoint() const;
  static Encoder from_checkpoint(const Checkpoint& ckpt);

 private:
  ad::Var forward_recurrent(ad::Tape& tape, ad::Var x, Rng* rng);
  ad::Var forward_attentive(ad::Tape& tape, ad::Var x, Rng* rng);
  ad::Var dropout(ad::Tape& tape, ad::Var x, Rng* rng) const;

  EncoderConfig config_;
  ParamSet params_;
};

double score(const Eigen::VectorXd& state, ItemId item, const Eigen::MatrixXd& item_embeddings);

}  // namespace pdrec

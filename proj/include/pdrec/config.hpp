#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "pdrec/data.hpp"
#include "pdrec/diffusion.hpp"
#include "pdrec/encoders.hpp"
#include "pdrec/eval.hpp"
#include "pdrec/training.hpp"

namespace pdrec {

struct DataConfig {
  double w_min = 0.1;
  double w_max = 1.0;
};

struct DiffusionConfig {
  DiffusionTrainConfig train;
  int infer_steps = 20;
  Weighting weighting = Weighting::kTimeInterval;
};

struct EvalConfig {
  EvalProtocol protocol;
  // Cross-domain mode reports k = 20 and 50 as well.
  bool cross_domain = false;
};

// One JSON document with sections data, diffusion, encoder, train, eval and
// experiment. A section is parsed only when a stage asks for it; every key of
// a requested section is required and a missing one raises a ConfigError that
// names it (e.g. "missing config key: train.lr").
class PipelineConfig {
 public:
  explicit PipelineConfig(nlohmann::json raw);
  static PipelineConfig load(const std::filesystem::path& path);

  const nlohmann::json& raw() const { return raw_; }

  DataConfig data() const;
  DiffusionConfig diffusion() const;
  // n_items is left 0; the caller fills it from the dataset.
  EncoderConfig encoder() const;
  // seed is left 0; flags come from train.flags.
  TrainConfig train() const;
  EvalConfig eval() const;
  int runs() const;

  // Hash of the canonical document with train.flags replaced by `flags`.
  std::string hash(const PluginFlags& flags) const;

 private:
  nlohmann::json raw_;
};

}  // namespace pdrec

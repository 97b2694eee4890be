#include "pdrec/config.hpp"

#include <fstream>

#include "pdrec/binary_io.hpp"
#include "pdrec/error.hpp"

namespace pdrec {

namespace {

using nlohmann::json;

const json& section(const json& raw, const std::string& name) {
  if (!raw.contains(name)) throw ConfigError("missing config key: " + name);
  const json& s = raw.at(name);
  if (!s.is_object()) throw ConfigError("config key " + name + " must be an object");
  return s;
}

template <typename T>
T get(const json& sec, const std::string& sec_name, const std::string& key) {
  const std::string full = sec_name + "." + key;
  if (!sec.contains(key)) throw ConfigError("missing config key: " + full);
  try {
    return sec.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key " + full + " has the wrong type");
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid config: " + what);
}

}  // namespace

PipelineConfig::PipelineConfig(nlohmann::json raw) : raw_(std::move(raw)) {
  if (!raw_.is_object()) throw ConfigError("config must be a JSON object");
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return PipelineConfig(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

DataConfig PipelineConfig::data() const {
  const json& s = section(raw_, "data");
  DataConfig c;
  c.w_min = get<double>(s, "data", "w_min");
  c.w_max = get<double>(s, "data", "w_max");
  require(c.w_min > 0.0 && c.w_min <= c.w_max, "need 0 < data.w_min <= data.w_max");
  return c;
}

DiffusionConfig PipelineConfig::diffusion() const {
  const json& s = section(raw_, "diffusion");
  DiffusionConfig c;
  c.train.steps = get<int>(s, "diffusion", "steps");
  c.train.beta_start = get<double>(s, "diffusion", "beta_start");
  c.train.beta_end = get<double>(s, "diffusion", "beta_end");
  c.train.hidden = get<int>(s, "diffusion", "hidden");
  c.train.emb_dim = get<int>(s, "diffusion", "emb_dim");
  c.train.lr = get<double>(s, "diffusion", "lr");
  c.train.epochs = get<int>(s, "diffusion", "epochs");
  c.train.batch_size = get<int>(s, "diffusion", "batch_size");
  c.train.holdout_fraction = get<double>(s, "diffusion", "holdout_fraction");
  c.infer_steps = get<int>(s, "diffusion", "infer_steps");
  const auto w = get<std::string>(s, "diffusion", "weighting");
  if (w == "time-interval") {
    c.weighting = Weighting::kTimeInterval;
  } else if (w == "constant") {
    c.weighting = Weighting::kConstant;
  } else {
    throw ConfigError("diffusion.weighting must be time-interval or constant, got " + w);
  }
  require(c.infer_steps >= 0 && c.infer_steps <= c.train.steps, "need 0 <= diffusion.infer_steps <= diffusion.steps");
  require(c.train.epochs >= 0 && c.train.batch_size >= 1, "diffusion.epochs/batch_size");
  return c;
}

EncoderConfig PipelineConfig::encoder() const {
  const json& s = section(raw_, "encoder");
  EncoderConfig c;
  try {
    c.arch = parse_architecture(get<std::string>(s, "encoder", "arch"));
  } catch (const Error& e) {
    throw ConfigError(std::string("encoder.arch: ") + e.what());
  }
  c.dim = get<int>(s, "encoder", "dim");
  c.max_len = get<int>(s, "encoder", "max_len");
  c.heads = get<int>(s, "encoder", "heads");
  c.blocks = get<int>(s, "encoder", "blocks");
  c.dropout = get<double>(s, "encoder", "dropout");
  require(c.dim >= 1 && c.max_len >= 1 && c.heads >= 1 && c.blocks >= 1, "encoder sizes must be positive");
  require(c.dim % c.heads == 0, "encoder.dim must be divisible by encoder.heads");
  require(c.dropout >= 0.0 && c.dropout < 1.0, "encoder.dropout must be in [0, 1)");
  return c;
}

TrainConfig PipelineConfig::train() const {
  const json& s = section(raw_, "train");
  TrainConfig c;
  c.lr = get<double>(s, "train", "lr");
  c.epochs = get<int>(s, "train", "epochs");
  c.batch_size = get<int>(s, "train", "batch_size");
  c.patience = get<int>(s, "train", "patience");
  c.n_uniform = get<int>(s, "train", "n_uniform");
  c.n_nns = get<int>(s, "train", "n_nns");
  c.omega_d = get<double>(s, "train", "omega_d");
  c.hbr.omega_r = get<double>(s, "train", "omega_r");
  c.hbr.c_w = get<double>(s, "train", "c_w");
  c.hbr.omega_f = get<double>(s, "train", "omega_f");
  c.omega_m = get<double>(s, "train", "omega_m");
  c.m = get<int>(s, "train", "m");
  c.n = get<int>(s, "train", "n");
  try {
    c.flags = PluginFlags::parse(get<std::string>(s, "train", "flags"));
  } catch (const Error& e) {
    throw ConfigError(std::string("train.flags: ") + e.what());
  }
  require(c.epochs >= 0 && c.batch_size >= 1 && c.patience >= 1, "train.epochs/batch_size/patience");
  require(c.n_uniform >= 0 && c.n_nns >= 0 && c.m >= 1 && c.n >= 0, "train sampling sizes");
  require(c.omega_m >= 0.0 && c.omega_m < 1.0, "train.omega_m must be in [0, 1)");
  return c;
}

EvalConfig PipelineConfig::eval() const {
  const json& s = section(raw_, "eval");
  EvalConfig c;
  c.protocol.n_negatives = get<int>(s, "eval", "n_negatives");
  c.protocol.ks = get<std::vector<int>>(s, "eval", "ks");
  c.cross_domain = get<bool>(s, "eval", "cross_domain");
  require(c.protocol.n_negatives >= 1, "eval.n_negatives must be positive");
  require(!c.protocol.ks.empty(), "eval.ks must not be empty");
  for (int k : c.protocol.ks) require(k >= 1, "eval.ks entries must be positive");
  return c;
}

int PipelineConfig::runs() const {
  const json& s = section(raw_, "experiment");
  const int r = get<int>(s, "experiment", "runs");
  require(r >= 1, "experiment.runs must be positive");
  return r;
}

std::string PipelineConfig::hash(const PluginFlags& flags) const {
  json canon = raw_;
  if (canon.contains("train") && canon["train"].is_object()) canon["train"]["flags"] = flags.to_string();
  const std::string text = canon.dump();
  return fnv1a_hex(text.data(), text.size());
}

}  // namespace pdrec

#include "pdrec/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "pdrec/binary_io.hpp"
#include "pdrec/error.hpp"
#include "pdrec/rng.hpp"

namespace pdrec {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw Error(path.string() + " is not valid JSON: " + e.what());
  }
}

std::uint32_t numeric_id(const std::string& text, const fs::path& source) {
  std::uint32_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw Error(source.string() + ": expected contiguous numeric ids, found " + text);
  return v;
}

std::string weighting_name(Weighting w) { return w == Weighting::kTimeInterval ? "time-interval" : "constant"; }

}  // namespace

std::uint64_t stage_seed(std::uint64_t run_seed, std::string_view stage) {
  return derive_seed(run_seed, {stream_tag(stage)});
}

void ingest(const std::vector<fs::path>& inputs, const fs::path& out_dir) {
  if (inputs.empty() || inputs.size() > 2) throw Error("ingest takes one or two interaction files");
  InteractionLog log;
  json id_map;
  if (inputs.size() == 1) {
    LoadedLog loaded = load_interactions(inputs[0]);
    log = std::move(loaded.log);
    id_map = {{"users", loaded.users.to_json()}, {"items", loaded.items.to_json()}};
  } else {
    LoadedLog a = load_interactions(inputs[0]);
    LoadedLog b = load_interactions(inputs[1]);
    // Users are matched by original id across domains; items stay disjoint.
    IdMap users;
    for (std::uint32_t u = 0; u < a.users.size(); ++u) users.intern(a.users.original(u));
    for (std::uint32_t u = 0; u < b.users.size(); ++u) users.intern(b.users.original(u));
    for (auto& r : a.log.records) r.user = *users.find(a.users.original(r.user));
    for (auto& r : b.log.records) r.user = *users.find(b.users.original(r.user));
    a.log.n_users = b.log.n_users = users.size();
    log = merge_domains(a.log, b.log);

    IdMap items;
    for (std::uint32_t i = 0; i < a.items.size(); ++i) items.intern("A:" + a.items.original(i));
    for (std::uint32_t i = 0; i < b.items.size(); ++i) items.intern("B:" + b.items.original(i));
    id_map = {{"users", users.to_json()}, {"items", items.to_json()}};
  }
  log.validate();

  const SplitDataset split = leave_one_out_split(build_sequences(log), log.n_users, log.n_items);
  write_interactions(out_dir / "log.tsv", log);
  write_json(out_dir / "id_map.json", id_map);
  write_json(out_dir / "split.json", split.manifest());
}

DataDir load_data_dir(const fs::path& dir) {
  const fs::path log_path = dir / "log.tsv";
  LoadedLog loaded = load_interactions(log_path);
  // log.tsv already holds contiguous indices; undo the first-appearance
  // re-indexing that the generic loader applies.
  InteractionLog log;
  log.n_users = loaded.users.size();
  log.n_items = loaded.items.size();
  log.records.reserve(loaded.log.records.size());
  for (const auto& r : loaded.log.records)
    log.records.push_back({numeric_id(loaded.users.original(r.user), log_path),
                           numeric_id(loaded.items.original(r.item), log_path), r.time});
  log.validate();

  DataDir out;
  out.split = leave_one_out_split(build_sequences(log), log.n_users, log.n_items);
  out.data_hash = file_hash(log_path);
  return out;
}

DiffusionTrainResult train_diffusion_stage(const DataDir& data, const PipelineConfig& config, std::uint64_t seed,
                                           const fs::path& out_dir) {
  const DataConfig dc = config.data();
  DiffusionConfig diff = config.diffusion();
  diff.train.seed = stage_seed(seed, "diffusion");
  const auto vectors = build_interaction_vectors(data.split, diff.weighting, dc.w_min, dc.w_max);
  if (vectors.empty()) throw Error("no training sequences to fit the diffusion model on");

  DiffusionTrainResult result = train_diffusion(vectors, diff.train);
  Checkpoint ckpt = result.model.to_checkpoint();
  ckpt.header["data_hash"] = data.data_hash;
  ckpt.header["weighting"] = weighting_name(diff.weighting);
  save_checkpoint(out_dir / "diffusion.ckpt", ckpt);
  write_json(out_dir / "diffusion.json", {{"seed", seed},
                                          {"epoch_loss", result.epoch_loss},
                                          {"initial_holdout_loss", result.initial_holdout_loss},
                                          {"final_holdout_loss", result.final_holdout_loss}});
  return result;
}

void infer_prefs_stage(const DataDir& data, const PipelineConfig& config, const fs::path& model_path,
                       const fs::path& out_dir) {
  const DataConfig dc = config.data();
  const DiffusionConfig diff = config.diffusion();
  const DenoiserModel model = load_denoiser(model_path);
  if (!model.trained()) throw Error(model_path.string() + " holds an untrained diffusion model");
  if (model.config().n_items != data.split.n_items)
    throw Error("diffusion model covers " + std::to_string(model.config().n_items) + " items, data has " +
                std::to_string(data.split.n_items));
  if (diff.infer_steps > model.schedule().steps())
    throw Error("diffusion.infer_steps exceeds the model's step count");
  const std::string mhash = file_hash(model_path);

  PreferenceCache cache(data.split.n_users, data.split.n_items);
  for (const auto& v : build_interaction_vectors(data.split, diff.weighting, dc.w_min, dc.w_max)) {
    const PreferenceVector pref = reverse_infer(model, v, diff.infer_steps, mhash);
    cache.set_row(v.owner, pref.values);
  }
  const std::string bytes = cache.encode();
  write_file(out_dir / "prefs.bin", bytes);
  write_json(out_dir / "prefs.json", {{"model_hash", mhash},
                                      {"infer_steps", diff.infer_steps},
                                      {"weighting", weighting_name(diff.weighting)},
                                      {"data_hash", data.data_hash},
                                      {"cache_hash", fnv1a_hex(bytes.data(), bytes.size())},
                                      {"n_users", cache.n_users()},
                                      {"n_items", cache.n_items()}});
}

TrainResult train_rec_stage(const DataDir& data, const PipelineConfig& config, std::uint64_t seed,
                            const PluginFlags& flags, const std::optional<fs::path>& prefs_path,
                            const std::optional<fs::path>& model_path, const fs::path& out_dir, bool write_audit) {
  EncoderConfig enc = config.encoder();
  enc.n_items = data.split.n_items;
  TrainConfig train = config.train();
  train.flags = flags;
  train.seed = stage_seed(seed, "recommender");
  EvalProtocol valid = config.eval().protocol;
  valid.seed = stage_seed(seed, "valid-eval");

  std::optional<PreferenceCache> cache;
  if (flags.any()) {
    if (!prefs_path) throw Error("plugins " + flags.to_string() + " need a preference cache");
    fs::path sidecar = *prefs_path;
    sidecar.replace_extension(".json");
    const json meta = read_json(sidecar);
    if (meta.at("cache_hash").get<std::string>() != file_hash(*prefs_path))
      throw Error("preference cache " + prefs_path->string() + " does not match its sidecar hash; refusing to run");
    if (meta.at("data_hash").get<std::string>() != data.data_hash)
      throw Error("preference cache was inferred from different data; refusing to run");
    if (model_path && meta.at("model_hash").get<std::string>() != file_hash(*model_path))
      throw Error("preference cache was inferred by a different model than " + model_path->string() +
                  "; refusing to run");
    cache = load_preference_cache(*prefs_path);
  }

  std::ofstream audit;
  if (write_audit) {
    fs::create_directories(out_dir);
    audit.open(out_dir / "audit.jsonl", std::ios::binary | std::ios::trunc);
    if (!audit) throw Error("cannot write " + (out_dir / "audit.jsonl").string());
  }
  TrainResult result = train_recommender(data.split, cache ? &*cache : nullptr, enc, train, valid,
                                         write_audit ? &audit : nullptr);

  Checkpoint ckpt = result.model.to_checkpoint();
  ckpt.header["flags"] = flags.to_string();
  ckpt.header["seed"] = seed;
  ckpt.header["best_epoch"] = result.best_epoch;
  ckpt.header["data_hash"] = data.data_hash;
  save_checkpoint(out_dir / "encoder.ckpt", ckpt);
  write_file(out_dir / "trace.jsonl", trace_jsonl(result.trace));
  return result;
}

EvalProtocol test_protocol(const PipelineConfig& config, std::uint64_t seed) {
  const EvalConfig ec = config.eval();
  EvalProtocol p = ec.protocol;
  if (ec.cross_domain)
    for (int k : {20, 50})
      if (std::find(p.ks.begin(), p.ks.end(), k) == p.ks.end()) p.ks.push_back(k);
  std::sort(p.ks.begin(), p.ks.end());
  p.ks.erase(std::unique(p.ks.begin(), p.ks.end()), p.ks.end());
  p.seed = seed;
  return p;
}

namespace {

Metrics evaluate_encoder(const DataDir& data, const EvalProtocol& protocol, const Encoder& encoder) {
  if (data.split.test.empty()) throw Error("no test rows: every user has fewer than three behaviors");
  EvalProtocol p = protocol;
  p.seed = stage_seed(protocol.seed, "test-eval");
  return evaluate(encoder_scorer(encoder), data.split.test, data.split, p);
}

}  // namespace

MetricReport evaluate_stage(const DataDir& data, const PipelineConfig& config, std::uint64_t seed,
                            const fs::path& encoder_path, const fs::path& out_dir) {
  const Checkpoint ckpt = load_checkpoint(encoder_path);
  if (!ckpt.header.contains("flags")) throw Error(encoder_path.string() + " was not written by train-rec");
  const PluginFlags flags = PluginFlags::parse(ckpt.header.at("flags").get<std::string>());
  const Encoder encoder = Encoder::from_checkpoint(ckpt);
  if (encoder.config().n_items != data.split.n_items) throw Error("encoder and data disagree on the item count");

  MetricReport report;
  report.config_hash = config.hash(flags);
  report.protocol = test_protocol(config, seed);
  report.runs.emplace_back(seed, evaluate_encoder(data, report.protocol, encoder));
  write_file(out_dir / "report.json", report.dump());
  return report;
}

MetricReport run_experiment(const std::vector<fs::path>& inputs, const PipelineConfig& config, std::uint64_t seed,
                            const PluginFlags& flags, const fs::path& out_dir) {
  // Parse every section up front so a bad config fails before any work.
  config.data();
  if (flags.any()) config.diffusion();
  config.encoder();
  config.train();
  config.eval();
  const int runs = config.runs();

  ingest(inputs, out_dir / "data");
  const DataDir data = load_data_dir(out_dir / "data");

  MetricReport report;
  report.config_hash = config.hash(flags);
  report.protocol = test_protocol(config, seed);
  for (int r = 0; r < runs; ++r) {
    const std::uint64_t run_seed = seed + static_cast<std::uint64_t>(r);
    const fs::path run_dir = out_dir / ("run-" + std::to_string(run_seed));
    std::optional<fs::path> prefs, model;
    if (flags.any()) {
      train_diffusion_stage(data, config, run_seed, run_dir);
      model = run_dir / "diffusion.ckpt";
      infer_prefs_stage(data, config, *model, run_dir);
      prefs = run_dir / "prefs.bin";
    }
    train_rec_stage(data, config, run_seed, flags, prefs, model, run_dir);
    const MetricReport single = evaluate_stage(data, config, run_seed, run_dir / "encoder.ckpt", run_dir);
    report.runs.push_back(single.runs.front());
  }
  write_file(out_dir / "report.json", report.dump());
  return report;
}

}  // namespace pdrec

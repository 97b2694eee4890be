#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pdrec/config.hpp"
#include "pdrec/data.hpp"
#include "pdrec/eval.hpp"
#include "pdrec/training.hpp"

namespace pdrec {

// Stage functions behind the CLI. Every stage reads its inputs from files and
// writes its outputs into `out_dir`, so running the stages one by one and
// running `run_experiment` produce the same artifacts.

// Data directory: log.tsv (contiguous indices), id_map.json, split.json.
// Two inputs are mixed chronologically as a cross-domain log.
void ingest(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& out_dir);

struct DataDir {
  SplitDataset split;
  std::string data_hash;
};

DataDir load_data_dir(const std::filesystem::path& dir);

std::uint64_t stage_seed(std::uint64_t run_seed, std::string_view stage);

// Writes diffusion.ckpt and diffusion.json (loss curve).
DiffusionTrainResult train_diffusion_stage(const DataDir& data, const PipelineConfig& config, std::uint64_t seed,
                                           const std::filesystem::path& out_dir);

// Writes prefs.bin and its prefs.json provenance sidecar.
void infer_prefs_stage(const DataDir& data, const PipelineConfig& config, const std::filesystem::path& model_path,
                       const std::filesystem::path& out_dir);

// Writes encoder.ckpt and trace.jsonl (and audit.jsonl on request). With
// plugins on, `prefs_path` is required; its sidecar must match the data and,
// if given, the model file.
TrainResult train_rec_stage(const DataDir& data, const PipelineConfig& config, std::uint64_t seed,
                            const PluginFlags& flags, const std::optional<std::filesystem::path>& prefs_path,
                            const std::optional<std::filesystem::path>& model_path,
                            const std::filesystem::path& out_dir, bool write_audit = false);

EvalProtocol test_protocol(const PipelineConfig& config, std::uint64_t seed);

// Writes report.json for one trained encoder.
MetricReport evaluate_stage(const DataDir& data, const PipelineConfig& config, std::uint64_t seed,
                            const std::filesystem::path& encoder_path, const std::filesystem::path& out_dir);

// Ingest, then for runs with seeds seed, seed+1, ...: diffusion -> preference
// cache -> plugin-augmented training -> evaluation. Stages a run does not need
// (diffusion when every plugin is off) are skipped. Writes report.json.
MetricReport run_experiment(const std::vector<std::filesystem::path>& inputs, const PipelineConfig& config,
                            std::uint64_t seed, const PluginFlags& flags, const std::filesystem::path& out_dir);

}  // namespace pdrec

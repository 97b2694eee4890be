#include "cli.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pdrec/config.hpp"
#include "pdrec/error.hpp"
#include "pdrec/pipeline.hpp"

namespace pdrec {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::string flags;
  std::vector<std::string> inputs;
  std::string data_dir;
  std::string model;
  std::string prefs;
  std::string encoder;
  bool audit = false;
};

void add_common(CLI::App* cmd, Options& o, bool needs_config, bool has_seed) {
  auto* c = cmd->add_option("--config", o.config, "JSON run configuration");
  if (needs_config) c->required();
  if (has_seed) cmd->add_option("--seed", o.seed, "seed all randomness derives from");
  cmd->add_option("--out", o.out, "output directory")->required();
}

PluginFlags resolve_flags(const Options& o, const PipelineConfig& config) {
  return o.flags.empty() ? config.train().flags : PluginFlags::parse(o.flags);
}

std::vector<fs::path> to_paths(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Plug-in diffusion for sequential recommendation"};
  app.require_subcommand(1);
  Options o;

  auto* ingest_cmd = app.add_subcommand("ingest", "re-index one TSV log (two for cross-domain) and split it");
  ingest_cmd->add_option("logs", o.inputs, "user<TAB>item<TAB>timestamp files")->required()->expected(1, 2);
  add_common(ingest_cmd, o, false, false);

  auto* diff_cmd = app.add_subcommand("train-diffusion", "train the diffusion model");
  diff_cmd->add_option("data", o.data_dir, "data directory from ingest")->required();
  add_common(diff_cmd, o, true, true);

  auto* infer_cmd = app.add_subcommand("infer-prefs", "write the preference cache");
  infer_cmd->add_option("data", o.data_dir, "data directory from ingest")->required();
  infer_cmd->add_option("model", o.model, "trained diffusion checkpoint")->required();
  add_common(infer_cmd, o, true, false);

  auto* rec_cmd = app.add_subcommand("train-rec", "train a sequential recommender with plug-ins");
  rec_cmd->add_option("data", o.data_dir, "data directory from ingest")->required();
  rec_cmd->add_option("--prefs", o.prefs, "preference cache (required when plug-ins are on)");
  rec_cmd->add_option("--model", o.model, "diffusion checkpoint the cache must come from");
  rec_cmd->add_option("--flags", o.flags, "hbr,dpa,nns | all | none (default: train.flags)");
  rec_cmd->add_flag("--audit", o.audit, "log DPA/NNS decisions to audit.jsonl");
  add_common(rec_cmd, o, true, true);

  auto* eval_cmd = app.add_subcommand("evaluate", "1-plus-N evaluation of a trained encoder");
  eval_cmd->add_option("data", o.data_dir, "data directory from ingest")->required();
  eval_cmd->add_option("encoder", o.encoder, "encoder checkpoint from train-rec")->required();
  add_common(eval_cmd, o, true, true);

  auto* exp_cmd = app.add_subcommand("experiment", "full pipeline over experiment.runs seeds");
  exp_cmd->add_option("logs", o.inputs, "user<TAB>item<TAB>timestamp files")->required()->expected(1, 2);
  exp_cmd->add_option("--flags", o.flags, "hbr,dpa,nns | all | none (default: train.flags)");
  add_common(exp_cmd, o, true, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    const fs::path out_dir = o.out;
    if (ingest_cmd->parsed()) {
      ingest(to_paths(o.inputs), out_dir);
      return 0;
    }
    const PipelineConfig config = PipelineConfig::load(o.config);
    if (exp_cmd->parsed()) {
      const MetricReport report = run_experiment(to_paths(o.inputs), config, o.seed, resolve_flags(o, config), out_dir);
      out << report.dump();
      return 0;
    }
    const DataDir data = load_data_dir(o.data_dir);
    if (diff_cmd->parsed()) {
      train_diffusion_stage(data, config, o.seed, out_dir);
    } else if (infer_cmd->parsed()) {
      infer_prefs_stage(data, config, o.model, out_dir);
    } else if (rec_cmd->parsed()) {
      std::optional<fs::path> prefs, model;
      if (!o.prefs.empty()) prefs = o.prefs;
      if (!o.model.empty()) model = o.model;
      train_rec_stage(data, config, o.seed, resolve_flags(o, config), prefs, model, out_dir, o.audit);
    } else if (eval_cmd->parsed()) {
      out << evaluate_stage(data, config, o.seed, o.encoder, out_dir).dump();
    }
    return 0;
  } catch (const std::exception& e) {
    err << "pdrec: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace pdrec

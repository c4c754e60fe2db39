#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "unifl/bpe.hpp"
#include "unifl/fl.hpp"
#include "unifl/generator.hpp"
#include "unifl/metrics.hpp"

namespace unifl::app {

// The JSON run configuration: a generator section, a model section, an fl
// section, the training seed list, and an output directory. Unknown keys
// anywhere are rejected so typos cannot silently fall back to defaults.
struct RunConfig {
  synth::GeneratorConfig generator;

  // model section; vocab_target is the BPE budget, the embedding width
  // follows the trained vocabulary
  std::uint32_t vocab_target = 2048;
  nn::Hyperparams model;

  // fl section
  std::size_t total_rounds = 30;
  std::size_t local_epochs = 1;
  std::size_t early_stop_patience = 5;
  std::size_t eval_every = 1;
  double mu = 0.01;
  bool prox_exclude_norm = false;
  bool uniform_weighting = false;
  bool literal_shuffle = false;
  bool dx_macro = false;

  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string output_dir = "runs";
};

RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& json_text);
std::string config_to_json(const RunConfig& cfg);

// honors the UNIFL_OUT environment override
std::string resolve_output_dir(const RunConfig& cfg);

// On-disk dataset bundle produced by generate-data:
//   <dir>/manifest.json            client ids, tasks, profiles, schema words
//   <dir>/vocab.txt                shared tokenizer
//   <dir>/<client>.jsonl           patient records
//   <dir>/<client>.dict.tsv        code dictionary
//   <dir>/<client>.splits.json     per-task train/valid/test indices
void write_dataset(const synth::GeneratedData& data,
                   const bpe::TokenizerVocab& vocab, const std::string& dir);

struct LoadedData {
  std::vector<synth::ClientDataset> clients;
  bpe::TokenizerVocab vocab;
  std::vector<nn::Task> tasks;
};

LoadedData load_dataset(const std::string& dir);

struct TrainOptions {
  std::string method;  // local|centralized|fedavg|fedprox|fedbn|fedpxn
  nn::Task task = nn::Task::LOS3;
  std::vector<std::uint64_t> seeds;  // resolved list (config or --seed-list)
  std::size_t workers = 1;
  bool literal_shuffle = false;
  std::optional<double> mu;  // --mu override
};

struct TrainResult {
  std::string results_csv;
  std::vector<metrics::EvalReport> reports;
  std::vector<fl::RunHistory> histories;  // one per seed
};

// Runs the requested regime for every seed, writes per-seed RunHistory
// JSON, checkpoints, and one results CSV. Pure function of (data, config,
// options): reruns and any worker count give byte-identical outputs.
TrainResult train_eval(const RunConfig& cfg, const LoadedData& data,
                       const TrainOptions& opt, const std::string& out_dir);

// command entry points (return a process exit code)
int cmd_generate_data(const std::string& config_path, const std::string& out_dir);
int cmd_train(const std::string& config_path, const TrainOptions& opt,
              const std::string& data_dir, const std::string& out_dir);
int cmd_summarize(const std::string& runs_dir, const std::string& out_csv);
int cmd_gradcheck(double tolerance, std::size_t n_models);

}  // namespace unifl::app

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "unifl/driver.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Heterogeneous-client federated learning on text-linearized "
               "synthetic health records"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, runs_dir, out_csv;
  std::string method = "fedavg", task = "los3";
  std::vector<std::uint64_t> seed_list;
  std::size_t workers = 1;
  bool literal_shuffle = false;
  double mu = -1.0;
  double tolerance = 1e-4;
  std::size_t n_models = 3;

  auto* gen = app.add_subcommand("generate-data",
                                 "Generate the synthetic clients, dictionaries, "
                                 "splits and tokenizer vocab");
  gen->add_option("--config", config_path, "run config JSON")->required();
  gen->add_option("--out", out_dir, "dataset directory (default <output_dir>/data)");

  auto* train = app.add_subcommand("train", "Train one method on one task for "
                                            "every seed and write results");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--method", method,
                    "local|centralized|fedavg|fedprox|fedbn|fedpxn")
      ->check(CLI::IsMember(
          {"local", "centralized", "fedavg", "fedprox", "fedbn", "fedpxn"}));
  train->add_option("--task", task, "dx|los3|los7|mort|readm")
      ->check(CLI::IsMember({"dx", "los3", "los7", "mort", "readm"}));
  train->add_option("--seed-list", seed_list, "override the config seed list");
  train->add_option("--workers", workers, "parallel client workers (never changes results)");
  train->add_flag("--literal-shuffle", literal_shuffle,
                  "centralized: shuffle the pooled data once instead of per epoch");
  train->add_option("--mu", mu, "proximal strength override for fedprox/fedpxn");
  train->add_option("--data", data_dir, "dataset directory (default <output_dir>/data)");
  train->add_option("--out", out_dir, "run output directory (default <output_dir>)");

  auto* summ = app.add_subcommand("summarize",
                                  "Aggregate results CSVs into a per-task / "
                                  "per-client table with relative gains");
  summ->add_option("--runs", runs_dir, "directory containing results_*.csv")->required();
  summ->add_option("--out", out_csv, "summary CSV path")->default_val("summary.csv");

  auto* grad = app.add_subcommand("gradcheck",
                                  "Compare backprop against finite differences "
                                  "on tiny fixtures");
  grad->add_option("--tolerance", tolerance, "max allowed relative error");
  grad->add_option("--models", n_models, "number of random fixtures");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return unifl::app::cmd_generate_data(config_path, out_dir);
    }
    if (train->parsed()) {
      unifl::app::TrainOptions opt;
      opt.method = method;
      opt.task = unifl::nn::task_from_name(task);
      opt.seeds = seed_list;
      opt.workers = workers;
      opt.literal_shuffle = literal_shuffle;
      if (mu >= 0.0) opt.mu = mu;
      return unifl::app::cmd_train(config_path, opt, data_dir, out_dir);
    }
    if (summ->parsed()) {
      return unifl::app::cmd_summarize(runs_dir, out_csv);
    }
    if (grad->parsed()) {
      return unifl::app::cmd_gradcheck(tolerance, n_models);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

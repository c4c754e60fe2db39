#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unifl/data.hpp"
#include "unifl/model.hpp"

namespace unifl::fl {

enum class MethodKind { Local, Centralized, FedAvg, FedProx, FedBN, FedPxN };

const char* method_name(MethodKind kind);
MethodKind method_from_name(const std::string& name);

struct Method {
  MethodKind kind = MethodKind::FedAvg;
  double mu = 0.01;               // proximal strength; read by FedProx/FedPxN only
  bool prox_exclude_norm = false; // restrict the penalty to aggregated tensors
  bool uniform_weighting = false; // average with 1/N instead of n_i / sum(n)

  bool is_federated() const {
    return kind == MethodKind::FedAvg || kind == MethodKind::FedProx ||
           kind == MethodKind::FedBN || kind == MethodKind::FedPxN;
  }
  // methods that keep each client's norm tensors out of the global average
  bool personalized() const {
    return kind == MethodKind::FedBN || kind == MethodKind::FedPxN;
  }
  bool proximal() const {
    return kind == MethodKind::FedProx || kind == MethodKind::FedPxN;
  }
};

struct FLConfig {
  Method method;
  nn::Hyperparams hp;
  std::size_t total_rounds = 30;  // communication rounds; epochs for CL and LL
  std::size_t local_epochs = 1;
  std::uint64_t seed = 0;
  std::size_t early_stop_patience = 5;
  std::size_t eval_every = 1;
  std::size_t workers = 1;
  bool literal_shuffle = false;  // centralized: one shuffle before the epoch loop
  bool dx_macro = false;

  void validate() const;
};

// The data a run consumes: per-client encoded splits, parallel to client_ids.
struct RunInput {
  std::vector<std::string> client_ids;
  std::vector<const synth::EncodedSplit*> clients;
};

struct ClientTrack {
  std::string client_id;
  std::size_t train_size = 0;
  std::size_t rounds_used = 0;  // epochs for a local run
  double test_auprc = 0.0;
  std::size_t test_n = 0;
  std::vector<std::uint64_t> param_digests;  // local runs: per-epoch trajectory
};

struct RunHistory {
  std::string method;
  std::string task;
  std::uint64_t seed = 0;

  std::vector<double> round_train_loss;  // mean over clients
  struct Eval {
    std::size_t round = 0;  // 1-based round/epoch the evaluation followed
    std::vector<double> per_client;
    double macro = 0.0;
  };
  std::vector<Eval> evals;

  std::size_t rounds_used = 0;  // rounds (FL), epochs (CL), max epochs (LL)
  std::size_t best_round = 0;
  // digest of the post-aggregation parameters each round; lets tests compare
  // whole trajectories bit-exactly
  std::vector<std::uint64_t> round_param_digest;

  std::vector<ClientTrack> clients;

  // best-validation checkpoint the test metrics came from: one set for
  // global-model methods, one per client for personalized and local runs
  std::vector<nn::ParamSet> best_params;
  bool per_client_checkpoints = false;
};

void save_history_json(const RunHistory& history, const std::string& path);

// Tracks a to-be-maximized validation metric; stop once `patience`
// consecutive observations fail to improve on the best seen.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  bool observe(double metric) {
    ++count_;
    if (!any_ || metric > best_) {
      best_ = metric;
      best_index_ = count_ - 1;
      since_best_ = 0;
      any_ = true;
      return false;
    }
    ++since_best_;
    return since_best_ >= patience_;
  }

  bool last_improved() const { return any_ && since_best_ == 0; }
  std::size_t best_index() const { return best_index_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t count_ = 0;
  std::size_t since_best_ = 0;
  std::size_t best_index_ = 0;
  double best_ = 0.0;
  bool any_ = false;
};

// One client's local pass: `epochs` epochs of minibatch SGD over its train
// split, batch order drawn from the stream keyed on (seed, client, epoch).
// The caller's snapshot is taken by value and left untouched. epoch_base
// offsets the stream key so round t of a federated run and epoch t of a
// local run draw identical batches when local_epochs == 1.
nn::ParamSet local_train(nn::ParamSet params,
                         const std::vector<nn::EncodedPatient>& train,
                         const nn::Hyperparams& hp, std::size_t epochs,
                         double lr, const nn::ProxTerm* prox,
                         std::uint64_t seed, const std::string& client_id,
                         std::size_t epoch_base, double* mean_loss_out = nullptr);

// Size-weighted parameter mean, every tensor included. Weights are
// n_i / sum(n); uniform = true ignores sizes.
nn::ParamSet aggregate_fedavg(const std::vector<nn::ParamSet>& client_params,
                              const std::vector<std::size_t>& sizes,
                              bool uniform = false);

// Personalized aggregation: shared tensors take the FedAvg mean, each
// client keeps its own norm-flagged tensors untouched.
std::vector<nn::ParamSet> aggregate_fedbn(
    const std::vector<nn::ParamSet>& client_params,
    const std::vector<std::size_t>& sizes, bool uniform = false);

RunHistory run_federated(const FLConfig& cfg, const RunInput& input);
RunHistory run_centralized(const FLConfig& cfg, const RunInput& input);
RunHistory run_local(const FLConfig& cfg, const RunInput& input);

// Dispatch on cfg.method.kind.
RunHistory run(const FLConfig& cfg, const RunInput& input);

}  // namespace unifl::fl

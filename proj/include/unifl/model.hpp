#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unifl/tensor.hpp"

namespace unifl::nn {

enum class Task { Dx, LOS3, LOS7, Mort, Readm };

const char* task_name(Task t);
Task task_from_name(const std::string& name);

// Dx is 18-way multi-label; the other tasks are single binary heads.
constexpr std::size_t kDxLabels = 18;
std::size_t head_dim(Task t);

struct Hyperparams {
  std::uint32_t vocab_size = 2048;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 64;
  std::size_t max_tokens_per_event = 32;
  std::size_t max_events_per_patient = 64;
  Task task = Task::LOS3;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;

  std::size_t head_dim() const { return nn::head_dim(task); }
  void validate() const;
};

// A patient after the text front end: one token-id list per event, already
// time-ordered (ties broken by original event index) and truncated to the
// most recent max_events_per_patient events / first max_tokens_per_event
// tokens. Labels are the task's target bits.
struct EncodedPatient {
  std::vector<std::vector<std::uint32_t>> event_tokens;
  std::vector<double> labels;
};

// --- Parameter layout -----------------------------------------------------
//
// The model is: Emb -> per-event GRU -> LayerNorm -> cross-event GRU ->
// LayerNorm -> linear head. One GRU step uses
//   r = sigmoid(W_r x + U_r h + b_r)
//   u = sigmoid(W_u x + U_u h + b_u)
//   n = tanh(W_n x + r * (U_n h) + b_n)
//   h' = (1 - u) * n + u * h
// with h_0 = 0. LayerNorm normalizes the final hidden state to zero mean /
// unit variance over its dimensions before gain and bias.
//
// Tensor order inside a ParamSet is fixed below; aggregation and digests
// rely on it.

ParamSet init_params(const Hyperparams& hp, std::uint64_t seed);

// Intermediate activations of one event's GRU pass.
struct EventCache {
  std::vector<std::uint32_t> tokens;
  // per step: gate activations and the recurrent candidate product U_n h.
  std::vector<std::vector<double>> r, u, n, unh, h;
  // layer norm over the final hidden state
  double mean = 0.0, inv_std = 0.0;
  std::vector<double> xhat;
  std::vector<double> z;  // normalized, gained, biased event vector
};

struct PatientCache {
  std::vector<EventCache> events;
  std::vector<std::vector<double>> agg_r, agg_u, agg_n, agg_unh, agg_h;
  double agg_mean = 0.0, agg_inv_std = 0.0;
  std::vector<double> agg_xhat;
  std::vector<double> patient_vec;
  std::vector<double> logits;
};

// Event encoder: embeds the token ids, runs the event GRU, layer-normalizes
// the final state. Throws if a token id is outside the embedding table.
EventCache forward_event(const std::vector<std::uint32_t>& tokens,
                         const ParamSet& params, const Hyperparams& hp);

// Whole pipeline for one patient: every event through forward_event, the
// event vectors through the aggregator GRU, norm and head.
PatientCache forward_patient(const EncodedPatient& patient, const ParamSet& params,
                             const Hyperparams& hp);

// Mean binary cross-entropy with logits over the head dimensions.
double loss(const std::vector<double>& logits, const std::vector<double>& labels);

// Exact gradients of loss(forward_patient(...)) w.r.t. every tensor,
// accumulated into `grads` (same layout as params). Returns the loss.
double backward(const EncodedPatient& patient, const PatientCache& cache,
                const ParamSet& params, const Hyperparams& hp, GradSet& grads);

GradSet zero_grads(const ParamSet& params);

// Mean loss and mean gradient over a batch. Summation runs in sample order,
// so results do not depend on how callers schedule batches across threads.
double batch_forward_backward(const std::vector<const EncodedPatient*>& batch,
                              const ParamSet& params, const Hyperparams& hp,
                              GradSet& grads);

// Proximal pull toward an anchor parameter set: adds mu * (w - anchor) to
// the gradient, i.e. the derivative of (mu/2)||w - anchor||^2. By default
// the penalty spans every tensor, norm-flagged ones included;
// exclude_norm limits it to the tensors that aggregation shares.
struct ProxTerm {
  double mu = 0.0;
  const ParamSet* anchor = nullptr;
  bool exclude_norm = false;
};

// In-place SGD: w <- w - lr * (grad [+ prox pull]). Pass prox = nullptr for
// the plain step; a null prox and mu == 0 take the identical code path, so
// the two are bit-equivalent by construction.
void sgd_step(ParamSet& params, const GradSet& grads, double lr,
              const ProxTerm* prox = nullptr);

// --- Gradient checking ------------------------------------------------------

struct TensorCheck {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  double worst_rel_err = 0.0;
  std::string worst_tensor;
  bool pass = false;
};

// Builds a tiny model and a synthetic batch from `seed`, then compares
// backward() against central finite differences (eps = 1e-4) parameter by
// parameter. The error ratio is |g - g_fd| / max(|g|, |g_fd|, 1e-3); the
// floor keeps the finite-difference truncation noise (~1e-8 on these
// losses) from inflating ratios on near-zero gradients.
GradCheckReport grad_check(const Hyperparams& hp, std::uint64_t seed,
                           double tolerance);

// Convenience for tests: finite-difference gradient of the batch loss w.r.t.
// one tensor entry.
double fd_gradient(const std::vector<const EncodedPatient*>& batch,
                   ParamSet& params, const Hyperparams& hp, std::size_t tensor_idx,
                   std::size_t value_idx, double eps = 1e-4);

}  // namespace unifl::nn

#include "unifl/fl.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "unifl/metrics.hpp"
#include "unifl/rng.hpp"

namespace unifl::fl {

namespace {

constexpr std::uint64_t kShuffleTag = 0x10ca1ULL;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic-output parallel map: fn(i) writes only to slot i, so any
// interleaving gives the same result. Exceptions surface on the caller.
void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  const std::size_t n_threads = std::min(workers, n);
  std::vector<std::exception_ptr> errors(n_threads);
  std::vector<std::thread> threads;
  threads.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) {
    threads.emplace_back([&, t]() {
      try {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
          fn(i);
        }
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (std::thread& th : threads) th.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Validation metric for one client; empty when the split has no positive
// labels (the curve is undefined there, so the client sits out the macro).
std::optional<double> try_valid_auprc(const nn::ParamSet& params,
                                      const std::vector<nn::EncodedPatient>& valid,
                                      const nn::Hyperparams& hp, bool dx_macro) {
  bool any_positive = false;
  for (const auto& p : valid) {
    for (double y : p.labels) any_positive = any_positive || y != 0.0;
  }
  if (valid.empty() || !any_positive) return std::nullopt;
  return metrics::evaluate(params, valid, hp, dx_macro).auprc;
}

std::uint64_t combined_digest(const std::vector<nn::ParamSet>& sets) {
  if (sets.size() == 1) return nn::digest(sets.front());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const nn::ParamSet& s : sets) {
    std::uint64_t d = nn::digest(s);
    for (int b = 0; b < 8; ++b) {
      h ^= (d >> (8 * b)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

void check_input(const FLConfig& cfg, const RunInput& input) {
  cfg.validate();
  if (input.clients.empty() || input.clients.size() != input.client_ids.size()) {
    throw std::invalid_argument("run: empty or inconsistent client list");
  }
  for (const synth::EncodedSplit* c : input.clients) {
    if (c == nullptr || c->train.empty()) {
      throw std::invalid_argument("run: client with empty train split");
    }
  }
}

}  // namespace

const char* method_name(MethodKind kind) {
  switch (kind) {
    case MethodKind::Local: return "local";
    case MethodKind::Centralized: return "centralized";
    case MethodKind::FedAvg: return "fedavg";
    case MethodKind::FedProx: return "fedprox";
    case MethodKind::FedBN: return "fedbn";
    case MethodKind::FedPxN: return "fedpxn";
  }
  throw std::invalid_argument("bad method kind");
}

MethodKind method_from_name(const std::string& name) {
  if (name == "local") return MethodKind::Local;
  if (name == "centralized") return MethodKind::Centralized;
  if (name == "fedavg") return MethodKind::FedAvg;
  if (name == "fedprox") return MethodKind::FedProx;
  if (name == "fedbn") return MethodKind::FedBN;
  if (name == "fedpxn") return MethodKind::FedPxN;
  throw std::invalid_argument("unknown method: " + name);
}

void FLConfig::validate() const {
  hp.validate();
  if (total_rounds == 0) throw std::invalid_argument("total_rounds must be >= 1");
  if (local_epochs == 0) throw std::invalid_argument("local_epochs must be >= 1");
  if (eval_every == 0) throw std::invalid_argument("eval_every must be >= 1");
  if (early_stop_patience == 0) throw std::invalid_argument("patience must be >= 1");
  if (workers == 0) throw std::invalid_argument("workers must be >= 1");
  if (method.mu < 0.0) throw std::invalid_argument("mu must be >= 0");
}

nn::ParamSet local_train(nn::ParamSet params,
                         const std::vector<nn::EncodedPatient>& train,
                         const nn::Hyperparams& hp, std::size_t epochs, double lr,
                         const nn::ProxTerm* prox, std::uint64_t seed,
                         const std::string& client_id, std::size_t epoch_base,
                         double* mean_loss_out) {
  if (train.empty()) throw std::invalid_argument("local_train: empty train split");
  if (epochs == 0) throw std::invalid_argument("local_train: epochs must be >= 1");

  const std::uint64_t client_key = fnv1a(client_id);
  double loss_sum = 0.0;
  std::size_t loss_n = 0;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    Rng rng = Rng::keyed({seed, client_key, kShuffleTag, epoch_base + epoch});
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
      const std::size_t end = std::min(order.size(), start + hp.batch_size);
      std::vector<const nn::EncodedPatient*> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(&train[order[i]]);

      nn::GradSet grads = nn::zero_grads(params);
      const double batch_loss = nn::batch_forward_backward(batch, params, hp, grads);
      nn::sgd_step(params, grads, lr, prox);
      loss_sum += batch_loss * static_cast<double>(batch.size());
      loss_n += batch.size();
    }
  }
  if (mean_loss_out != nullptr) {
    *mean_loss_out = loss_sum / static_cast<double>(loss_n);
  }
  return params;
}

nn::ParamSet aggregate_fedavg(const std::vector<nn::ParamSet>& client_params,
                              const std::vector<std::size_t>& sizes, bool uniform) {
  if (client_params.empty() || client_params.size() != sizes.size()) {
    throw std::invalid_argument("aggregate: empty or inconsistent inputs");
  }
  double total = 0.0;
  for (std::size_t n : sizes) {
    if (n == 0) throw std::invalid_argument("aggregate: client with zero samples");
    total += static_cast<double>(n);
  }
  for (const nn::ParamSet& p : client_params) {
    if (!nn::same_shapes(client_params.front(), p)) {
      throw std::invalid_argument("aggregate: client parameter shapes differ");
    }
  }
  // Averaging one client is the identity.
  if (client_params.size() == 1) return client_params.front();

  // Computed as v0 + sum_i w_i (v_i - v0), algebraically the weighted mean
  // but exactly idempotent when all clients agree (the deltas vanish). The
  // final clamp pins the result inside the coordinate-wise hull, where the
  // exact mean always lies; rounding alone could drift an ulp outside.
  nn::ParamSet out = client_params.front();
  for (std::size_t c = 1; c < client_params.size(); ++c) {
    const double w = uniform
                         ? 1.0 / static_cast<double>(client_params.size())
                         : static_cast<double>(sizes[c]) / total;
    for (std::size_t ti = 0; ti < out.count(); ++ti) {
      double* acc = out.at(ti).values.data();
      const double* base = client_params.front().at(ti).values.data();
      const double* v = client_params[c].at(ti).values.data();
      for (std::size_t j = 0; j < out.at(ti).size(); ++j) {
        acc[j] += w * (v[j] - base[j]);
      }
    }
  }
  for (std::size_t ti = 0; ti < out.count(); ++ti) {
    double* acc = out.at(ti).values.data();
    for (std::size_t j = 0; j < out.at(ti).size(); ++j) {
      double lo = client_params.front().at(ti).values[j];
      double hi = lo;
      for (std::size_t c = 1; c < client_params.size(); ++c) {
        const double v = client_params[c].at(ti).values[j];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      acc[j] = std::clamp(acc[j], lo, hi);
    }
  }
  return out;
}

std::vector<nn::ParamSet> aggregate_fedbn(
    const std::vector<nn::ParamSet>& client_params,
    const std::vector<std::size_t>& sizes, bool uniform) {
  const nn::ParamSet shared = aggregate_fedavg(client_params, sizes, uniform);
  std::vector<nn::ParamSet> out;
  out.reserve(client_params.size());
  for (const nn::ParamSet& own : client_params) {
    nn::ParamSet personalized = shared;
    for (std::size_t ti = 0; ti < personalized.count(); ++ti) {
      if (personalized.at(ti).is_norm) {
        personalized.at(ti).values = own.at(ti).values;
      }
    }
    out.push_back(std::move(personalized));
  }
  return out;
}

RunHistory run_federated(const FLConfig& cfg, const RunInput& input) {
  check_input(cfg, input);
  if (!cfg.method.is_federated()) {
    throw std::invalid_argument("run_federated: method is not federated");
  }
  const std::size_t n = input.clients.size();
  const nn::Hyperparams& hp = cfg.hp;

  RunHistory history;
  history.method = method_name(cfg.method.kind);
  history.task = nn::task_name(hp.task);
  history.seed = cfg.seed;

  std::vector<std::size_t> sizes(n);
  for (std::size_t i = 0; i < n; ++i) sizes[i] = input.clients[i]->train.size();

  const nn::ParamSet w0 = nn::init_params(hp, cfg.seed);
  std::vector<nn::ParamSet> client_params(n, w0);
  std::vector<nn::ParamSet> best_params = client_params;
  std::size_t best_round = 0;

  EarlyStopper stopper(cfg.early_stop_patience);
  bool stop = false;

  for (std::size_t round = 0; round < cfg.total_rounds && !stop; ++round) {
    // round-start snapshots anchor the proximal pull
    std::vector<nn::ParamSet> anchors;
    if (cfg.method.proximal()) anchors = client_params;

    std::vector<nn::ParamSet> trained(n);
    std::vector<double> losses(n, 0.0);
    parallel_for(n, cfg.workers, [&](std::size_t i) {
      nn::ProxTerm prox;
      const nn::ProxTerm* prox_ptr = nullptr;
      if (cfg.method.proximal()) {
        prox = nn::ProxTerm{cfg.method.mu, &anchors[i], cfg.method.prox_exclude_norm};
        prox_ptr = &prox;
      }
      trained[i] = local_train(client_params[i], input.clients[i]->train, hp,
                               cfg.local_epochs, hp.learning_rate, prox_ptr,
                               cfg.seed, input.client_ids[i],
                               round * cfg.local_epochs, &losses[i]);
    });

    if (cfg.method.personalized()) {
      client_params = aggregate_fedbn(trained, sizes, cfg.method.uniform_weighting);
    } else {
      const nn::ParamSet global =
          aggregate_fedavg(trained, sizes, cfg.method.uniform_weighting);
      client_params.assign(n, global);
    }

    double loss_mean = 0.0;
    for (double l : losses) loss_mean += l;
    history.round_train_loss.push_back(loss_mean / static_cast<double>(n));
    history.round_param_digest.push_back(combined_digest(client_params));
    history.rounds_used = round + 1;

    const bool eval_due =
        (round + 1) % cfg.eval_every == 0 || round + 1 == cfg.total_rounds;
    if (!eval_due) continue;

    std::vector<std::optional<double>> valid(n);
    parallel_for(n, cfg.workers, [&](std::size_t i) {
      valid[i] = try_valid_auprc(client_params[i], input.clients[i]->valid, hp,
                                 cfg.dx_macro);
    });
    RunHistory::Eval eval;
    eval.round = round + 1;
    double macro = 0.0;
    std::size_t defined = 0;
    for (std::size_t i = 0; i < n; ++i) {
      eval.per_client.push_back(valid[i].value_or(
          std::numeric_limits<double>::quiet_NaN()));
      if (valid[i]) {
        macro += *valid[i];
        ++defined;
      }
    }
    if (defined == 0) {
      throw std::runtime_error(
          "validation is undefined for every client (no positive labels)");
    }
    eval.macro = macro / static_cast<double>(defined);
    history.evals.push_back(eval);

    stop = stopper.observe(eval.macro);
    if (stopper.last_improved()) {
      best_params = client_params;
      best_round = round + 1;
    }
  }
  history.best_round = best_round;

  history.clients.resize(n);
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    ClientTrack& track = history.clients[i];
    track.client_id = input.client_ids[i];
    track.train_size = sizes[i];
    track.rounds_used = history.rounds_used;
    const metrics::EvalReport r =
        metrics::evaluate(best_params[i], input.clients[i]->test, hp, cfg.dx_macro);
    track.test_auprc = r.auprc;
    track.test_n = r.n_samples;
  });
  if (cfg.method.personalized()) {
    history.best_params = std::move(best_params);
    history.per_client_checkpoints = true;
  } else {
    history.best_params.push_back(std::move(best_params.front()));
  }
  return history;
}

RunHistory run_centralized(const FLConfig& cfg, const RunInput& input) {
  check_input(cfg, input);
  if (cfg.method.kind != MethodKind::Centralized) {
    throw std::invalid_argument("run_centralized: wrong method");
  }
  const std::size_t n = input.clients.size();
  const nn::Hyperparams& hp = cfg.hp;

  RunHistory history;
  history.method = method_name(cfg.method.kind);
  history.task = nn::task_name(hp.task);
  history.seed = cfg.seed;

  // pool the clients' splits in client order
  std::vector<nn::EncodedPatient> pooled_train, pooled_valid;
  for (const synth::EncodedSplit* c : input.clients) {
    pooled_train.insert(pooled_train.end(), c->train.begin(), c->train.end());
    pooled_valid.insert(pooled_valid.end(), c->valid.begin(), c->valid.end());
  }

  // The pooled shuffle stream is keyed by the joined client ids; a
  // one-client pool therefore trains bit-identically to that client's
  // local run.
  std::string pool_id;
  for (const std::string& id : input.client_ids) {
    if (!pool_id.empty()) pool_id += '\n';
    pool_id += id;
  }

  nn::ParamSet params = nn::init_params(hp, cfg.seed);
  nn::ParamSet best_params = params;
  std::size_t best_round = 0;
  EarlyStopper stopper(cfg.early_stop_patience);
  bool stop = false;

  for (std::size_t epoch = 0; epoch < cfg.total_rounds && !stop; ++epoch) {
    // literal shuffle = one permutation drawn before the loop and reused
    const std::size_t shuffle_epoch = cfg.literal_shuffle ? 0 : epoch;
    double mean_loss = 0.0;
    params = local_train(std::move(params), pooled_train, hp, 1, hp.learning_rate,
                         nullptr, cfg.seed, pool_id, shuffle_epoch, &mean_loss);

    history.round_train_loss.push_back(mean_loss);
    history.round_param_digest.push_back(nn::digest(params));
    history.rounds_used = epoch + 1;

    const bool eval_due =
        (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.total_rounds;
    if (!eval_due) continue;

    const std::optional<double> pooled =
        try_valid_auprc(params, pooled_valid, hp, cfg.dx_macro);
    if (!pooled) {
      throw std::runtime_error("pooled validation has no positive labels");
    }
    RunHistory::Eval eval;
    eval.round = epoch + 1;
    eval.macro = *pooled;
    history.evals.push_back(eval);

    stop = stopper.observe(eval.macro);
    if (stopper.last_improved()) {
      best_params = params;
      best_round = epoch + 1;
    }
  }
  history.best_round = best_round;

  history.clients.resize(n);
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    ClientTrack& track = history.clients[i];
    track.client_id = input.client_ids[i];
    track.train_size = input.clients[i]->train.size();
    track.rounds_used = history.rounds_used;
    const metrics::EvalReport r =
        metrics::evaluate(best_params, input.clients[i]->test, hp, cfg.dx_macro);
    track.test_auprc = r.auprc;
    track.test_n = r.n_samples;
  });
  history.best_params.push_back(std::move(best_params));
  return history;
}

RunHistory run_local(const FLConfig& cfg, const RunInput& input) {
  check_input(cfg, input);
  if (cfg.method.kind != MethodKind::Local) {
    throw std::invalid_argument("run_local: wrong method");
  }
  const std::size_t n = input.clients.size();
  const nn::Hyperparams& hp = cfg.hp;

  RunHistory history;
  history.method = method_name(cfg.method.kind);
  history.task = nn::task_name(hp.task);
  history.seed = cfg.seed;
  history.clients.resize(n);

  // Every client starts from the same w0 for comparability with the other
  // regimes; isolation means dropping one client cannot affect another.
  const nn::ParamSet w0 = nn::init_params(hp, cfg.seed);

  std::vector<std::vector<double>> losses(n);
  std::vector<nn::ParamSet> checkpoints(n);
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    ClientTrack& track = history.clients[i];
    track.client_id = input.client_ids[i];
    track.train_size = input.clients[i]->train.size();

    nn::ParamSet params = w0;
    nn::ParamSet best_params = params;
    EarlyStopper stopper(cfg.early_stop_patience);
    bool stop = false;
    for (std::size_t epoch = 0; epoch < cfg.total_rounds && !stop; ++epoch) {
      double mean_loss = 0.0;
      params = local_train(std::move(params), input.clients[i]->train, hp, 1,
                           hp.learning_rate, nullptr, cfg.seed,
                           input.client_ids[i], epoch, &mean_loss);
      losses[i].push_back(mean_loss);
      track.param_digests.push_back(nn::digest(params));
      track.rounds_used = epoch + 1;

      const bool eval_due =
          (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.total_rounds;
      if (!eval_due) continue;
      const std::optional<double> valid =
          try_valid_auprc(params, input.clients[i]->valid, hp, cfg.dx_macro);
      if (!valid) {
        throw std::runtime_error("client " + input.client_ids[i] +
                                 ": validation has no positive labels");
      }
      stop = stopper.observe(*valid);
      if (stopper.last_improved()) best_params = params;
    }

    const metrics::EvalReport r =
        metrics::evaluate(best_params, input.clients[i]->test, hp, cfg.dx_macro);
    track.test_auprc = r.auprc;
    track.test_n = r.n_samples;
    checkpoints[i] = std::move(best_params);
  });
  history.best_params = std::move(checkpoints);
  history.per_client_checkpoints = true;

  for (const ClientTrack& track : history.clients) {
    history.rounds_used = std::max(history.rounds_used, track.rounds_used);
  }
  for (std::size_t e = 0; e < history.rounds_used; ++e) {
    double total = 0.0;
    std::size_t active = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (e < losses[i].size()) {
        total += losses[i][e];
        ++active;
      }
    }
    history.round_train_loss.push_back(total / static_cast<double>(active));
  }
  return history;
}

RunHistory run(const FLConfig& cfg, const RunInput& input) {
  switch (cfg.method.kind) {
    case MethodKind::Local: return run_local(cfg, input);
    case MethodKind::Centralized: return run_centralized(cfg, input);
    default: return run_federated(cfg, input);
  }
}

void save_history_json(const RunHistory& history, const std::string& path) {
  nlohmann::json doc;
  doc["method"] = history.method;
  doc["task"] = history.task;
  doc["seed"] = history.seed;
  doc["rounds_used"] = history.rounds_used;
  doc["best_round"] = history.best_round;
  doc["round_train_loss"] = history.round_train_loss;
  doc["round_param_digest"] = history.round_param_digest;
  auto& evals = doc["evals"] = nlohmann::json::array();
  for (const RunHistory::Eval& e : history.evals) {
    nlohmann::json je;
    je["round"] = e.round;
    je["macro"] = e.macro;
    je["per_client"] = e.per_client;
    evals.push_back(std::move(je));
  }
  auto& clients = doc["clients"] = nlohmann::json::array();
  for (const ClientTrack& t : history.clients) {
    nlohmann::json jt;
    jt["client_id"] = t.client_id;
    jt["train_size"] = t.train_size;
    jt["rounds_used"] = t.rounds_used;
    jt["test_auprc"] = t.test_auprc;
    jt["test_n"] = t.test_n;
    clients.push_back(std::move(jt));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << doc.dump(2) << '\n';
}

}  // namespace unifl::fl

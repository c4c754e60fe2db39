#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>

#include "oracles.hpp"
#include "unifl/fl.hpp"
#include "unifl/generator.hpp"
#include "unifl/rng.hpp"

using namespace unifl;
using namespace unifl::fl;

namespace {

// Small generated world shared by the run-level tests.
struct Fixture {
  synth::GeneratedData data;
  bpe::TokenizerVocab vocab;
  std::vector<synth::EncodedSplit> encoded;
  RunInput input;
  nn::Hyperparams hp;

  explicit Fixture(std::size_t n_clients = 3, std::size_t base = 120) {
    synth::GeneratorConfig gen;
    gen.n_clients = n_clients;
    gen.base_patients = base;
    gen.size_ratio_max = 3.0;
    gen.seed = 5;
    gen.tasks = {nn::Task::LOS3};
    gen.min_events = 3;
    gen.max_events = 6;
    data = synth::generate(gen);
    vocab = bpe::train_vocab(synth::vocab_corpus(data), 300);

    hp.vocab_size = vocab.size();
    hp.embed_dim = 8;
    hp.hidden_dim = 8;
    hp.max_tokens_per_event = 16;
    hp.max_events_per_patient = 6;
    hp.task = nn::Task::LOS3;
    hp.learning_rate = 0.1;
    hp.batch_size = 16;

    for (const synth::ClientDataset& c : data.clients) {
      encoded.push_back(synth::encode_dataset(c, vocab, nn::Task::LOS3, hp));
      input.client_ids.push_back(c.profile.client_id);
    }
    for (const synth::EncodedSplit& e : encoded) input.clients.push_back(&e);
  }

  FLConfig config(MethodKind kind, std::size_t rounds = 4) const {
    FLConfig cfg;
    cfg.method.kind = kind;
    cfg.method.mu = 0.01;
    cfg.hp = hp;
    cfg.total_rounds = rounds;
    cfg.seed = 1;
    cfg.early_stop_patience = 100;  // keep trajectories full length
    return cfg;
  }
};

nn::ParamSet random_params(const nn::Hyperparams& hp, std::uint64_t seed) {
  return nn::init_params(hp, seed);
}

}  // namespace

TEST_CASE("early stopper never fires on a monotones sequence") {
  EarlyStopper stopper(3);
  for (double v : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}) {
    CHECK(!stopper.observe(v));
  }
  CHECK(stopper.best_index() == 5);
}

TEST_CASE("early stopper counts a flat sequence against patience") {
  EarlyStopper stopper(3);
  CHECK(!stopper.observe(0.5));
  CHECK(!stopper.observe(0.5));
  CHECK(!stopper.observe(0.5));
  CHECK(stopper.observe(0.5));  // fourth evaluation stops
  CHECK(stopper.best_index() == 0);
}

TEST_CASE("early stopper hand trace") {
  EarlyStopper stopper(2);
  CHECK(!stopper.observe(0.30));
  CHECK(!stopper.observe(0.35));
  CHECK(!stopper.observe(0.34));
  CHECK(stopper.observe(0.34));  // stop after the fourth
  CHECK(stopper.best_index() == 1);
  CHECK(stopper.best() == 0.35);
}

TEST_CASE("local_train with one sample and one epoch is a single sgd step") {
  Fixture fx(1, 80);
  std::vector<nn::EncodedPatient> train = {fx.encoded[0].train[0]};
  const nn::ParamSet start = random_params(fx.hp, 9);

  const nn::ParamSet stepped =
      local_train(start, train, fx.hp, 1, fx.hp.learning_rate, nullptr, 1, "c", 0);

  nn::ParamSet manual = start;
  nn::GradSet grads = nn::zero_grads(manual);
  nn::batch_forward_backward({&train[0]}, manual, fx.hp, grads);
  nn::sgd_step(manual, grads, fx.hp.learning_rate);
  CHECK(nn::digest(stepped) == nn::digest(manual));
  // and the input snapshot is untouched
  CHECK(nn::digest(start) == nn::digest(random_params(fx.hp, 9)));
}

TEST_CASE("local_train is bit-reproducible") {
  Fixture fx;
  const nn::ParamSet start = random_params(fx.hp, 2);
  const nn::ParamSet a = local_train(start, fx.encoded[0].train, fx.hp, 2,
                                     fx.hp.learning_rate, nullptr, 7, "site0", 0);
  const nn::ParamSet b = local_train(start, fx.encoded[0].train, fx.hp, 2,
                                     fx.hp.learning_rate, nullptr, 7, "site0", 0);
  CHECK(nn::digest(a) == nn::digest(b));
  // a different epoch base draws different batches
  const nn::ParamSet c = local_train(start, fx.encoded[0].train, fx.hp, 2,
                                     fx.hp.learning_rate, nullptr, 7, "site0", 5);
  CHECK(nn::digest(a) != nn::digest(c));
}

TEST_CASE("fedavg aggregation is exactly idempotent on identical clients") {
  nn::Hyperparams hp;
  hp.vocab_size = 16;
  hp.embed_dim = 4;
  hp.hidden_dim = 4;
  const nn::ParamSet w = random_params(hp, 3);
  for (std::size_t n : {2, 3, 5, 7}) {
    std::vector<nn::ParamSet> clients(n, w);
    std::vector<std::size_t> sizes(n);
    for (std::size_t i = 0; i < n; ++i) sizes[i] = 1 + i;
    const nn::ParamSet agg = aggregate_fedavg(clients, sizes);
    for (std::size_t t = 0; t < w.count(); ++t) {
      CHECK(agg.at(t).values == w.at(t).values);
    }
  }
}

TEST_CASE("fedavg is the size-weighted mean") {
  nn::Hyperparams hp;
  hp.vocab_size = 4;
  hp.embed_dim = 2;
  hp.hidden_dim = 2;
  // sizes {1,3} and scalar values {0,4}: mean must be 3
  nn::ParamSet a = random_params(hp, 1), b = a;
  for (auto& t : a.tensors) std::fill(t.values.begin(), t.values.end(), 0.0);
  for (auto& t : b.tensors) std::fill(t.values.begin(), t.values.end(), 4.0);
  const nn::ParamSet agg = aggregate_fedavg({a, b}, {1, 3});
  for (const auto& t : agg.tensors) {
    for (double v : t.values) CHECK(v == doctest::Approx(3.0).epsilon(1e-15));
  }
  // uniform weighting ignores the sizes
  const nn::ParamSet uni = aggregate_fedavg({a, b}, {1, 3}, true);
  for (const auto& t : uni.tensors) {
    for (double v : t.values) CHECK(v == doctest::Approx(2.0).epsilon(1e-15));
  }
}

TEST_CASE("fedavg matches the flat weighted-mean oracle") {
  nn::Hyperparams hp;
  hp.vocab_size = 8;
  hp.embed_dim = 3;
  hp.hidden_dim = 3;
  std::vector<nn::ParamSet> clients = {random_params(hp, 1), random_params(hp, 2),
                                       random_params(hp, 3)};
  const std::vector<std::size_t> sizes = {5, 2, 9};
  const nn::ParamSet agg = aggregate_fedavg(clients, sizes);

  for (std::size_t t = 0; t < agg.count(); ++t) {
    std::vector<std::vector<double>> vecs;
    for (const auto& c : clients) vecs.push_back(c.at(t).values);
    const std::vector<double> expected =
        test_oracles::weighted_mean(vecs, {5.0, 2.0, 9.0});
    for (std::size_t j = 0; j < expected.size(); ++j) {
      CHECK(agg.at(t).values[j] == doctest::Approx(expected[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("fedavg stays inside the coordinate-wise hull") {
  nn::Hyperparams hp;
  hp.vocab_size = 8;
  hp.embed_dim = 3;
  hp.hidden_dim = 3;
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<nn::ParamSet> clients;
    std::vector<std::size_t> sizes;
    const std::size_t n = 2 + rng.next_below(4);
    for (std::size_t c = 0; c < n; ++c) {
      clients.push_back(random_params(hp, 100 * trial + c));
      sizes.push_back(1 + rng.next_below(30));
    }
    const nn::ParamSet agg = aggregate_fedavg(clients, sizes);
    for (std::size_t t = 0; t < agg.count(); ++t) {
      for (std::size_t j = 0; j < agg.at(t).size(); ++j) {
        double lo = clients[0].at(t).values[j], hi = lo;
        for (const auto& c : clients) {
          lo = std::min(lo, c.at(t).values[j]);
          hi = std::max(hi, c.at(t).values[j]);
        }
        CHECK(agg.at(t).values[j] >= lo);
        CHECK(agg.at(t).values[j] <= hi);
      }
    }
  }
}

TEST_CASE("fedbn exclusion law: norm tensors stay client-personal, exactly") {
  nn::Hyperparams hp;
  hp.vocab_size = 8;
  hp.embed_dim = 3;
  hp.hidden_dim = 3;
  std::vector<nn::ParamSet> clients = {random_params(hp, 11), random_params(hp, 12),
                                       random_params(hp, 13)};
  // give the norm tensors distinct values per client
  for (std::size_t c = 0; c < clients.size(); ++c) {
    for (auto& t : clients[c].tensors) {
      if (t.is_norm) {
        for (auto& v : t.values) v = 0.25 * static_cast<double>(c + 1);
      }
    }
  }
  const std::vector<std::size_t> sizes = {4, 4, 8};
  const auto personalized = aggregate_fedbn(clients, sizes);
  const nn::ParamSet shared = aggregate_fedavg(clients, sizes);

  REQUIRE(personalized.size() == clients.size());
  for (std::size_t c = 0; c < clients.size(); ++c) {
    for (std::size_t t = 0; t < shared.count(); ++t) {
      if (personalized[c].at(t).is_norm) {
        CHECK(personalized[c].at(t).values == clients[c].at(t).values);
      } else {
        CHECK(personalized[c].at(t).values == shared.at(t).values);
      }
    }
  }
}

TEST_CASE("fedbn without norm tensors reduces to fedavg for every client") {
  nn::ParamSet a, b;
  a.tensors.push_back(nn::Tensor::zeros("w", {2, 2}));
  b.tensors.push_back(nn::Tensor::zeros("w", {2, 2}));
  a.tensors[0].values = {1, 2, 3, 4};
  b.tensors[0].values = {5, 6, 7, 8};
  const auto personalized = aggregate_fedbn({a, b}, {1, 1});
  const auto shared = aggregate_fedavg({a, b}, {1, 1});
  for (const auto& p : personalized) {
    CHECK(p.at(0).values == shared.at(0).values);
  }
}

TEST_CASE("aggregation rejects malformed inputs") {
  nn::Hyperparams hp;
  hp.vocab_size = 8;
  hp.embed_dim = 3;
  hp.hidden_dim = 3;
  const nn::ParamSet w = random_params(hp, 1);
  CHECK_THROWS_AS(aggregate_fedavg({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(aggregate_fedavg({w}, {0}), std::invalid_argument);
  nn::Hyperparams hp2 = hp;
  hp2.hidden_dim = 4;
  CHECK_THROWS_AS(aggregate_fedavg({w, random_params(hp2, 1)}, {1, 1}),
                  std::invalid_argument);
}

TEST_CASE("fedprox at mu zero is bit-identical to fedavg") {
  Fixture fx;
  FLConfig avg = fx.config(MethodKind::FedAvg);
  FLConfig prox = fx.config(MethodKind::FedProx);
  prox.method.mu = 0.0;
  const RunHistory ha = run_federated(avg, fx.input);
  const RunHistory hb = run_federated(prox, fx.input);
  CHECK(ha.round_param_digest == hb.round_param_digest);
  for (std::size_t i = 0; i < ha.clients.size(); ++i) {
    CHECK(ha.clients[i].test_auprc == hb.clients[i].test_auprc);
  }
}

TEST_CASE("fedpxn at mu zero is bit-identical to fedbn") {
  Fixture fx;
  FLConfig bn = fx.config(MethodKind::FedBN);
  FLConfig pxn = fx.config(MethodKind::FedPxN);
  pxn.method.mu = 0.0;
  const RunHistory ha = run_federated(bn, fx.input);
  const RunHistory hb = run_federated(pxn, fx.input);
  CHECK(ha.round_param_digest == hb.round_param_digest);
  for (std::size_t i = 0; i < ha.clients.size(); ++i) {
    CHECK(ha.clients[i].test_auprc == hb.clients[i].test_auprc);
  }
}

TEST_CASE("fedprox with positive mu diverges from fedavg") {
  Fixture fx;
  FLConfig avg = fx.config(MethodKind::FedAvg);
  FLConfig prox = fx.config(MethodKind::FedProx);
  prox.method.mu = 0.5;
  const RunHistory ha = run_federated(avg, fx.input);
  const RunHistory hb = run_federated(prox, fx.input);
  CHECK(ha.round_param_digest != hb.round_param_digest);
}

TEST_CASE("single-client federation collapses to the local trajectory") {
  Fixture fx(1, 100);
  FLConfig fed = fx.config(MethodKind::FedAvg, 5);
  fed.local_epochs = 1;
  FLConfig loc = fx.config(MethodKind::Local, 5);

  const RunHistory hf = run_federated(fed, fx.input);
  const RunHistory hl = run_local(loc, fx.input);

  REQUIRE(hf.round_param_digest.size() == 5);
  REQUIRE(hl.clients.size() == 1);
  CHECK(hf.round_param_digest == hl.clients[0].param_digests);
  CHECK(hf.clients[0].test_auprc == hl.clients[0].test_auprc);
  CHECK(hf.rounds_used == hl.rounds_used);
}

TEST_CASE("worker count never changes results") {
  Fixture fx;
  for (const MethodKind kind :
       {MethodKind::FedAvg, MethodKind::FedBN, MethodKind::Local}) {
    FLConfig one = fx.config(kind);
    one.workers = 1;
    FLConfig eight = fx.config(kind);
    eight.workers = 8;
    const RunHistory ha = run(one, fx.input);
    const RunHistory hb = run(eight, fx.input);
    CHECK(ha.round_param_digest == hb.round_param_digest);
    for (std::size_t i = 0; i < ha.clients.size(); ++i) {
      CHECK(ha.clients[i].test_auprc == hb.clients[i].test_auprc);
      CHECK(ha.clients[i].param_digests == hb.clients[i].param_digests);
    }
  }
}

TEST_CASE("centralized with one client equals the local run") {
  Fixture fx(1, 100);
  const RunHistory hc = run_centralized(fx.config(MethodKind::Centralized, 5), fx.input);
  const RunHistory hl = run_local(fx.config(MethodKind::Local, 5), fx.input);
  CHECK(hc.round_param_digest == hl.clients[0].param_digests);
  CHECK(hc.clients[0].test_auprc == hl.clients[0].test_auprc);
}

TEST_CASE("centralized literal shuffle reuses one permutation") {
  Fixture fx;
  FLConfig literal = fx.config(MethodKind::Centralized, 3);
  literal.literal_shuffle = true;
  FLConfig fresh = fx.config(MethodKind::Centralized, 3);
  const RunHistory ha = run_centralized(literal, fx.input);
  const RunHistory hb = run_centralized(fresh, fx.input);
  // first epoch identical, later epochs diverge
  CHECK(ha.round_param_digest[0] == hb.round_param_digest[0]);
  CHECK(ha.round_param_digest[2] != hb.round_param_digest[2]);
}

TEST_CASE("local runs are isolated from other clients") {
  Fixture fx(3, 120);
  RunInput first_two;
  first_two.client_ids = {fx.input.client_ids[0], fx.input.client_ids[1]};
  first_two.clients = {fx.input.clients[0], fx.input.clients[1]};

  const RunHistory h3 = run_local(fx.config(MethodKind::Local), fx.input);
  const RunHistory h2 = run_local(fx.config(MethodKind::Local), first_two);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(h3.clients[i].test_auprc == h2.clients[i].test_auprc);
    CHECK(h3.clients[i].param_digests == h2.clients[i].param_digests);
  }
}

TEST_CASE("federated history is reproducible and bookkeeps rounds") {
  Fixture fx;
  FLConfig cfg = fx.config(MethodKind::FedPxN, 6);
  cfg.method.mu = 0.05;
  const RunHistory ha = run_federated(cfg, fx.input);
  const RunHistory hb = run_federated(cfg, fx.input);
  CHECK(ha.round_param_digest == hb.round_param_digest);
  CHECK(ha.rounds_used <= 6);
  CHECK(ha.rounds_used >= 1);
  CHECK(ha.best_round >= 1);
  CHECK(ha.best_round <= ha.rounds_used);
  CHECK(ha.evals.size() >= 1);
  CHECK(ha.round_train_loss.size() == ha.rounds_used);
  for (const auto& track : ha.clients) {
    CHECK(track.rounds_used == ha.rounds_used);
    CHECK(track.test_n > 0);
  }
}

TEST_CASE("early stopping caps the executed rounds") {
  Fixture fx;
  FLConfig cfg = fx.config(MethodKind::FedAvg, 40);
  cfg.early_stop_patience = 2;
  const RunHistory h = run_federated(cfg, fx.input);
  // with patience two the run must stop well before forty rounds on this
  // small fixture
  CHECK(h.rounds_used < 40);
  CHECK(h.best_round <= h.rounds_used);
}

TEST_CASE("invalid configurations are rejected") {
  Fixture fx;
  FLConfig cfg = fx.config(MethodKind::FedAvg);
  cfg.total_rounds = 0;
  CHECK_THROWS_AS(run_federated(cfg, fx.input), std::invalid_argument);

  cfg = fx.config(MethodKind::Local);
  CHECK_THROWS_AS(run_federated(cfg, fx.input), std::invalid_argument);

  cfg = fx.config(MethodKind::FedAvg);
  RunInput empty;
  CHECK_THROWS_AS(run_federated(cfg, empty), std::invalid_argument);
}

TEST_CASE("method names round trip") {
  for (const MethodKind kind :
       {MethodKind::Local, MethodKind::Centralized, MethodKind::FedAvg,
        MethodKind::FedProx, MethodKind::FedBN, MethodKind::FedPxN}) {
    CHECK(method_from_name(method_name(kind)) == kind);
  }
  CHECK_THROWS_AS(method_from_name("sgd"), std::invalid_argument);
}

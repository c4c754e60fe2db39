#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "unifl/data.hpp"

namespace unifl::synth {

// Knobs for the synthetic multi-hospital world. The generated clients are
// deliberately non-i.i.d. along the axes real hospital data differs on:
// schema spellings, code vocabularies, cohort size, label priors, and
// whole event families that some clients simply do not record.
struct GeneratorConfig {
  std::size_t n_clients = 4;
  std::size_t base_patients = 600;  // size of the largest client
  double size_ratio_max = 28.0;     // largest / smallest cohort; 600/28
                                    // keeps the smallest client above the
                                    // 20-patient floor
  std::uint64_t seed = 0;
  double signal_strength = 1.0;  // (0,1]; 1 = labels nearly deterministic in risk
  std::vector<nn::Task> tasks = {nn::Task::Dx, nn::Task::LOS3, nn::Task::LOS7,
                                 nn::Task::Mort, nn::Task::Readm};
  std::size_t min_events = 4;
  std::size_t max_events = 12;
  // canonical event-family names removed from a client's records, keyed by
  // client index (e.g. {2, {"inputevents"}})
  std::map<std::size_t, std::set<std::string>> dropped_event_types;

  void validate() const;
};

struct GeneratedData {
  std::vector<ClientDataset> clients;
  // Public schema spellings (event types and feature names) across all
  // clients; together with the dictionary descriptions this is the only
  // legal tokenizer training material.
  std::vector<std::string> schema_words;
};

// Ground truth: each patient draws a latent risk r ~ U(0,1); events carry
// descriptions whose sampling odds tilt with r, and labels are Bernoulli in
// a logistic of r with client- and task-specific offsets. The description
// pool is shared across clients (through disjoint client-local codes), so
// pooling clients enlarges the evidence vocabulary -- that is the signal
// federated training is supposed to recover.
GeneratedData generate(const GeneratorConfig& cfg);

// Normalized tokenizer corpus: every client's dictionary descriptions plus
// the schema words. Never patient records.
std::vector<std::string> vocab_corpus(const GeneratedData& data);

// The set of positively-loaded ("risk") descriptions a client can emit;
// exposed so tests can verify the pooled evidence strictly contains every
// single client's.
std::set<std::string> risk_descriptions(const ClientDataset& client);

}  // namespace unifl::synth

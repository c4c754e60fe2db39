#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "unifl/bpe.hpp"
#include "unifl/model.hpp"
#include "unifl/text.hpp"

namespace unifl::synth {

using nn::Task;

// Per-patient targets for all five tasks; each model trains on one of them.
struct Labels {
  std::array<std::uint8_t, nn::kDxLabels> dx{};
  std::uint8_t los3 = 0, los7 = 0, mort = 0, readm = 0;

  std::vector<double> for_task(Task t) const;
  bool any_positive(Task t) const;
};

struct PatientRecord {
  std::string patient_id;
  std::string client_id;
  std::vector<text::MedicalEvent> events;  // time-ordered
  Labels labels;
};

// How one client's schema differs from the others: the surface spellings
// of event types and feature names, which codes it uses, and which event
// families it lacks entirely.
struct ClientProfile {
  std::string client_id;
  std::string schema_variant;
  std::size_t n_patients = 0;
  std::map<std::string, double> label_prior;      // task name -> base rate
  std::set<std::string> dropped_event_types;      // canonical type names
};

struct SplitSpec {
  std::vector<std::size_t> train, valid, test;
};

struct ClientDataset {
  ClientProfile profile;
  std::vector<PatientRecord> records;
  text::CodeDictionary dictionary;
  std::map<Task, SplitSpec> splits;

  std::size_t train_size(Task t) const { return splits.at(t).train.size(); }
};

// Stratified 8:1:1 split on the task label (Dx stratifies on the
// any-positive indicator). Totals and per-stratum positive counts both land
// within one sample of exact proportionality. A single-class dataset
// degrades to an unstratified split with a warning on stderr.
SplitSpec split(const std::vector<PatientRecord>& records, Task task,
                std::uint64_t seed,
                std::array<std::size_t, 3> ratios = {8, 1, 1});

// JSONL dataset files: one record per line. Reading back what was written
// reproduces the records exactly, and rewriting reproduces the bytes.
void write_records_jsonl(const std::vector<PatientRecord>& records,
                         const std::string& path);
std::vector<PatientRecord> read_records_jsonl(const std::string& path);

// --- bridge to the model ----------------------------------------------------

// Sort events by timestamp (stable in the original order), linearize and
// tokenize each one, apply the event/token caps, and attach the task's
// label vector.
nn::EncodedPatient encode_patient(const PatientRecord& record,
                                  const text::CodeDictionary& dict,
                                  const bpe::TokenizerVocab& vocab, Task task,
                                  const nn::Hyperparams& hp);

// A client's three splits, encoded once so training loops never retokenize.
struct EncodedSplit {
  std::vector<nn::EncodedPatient> train, valid, test;
};

EncodedSplit encode_dataset(const ClientDataset& dataset,
                            const bpe::TokenizerVocab& vocab, Task task,
                            const nn::Hyperparams& hp);

}  // namespace unifl::synth

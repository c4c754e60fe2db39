#include "unifl/data.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "json.hpp"
#include "unifl/rng.hpp"

namespace unifl::synth {

using nlohmann::json;

std::vector<double> Labels::for_task(Task t) const {
  switch (t) {
    case Task::Dx: {
      std::vector<double> y(nn::kDxLabels);
      for (std::size_t i = 0; i < nn::kDxLabels; ++i) y[i] = dx[i];
      return y;
    }
    case Task::LOS3: return {static_cast<double>(los3)};
    case Task::LOS7: return {static_cast<double>(los7)};
    case Task::Mort: return {static_cast<double>(mort)};
    case Task::Readm: return {static_cast<double>(readm)};
  }
  throw std::invalid_argument("bad task");
}

bool Labels::any_positive(Task t) const {
  if (t != Task::Dx) return for_task(t)[0] != 0.0;
  for (auto b : dx) {
    if (b) return true;
  }
  return false;
}

namespace {

// Largest-remainder apportionment of `total` items into parts proportional
// to `ratios`; each count is within one of exact proportionality.
std::array<std::size_t, 3> apportion(std::size_t total,
                                     const std::array<std::size_t, 3>& ratios) {
  const double denom = static_cast<double>(ratios[0] + ratios[1] + ratios[2]);
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (std::size_t j = 0; j < 3; ++j) {
    const double ideal = static_cast<double>(total) * ratios[j] / denom;
    counts[j] = static_cast<std::size_t>(ideal);
    frac[j] = ideal - static_cast<double>(counts[j]);
    assigned += counts[j];
  }
  for (std::size_t leftover = total - assigned; leftover > 0; --leftover) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < 3; ++j) {
      if (frac[j] > frac[best]) best = j;
    }
    ++counts[best];
    frac[best] = -1.0;
  }
  return counts;
}

}  // namespace

SplitSpec split(const std::vector<PatientRecord>& records, Task task,
                std::uint64_t seed, std::array<std::size_t, 3> ratios) {
  std::vector<std::size_t> positives, negatives;
  for (std::size_t i = 0; i < records.size(); ++i) {
    (records[i].labels.any_positive(task) ? positives : negatives).push_back(i);
  }
  if (positives.empty() || negatives.empty()) {
    std::cerr << "warning: task " << nn::task_name(task)
              << " has a single class; splitting unstratified\n";
  }

  Rng rng = Rng::keyed({seed, static_cast<std::uint64_t>(task), 0x5117ULL});
  rng.shuffle(positives);
  rng.shuffle(negatives);

  // Total sizes and positive counts are each apportioned within +-1; the
  // negatives absorb the difference.
  const auto totals = apportion(records.size(), ratios);
  auto pos_counts = apportion(positives.size(), ratios);
  for (std::size_t j = 0; j < 3; ++j) {
    // keep neg counts nonnegative; only reachable when one class nearly
    // exhausts a split
    if (pos_counts[j] > totals[j]) {
      std::size_t excess = pos_counts[j] - totals[j];
      pos_counts[j] = totals[j];
      for (std::size_t k = 0; k < 3 && excess > 0; ++k) {
        const std::size_t room = totals[k] - pos_counts[k];
        const std::size_t take = std::min(room, excess);
        pos_counts[k] += take;
        excess -= take;
      }
    }
  }

  SplitSpec spec;
  auto emit = [](const std::vector<std::size_t>& src, std::size_t from,
                 std::size_t count, std::vector<std::size_t>& dst) {
    dst.insert(dst.end(), src.begin() + static_cast<std::ptrdiff_t>(from),
               src.begin() + static_cast<std::ptrdiff_t>(from + count));
  };
  std::size_t p = 0, n = 0;
  std::vector<std::size_t>* outs[3] = {&spec.train, &spec.valid, &spec.test};
  for (std::size_t j = 0; j < 3; ++j) {
    emit(positives, p, pos_counts[j], *outs[j]);
    p += pos_counts[j];
    emit(negatives, n, totals[j] - pos_counts[j], *outs[j]);
    n += totals[j] - pos_counts[j];
    std::sort(outs[j]->begin(), outs[j]->end());
  }
  return spec;
}

namespace {

json record_to_json(const PatientRecord& r) {
  json events = json::array();
  for (const auto& ev : r.events) {
    json features = json::array();
    for (const auto& [name, value] : ev.features) {
      features.push_back({name, value});
    }
    events.push_back(
        {{"type", ev.event_type}, {"features", features}, {"t", ev.timestamp_min}});
  }
  json labels = {{"dx", r.labels.dx},
                 {"los3", r.labels.los3},
                 {"los7", r.labels.los7},
                 {"mort", r.labels.mort},
                 {"readm", r.labels.readm}};
  return {{"patient_id", r.patient_id},
          {"client_id", r.client_id},
          {"events", events},
          {"labels", labels}};
}

PatientRecord record_from_json(const json& j) {
  PatientRecord r;
  r.patient_id = j.at("patient_id").get<std::string>();
  r.client_id = j.at("client_id").get<std::string>();
  for (const auto& jev : j.at("events")) {
    text::MedicalEvent ev;
    ev.event_type = jev.at("type").get<std::string>();
    ev.timestamp_min = jev.at("t").get<std::int64_t>();
    for (const auto& jf : jev.at("features")) {
      ev.features.emplace_back(jf.at(0).get<std::string>(),
                               jf.at(1).get<std::string>());
    }
    r.events.push_back(std::move(ev));
  }
  const json& jl = j.at("labels");
  const auto dx = jl.at("dx").get<std::vector<std::uint8_t>>();
  if (dx.size() != nn::kDxLabels) throw std::runtime_error("bad dx label width");
  std::copy(dx.begin(), dx.end(), r.labels.dx.begin());
  r.labels.los3 = jl.at("los3").get<std::uint8_t>();
  r.labels.los7 = jl.at("los7").get<std::uint8_t>();
  r.labels.mort = jl.at("mort").get<std::uint8_t>();
  r.labels.readm = jl.at("readm").get<std::uint8_t>();
  return r;
}

}  // namespace

void write_records_jsonl(const std::vector<PatientRecord>& records,
                         const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  for (const PatientRecord& r : records) {
    f << record_to_json(r).dump() << '\n';
  }
}

std::vector<PatientRecord> read_records_jsonl(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for read: " + path);
  std::vector<PatientRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " +
                               e.what());
    }
  }
  return records;
}

nn::EncodedPatient encode_patient(const PatientRecord& record,
                                  const text::CodeDictionary& dict,
                                  const bpe::TokenizerVocab& vocab, Task task,
                                  const nn::Hyperparams& hp) {
  if (record.events.empty()) {
    throw std::invalid_argument("record " + record.patient_id + " has no events");
  }
  std::vector<const text::MedicalEvent*> ordered;
  ordered.reserve(record.events.size());
  for (const auto& ev : record.events) ordered.push_back(&ev);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const text::MedicalEvent* a, const text::MedicalEvent* b) {
                     return a->timestamp_min < b->timestamp_min;
                   });

  nn::EncodedPatient out;
  for (const text::MedicalEvent* ev : ordered) {
    const std::string line = text::linearize_event(*ev, dict);
    bpe::TokenSequence seq = bpe::tokenize(line, vocab);
    if (seq.ids.size() > hp.max_tokens_per_event) {
      seq.ids.resize(hp.max_tokens_per_event);
    }
    out.event_tokens.push_back(std::move(seq.ids));
  }
  if (out.event_tokens.size() > hp.max_events_per_patient) {
    out.event_tokens.erase(
        out.event_tokens.begin(),
        out.event_tokens.end() - static_cast<std::ptrdiff_t>(hp.max_events_per_patient));
  }
  out.labels = record.labels.for_task(task);
  return out;
}

EncodedSplit encode_dataset(const ClientDataset& dataset,
                            const bpe::TokenizerVocab& vocab, Task task,
                            const nn::Hyperparams& hp) {
  const SplitSpec& spec = dataset.splits.at(task);
  EncodedSplit out;
  auto encode_all = [&](const std::vector<std::size_t>& idx,
                        std::vector<nn::EncodedPatient>& dst) {
    dst.reserve(idx.size());
    for (std::size_t i : idx) {
      dst.push_back(
          encode_patient(dataset.records[i], dataset.dictionary, vocab, task, hp));
    }
  };
  encode_all(spec.train, out.train);
  encode_all(spec.valid, out.valid);
  encode_all(spec.test, out.test);
  return out;
}

}  // namespace unifl::synth

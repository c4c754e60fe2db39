#include "unifl/generator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "unifl/rng.hpp"

namespace unifl::synth {

namespace {

// --- static world description ----------------------------------------------

struct FamilySchema {
  const char* canonical;     // normalized event-family name
  const char* num_feature;   // feature whose value is a plain number
  const char* code_feature;  // feature whose value is a medical code
};

// The numeric reading comes first and the coded observation last, so the
// informative description tokens sit at the end of the linearized text
// where a recurrent encoder retains them best.
constexpr FamilySchema kFamilies[] = {
    {"labevents", "value", "itemid"},
    {"prescriptions", "dose", "drug"},
    {"inputevents", "rate", "itemid"},
    {"chartevents", "value", "itemid"},
};
constexpr std::size_t kNumFamilies = 4;
constexpr std::size_t kDescPerFamily = 12;

// Descriptions per family, laid out in (risk, neutral, protective) triplets
// so a global index i has loading +1, 0, -1 for i % 3 == 0, 1, 2.
constexpr const char* kDescriptions[kNumFamilies][kDescPerFamily] = {
    {"lactate", "sodium", "albumin", "troponin", "potassium", "bicarbonate",
     "creatinine", "glucose", "hemoglobin", "bilirubin", "chloride",
     "platelet count"},
    {"norepinephrine", "omeprazole", "aspirin", "vasopressin", "paracetamol",
     "atorvastatin", "fentanyl", "insulin", "metoprolol", "vancomycin",
     "heparin sodium", "morphine"},
    {"dopamine infusion", "saline bolus", "dextrose infusion",
     "dobutamine infusion", "albumin infusion", "platelet transfusion",
     "packed red cells", "midazolam drip", "furosemide drip", "amiodarone drip",
     "propofol drip", "nitroglycerin drip"},
    {"blood pressure low", "pain score", "temperature normal",
     "oxygen saturation low", "glasgow coma scale", "heart rate normal",
     "respiratory rate high", "urine output low", "blood pressure normal",
     "heart rate high", "temperature high", "respiratory rate normal"},
};

double loading(std::size_t global_idx) {
  switch (global_idx % 3) {
    case 0: return 1.0;
    case 1: return 0.0;
    default: return -1.0;
  }
}

// Client schema dialects. Spellings normalize to different strings on
// purpose ("item id" vs "itemid", "reading" vs "value"); only the code
// descriptions are shared ground, exactly the situation the text front end
// is meant to survive.
struct SchemaVariant {
  const char* name;
  const char* (*type_spelling)(std::size_t family);
  const char* (*feature_spelling)(const char* canonical);
};

const char* type_plain(std::size_t f) { return kFamilies[f].canonical; }
const char* type_upper(std::size_t f) {
  static const char* upper[] = {"LABEVENTS", "PRESCRIPTIONS", "INPUTEVENTS",
                                "CHARTEVENTS"};
  return upper[f];
}
const char* type_spaced(std::size_t f) {
  static const char* spaced[] = {"lab events", "pre scriptions", "input events",
                                 "chart events"};
  return spaced[f];
}

const char* feature_plain(const char* canonical) { return canonical; }
const char* feature_camel(const char* canonical) {
  if (canonical == std::string("itemid")) return "ItemID";
  if (canonical == std::string("value")) return "Value";
  if (canonical == std::string("drug")) return "Drug";
  if (canonical == std::string("dose")) return "Dose";
  if (canonical == std::string("rate")) return "Rate";
  return canonical;
}
const char* feature_renamed(const char* canonical) {
  if (canonical == std::string("itemid")) return "observation";
  if (canonical == std::string("value")) return "reading";
  if (canonical == std::string("drug")) return "medication";
  if (canonical == std::string("dose")) return "amount";
  if (canonical == std::string("rate")) return "flow";
  return canonical;
}
const char* feature_spaced(const char* canonical) {
  if (canonical == std::string("itemid")) return "item id";
  return canonical;
}

constexpr std::size_t kNumVariants = 4;
const SchemaVariant kVariants[kNumVariants] = {
    {"plain", type_plain, feature_plain},
    {"upper", type_upper, feature_camel},
    {"renamed", type_plain, feature_renamed},
    {"spaced", type_spaced, feature_spaced},
};

struct TaskPrior {
  double base_logit;
  double steepness_sign;
};

double logit(double p) { return std::log(p / (1.0 - p)); }

// Varied per-category prevalence, low enough that all-negative patients
// exist and the any-positive stratifier has two classes to work with.
double dx_label_prior(std::size_t k) {
  return 0.03 + 0.22 * static_cast<double>((k * 37) % 19) / 18.0;
}

// Exclusion cycle: client i cannot use pool descriptions with index == i
// (mod cycle). Coprime to 3 so every client loses risk descriptions too,
// which keeps the pooled evidence a strict superset of each client's.
std::size_t exclusion_cycle(std::size_t n_clients) {
  std::size_t c = std::max<std::size_t>(n_clients, 4);
  if (c % 3 == 0) ++c;
  return c;
}

std::string client_code(std::size_t client_idx, std::size_t global_desc_idx) {
  return std::to_string((client_idx + 1) * 100000 + global_desc_idx);
}

}  // namespace

void GeneratorConfig::validate() const {
  if (n_clients == 0) throw std::invalid_argument("n_clients must be >= 1");
  if (size_ratio_max < 1.0) throw std::invalid_argument("size_ratio_max must be >= 1");
  if (signal_strength <= 0.0 || signal_strength > 1.0) {
    throw std::invalid_argument("signal_strength must be in (0, 1]");
  }
  if (tasks.empty()) throw std::invalid_argument("at least one task must be enabled");
  if (min_events == 0 || max_events < min_events) {
    throw std::invalid_argument("bad events-per-patient range");
  }
  const double smallest = static_cast<double>(base_patients) / size_ratio_max;
  if (smallest < 20.0) {
    throw std::invalid_argument(
        "base_patients / size_ratio_max must leave every client >= 20 patients");
  }
  for (const auto& [idx, dropped] : dropped_event_types) {
    if (idx >= n_clients) throw std::invalid_argument("dropped_event_types: bad client index");
    if (dropped.size() >= kNumFamilies) {
      throw std::invalid_argument("a client must keep at least one event family");
    }
    for (const auto& name : dropped) {
      bool known = false;
      for (const auto& fam : kFamilies) known = known || name == fam.canonical;
      if (!known) throw std::invalid_argument("unknown event family: " + name);
    }
  }
}

GeneratedData generate(const GeneratorConfig& cfg) {
  cfg.validate();
  GeneratedData out;

  for (std::size_t ci = 0; ci < cfg.n_clients; ++ci) {
    const SchemaVariant& variant = kVariants[ci % kNumVariants];
    const std::size_t cycle = exclusion_cycle(cfg.n_clients);

    ClientDataset client;
    client.profile.client_id = "site" + std::to_string(ci);
    client.profile.schema_variant = variant.name;
    auto dropped_it = cfg.dropped_event_types.find(ci);
    if (dropped_it != cfg.dropped_event_types.end()) {
      client.profile.dropped_event_types = dropped_it->second;
    }

    // client-local codes over the shared description pool
    std::vector<bool> available(kNumFamilies * kDescPerFamily, false);
    for (std::size_t f = 0; f < kNumFamilies; ++f) {
      for (std::size_t d = 0; d < kDescPerFamily; ++d) {
        const std::size_t gi = f * kDescPerFamily + d;
        if (gi % cycle == ci % cycle) continue;
        available[gi] = true;
        client.dictionary.add(client_code(ci, gi), kDescriptions[f][d],
                              kFamilies[f].canonical);
      }
    }

    // log-spaced cohort sizes, base down to base / ratio
    double frac = cfg.n_clients == 1
                      ? 0.0
                      : static_cast<double>(ci) / static_cast<double>(cfg.n_clients - 1);
    const std::size_t n_patients = static_cast<std::size_t>(std::llround(
        static_cast<double>(cfg.base_patients) * std::pow(cfg.size_ratio_max, -frac)));
    client.profile.n_patients = n_patients;

    // which families this client can emit
    std::vector<std::size_t> kept_families;
    for (std::size_t f = 0; f < kNumFamilies; ++f) {
      if (!client.profile.dropped_event_types.count(kFamilies[f].canonical)) {
        kept_families.push_back(f);
      }
    }

    // per-client, per-task prior shift
    Rng offset_rng = Rng::keyed({cfg.seed, 0xc1e27ULL, ci});
    std::map<nn::Task, double> client_offset;
    for (const nn::Task t : cfg.tasks) client_offset[t] = offset_rng.uniform(-0.7, 0.7);

    const double steep = 10.0 * cfg.signal_strength;
    const double tilt = 4.0 * cfg.signal_strength;
    std::map<std::string, double> prior_sum;

    for (std::size_t pi = 0; pi < n_patients; ++pi) {
      Rng rng = Rng::keyed({cfg.seed, ci, pi});
      PatientRecord rec;
      rec.patient_id = client.profile.client_id + "_p" + std::to_string(pi);
      rec.client_id = client.profile.client_id;

      const double risk = rng.next_double();
      const std::size_t n_events =
          cfg.min_events + rng.next_below(cfg.max_events - cfg.min_events + 1);

      std::int64_t t_min = 0;
      for (std::size_t ei = 0; ei < n_events; ++ei) {
        // First event always comes from a kept family so the post-hoc
        // family filter below can never empty a record.
        const std::size_t family =
            ei == 0 ? kept_families[rng.next_below(kept_families.size())]
                    : rng.next_below(kNumFamilies);

        // description sampling tilted by risk
        std::vector<std::size_t> pool;
        std::vector<double> weight;
        double total = 0.0;
        for (std::size_t d = 0; d < kDescPerFamily; ++d) {
          const std::size_t gi = family * kDescPerFamily + d;
          if (!available[gi]) continue;
          pool.push_back(gi);
          const double w = std::exp(loading(gi) * (risk - 0.5) * tilt);
          weight.push_back(w);
          total += w;
        }
        double pick = rng.next_double() * total;
        std::size_t chosen = pool.back();
        for (std::size_t k = 0; k < pool.size(); ++k) {
          pick -= weight[k];
          if (pick < 0.0) {
            chosen = pool[k];
            break;
          }
        }

        const FamilySchema& fam = kFamilies[family];
        text::MedicalEvent ev;
        ev.event_type = variant.type_spelling(family);
        const std::string code_name = variant.feature_spelling(fam.code_feature);
        const std::string num_name = variant.feature_spelling(fam.num_feature);
        const std::string code_value = client_code(ci, chosen);
        // coarse reading grid; measurements repeat across patients
        const std::string num_value =
            std::to_string(40 + 20 * static_cast<int>(rng.next_below(6)));
        ev.features = {{num_name, num_value}, {code_name, code_value}};
        t_min += 10 + static_cast<std::int64_t>(rng.next_below(110));
        ev.timestamp_min = t_min;
        rec.events.push_back(std::move(ev));
      }

      // post-hoc family drop for this client
      if (!client.profile.dropped_event_types.empty()) {
        std::vector<text::MedicalEvent> kept;
        for (auto& ev : rec.events) {
          std::size_t family = kNumFamilies;
          for (std::size_t f = 0; f < kNumFamilies; ++f) {
            if (ev.event_type == variant.type_spelling(f)) family = f;
          }
          if (family == kNumFamilies ||
              !client.profile.dropped_event_types.count(kFamilies[family].canonical)) {
            kept.push_back(std::move(ev));
          }
        }
        rec.events = std::move(kept);
      }

      // labels from the documented logistic ground truth
      for (const nn::Task task : cfg.tasks) {
        const double off = client_offset[task];
        auto draw = [&](double base_prior, double sign) {
          const double p =
              1.0 / (1.0 + std::exp(-(sign * steep * (risk - 0.5) +
                                      logit(base_prior) + off)));
          prior_sum[std::string(nn::task_name(task))] +=
              p / static_cast<double>(n_patients);
          return rng.next_double() < p ? 1 : 0;
        };
        switch (task) {
          case nn::Task::Dx:
            for (std::size_t k = 0; k < nn::kDxLabels; ++k) {
              rec.labels.dx[k] =
                  static_cast<std::uint8_t>(draw(dx_label_prior(k), 1.0));
            }
            break;
          case nn::Task::LOS3: rec.labels.los3 = static_cast<std::uint8_t>(draw(0.40, 1.0)); break;
          case nn::Task::LOS7: rec.labels.los7 = static_cast<std::uint8_t>(draw(0.15, 1.0)); break;
          case nn::Task::Mort: rec.labels.mort = static_cast<std::uint8_t>(draw(0.08, 1.0)); break;
          case nn::Task::Readm: rec.labels.readm = static_cast<std::uint8_t>(draw(0.12, 1.0)); break;
        }
      }
      client.records.push_back(std::move(rec));
    }

    // Dx prior bookkeeping above accumulated over 18 labels; rescale to a
    // per-label mean so the profile stores comparable numbers.
    if (prior_sum.count("dx")) {
      prior_sum["dx"] /= static_cast<double>(nn::kDxLabels);
    }
    client.profile.label_prior = prior_sum;

    for (const nn::Task task : cfg.tasks) {
      const std::uint64_t split_seed = Rng::keyed({cfg.seed, 0x511dULL, ci}).next_u64();
      client.splits[task] = split(client.records, task, split_seed);
    }
    out.clients.push_back(std::move(client));
  }

  // public schema words across the variants in play
  std::set<std::string> words;
  for (std::size_t ci = 0; ci < std::min(cfg.n_clients, kNumVariants); ++ci) {
    const SchemaVariant& variant = kVariants[ci % kNumVariants];
    for (std::size_t f = 0; f < kNumFamilies; ++f) {
      words.insert(variant.type_spelling(f));
      words.insert(variant.feature_spelling(kFamilies[f].code_feature));
      words.insert(variant.feature_spelling(kFamilies[f].num_feature));
    }
  }
  out.schema_words.assign(words.begin(), words.end());
  return out;
}

std::vector<std::string> vocab_corpus(const GeneratedData& data) {
  std::vector<std::string> corpus;
  for (const ClientDataset& client : data.clients) {
    for (const auto& [code, entry] : client.dictionary.entries) {
      corpus.push_back(text::normalize(entry.description));
    }
  }
  for (const std::string& w : data.schema_words) {
    corpus.push_back(text::normalize(w));
  }
  return corpus;
}

std::set<std::string> risk_descriptions(const ClientDataset& client) {
  std::set<std::string> out;
  for (const auto& [code, entry] : client.dictionary.entries) {
    if (client.profile.dropped_event_types.count(entry.domain_tag)) continue;
    for (std::size_t f = 0; f < kNumFamilies; ++f) {
      for (std::size_t d = 0; d < kDescPerFamily; ++d) {
        const std::size_t gi = f * kDescPerFamily + d;
        if (loading(gi) > 0.0 && entry.description == kDescriptions[f][d]) {
          out.insert(entry.description);
        }
      }
    }
  }
  return out;
}

}  // namespace unifl::synth

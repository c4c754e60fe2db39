#include "unifl/driver.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "unifl/data.hpp"

namespace unifl::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
    }
  }
}

std::vector<nn::Task> tasks_from_json(const json& arr) {
  std::vector<nn::Task> tasks;
  for (const auto& t : arr) tasks.push_back(nn::task_from_name(t.get<std::string>()));
  return tasks;
}

json tasks_to_json(const std::vector<nn::Task>& tasks) {
  json arr = json::array();
  for (const nn::Task t : tasks) arr.push_back(nn::task_name(t));
  return arr;
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
  const json doc = json::parse(json_text);
  reject_unknown_keys(doc, {"generator", "model", "fl", "seeds", "output_dir"},
                      "top level");
  RunConfig cfg;

  if (doc.contains("generator")) {
    const json& g = doc["generator"];
    reject_unknown_keys(g,
                        {"n_clients", "base_patients", "size_ratio_max", "seed",
                         "signal_strength", "tasks", "min_events", "max_events",
                         "dropped_event_types"},
                        "generator");
    auto& gen = cfg.generator;
    if (g.contains("n_clients")) gen.n_clients = g["n_clients"].get<std::size_t>();
    if (g.contains("base_patients")) gen.base_patients = g["base_patients"].get<std::size_t>();
    if (g.contains("size_ratio_max")) gen.size_ratio_max = g["size_ratio_max"].get<double>();
    if (g.contains("seed")) gen.seed = g["seed"].get<std::uint64_t>();
    if (g.contains("signal_strength")) gen.signal_strength = g["signal_strength"].get<double>();
    if (g.contains("tasks")) gen.tasks = tasks_from_json(g["tasks"]);
    if (g.contains("min_events")) gen.min_events = g["min_events"].get<std::size_t>();
    if (g.contains("max_events")) gen.max_events = g["max_events"].get<std::size_t>();
    if (g.contains("dropped_event_types")) {
      for (const auto& [idx, arr] : g["dropped_event_types"].items()) {
        std::set<std::string> dropped;
        for (const auto& name : arr) dropped.insert(name.get<std::string>());
        gen.dropped_event_types[std::stoull(idx)] = std::move(dropped);
      }
    }
  }

  if (doc.contains("model")) {
    const json& m = doc["model"];
    reject_unknown_keys(m,
                        {"vocab_target", "embed_dim", "hidden_dim",
                         "max_tokens_per_event", "max_events_per_patient",
                         "learning_rate", "batch_size"},
                        "model");
    if (m.contains("vocab_target")) cfg.vocab_target = m["vocab_target"].get<std::uint32_t>();
    auto& hp = cfg.model;
    if (m.contains("embed_dim")) hp.embed_dim = m["embed_dim"].get<std::size_t>();
    if (m.contains("hidden_dim")) hp.hidden_dim = m["hidden_dim"].get<std::size_t>();
    if (m.contains("max_tokens_per_event")) hp.max_tokens_per_event = m["max_tokens_per_event"].get<std::size_t>();
    if (m.contains("max_events_per_patient")) hp.max_events_per_patient = m["max_events_per_patient"].get<std::size_t>();
    if (m.contains("learning_rate")) hp.learning_rate = m["learning_rate"].get<double>();
    if (m.contains("batch_size")) hp.batch_size = m["batch_size"].get<std::size_t>();
  }

  if (doc.contains("fl")) {
    const json& f = doc["fl"];
    reject_unknown_keys(f,
                        {"total_rounds", "local_epochs", "early_stop_patience",
                         "eval_every", "mu", "prox_exclude_norm",
                         "uniform_weighting", "literal_shuffle", "dx_macro"},
                        "fl");
    if (f.contains("total_rounds")) cfg.total_rounds = f["total_rounds"].get<std::size_t>();
    if (f.contains("local_epochs")) cfg.local_epochs = f["local_epochs"].get<std::size_t>();
    if (f.contains("early_stop_patience")) cfg.early_stop_patience = f["early_stop_patience"].get<std::size_t>();
    if (f.contains("eval_every")) cfg.eval_every = f["eval_every"].get<std::size_t>();
    if (f.contains("mu")) cfg.mu = f["mu"].get<double>();
    if (f.contains("prox_exclude_norm")) cfg.prox_exclude_norm = f["prox_exclude_norm"].get<bool>();
    if (f.contains("uniform_weighting")) cfg.uniform_weighting = f["uniform_weighting"].get<bool>();
    if (f.contains("literal_shuffle")) cfg.literal_shuffle = f["literal_shuffle"].get<bool>();
    if (f.contains("dx_macro")) cfg.dx_macro = f["dx_macro"].get<bool>();
  }

  if (doc.contains("seeds")) cfg.seeds = doc["seeds"].get<std::vector<std::uint64_t>>();
  if (doc.contains("output_dir")) cfg.output_dir = doc["output_dir"].get<std::string>();

  if (cfg.seeds.empty()) throw std::invalid_argument("config: seeds must be nonempty");
  cfg.generator.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const RunConfig& cfg) {
  json g;
  g["n_clients"] = cfg.generator.n_clients;
  g["base_patients"] = cfg.generator.base_patients;
  g["size_ratio_max"] = cfg.generator.size_ratio_max;
  g["seed"] = cfg.generator.seed;
  g["signal_strength"] = cfg.generator.signal_strength;
  g["tasks"] = tasks_to_json(cfg.generator.tasks);
  g["min_events"] = cfg.generator.min_events;
  g["max_events"] = cfg.generator.max_events;
  json dropped = json::object();
  for (const auto& [idx, names] : cfg.generator.dropped_event_types) {
    dropped[std::to_string(idx)] = names;
  }
  g["dropped_event_types"] = dropped;

  json m;
  m["vocab_target"] = cfg.vocab_target;
  m["embed_dim"] = cfg.model.embed_dim;
  m["hidden_dim"] = cfg.model.hidden_dim;
  m["max_tokens_per_event"] = cfg.model.max_tokens_per_event;
  m["max_events_per_patient"] = cfg.model.max_events_per_patient;
  m["learning_rate"] = cfg.model.learning_rate;
  m["batch_size"] = cfg.model.batch_size;

  json f;
  f["total_rounds"] = cfg.total_rounds;
  f["local_epochs"] = cfg.local_epochs;
  f["early_stop_patience"] = cfg.early_stop_patience;
  f["eval_every"] = cfg.eval_every;
  f["mu"] = cfg.mu;
  f["prox_exclude_norm"] = cfg.prox_exclude_norm;
  f["uniform_weighting"] = cfg.uniform_weighting;
  f["literal_shuffle"] = cfg.literal_shuffle;
  f["dx_macro"] = cfg.dx_macro;

  json doc;
  doc["generator"] = g;
  doc["model"] = m;
  doc["fl"] = f;
  doc["seeds"] = cfg.seeds;
  doc["output_dir"] = cfg.output_dir;
  return doc.dump(2) + "\n";
}

std::string resolve_output_dir(const RunConfig& cfg) {
  const char* env = std::getenv("UNIFL_OUT");
  return env != nullptr && *env != '\0' ? std::string(env) : cfg.output_dir;
}

void write_dataset(const synth::GeneratedData& data,
                   const bpe::TokenizerVocab& vocab, const std::string& dir) {
  fs::create_directories(dir);
  bpe::save_vocab(vocab, (fs::path(dir) / "vocab.txt").string());

  json manifest;
  manifest["schema_words"] = data.schema_words;
  json clients = json::array();
  for (const synth::ClientDataset& client : data.clients) {
    const std::string& id = client.profile.client_id;
    synth::write_records_jsonl(client.records,
                               (fs::path(dir) / (id + ".jsonl")).string());
    text::save_dictionary_tsv(client.dictionary,
                              (fs::path(dir) / (id + ".dict.tsv")).string());

    json splits;
    for (const auto& [task, spec] : client.splits) {
      splits[nn::task_name(task)] = {
          {"train", spec.train}, {"valid", spec.valid}, {"test", spec.test}};
    }
    std::ofstream sf((fs::path(dir) / (id + ".splits.json")).string(),
                     std::ios::binary);
    sf << splits.dump(2) << '\n';

    json profile;
    profile["client_id"] = id;
    profile["schema_variant"] = client.profile.schema_variant;
    profile["n_patients"] = client.profile.n_patients;
    profile["label_prior"] = client.profile.label_prior;
    profile["dropped_event_types"] = client.profile.dropped_event_types;
    clients.push_back(profile);
  }
  manifest["clients"] = clients;
  std::ofstream mf((fs::path(dir) / "manifest.json").string(), std::ios::binary);
  mf << manifest.dump(2) << '\n';
}

LoadedData load_dataset(const std::string& dir) {
  std::ifstream mf((fs::path(dir) / "manifest.json").string(), std::ios::binary);
  if (!mf) throw std::runtime_error("no manifest.json in " + dir);
  const json manifest = json::parse(mf);

  LoadedData data;
  data.vocab = bpe::load_vocab((fs::path(dir) / "vocab.txt").string());

  std::set<std::string> task_names;
  for (const json& profile : manifest.at("clients")) {
    synth::ClientDataset client;
    client.profile.client_id = profile.at("client_id").get<std::string>();
    client.profile.schema_variant = profile.at("schema_variant").get<std::string>();
    client.profile.n_patients = profile.at("n_patients").get<std::size_t>();
    client.profile.label_prior =
        profile.at("label_prior").get<std::map<std::string, double>>();
    client.profile.dropped_event_types =
        profile.at("dropped_event_types").get<std::set<std::string>>();

    const std::string& id = client.profile.client_id;
    client.records =
        synth::read_records_jsonl((fs::path(dir) / (id + ".jsonl")).string());
    client.dictionary =
        text::load_dictionary_tsv((fs::path(dir) / (id + ".dict.tsv")).string());

    std::ifstream sf((fs::path(dir) / (id + ".splits.json")).string(),
                     std::ios::binary);
    if (!sf) throw std::runtime_error("missing splits for client " + id);
    const json splits = json::parse(sf);
    for (const auto& [task_name, spec] : splits.items()) {
      synth::SplitSpec s;
      s.train = spec.at("train").get<std::vector<std::size_t>>();
      s.valid = spec.at("valid").get<std::vector<std::size_t>>();
      s.test = spec.at("test").get<std::vector<std::size_t>>();
      client.splits[nn::task_from_name(task_name)] = std::move(s);
      task_names.insert(task_name);
    }
    data.clients.push_back(std::move(client));
  }
  for (const std::string& name : task_names) {
    data.tasks.push_back(nn::task_from_name(name));
  }
  return data;
}

TrainResult train_eval(const RunConfig& cfg, const LoadedData& data,
                       const TrainOptions& opt, const std::string& out_dir) {
  if (opt.seeds.empty()) throw std::invalid_argument("train: no seeds");
  fs::create_directories(out_dir);
  fs::create_directories(fs::path(out_dir) / "history");
  fs::create_directories(fs::path(out_dir) / "checkpoints");

  fl::FLConfig run_cfg;
  run_cfg.method.kind = fl::method_from_name(opt.method);
  run_cfg.method.mu = opt.mu.value_or(cfg.mu);
  run_cfg.method.prox_exclude_norm = cfg.prox_exclude_norm;
  run_cfg.method.uniform_weighting = cfg.uniform_weighting;
  run_cfg.hp = cfg.model;
  run_cfg.hp.vocab_size = data.vocab.size();
  run_cfg.hp.task = opt.task;
  run_cfg.total_rounds = cfg.total_rounds;
  run_cfg.local_epochs = cfg.local_epochs;
  run_cfg.early_stop_patience = cfg.early_stop_patience;
  run_cfg.eval_every = cfg.eval_every;
  run_cfg.workers = opt.workers;
  run_cfg.literal_shuffle = opt.literal_shuffle || cfg.literal_shuffle;
  run_cfg.dx_macro = cfg.dx_macro;

  // encode once per task; the tokenization is shared by all seeds
  std::vector<synth::EncodedSplit> encoded;
  encoded.reserve(data.clients.size());
  fl::RunInput input;
  for (const synth::ClientDataset& client : data.clients) {
    if (!client.splits.count(opt.task)) {
      throw std::invalid_argument(std::string("task ") + nn::task_name(opt.task) +
                                  " was not generated for client " +
                                  client.profile.client_id);
    }
    encoded.push_back(synth::encode_dataset(client, data.vocab, opt.task, run_cfg.hp));
    input.client_ids.push_back(client.profile.client_id);
  }
  for (const synth::EncodedSplit& e : encoded) input.clients.push_back(&e);

  TrainResult result;
  const std::string tag =
      opt.method + "_" + std::string(nn::task_name(opt.task));
  for (const std::uint64_t seed : opt.seeds) {
    run_cfg.seed = seed;
    fl::RunHistory history = fl::run(run_cfg, input);

    const std::string seed_tag = tag + "_seed" + std::to_string(seed);
    save_history_json(history,
                      (fs::path(out_dir) / "history" / (seed_tag + ".json")).string());
    if (history.per_client_checkpoints) {
      for (std::size_t i = 0; i < history.best_params.size(); ++i) {
        nn::save_checkpoint(history.best_params[i],
                            (fs::path(out_dir) / "checkpoints" /
                             (seed_tag + "_" + history.clients[i].client_id + ".json"))
                                .string());
      }
    } else {
      nn::save_checkpoint(history.best_params.front(),
                          (fs::path(out_dir) / "checkpoints" / (seed_tag + ".json"))
                              .string());
    }

    for (const fl::ClientTrack& track : history.clients) {
      metrics::EvalReport report;
      report.task = history.task;
      report.client_id = track.client_id;
      report.method = history.method;
      report.seed = seed;
      report.auprc = track.test_auprc;
      report.n_samples = track.test_n;
      report.rounds_used = track.rounds_used;
      result.reports.push_back(std::move(report));
    }
    history.best_params.clear();  // keep the returned histories light
    result.histories.push_back(std::move(history));
  }

  result.results_csv = (fs::path(out_dir) / ("results_" + tag + ".csv")).string();
  metrics::write_reports_csv(result.reports, result.results_csv);
  return result;
}

int cmd_generate_data(const std::string& config_path, const std::string& out_dir) {
  const RunConfig cfg = load_config(config_path);
  const std::string dir = out_dir.empty() ? resolve_output_dir(cfg) + "/data" : out_dir;

  const synth::GeneratedData data = synth::generate(cfg.generator);
  const bpe::TokenizerVocab vocab =
      bpe::train_vocab(synth::vocab_corpus(data), cfg.vocab_target);
  write_dataset(data, vocab, dir);

  std::ofstream cf((fs::path(dir) / "config.json").string(), std::ios::binary);
  cf << config_to_json(cfg);

  std::size_t total = 0;
  for (const auto& c : data.clients) total += c.records.size();
  std::cout << "generated " << data.clients.size() << " clients, " << total
            << " patients, vocab " << vocab.size() << " -> " << dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const TrainOptions& opt,
              const std::string& data_dir, const std::string& out_dir) {
  const RunConfig cfg = load_config(config_path);
  const std::string out = out_dir.empty() ? resolve_output_dir(cfg) : out_dir;
  const std::string data =
      data_dir.empty() ? resolve_output_dir(cfg) + "/data" : data_dir;

  TrainOptions resolved = opt;
  if (resolved.seeds.empty()) resolved.seeds = cfg.seeds;

  const LoadedData loaded = load_dataset(data);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult result = train_eval(cfg, loaded, resolved, out);
  const double secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0).count();

  std::ofstream cf((fs::path(out) / "config.json").string(), std::ios::binary);
  cf << config_to_json(cfg);

  double mean = 0.0;
  for (const auto& r : result.reports) mean += r.auprc;
  mean /= static_cast<double>(result.reports.size());
  std::cout << resolved.method << "/" << nn::task_name(resolved.task) << ": "
            << result.reports.size() << " evaluations, mean test AUPRC " << mean
            << " (" << secs << " s) -> " << result.results_csv << "\n";
  return 0;
}

int cmd_summarize(const std::string& runs_dir, const std::string& out_csv) {
  std::vector<std::string> csvs;
  for (const auto& entry : fs::directory_iterator(runs_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("results_", 0) == 0 && entry.path().extension() == ".csv") {
      csvs.push_back(entry.path().string());
    }
  }
  if (csvs.empty()) {
    std::cerr << "no results_*.csv under " << runs_dir << "\n";
    return 1;
  }
  std::sort(csvs.begin(), csvs.end());

  std::vector<metrics::EvalReport> reports;
  for (const std::string& path : csvs) {
    const auto part = metrics::read_reports_csv(path);
    reports.insert(reports.end(), part.begin(), part.end());
  }
  const metrics::Summary summary = metrics::summarize(reports);
  metrics::write_summary_csv(summary, out_csv);
  std::cout << render_summary_text(summary);
  return 0;
}

int cmd_gradcheck(double tolerance, std::size_t n_models) {
  nn::Hyperparams hp;
  hp.vocab_size = 16;
  hp.embed_dim = 4;
  hp.hidden_dim = 4;
  hp.max_tokens_per_event = 8;
  hp.max_events_per_patient = 8;

  const nn::Task tasks[] = {nn::Task::LOS3, nn::Task::Dx, nn::Task::Mort,
                            nn::Task::LOS7, nn::Task::Readm};
  double worst = 0.0;
  std::string worst_tensor;
  bool ok = true;
  for (std::size_t i = 0; i < n_models; ++i) {
    hp.task = tasks[i % 5];
    const nn::GradCheckReport report = nn::grad_check(hp, 1000 + i, tolerance);
    if (report.worst_rel_err > worst) {
      worst = report.worst_rel_err;
      worst_tensor = report.worst_tensor;
    }
    ok = ok && report.pass;
  }
  std::cout << "gradcheck: " << n_models << " models, worst relative error "
            << worst << " (" << worst_tensor << "), tolerance " << tolerance
            << " -> " << (ok ? "pass" : "FAIL") << "\n";
  return ok ? 0 : 1;
}

}  // namespace unifl::app

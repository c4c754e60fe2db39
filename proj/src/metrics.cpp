#include "unifl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace unifl::metrics {

double auprc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw std::invalid_argument("auprc: size mismatch or empty input");
  }
  std::size_t total_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("auprc: labels must be 0/1");
    total_pos += static_cast<std::size_t>(y);
  }
  if (total_pos == 0) {
    throw std::invalid_argument("auprc: undefined without positive labels");
  }

  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });

  // Walk descending tie groups; each contributes recall-step * precision at
  // the group's inclusive rank.
  double ap = 0.0;
  std::size_t tp = 0, seen = 0, i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::size_t group_tp = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      group_tp += static_cast<std::size_t>(labels[order[j]]);
      ++j;
    }
    tp += group_tp;
    seen += j - i;
    ap += (static_cast<double>(group_tp) / static_cast<double>(total_pos)) *
          (static_cast<double>(tp) / static_cast<double>(seen));
    i = j;
  }
  return ap;
}

namespace {

void flatten(const std::vector<std::vector<double>>& scores,
             const std::vector<std::vector<double>>& labels,
             std::vector<double>& flat_scores, std::vector<int>& flat_labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("auprc: sample count mismatch");
  }
  for (std::size_t s = 0; s < scores.size(); ++s) {
    if (scores[s].size() != labels[s].size()) {
      throw std::invalid_argument("auprc: label width mismatch");
    }
    for (std::size_t k = 0; k < scores[s].size(); ++k) {
      flat_scores.push_back(scores[s][k]);
      flat_labels.push_back(labels[s][k] != 0.0 ? 1 : 0);
    }
  }
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double auprc_micro(const std::vector<std::vector<double>>& scores,
                   const std::vector<std::vector<double>>& labels) {
  std::vector<double> fs;
  std::vector<int> fl;
  flatten(scores, labels, fs, fl);
  return auprc(fs, fl);
}

double auprc_macro(const std::vector<std::vector<double>>& scores,
                   const std::vector<std::vector<double>>& labels) {
  if (scores.empty()) throw std::invalid_argument("auprc: empty input");
  const std::size_t width = scores.front().size();
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t k = 0; k < width; ++k) {
    std::vector<double> s;
    std::vector<int> y;
    bool any_pos = false;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      s.push_back(scores[i][k]);
      y.push_back(labels[i][k] != 0.0 ? 1 : 0);
      any_pos = any_pos || y.back() == 1;
    }
    if (!any_pos) continue;  // AP undefined for an all-negative label
    total += auprc(s, y);
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("auprc: no label has positives");
  return total / static_cast<double>(counted);
}

EvalReport evaluate(const nn::ParamSet& params,
                    const std::vector<nn::EncodedPatient>& test_set,
                    const nn::Hyperparams& hp, bool dx_macro) {
  if (test_set.empty()) throw std::invalid_argument("evaluate: empty test set");
  std::vector<std::vector<double>> scores, labels;
  scores.reserve(test_set.size());
  for (const nn::EncodedPatient& patient : test_set) {
    const nn::PatientCache cache = nn::forward_patient(patient, params, hp);
    std::vector<double> probs(cache.logits.size());
    for (std::size_t j = 0; j < probs.size(); ++j) probs[j] = sigmoid(cache.logits[j]);
    scores.push_back(std::move(probs));
    labels.push_back(patient.labels);
  }
  EvalReport report;
  report.task = nn::task_name(hp.task);
  report.n_samples = test_set.size();
  if (hp.task == nn::Task::Dx) {
    report.auprc = dx_macro ? auprc_macro(scores, labels) : auprc_micro(scores, labels);
  } else {
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      s.push_back(scores[i][0]);
      y.push_back(labels[i][0] != 0.0 ? 1 : 0);
    }
    report.auprc = auprc(s, y);
  }
  return report;
}

namespace {

const std::vector<std::string> kMethodOrder = {"local",  "fedavg", "fedprox",
                                               "fedbn",  "fedpxn", "centralized"};

struct Key {
  std::string task, client, method;
  bool operator<(const Key& o) const {
    return std::tie(task, client, method) < std::tie(o.task, o.client, o.method);
  }
};

}  // namespace

Summary summarize(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("summarize: no reports");

  std::map<Key, std::vector<double>> by_cell;
  std::set<std::string> tasks, clients, methods_present;
  double fl_rounds = 0.0, cl_epochs = 0.0;
  std::size_t fl_n = 0, cl_n = 0;
  for (const EvalReport& r : reports) {
    by_cell[{r.task, r.client_id, r.method}].push_back(r.auprc);
    tasks.insert(r.task);
    clients.insert(r.client_id);
    methods_present.insert(r.method);
    if (r.method == "centralized") {
      cl_epochs += static_cast<double>(r.rounds_used);
      ++cl_n;
    } else if (r.method != "local") {
      fl_rounds += static_cast<double>(r.rounds_used);
      ++fl_n;
    }
  }

  for (const std::string& task : tasks) {
    for (const std::string& client : clients) {
      for (const std::string& method : methods_present) {
        if (by_cell.count({task, client, method}) &&
            !by_cell.count({task, client, "local"})) {
          throw std::invalid_argument("summarize: missing local baseline for " +
                                      task + "/" + client);
        }
      }
    }
  }

  Summary summary;
  for (const std::string& m : kMethodOrder) {
    if (methods_present.count(m)) summary.methods.push_back(m);
  }
  // unknown method names go last, alphabetically
  for (const std::string& m : methods_present) {
    if (std::find(kMethodOrder.begin(), kMethodOrder.end(), m) == kMethodOrder.end()) {
      summary.methods.push_back(m);
    }
  }

  auto cell_mean = [&](const std::string& task, const std::string& client,
                       const std::string& method, double* out) {
    auto it = by_cell.find({task, client, method});
    if (it == by_cell.end()) return false;
    double total = 0.0;
    for (double v : it->second) total += v;
    *out = total / static_cast<double>(it->second.size());
    return true;
  };

  // group = any set of (task, client) pairs; the row value per method is the
  // mean of cell means, and the relative column compares against the same
  // row's local value
  auto build_row = [&](const std::string& label,
                       const std::vector<std::pair<std::string, std::string>>& group) {
    SummaryRow row;
    row.label = label;
    std::vector<double> method_means(summary.methods.size(), 0.0);
    std::vector<bool> complete(summary.methods.size(), true);
    for (std::size_t mi = 0; mi < summary.methods.size(); ++mi) {
      double total = 0.0;
      std::size_t n = 0;
      for (const auto& [task, client] : group) {
        double v = 0.0;
        if (cell_mean(task, client, summary.methods[mi], &v)) {
          total += v;
          ++n;
        }
      }
      if (n == 0) {
        complete[mi] = false;
      } else {
        method_means[mi] = total / static_cast<double>(n);
      }
    }
    double local_mean = 0.0;
    bool have_local = false;
    for (std::size_t mi = 0; mi < summary.methods.size(); ++mi) {
      if (summary.methods[mi] == "local" && complete[mi]) {
        local_mean = method_means[mi];
        have_local = true;
      }
    }
    for (std::size_t mi = 0; mi < summary.methods.size(); ++mi) {
      SummaryCell cell;
      cell.present = complete[mi];
      cell.mean_auprc = method_means[mi];
      if (cell.present && have_local && summary.methods[mi] != "local" &&
          local_mean != 0.0) {
        cell.rel_pct_vs_local = (method_means[mi] - local_mean) / local_mean * 100.0;
      }
      row.cells.push_back(cell);
    }
    return row;
  };

  std::vector<std::pair<std::string, std::string>> all_pairs;
  for (const std::string& task : tasks) {
    std::vector<std::pair<std::string, std::string>> group;
    for (const std::string& client : clients) {
      if (by_cell.count({task, client, "local"})) {
        group.emplace_back(task, client);
        all_pairs.emplace_back(task, client);
      }
    }
    summary.task_rows.push_back(build_row(task, group));
  }
  for (const std::string& client : clients) {
    std::vector<std::pair<std::string, std::string>> group;
    for (const std::string& task : tasks) {
      if (by_cell.count({task, client, "local"})) group.emplace_back(task, client);
    }
    summary.client_rows.push_back(build_row(client, group));
  }
  summary.average_row = build_row("average", all_pairs);

  if (fl_n > 0) summary.fl_rounds_mean = fl_rounds / static_cast<double>(fl_n);
  if (cl_n > 0) summary.cl_epochs_mean = cl_epochs / static_cast<double>(cl_n);
  if (fl_n > 0 && cl_n > 0 && summary.cl_epochs_mean > 0.0) {
    summary.fl_cl_round_ratio = summary.fl_rounds_mean / summary.cl_epochs_mean;
    summary.round_ratio_present = true;
  }
  return summary;
}

namespace {

void render_row(std::ostringstream& out, const Summary& s, const SummaryRow& row) {
  out << row.label;
  for (std::size_t mi = 0; mi < s.methods.size(); ++mi) {
    const SummaryCell& c = row.cells[mi];
    out << '\t';
    if (!c.present) {
      out << "-";
    } else if (s.methods[mi] == "local") {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.4f", c.mean_auprc);
      out << buf;
    } else {
      char buf[48];
      std::snprintf(buf, sizeof(buf), "%.4f (%+.2f%%)", c.mean_auprc,
                    c.rel_pct_vs_local);
      out << buf;
    }
  }
  out << '\n';
}

}  // namespace

std::string render_summary_text(const Summary& summary) {
  std::ostringstream out;
  out << "group";
  for (const std::string& m : summary.methods) out << '\t' << m;
  out << '\n';
  for (const SummaryRow& row : summary.task_rows) render_row(out, summary, row);
  for (const SummaryRow& row : summary.client_rows) render_row(out, summary, row);
  render_row(out, summary, summary.average_row);
  if (summary.round_ratio_present) {
    char buf[96];
    std::snprintf(buf, sizeof(buf),
                  "federated rounds / centralized epochs: %.2f (%.2f / %.2f)\n",
                  summary.fl_cl_round_ratio, summary.fl_rounds_mean,
                  summary.cl_epochs_mean);
    out << buf;
  }
  return out.str();
}

void write_summary_csv(const Summary& summary, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << "group";
  for (const std::string& m : summary.methods) {
    f << ',' << m;
    if (m != "local") f << ',' << m << "_vs_local_pct";
  }
  f << '\n';
  auto emit = [&](const SummaryRow& row) {
    f << row.label;
    char buf[32];
    for (std::size_t mi = 0; mi < summary.methods.size(); ++mi) {
      const SummaryCell& c = row.cells[mi];
      if (c.present) {
        std::snprintf(buf, sizeof(buf), "%.6f", c.mean_auprc);
        f << ',' << buf;
      } else {
        f << ',';
      }
      if (summary.methods[mi] != "local") {
        if (c.present) {
          std::snprintf(buf, sizeof(buf), "%.4f", c.rel_pct_vs_local);
          f << ',' << buf;
        } else {
          f << ',';
        }
      }
    }
    f << '\n';
  };
  for (const SummaryRow& row : summary.task_rows) emit(row);
  for (const SummaryRow& row : summary.client_rows) emit(row);
  emit(summary.average_row);
  if (summary.round_ratio_present) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", summary.fl_cl_round_ratio);
    f << "fl_rounds_per_cl_epoch," << buf << '\n';
  }
}

void write_reports_csv(const std::vector<EvalReport>& reports,
                       const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << "task,client,method,seed,auprc,rounds_used\n";
  char buf[32];
  for (const EvalReport& r : reports) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.auprc);
    f << r.task << ',' << r.client_id << ',' << r.method << ',' << r.seed << ','
      << buf << ',' << r.rounds_used << '\n';
  }
}

std::vector<EvalReport> read_reports_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for read: " + path);
  std::vector<EvalReport> reports;
  std::string line;
  bool header = true;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::istringstream ss(line);
    EvalReport r;
    std::string seed, auprc_s, rounds;
    if (!std::getline(ss, r.task, ',') || !std::getline(ss, r.client_id, ',') ||
        !std::getline(ss, r.method, ',') || !std::getline(ss, seed, ',') ||
        !std::getline(ss, auprc_s, ',') || !std::getline(ss, rounds)) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": bad results row");
    }
    r.seed = std::stoull(seed);
    r.auprc = std::stod(auprc_s);
    r.rounds_used = std::stoull(rounds);
    reports.push_back(std::move(r));
  }
  return reports;
}

}  // namespace unifl::metrics

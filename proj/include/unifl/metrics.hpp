#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unifl/model.hpp"

namespace unifl::metrics {

// One evaluation outcome; rows of the results CSV.
struct EvalReport {
  std::string task;
  std::string client_id;
  std::string method;
  std::uint64_t seed = 0;
  double auprc = 0.0;
  std::size_t n_samples = 0;
  std::size_t rounds_used = 0;
};

// Non-interpolated average precision. Items sharing a score form one tie
// group contributing a single precision step, so the result depends only on
// (score, label) multiset, never on input order. Throws when there are no
// positive labels (the curve is undefined).
double auprc(const std::vector<double>& scores, const std::vector<int>& labels);

// Multi-label micro average: every (sample, label) pair flattened into one
// ranking problem.
double auprc_micro(const std::vector<std::vector<double>>& scores,
                   const std::vector<std::vector<double>>& labels);

// Macro alternative: per-label AP averaged over the labels that have at
// least one positive.
double auprc_macro(const std::vector<std::vector<double>>& scores,
                   const std::vector<std::vector<double>>& labels);

// Score a test split with the model and reduce to one AUPRC (micro for Dx
// unless dx_macro). Deterministic.
EvalReport evaluate(const nn::ParamSet& params,
                    const std::vector<nn::EncodedPatient>& test_set,
                    const nn::Hyperparams& hp, bool dx_macro = false);

// --- run summaries -----------------------------------------------------------

struct SummaryCell {
  double mean_auprc = 0.0;
  double rel_pct_vs_local = 0.0;  // percent change; 0 for the local column
  bool present = false;
};

struct SummaryRow {
  std::string label;
  std::vector<SummaryCell> cells;  // one per Summary::methods entry
};

struct Summary {
  std::vector<std::string> methods;  // column order
  std::vector<SummaryRow> task_rows;
  std::vector<SummaryRow> client_rows;
  SummaryRow average_row;
  // round bookkeeping: mean federated rounds_used vs mean centralized epochs
  double fl_rounds_mean = 0.0;
  double cl_epochs_mean = 0.0;
  double fl_cl_round_ratio = 0.0;
  bool round_ratio_present = false;
};

// Per-task and per-client means over seeds with relative change against the
// local baseline, computed from unrounded means. Requires a local row for
// every (task, client) pair that any method reports.
Summary summarize(const std::vector<EvalReport>& reports);

std::string render_summary_text(const Summary& summary);
void write_summary_csv(const Summary& summary, const std::string& path);

// results CSV: task,client,method,seed,auprc,rounds_used
void write_reports_csv(const std::vector<EvalReport>& reports,
                       const std::string& path);
std::vector<EvalReport> read_reports_csv(const std::string& path);

}  // namespace unifl::metrics

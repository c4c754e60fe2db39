#include "unifl/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>

#include "unifl/rng.hpp"

namespace unifl::nn {

namespace {

// Canonical tensor indices; init_params builds the set in this order.
enum TensorIdx : std::size_t {
  kEmbedding = 0,
  kEncWr, kEncWu, kEncWn, kEncUr, kEncUu, kEncUn, kEncBr, kEncBu, kEncBn,
  kEncGain, kEncBias,
  kAggWr, kAggWu, kAggWn, kAggUr, kAggUu, kAggUn, kAggBr, kAggBu, kAggBn,
  kAggGain, kAggBias,
  kHeadW, kHeadB,
  kTensorCount,
};

constexpr double kNormEps = 1e-12;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// y = A x, A row-major [rows x cols]
void matvec(const std::vector<double>& a, std::size_t rows, std::size_t cols,
            const double* x, double* y) {
  for (std::size_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    const double* row = a.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

// out += A^T v
void matvec_t_add(const std::vector<double>& a, std::size_t rows, std::size_t cols,
                  const double* v, double* out) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = a.data() + i * cols;
    const double vi = v[i];
    for (std::size_t j = 0; j < cols; ++j) out[j] += row[j] * vi;
  }
}

// dA += v x^T
void outer_add(std::vector<double>& da, std::size_t rows, std::size_t cols,
               const double* v, const double* x) {
  for (std::size_t i = 0; i < rows; ++i) {
    double* row = da.data() + i * cols;
    const double vi = v[i];
    for (std::size_t j = 0; j < cols; ++j) row[j] += vi * x[j];
  }
}

struct GruView {
  const Tensor *w_r, *w_u, *w_n, *u_r, *u_u, *u_n, *b_r, *b_u, *b_n;
  std::size_t in_dim, hidden;
};

GruView gru_view(const ParamSet& p, std::size_t base, std::size_t in_dim,
                 std::size_t hidden) {
  return GruView{&p.at(base),     &p.at(base + 1), &p.at(base + 2),
                 &p.at(base + 3), &p.at(base + 4), &p.at(base + 5),
                 &p.at(base + 6), &p.at(base + 7), &p.at(base + 8),
                 in_dim,          hidden};
}

// One GRU step; appends r, u, n, unh and the new h to the step vectors.
void gru_step(const GruView& g, const double* x, const double* h_prev,
              std::vector<std::vector<double>>& rs, std::vector<std::vector<double>>& us,
              std::vector<std::vector<double>>& ns, std::vector<std::vector<double>>& unhs,
              std::vector<std::vector<double>>& hs) {
  const std::size_t h_dim = g.hidden;
  std::vector<double> r(h_dim), u(h_dim), n(h_dim), unh(h_dim), h(h_dim);
  std::vector<double> tmp(h_dim);

  matvec(g.w_r->values, h_dim, g.in_dim, x, r.data());
  matvec(g.u_r->values, h_dim, h_dim, h_prev, tmp.data());
  for (std::size_t i = 0; i < h_dim; ++i) {
    r[i] = sigmoid(r[i] + tmp[i] + g.b_r->values[i]);
  }

  matvec(g.w_u->values, h_dim, g.in_dim, x, u.data());
  matvec(g.u_u->values, h_dim, h_dim, h_prev, tmp.data());
  for (std::size_t i = 0; i < h_dim; ++i) {
    u[i] = sigmoid(u[i] + tmp[i] + g.b_u->values[i]);
  }

  matvec(g.u_n->values, h_dim, h_dim, h_prev, unh.data());
  matvec(g.w_n->values, h_dim, g.in_dim, x, n.data());
  for (std::size_t i = 0; i < h_dim; ++i) {
    n[i] = std::tanh(n[i] + r[i] * unh[i] + g.b_n->values[i]);
    h[i] = (1.0 - u[i]) * n[i] + u[i] * h_prev[i];
  }

  rs.push_back(std::move(r));
  us.push_back(std::move(u));
  ns.push_back(std::move(n));
  unhs.push_back(std::move(unh));
  hs.push_back(std::move(h));
}

struct GruGrads {
  Tensor *w_r, *w_u, *w_n, *u_r, *u_u, *u_n, *b_r, *b_u, *b_n;
};

GruGrads gru_grads(GradSet& g, std::size_t base) {
  return GruGrads{&g.at(base),     &g.at(base + 1), &g.at(base + 2),
                  &g.at(base + 3), &g.at(base + 4), &g.at(base + 5),
                  &g.at(base + 6), &g.at(base + 7), &g.at(base + 8)};
}

// Backprop one GRU step. dh is the gradient w.r.t. this step's output; on
// return dh_prev has the previous state's gradient added and dx (size
// in_dim) the input's.
void gru_step_backward(const GruView& g, GruGrads& dg, const double* x,
                       const double* h_prev, const std::vector<double>& r,
                       const std::vector<double>& u, const std::vector<double>& n,
                       const std::vector<double>& unh, const std::vector<double>& dh,
                       double* dh_prev, double* dx) {
  const std::size_t h_dim = g.hidden;
  std::vector<double> da_n(h_dim), da_r(h_dim), da_u(h_dim), drn(h_dim);

  for (std::size_t i = 0; i < h_dim; ++i) {
    const double dn = dh[i] * (1.0 - u[i]);
    const double du = dh[i] * (h_prev[i] - n[i]);
    dh_prev[i] += dh[i] * u[i];
    da_n[i] = dn * (1.0 - n[i] * n[i]);
    const double dr = da_n[i] * unh[i];
    da_r[i] = dr * r[i] * (1.0 - r[i]);
    da_u[i] = du * u[i] * (1.0 - u[i]);
    drn[i] = da_n[i] * r[i];  // gradient into U_n h_prev
  }

  outer_add(dg.w_n->values, h_dim, g.in_dim, da_n.data(), x);
  outer_add(dg.u_n->values, h_dim, h_dim, drn.data(), h_prev);
  outer_add(dg.w_r->values, h_dim, g.in_dim, da_r.data(), x);
  outer_add(dg.u_r->values, h_dim, h_dim, da_r.data(), h_prev);
  outer_add(dg.w_u->values, h_dim, g.in_dim, da_u.data(), x);
  outer_add(dg.u_u->values, h_dim, h_dim, da_u.data(), h_prev);
  for (std::size_t i = 0; i < h_dim; ++i) {
    dg.b_n->values[i] += da_n[i];
    dg.b_r->values[i] += da_r[i];
    dg.b_u->values[i] += da_u[i];
  }

  matvec_t_add(g.w_n->values, h_dim, g.in_dim, da_n.data(), dx);
  matvec_t_add(g.w_r->values, h_dim, g.in_dim, da_r.data(), dx);
  matvec_t_add(g.w_u->values, h_dim, g.in_dim, da_u.data(), dx);
  matvec_t_add(g.u_n->values, h_dim, h_dim, drn.data(), dh_prev);
  matvec_t_add(g.u_r->values, h_dim, h_dim, da_r.data(), dh_prev);
  matvec_t_add(g.u_u->values, h_dim, h_dim, da_u.data(), dh_prev);
}

void layer_norm(const double* x, std::size_t dim, const Tensor& gain,
                const Tensor& bias, double* mean_out, double* inv_std_out,
                std::vector<double>& xhat, std::vector<double>& y) {
  double mean = 0.0;
  for (std::size_t i = 0; i < dim; ++i) mean += x[i];
  mean /= static_cast<double>(dim);
  double var = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double d = x[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(dim);
  const double inv_std = 1.0 / std::sqrt(var + kNormEps);
  xhat.resize(dim);
  y.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    xhat[i] = (x[i] - mean) * inv_std;
    y[i] = gain.values[i] * xhat[i] + bias.values[i];
  }
  *mean_out = mean;
  *inv_std_out = inv_std;
}

void layer_norm_backward(const std::vector<double>& dy, const std::vector<double>& xhat,
                         double inv_std, const Tensor& gain, Tensor& dgain,
                         Tensor& dbias, std::vector<double>& dx) {
  const std::size_t dim = dy.size();
  std::vector<double> dxhat(dim);
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    dgain.values[i] += dy[i] * xhat[i];
    dbias.values[i] += dy[i];
    dxhat[i] = dy[i] * gain.values[i];
    m1 += dxhat[i];
    m2 += dxhat[i] * xhat[i];
  }
  m1 /= static_cast<double>(dim);
  m2 /= static_cast<double>(dim);
  dx.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    dx[i] = inv_std * (dxhat[i] - m1 - xhat[i] * m2);
  }
}

}  // namespace

const char* task_name(Task t) {
  switch (t) {
    case Task::Dx: return "dx";
    case Task::LOS3: return "los3";
    case Task::LOS7: return "los7";
    case Task::Mort: return "mort";
    case Task::Readm: return "readm";
  }
  throw std::invalid_argument("bad task");
}

Task task_from_name(const std::string& name) {
  if (name == "dx") return Task::Dx;
  if (name == "los3") return Task::LOS3;
  if (name == "los7") return Task::LOS7;
  if (name == "mort") return Task::Mort;
  if (name == "readm") return Task::Readm;
  throw std::invalid_argument("unknown task: " + name);
}

std::size_t head_dim(Task t) { return t == Task::Dx ? kDxLabels : 1; }

void Hyperparams::validate() const {
  if (vocab_size == 0 || embed_dim == 0 || hidden_dim == 0 ||
      max_tokens_per_event == 0 || max_events_per_patient == 0 ||
      batch_size == 0) {
    throw std::invalid_argument("hyperparameters must be positive");
  }
  if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be > 0");
}

ParamSet init_params(const Hyperparams& hp, std::uint64_t seed) {
  hp.validate();
  const std::size_t v = hp.vocab_size, e = hp.embed_dim, h = hp.hidden_dim;
  const std::size_t d = hp.head_dim();

  ParamSet p;
  p.rng_seed = seed;
  p.tensors.reserve(kTensorCount);
  auto add = [&p](const char* name, std::vector<std::size_t> shape,
                  bool is_norm = false) {
    p.tensors.push_back(Tensor::zeros(name, std::move(shape), is_norm));
  };
  add("embedding", {v, e});
  add("enc.w_r", {h, e}); add("enc.w_u", {h, e}); add("enc.w_n", {h, e});
  add("enc.u_r", {h, h}); add("enc.u_u", {h, h}); add("enc.u_n", {h, h});
  add("enc.b_r", {h});    add("enc.b_u", {h});    add("enc.b_n", {h});
  add("enc_norm.gain", {h}, true); add("enc_norm.bias", {h}, true);
  add("agg.w_r", {h, h}); add("agg.w_u", {h, h}); add("agg.w_n", {h, h});
  add("agg.u_r", {h, h}); add("agg.u_u", {h, h}); add("agg.u_n", {h, h});
  add("agg.b_r", {h});    add("agg.b_u", {h});    add("agg.b_n", {h});
  add("agg_norm.gain", {h}, true); add("agg_norm.bias", {h}, true);
  add("head.w", {d, h}); add("head.b", {d});

  const double k = 1.0 / std::sqrt(static_cast<double>(h));
  Rng rng(seed);
  for (Tensor& t : p.tensors) {
    if (t.is_norm) {
      const bool is_gain = t.name.ends_with("gain");
      for (double& x : t.values) x = is_gain ? 1.0 : 0.0;
    } else {
      for (double& x : t.values) x = rng.uniform(-k, k);
    }
  }
  return p;
}

EventCache forward_event(const std::vector<std::uint32_t>& tokens,
                         const ParamSet& params, const Hyperparams& hp) {
  if (tokens.empty()) throw std::invalid_argument("forward_event: empty token list");
  EventCache cache;
  cache.tokens.assign(tokens.begin(),
                      tokens.begin() + static_cast<std::ptrdiff_t>(std::min(
                                           tokens.size(), hp.max_tokens_per_event)));
  const Tensor& emb = params.at(kEmbedding);
  for (std::uint32_t id : cache.tokens) {
    if (id >= hp.vocab_size) {
      throw std::out_of_range("token id " + std::to_string(id) + " >= vocab size");
    }
  }

  const GruView enc = gru_view(params, kEncWr, hp.embed_dim, hp.hidden_dim);
  std::vector<double> h0(hp.hidden_dim, 0.0);
  for (std::size_t t = 0; t < cache.tokens.size(); ++t) {
    const double* x = emb.values.data() + cache.tokens[t] * hp.embed_dim;
    const double* h_prev = t == 0 ? h0.data() : cache.h[t - 1].data();
    gru_step(enc, x, h_prev, cache.r, cache.u, cache.n, cache.unh, cache.h);
  }

  layer_norm(cache.h.back().data(), hp.hidden_dim, params.at(kEncGain),
             params.at(kEncBias), &cache.mean, &cache.inv_std, cache.xhat,
             cache.z);
  return cache;
}

PatientCache forward_patient(const EncodedPatient& patient, const ParamSet& params,
                             const Hyperparams& hp) {
  if (patient.event_tokens.empty()) {
    throw std::invalid_argument("forward_patient: patient has no events");
  }
  PatientCache cache;
  // Keep the most recent events when over the cap.
  const std::size_t n_events =
      std::min(patient.event_tokens.size(), hp.max_events_per_patient);
  const std::size_t first = patient.event_tokens.size() - n_events;

  cache.events.reserve(n_events);
  for (std::size_t i = 0; i < n_events; ++i) {
    cache.events.push_back(forward_event(patient.event_tokens[first + i], params, hp));
  }

  const GruView agg = gru_view(params, kAggWr, hp.hidden_dim, hp.hidden_dim);
  std::vector<double> h0(hp.hidden_dim, 0.0);
  for (std::size_t i = 0; i < n_events; ++i) {
    const double* h_prev = i == 0 ? h0.data() : cache.agg_h[i - 1].data();
    gru_step(agg, cache.events[i].z.data(), h_prev, cache.agg_r, cache.agg_u,
             cache.agg_n, cache.agg_unh, cache.agg_h);
  }

  layer_norm(cache.agg_h.back().data(), hp.hidden_dim, params.at(kAggGain),
             params.at(kAggBias), &cache.agg_mean, &cache.agg_inv_std,
             cache.agg_xhat, cache.patient_vec);

  const Tensor& head_w = params.at(kHeadW);
  const Tensor& head_b = params.at(kHeadB);
  cache.logits.resize(hp.head_dim());
  matvec(head_w.values, hp.head_dim(), hp.hidden_dim, cache.patient_vec.data(),
         cache.logits.data());
  for (std::size_t j = 0; j < hp.head_dim(); ++j) cache.logits[j] += head_b.values[j];
  return cache;
}

double loss(const std::vector<double>& logits, const std::vector<double>& labels) {
  if (logits.size() != labels.size() || logits.empty()) {
    throw std::invalid_argument("loss: logit/label size mismatch");
  }
  double total = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const double x = logits[j], y = labels[j];
    if (y != 0.0 && y != 1.0) {
      throw std::invalid_argument("loss: labels must be 0 or 1");
    }
    total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  return total / static_cast<double>(logits.size());
}

GradSet zero_grads(const ParamSet& params) {
  GradSet g;
  g.rng_seed = params.rng_seed;
  g.tensors.reserve(params.count());
  for (const Tensor& t : params.tensors) {
    g.tensors.push_back(Tensor::zeros(t.name, t.shape, t.is_norm));
  }
  return g;
}

double backward(const EncodedPatient& patient, const PatientCache& cache,
                const ParamSet& params, const Hyperparams& hp, GradSet& grads) {
  if (grads.count() != params.count()) {
    throw std::invalid_argument("backward: grad/param layout mismatch");
  }
  const std::size_t h_dim = hp.hidden_dim;
  const std::size_t d = hp.head_dim();
  if (patient.labels.size() != d) {
    throw std::invalid_argument("backward: label width != head dim");
  }
  const double sample_loss = loss(cache.logits, patient.labels);

  // d loss / d logits, loss = mean BCE over head dims
  std::vector<double> dlogits(d);
  for (std::size_t j = 0; j < d; ++j) {
    dlogits[j] = (sigmoid(cache.logits[j]) - patient.labels[j]) /
                 static_cast<double>(d);
  }

  // head
  const Tensor& head_w = params.at(kHeadW);
  outer_add(grads.at(kHeadW).values, d, h_dim, dlogits.data(),
            cache.patient_vec.data());
  for (std::size_t j = 0; j < d; ++j) grads.at(kHeadB).values[j] += dlogits[j];
  std::vector<double> dpatient(h_dim, 0.0);
  matvec_t_add(head_w.values, d, h_dim, dlogits.data(), dpatient.data());

  // aggregator norm
  std::vector<double> dagg_h(h_dim, 0.0);
  layer_norm_backward(dpatient, cache.agg_xhat, cache.agg_inv_std,
                      params.at(kAggGain), grads.at(kAggGain), grads.at(kAggBias),
                      dagg_h);

  // aggregator GRU, backwards through time; dz[i] collects each event
  // vector's gradient
  const GruView agg = gru_view(params, kAggWr, h_dim, h_dim);
  GruGrads dagg = gru_grads(grads, kAggWr);
  const std::size_t n_events = cache.events.size();
  std::vector<std::vector<double>> dz(n_events, std::vector<double>(h_dim, 0.0));
  std::vector<double> h0(h_dim, 0.0);
  std::vector<double> dh = dagg_h;
  for (std::size_t i = n_events; i-- > 0;) {
    std::vector<double> dh_prev(h_dim, 0.0);
    const double* h_prev = i == 0 ? h0.data() : cache.agg_h[i - 1].data();
    gru_step_backward(agg, dagg, cache.events[i].z.data(), h_prev, cache.agg_r[i],
                      cache.agg_u[i], cache.agg_n[i], cache.agg_unh[i], dh,
                      dh_prev.data(), dz[i].data());
    dh = std::move(dh_prev);
  }

  // events
  const GruView enc = gru_view(params, kEncWr, hp.embed_dim, h_dim);
  GruGrads denc = gru_grads(grads, kEncWr);
  const Tensor& emb = params.at(kEmbedding);
  Tensor& demb = grads.at(kEmbedding);
  std::vector<double> e0(h_dim, 0.0);
  for (std::size_t i = 0; i < n_events; ++i) {
    const EventCache& ev = cache.events[i];
    std::vector<double> dev_h(h_dim, 0.0);
    layer_norm_backward(dz[i], ev.xhat, ev.inv_std, params.at(kEncGain),
                        grads.at(kEncGain), grads.at(kEncBias), dev_h);
    std::vector<double> dht = std::move(dev_h);
    for (std::size_t t = ev.tokens.size(); t-- > 0;) {
      std::vector<double> dh_prev(h_dim, 0.0);
      std::vector<double> dx(hp.embed_dim, 0.0);
      const double* x = emb.values.data() + ev.tokens[t] * hp.embed_dim;
      const double* h_prev = t == 0 ? e0.data() : ev.h[t - 1].data();
      gru_step_backward(enc, denc, x, h_prev, ev.r[t], ev.u[t], ev.n[t], ev.unh[t],
                        dht, dh_prev.data(), dx.data());
      double* drow = demb.values.data() + ev.tokens[t] * hp.embed_dim;
      for (std::size_t j = 0; j < hp.embed_dim; ++j) drow[j] += dx[j];
      dht = std::move(dh_prev);
    }
  }
  return sample_loss;
}

double batch_forward_backward(const std::vector<const EncodedPatient*>& batch,
                              const ParamSet& params, const Hyperparams& hp,
                              GradSet& grads) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  double total = 0.0;
  // Each sample's gradient is finished in a scratch set and folded in as a
  // single addend per entry. That keeps the mean gradient exactly linear in
  // sample multiplicity (duplicating a sample cannot change it), which
  // interleaved accumulation would break in the last ulp.
  GradSet scratch = zero_grads(params);
  for (const EncodedPatient* sample : batch) {
    for (Tensor& t : scratch.tensors) {
      std::fill(t.values.begin(), t.values.end(), 0.0);
    }
    const PatientCache cache = forward_patient(*sample, params, hp);
    total += backward(*sample, cache, params, hp, scratch);
    for (std::size_t i = 0; i < grads.count(); ++i) {
      double* acc = grads.at(i).values.data();
      const double* s = scratch.at(i).values.data();
      for (std::size_t j = 0; j < grads.at(i).size(); ++j) acc[j] += s[j];
    }
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (Tensor& t : grads.tensors) {
    for (double& v : t.values) v *= inv_b;
  }
  return total * inv_b;
}

void sgd_step(ParamSet& params, const GradSet& grads, double lr,
              const ProxTerm* prox) {
  if (lr < 0.0) throw std::invalid_argument("sgd_step: negative learning rate");
  if (!same_shapes(params, grads)) {
    throw std::invalid_argument("sgd_step: grad/param shape mismatch");
  }
  const bool use_prox = prox != nullptr && prox->mu != 0.0;
  if (use_prox) {
    if (prox->mu < 0.0) throw std::invalid_argument("sgd_step: negative mu");
    if (prox->anchor == nullptr || !same_shapes(params, *prox->anchor)) {
      throw std::invalid_argument("sgd_step: bad prox anchor");
    }
  }
  for (std::size_t i = 0; i < params.count(); ++i) {
    Tensor& t = params.at(i);
    const Tensor& g = grads.at(i);
    if (use_prox && !(prox->exclude_norm && t.is_norm)) {
      const Tensor& a = prox->anchor->at(i);
      for (std::size_t j = 0; j < t.size(); ++j) {
        t.values[j] -= lr * (g.values[j] + prox->mu * (t.values[j] - a.values[j]));
      }
    } else {
      for (std::size_t j = 0; j < t.size(); ++j) {
        t.values[j] -= lr * g.values[j];
      }
    }
  }
}

double fd_gradient(const std::vector<const EncodedPatient*>& batch,
                   ParamSet& params, const Hyperparams& hp, std::size_t tensor_idx,
                   std::size_t value_idx, double eps) {
  double& theta = params.at(tensor_idx).values[value_idx];
  const double saved = theta;
  auto batch_loss = [&]() {
    double total = 0.0;
    for (const EncodedPatient* s : batch) {
      total += loss(forward_patient(*s, params, hp).logits, s->labels);
    }
    return total / static_cast<double>(batch.size());
  };
  theta = saved + eps;
  const double up = batch_loss();
  theta = saved - eps;
  const double down = batch_loss();
  theta = saved;
  return (up - down) / (2.0 * eps);
}

GradCheckReport grad_check(const Hyperparams& hp, std::uint64_t seed,
                           double tolerance) {
  ParamSet params = init_params(hp, seed);

  // Synthetic batch: 2 patients, 1-3 events each, 2-5 tokens per event.
  Rng rng = Rng::keyed({seed, 0xdeadbeef});
  std::vector<EncodedPatient> patients(2);
  for (EncodedPatient& p : patients) {
    const std::size_t n_events = 1 + rng.next_below(3);
    for (std::size_t i = 0; i < n_events; ++i) {
      std::vector<std::uint32_t> tokens(2 + rng.next_below(4));
      for (auto& t : tokens) {
        t = static_cast<std::uint32_t>(rng.next_below(hp.vocab_size));
      }
      p.event_tokens.push_back(std::move(tokens));
    }
    p.labels.resize(hp.head_dim());
    for (double& y : p.labels) y = rng.next_below(2) ? 1.0 : 0.0;
  }
  std::vector<const EncodedPatient*> batch;
  for (const auto& p : patients) batch.push_back(&p);

  GradSet grads = zero_grads(params);
  batch_forward_backward(batch, params, hp, grads);

  GradCheckReport report;
  for (std::size_t ti = 0; ti < params.count(); ++ti) {
    TensorCheck tc;
    tc.name = params.at(ti).name;
    for (std::size_t vi = 0; vi < params.at(ti).size(); ++vi) {
      const double analytic = grads.at(ti).values[vi];
      const double fd = fd_gradient(batch, params, hp, ti, vi);
      const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-3});
      tc.max_rel_err = std::max(tc.max_rel_err, std::abs(analytic - fd) / denom);
    }
    if (tc.max_rel_err > report.worst_rel_err) {
      report.worst_rel_err = tc.max_rel_err;
      report.worst_tensor = tc.name;
    }
    report.tensors.push_back(std::move(tc));
  }
  report.pass = report.worst_rel_err < tolerance;
  return report;
}

}  // namespace unifl::nn

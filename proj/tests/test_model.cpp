#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "unifl/model.hpp"
#include "unifl/rng.hpp"
#include "unifl/tensor.hpp"

using namespace unifl;
using namespace unifl::nn;

namespace {

Hyperparams tiny_hp(Task task = Task::LOS3) {
  Hyperparams hp;
  hp.vocab_size = 16;
  hp.embed_dim = 4;
  hp.hidden_dim = 4;
  hp.max_tokens_per_event = 8;
  hp.max_events_per_patient = 8;
  hp.task = task;
  return hp;
}

EncodedPatient random_patient(Rng& rng, const Hyperparams& hp) {
  EncodedPatient p;
  const std::size_t n_events = 1 + rng.next_below(4);
  for (std::size_t i = 0; i < n_events; ++i) {
    std::vector<std::uint32_t> toks(1 + rng.next_below(6));
    for (auto& t : toks) t = static_cast<std::uint32_t>(rng.next_below(hp.vocab_size));
    p.event_tokens.push_back(std::move(toks));
  }
  p.labels.resize(hp.head_dim());
  for (double& y : p.labels) y = rng.next_below(2) ? 1.0 : 0.0;
  return p;
}

// ---- independent forward oracle -------------------------------------------
//
// A from-scratch reimplementation with nested loops and no shared helper
// code, used to cross-check forward_patient.

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(t.shape[0], std::vector<double>(t.shape[1]));
  for (std::size_t i = 0; i < t.shape[0]; ++i) {
    for (std::size_t j = 0; j < t.shape[1]; ++j) {
      m[i][j] = t.values[i * t.shape[1] + j];
    }
  }
  return m;
}

std::vector<double> naive_gru_run(const Mat& wr, const Mat& wu, const Mat& wn,
                                  const Mat& ur, const Mat& uu, const Mat& un,
                                  const std::vector<double>& br,
                                  const std::vector<double>& bu,
                                  const std::vector<double>& bn,
                                  const std::vector<std::vector<double>>& inputs) {
  const std::size_t h_dim = br.size();
  std::vector<double> h(h_dim, 0.0);
  for (const auto& x : inputs) {
    std::vector<double> hn(h_dim);
    for (std::size_t i = 0; i < h_dim; ++i) {
      double ar = br[i], au = bu[i], an_in = bn[i], unh = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) {
        ar += wr[i][j] * x[j];
        au += wu[i][j] * x[j];
        an_in += wn[i][j] * x[j];
      }
      for (std::size_t j = 0; j < h_dim; ++j) {
        ar += ur[i][j] * h[j];
        au += uu[i][j] * h[j];
        unh += un[i][j] * h[j];
      }
      const double r = 1.0 / (1.0 + std::exp(-ar));
      const double u = 1.0 / (1.0 + std::exp(-au));
      const double n = std::tanh(an_in + r * unh);
      hn[i] = (1.0 - u) * n + u * h[i];
    }
    h = hn;
  }
  return h;
}

std::vector<double> naive_layer_norm(const std::vector<double>& x,
                                     const std::vector<double>& g,
                                     const std::vector<double>& b) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = g[i] * (x[i] - mean) / std::sqrt(var + 1e-12) + b[i];
  }
  return y;
}

std::vector<double> naive_forward(const EncodedPatient& p, const ParamSet& ps) {
  const Mat emb = to_mat(ps.find("embedding"));
  const Mat ewr = to_mat(ps.find("enc.w_r")), ewu = to_mat(ps.find("enc.w_u")),
            ewn = to_mat(ps.find("enc.w_n")), eur = to_mat(ps.find("enc.u_r")),
            euu = to_mat(ps.find("enc.u_u")), eun = to_mat(ps.find("enc.u_n"));
  const auto ebr = ps.find("enc.b_r").values, ebu = ps.find("enc.b_u").values,
             ebn = ps.find("enc.b_n").values;
  const Mat awr = to_mat(ps.find("agg.w_r")), awu = to_mat(ps.find("agg.w_u")),
            awn = to_mat(ps.find("agg.w_n")), aur = to_mat(ps.find("agg.u_r")),
            auu = to_mat(ps.find("agg.u_u")), aun = to_mat(ps.find("agg.u_n"));
  const auto abr = ps.find("agg.b_r").values, abu = ps.find("agg.b_u").values,
             abn = ps.find("agg.b_n").values;

  std::vector<std::vector<double>> zs;
  for (const auto& toks : p.event_tokens) {
    std::vector<std::vector<double>> xs;
    for (std::uint32_t t : toks) xs.push_back(emb[t]);
    const auto h = naive_gru_run(ewr, ewu, ewn, eur, euu, eun, ebr, ebu, ebn, xs);
    zs.push_back(naive_layer_norm(h, ps.find("enc_norm.gain").values,
                                  ps.find("enc_norm.bias").values));
  }
  const auto ha = naive_gru_run(awr, awu, awn, aur, auu, aun, abr, abu, abn, zs);
  const auto pv = naive_layer_norm(ha, ps.find("agg_norm.gain").values,
                                   ps.find("agg_norm.bias").values);
  const Mat hw = to_mat(ps.find("head.w"));
  const auto hb = ps.find("head.b").values;
  std::vector<double> logits(hb.size());
  for (std::size_t i = 0; i < hb.size(); ++i) {
    logits[i] = hb[i];
    for (std::size_t j = 0; j < pv.size(); ++j) logits[i] += hw[i][j] * pv[j];
  }
  return logits;
}

}  // namespace

TEST_CASE("init is deterministic in the seed") {
  const Hyperparams hp = tiny_hp();
  CHECK(digest(init_params(hp, 42)) == digest(init_params(hp, 42)));
  const ParamSet a = init_params(hp, 1), b = init_params(hp, 2);
  bool differs = false;
  for (std::size_t i = 0; i < a.count(); ++i) {
    if (!a.at(i).is_norm && a.at(i).values != b.at(i).values) differs = true;
  }
  CHECK(differs);
}

TEST_CASE("norm tensors start at gain one, bias zero, and only they are flagged") {
  const ParamSet p = init_params(tiny_hp(), 3);
  int flagged = 0;
  for (const Tensor& t : p.tensors) {
    if (t.is_norm) {
      ++flagged;
      const bool is_gain = t.name.find("gain") != std::string::npos;
      for (double v : t.values) CHECK(v == (is_gain ? 1.0 : 0.0));
    } else {
      CHECK(t.name.find("norm") == std::string::npos);
    }
  }
  CHECK(flagged == 4);
}

TEST_CASE("loss matches hand arithmetic") {
  CHECK(loss({0.0}, {1.0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(loss({30.0}, {1.0}) == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(loss({0.0, 0.0}, {1.0, 0.0}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(loss({0.0}, {0.5}), std::invalid_argument);
  CHECK_THROWS_AS(loss({0.0}, {1.0, 0.0}), std::invalid_argument);
}

TEST_CASE("zero weights degenerate to the norm bias vector") {
  const Hyperparams hp = tiny_hp();
  ParamSet p = init_params(hp, 5);
  for (Tensor& t : p.tensors) {
    if (!t.is_norm) {
      for (double& v : t.values) v = 0.0;
    }
  }
  std::vector<double>& bias = p.find("enc_norm.bias").values;
  bias = {0.5, -1.0, 2.0, 0.0};
  const EventCache ec = forward_event({1, 2, 3}, p, hp);
  for (std::size_t i = 0; i < hp.hidden_dim; ++i) {
    CHECK(ec.z[i] == bias[i]);
  }
}

TEST_CASE("forward matches the naive loop oracle") {
  Rng rng(911);
  for (const Task task : {Task::LOS3, Task::Dx}) {
    const Hyperparams hp = tiny_hp(task);
    for (int trial = 0; trial < 20; ++trial) {
      const ParamSet p = init_params(hp, 1000 + trial);
      const EncodedPatient pat = random_patient(rng, hp);
      const PatientCache cache = forward_patient(pat, p, hp);
      const std::vector<double> expected = naive_forward(pat, p);
      REQUIRE(cache.logits.size() == expected.size());
      for (std::size_t j = 0; j < expected.size(); ++j) {
        CHECK(cache.logits[j] == doctest::Approx(expected[j]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("one-event patient is a single aggregator step") {
  const Hyperparams hp = tiny_hp();
  const ParamSet p = init_params(hp, 8);
  EncodedPatient pat;
  pat.event_tokens = {{1, 2}};
  pat.labels = {1.0};
  const PatientCache cache = forward_patient(pat, p, hp);
  CHECK(cache.agg_h.size() == 1);
  CHECK(cache.logits.size() == 1);
  CHECK(std::isfinite(cache.logits[0]));
}

TEST_CASE("token id beyond the vocabulary is rejected") {
  const Hyperparams hp = tiny_hp();
  const ParamSet p = init_params(hp, 8);
  CHECK_THROWS_AS(forward_event({16}, p, hp), std::out_of_range);
  CHECK_THROWS_AS(forward_event({}, p, hp), std::invalid_argument);
}

TEST_CASE("layer norm output has zero mean, unit variance before gain and bias") {
  const Hyperparams hp = tiny_hp();
  Rng rng(14);
  for (int trial = 0; trial < 30; ++trial) {
    const ParamSet p = init_params(hp, 500 + trial);
    const EncodedPatient pat = random_patient(rng, hp);
    const PatientCache cache = forward_patient(pat, p, hp);
    auto check_stats = [&](const std::vector<double>& xhat) {
      double mean = 0.0, var = 0.0;
      for (double v : xhat) mean += v;
      mean /= static_cast<double>(xhat.size());
      for (double v : xhat) var += (v - mean) * (v - mean);
      var /= static_cast<double>(xhat.size());
      CHECK(std::abs(mean) < 1e-6);
      CHECK(std::abs(var - 1.0) < 1e-6);
    };
    check_stats(cache.agg_xhat);
    for (const EventCache& ev : cache.events) check_stats(ev.xhat);
  }
}

TEST_CASE("gradients match central finite differences on a tiny model") {
  Rng rng(4242);
  for (const Task task : {Task::LOS3, Task::Dx}) {
    const Hyperparams hp = tiny_hp(task);
    ParamSet p = init_params(hp, task == Task::Dx ? 78 : 77);
    const EncodedPatient pat = random_patient(rng, hp);
    std::vector<const EncodedPatient*> batch = {&pat};

    GradSet grads = zero_grads(p);
    batch_forward_backward(batch, p, hp, grads);

    double worst = 0.0;
    for (std::size_t ti = 0; ti < p.count(); ++ti) {
      for (std::size_t vi = 0; vi < p.at(ti).size(); ++vi) {
        const double analytic = grads.at(ti).values[vi];
        const double fd = fd_gradient(batch, p, hp, ti, vi);
        const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-3});
        worst = std::max(worst, std::abs(analytic - fd) / denom);
      }
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("untouched embedding rows get zero gradient") {
  const Hyperparams hp = tiny_hp();
  const ParamSet p = init_params(hp, 21);
  EncodedPatient pat;
  pat.event_tokens = {{1, 2, 1}};
  pat.labels = {1.0};
  GradSet grads = zero_grads(p);
  const PatientCache cache = forward_patient(pat, p, hp);
  backward(pat, cache, p, hp, grads);
  const Tensor& demb = grads.find("embedding");
  for (std::uint32_t row = 0; row < hp.vocab_size; ++row) {
    const bool touched = row == 1 || row == 2;
    double norm = 0.0;
    for (std::size_t j = 0; j < hp.embed_dim; ++j) {
      norm += std::abs(demb.values[row * hp.embed_dim + j]);
    }
    if (touched) {
      CHECK(norm > 0.0);
    } else {
      CHECK(norm == 0.0);
    }
  }
}

TEST_CASE("duplicating a sample leaves the mean gradient bit-identical") {
  const Hyperparams hp = tiny_hp();
  const ParamSet p = init_params(hp, 33);
  Rng rng(99);
  const EncodedPatient pat = random_patient(rng, hp);

  GradSet g1 = zero_grads(p), g2 = zero_grads(p);
  batch_forward_backward({&pat}, p, hp, g1);
  batch_forward_backward({&pat, &pat}, p, hp, g2);
  for (std::size_t i = 0; i < g1.count(); ++i) {
    CHECK(g1.at(i).values == g2.at(i).values);
  }
}

TEST_CASE("sgd_step handles the proximal term") {
  const Hyperparams hp = tiny_hp();
  ParamSet base = init_params(hp, 4);
  const GradSet grads = zero_grads(base);

  SUBCASE("mu 0 equals the plain step") {
    ParamSet a = base, b = base;
    GradSet g = zero_grads(base);
    Rng rng(5);
    for (Tensor& t : g.tensors) {
      for (double& v : t.values) v = rng.uniform(-1.0, 1.0);
    }
    sgd_step(a, g, 0.05);
    ProxTerm prox{0.0, &base, false};
    sgd_step(b, g, 0.05, &prox);
    CHECK(digest(a) == digest(b));
  }

  SUBCASE("anchor at the current point adds nothing") {
    ParamSet a = base;
    const ParamSet anchor = base;
    ProxTerm prox{2.5, &anchor, false};
    sgd_step(a, grads, 0.1, &prox);
    CHECK(digest(a) == digest(base));
  }

  SUBCASE("hand-computed scalar case") {
    // w=2, anchor=0, grad=0, lr=0.1, mu=1 -> w' = 2 - 0.1*(1*2) = 1.8
    ParamSet w = base;
    for (Tensor& t : w.tensors) {
      for (double& v : t.values) v = 2.0;
    }
    ParamSet anchor = base;
    for (Tensor& t : anchor.tensors) {
      for (double& v : t.values) v = 0.0;
    }
    ProxTerm prox{1.0, &anchor, false};
    sgd_step(w, grads, 0.1, &prox);
    for (const Tensor& t : w.tensors) {
      for (double v : t.values) CHECK(v == doctest::Approx(1.8).epsilon(1e-15));
    }
  }

  SUBCASE("exclude_norm skips the flagged tensors") {
    ParamSet w = base;
    ParamSet anchor = base;
    for (Tensor& t : anchor.tensors) {
      for (double& v : t.values) v = -5.0;
    }
    ProxTerm prox{1.0, &anchor, true};
    sgd_step(w, grads, 0.1, &prox);
    for (std::size_t i = 0; i < w.count(); ++i) {
      if (w.at(i).is_norm) {
        CHECK(w.at(i).values == base.at(i).values);
      } else {
        CHECK(w.at(i).values != base.at(i).values);
      }
    }
  }

  SUBCASE("negative learning rate is rejected") {
    ParamSet a = base;
    CHECK_THROWS_AS(sgd_step(a, grads, -0.1), std::invalid_argument);
  }
}

TEST_CASE("fifty sgd steps halve the loss on a separable fixture") {
  Hyperparams hp = tiny_hp();
  hp.learning_rate = 0.5;
  ParamSet p = init_params(hp, 6);

  // Token 2 marks positives, token 3 negatives: trivially separable.
  std::vector<EncodedPatient> data;
  for (int i = 0; i < 8; ++i) {
    EncodedPatient pat;
    const bool pos = i % 2 == 0;
    pat.event_tokens = {{pos ? 2u : 3u, pos ? 2u : 3u},
                        {pos ? 2u : 3u}};
    pat.labels = {pos ? 1.0 : 0.0};
    data.push_back(std::move(pat));
  }
  std::vector<const EncodedPatient*> batch;
  for (const auto& d : data) batch.push_back(&d);

  GradSet grads = zero_grads(p);
  const double initial = batch_forward_backward(batch, p, hp, grads);
  sgd_step(p, grads, hp.learning_rate);
  double last = initial;
  for (int step = 1; step < 50; ++step) {
    grads = zero_grads(p);
    last = batch_forward_backward(batch, p, hp, grads);
    sgd_step(p, grads, hp.learning_rate);
  }
  CHECK(last < 0.5 * initial);
}

TEST_CASE("grad_check fixtures pass at 1e-4") {
  for (const std::uint64_t seed : {11ull, 22ull, 33ull}) {
    const Hyperparams hp = tiny_hp(seed == 22 ? Task::Dx : Task::LOS3);
    const GradCheckReport report = grad_check(hp, seed, 1e-4);
    INFO("worst tensor ", report.worst_tensor, " err ", report.worst_rel_err);
    CHECK(report.pass);
    CHECK(report.worst_rel_err < 1e-4);
  }
}

TEST_CASE("checkpoint file round trip is bit exact") {
  const Hyperparams hp = tiny_hp(Task::Dx);
  const ParamSet p = init_params(hp, 1234);
  save_checkpoint(p, "ckpt_test.json");
  const ParamSet loaded = load_checkpoint("ckpt_test.json");
  CHECK(digest(loaded) == digest(p));
  CHECK(loaded.rng_seed == p.rng_seed);
  save_checkpoint(loaded, "ckpt_test2.json");
  std::ifstream f1("ckpt_test.json", std::ios::binary), f2("ckpt_test2.json", std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  std::remove("ckpt_test.json");
  std::remove("ckpt_test2.json");
}

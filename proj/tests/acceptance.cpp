// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. `--only 1,4,9` runs a subset.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "rat/attention.hpp"
#include "rat/decoding.hpp"
#include "rat/experiment.hpp"
#include "rat/metrics.hpp"
#include "rat/model_io.hpp"
#include "rat/tasks.hpp"
#include "rat/training.hpp"
#include "test_util.hpp"

using namespace rat;
using rat::test::param_grad_check;
using rat::test::random_stochastic;
using rat::test::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failures without stopping at the first one.
struct Checker {
  Outcome out;
  std::size_t failures = 0;
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    out.pass = false;
    if (failures++ < 3) out.detail += (out.detail.empty() ? "" : "; ") + what;
  }
  Outcome done(std::string summary) {
    if (out.pass) out.detail = std::move(summary);
    else if (failures > 3) out.detail += " (+" + std::to_string(failures - 3) + " more)";
    return out;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("rat_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

bool identical(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

TokenSequence random_content(RngStream& rng, std::size_t n, std::size_t vocab) {
  TokenSequence s;
  while (s.size() < n) s.push_back(kFirstContentToken + rng.uniform_int(vocab - kFirstContentToken));
  return s;
}

ModelConfig tiny_model(std::size_t vocab, std::size_t d = 8) {
  ModelConfig c;
  c.encoder_layers = c.decoder_layers = 1;
  c.heads = 2;
  c.d_model = d;
  c.d_ff = 2 * d;
  c.vocab_size = vocab;
  c.max_len = 12;
  c.residual_dropout = c.activation_dropout = c.attention_dropout = 0.0;
  return c;
}

// ---------------------------------------------------------------------------

Outcome relaxation_exactness() {
  Checker c;
  RngStream rng(1, "c1");
  double worst_sum = 0.0, worst_uniform = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t rows = 1 + rng.uniform_int(4), t = 1 + rng.uniform_int(12);
    const Tensor g = random_stochastic(rng, rows, t);
    for (double gamma : {0.0, 0.25, 0.5, 1.0}) {
      const Tensor r = relax_weights(g, gamma, t);
      if (gamma == 0.0) c.expect(identical(r, g), "gamma 0 not bit-identical");
      const double lo = gamma / t, hi = 1.0 - gamma + gamma / t;
      for (std::size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < t; ++j) {
          const double v = r.at(i, j);
          s += v;
          c.expect(v >= lo - 1e-15 && v <= hi + 1e-15, "entry outside bounds");
          if (gamma == 1.0) worst_uniform = std::max(worst_uniform, std::abs(v - 1.0 / t));
        }
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      }
    }
  }
  c.expect(worst_sum <= 1e-12, "row sum error " + fmt("%.3g", worst_sum));
  c.expect(worst_uniform <= 1e-15, "gamma 1 deviation " + fmt("%.3g", worst_uniform));
  return c.done("max |row sum - 1| " + fmt("%.2g", worst_sum) + ", max gamma=1 deviation " +
                fmt("%.2g", worst_uniform));
}

Outcome composition_law() {
  Checker c;
  RngStream rng(2, "c2");
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t t = 1 + rng.uniform_int(10);
    const Tensor g = random_stochastic(rng, 3, t);
    for (int ia = 0; ia <= 10; ++ia)
      for (int ib = 0; ib <= 10; ++ib) {
        const double a = ia / 10.0, b = ib / 10.0;
        const Tensor lhs = relax_weights(relax_weights(g, a, t), b, t);
        const Tensor rhs = relax_weights(g, a + b - a * b, t);
        for (std::size_t i = 0; i < lhs.numel(); ++i)
          worst = std::max(worst, std::abs(lhs.at(i) - rhs.at(i)));
      }
  }
  c.expect(worst <= 1e-12, "max deviation " + fmt("%.3g", worst));
  return c.done("max deviation " + fmt("%.2g", worst) + " over 24200 compositions");
}

Outcome entropy_monotonicity() {
  Checker c;
  RngStream rng(3, "c3");
  std::size_t strict = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t t = 2 + rng.uniform_int(10);
    const Tensor g = random_stochastic(rng, 1, t);
    const double gamma = rng.uniform();
    const double before = attention_entropy(g)[0];
    const double after = attention_entropy(relax_weights(g, gamma, t))[0];
    c.expect(after >= before, "entropy decreased");
    bool uniform = true;
    for (std::size_t j = 1; j < t; ++j) uniform &= g.at(0, j) == g.at(0, 0);
    if (gamma > 0.0 && !uniform) {
      c.expect(after > before, "no strict increase for a non-uniform row");
      ++strict;
    }
  }
  // Uniform rows stay put.
  const Tensor u = Tensor::full({1, 5}, 0.2);
  c.expect(std::abs(attention_entropy(relax_weights(u, 0.5, 5))[0] - std::log(5.0)) < 1e-15,
           "uniform row changed entropy");
  return c.done(std::to_string(strict) + " strict increases, no decreases");
}

Outcome gradient_suite() {
  Checker c;
  RngStream rng(4, "c4");
  double worst = 0.0;
  std::size_t variants = 0;
  for (const auto fn : {WeightFn::Softmax, WeightFn::SmoothedFocus})
    for (const double gamma : {0.0, 0.3})
      for (const bool bias : {false, true}) {
        ++variants;
        for (int trial = 0; trial < 20; ++trial) {
          double err = 0.0;
          if (!bias) {
            // T=5 with a random causal-free mask that never hides a full row.
            const MhaParams p = MhaParams::init(8, 2, rng);
            const Tensor q = random_tensor(rng, {5, 8}, 1.0, true);
            const Tensor kv = random_tensor(rng, {5, 8}, 1.0, true);
            const Tensor w = random_tensor(rng, {5, 8});
            std::vector<std::uint8_t> mask(25, 0);
            for (std::size_t i = 0; i < 5; ++i) mask[i * 5 + rng.uniform_int(5)] = trial % 2;
            for (std::size_t i = 0; i < 5; ++i) mask[i * 5 + i] = 0;
            AttentionOptions opts;
            opts.relax = RelaxationConfig::matched(gamma);
            opts.weight_fn = fn;
            opts.mask = mask;
            err = param_grad_check({q, kv, p.w_q, p.w_k, p.w_v, p.w_o, p.b_o}, [&] {
              RngStream unused(0, "x");
              return sum(mul(multi_head_attention(q, kv, kv, p, opts, unused), w));
            });
          } else {
            // Relative position bias lives in window attention: 4×4 image, 2×2 windows.
            WindowAttnParams p = WindowAttnParams::init(8, 2, 2, rng);
            p.bias_table = random_tensor(rng, p.bias_table.shape(), 1.0, true);
            const Tensor x = random_tensor(rng, {4, 4, 8}, 1.0, true);
            const Tensor w = random_tensor(rng, {4, 4, 8});
            WindowOptions opts;
            opts.relax = RelaxationConfig::matched(gamma);
            opts.weight_fn = fn;
            err = param_grad_check(
                {x, p.bias_table, p.mha.w_q, p.mha.w_k, p.mha.w_v, p.mha.w_o, p.mha.b_o}, [&] {
                  RngStream unused(0, "x");
                  return sum(mul(windowed_mha(x, p, opts, unused), w));
                });
          }
          worst = std::max(worst, err);
          c.expect(err < 1e-5, "relative error " + fmt("%.3g", err));
        }
      }
  return c.done(std::to_string(variants) + " variants x 20 instances, worst relative error " +
                fmt("%.2g", worst));
}

Outcome teacher_forcing() {
  Checker c;
  RngStream rng(5, "c5");
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    auto cfg = tiny_model(9);
    cfg.relax_self = RelaxationConfig::matched(0.02 * trial);
    cfg.relax_cross = RelaxationConfig::matched(0.04 * trial);
    const Seq2Seq model(cfg, 50 + trial);
    const auto x = random_content(rng, 2 + rng.uniform_int(7), 9);
    auto y = random_content(rng, rng.uniform_int(9), 9);
    y.insert(y.begin(), kBos);
    const Tensor probs = model.forward_teacher_forced(x, y, rng, Phase::Eval);
    const auto h = model.encode(x, rng, Phase::Eval);
    for (std::size_t l = 1; l <= y.size(); ++l) {
      const auto p = model.decode_step(h, TokenSequence(y.begin(), y.begin() + l), rng, Phase::Eval);
      for (std::size_t k = 0; k < 9; ++k) worst = std::max(worst, std::abs(p[k] - probs.at(l - 1, k)));
    }
  }
  c.expect(worst < 1e-10, "max deviation " + fmt("%.3g", worst));
  return c.done("max deviation " + fmt("%.2g", worst) + " over 20 models");
}

Outcome causality() {
  Checker c;
  RngStream rng(6, "c6");
  auto cfg = tiny_model(9);
  cfg.relax_cross = RelaxationConfig::matched(0.2);
  const Seq2Seq model(cfg, 6);
  const auto h = model.encode(random_content(rng, 5, 9), rng, Phase::Eval);
  const std::size_t len = 6;
  for (std::size_t l = 0; l < len; ++l) {
    const Tensor emb = random_tensor(rng, {len, 8}, 0.5, true);
    const Tensor logits = model.decode_embedded(h, emb, 1, rng, Phase::Eval);
    backward(sum(log_softmax_rows(slice_rows(logits, l, 1))));
    const auto g = emb.grad();
    for (std::size_t r = 0; r < len; ++r) {
      double norm = 0.0;
      for (std::size_t k = 0; k < 8; ++k) norm += std::abs(g[r * 8 + k]);
      if (r > l) c.expect(norm == 0.0, "nonzero gradient to a future position");
      else c.expect(norm > 0.0, "missing gradient to a past position");
    }
  }
  return c.done("future gradients exactly zero for every position of L=6");
}

// Best fused score over every EOS-terminated sequence of at most max_len tokens.
BeamHypothesis brute_force(const StepScorer& s, const LmScorer* lm, double lambda,
                           std::size_t max_len) {
  BeamHypothesis best;
  best.score = -std::numeric_limits<double>::infinity();
  std::function<void(TokenSequence&, double)> walk = [&](TokenSequence& prefix, double score) {
    if (prefix.size() - 1 == max_len) return;
    const std::vector<TokenSequence> one{prefix};
    const auto lp = s.next_log_probs(one)[0];
    const auto lm_lp = lm ? lm->log_probs(prefix) : std::vector<double>(lp.size(), 0.0);
    for (Token t = 0; t < lp.size(); ++t) {
      const double next = score + lp[t] + (lm ? lambda * lm_lp[t] : 0.0);
      prefix.push_back(t);
      if (t == kEos) {
        if (next > best.score) best = {TokenSequence(prefix.begin() + 1, prefix.end()), next, true};
      } else {
        walk(prefix, next);
      }
      prefix.pop_back();
    }
  };
  TokenSequence start{kBos};
  walk(start, 0.0);
  return best;
}

Outcome beam_oracle() {
  Checker c;
  RngStream rng(7, "c7");
  std::size_t checks = 0;
  for (int m = 0; m < 10; ++m) {
    const Seq2Seq model(tiny_model(4), 700 + m);
    std::vector<TokenSequence> corpus;
    for (int i = 0; i < 20; ++i) {
      TokenSequence s{kBos};
      for (std::size_t j = 0, n = rng.uniform_int(5); j < n; ++j) s.push_back(3);
      s.push_back(kEos);
      corpus.push_back(s);
    }
    const auto lm = bigram_lm_train(corpus, 4, 0.5);
    const auto x = random_content(rng, 3, 4);
    const ModelScorer scorer(model, model.encode(x, rng, Phase::Eval));
    for (double lambda : {0.0, 0.4}) {
      BeamOptions o;
      o.beam = 256;
      o.max_len = 4;
      o.lm = &lm;
      o.lambda = lambda;
      o.eos_margin = BeamOptions::kNoEarlyStop;
      o.length_normalize = false;
      const auto hyps = beam_search(scorer, o);
      const auto oracle = brute_force(scorer, &lm, lambda, 4);
      c.expect(!hyps.empty() && hyps.front().finished, "no finished hypothesis");
      if (hyps.empty()) continue;
      c.expect(hyps.front().tokens == oracle.tokens, "beam best differs from brute force");
      c.expect(std::abs(hyps.front().score - oracle.score) < 1e-10, "score differs");
      ++checks;
    }
  }
  return c.done(std::to_string(checks) + " (model, lambda) pairs match brute force");
}

Outcome fusion_identities() {
  Checker c;
  RngStream rng(8, "c8");
  auto cfg = tiny_model(10, 16);
  const Seq2Seq model(cfg, 8);
  std::vector<TokenSequence> corpus;
  for (int i = 0; i < 50; ++i) {
    auto s = random_content(rng, 6, 10);
    s.insert(s.begin(), kBos);
    s.push_back(kEos);
    corpus.push_back(s);
  }
  const auto lm = bigram_lm_train(corpus, 10, 0.1);
  for (int i = 0; i < 100; ++i) {
    const auto x = random_content(rng, 2 + rng.uniform_int(6), 10);
    const auto h = model.encode(x, rng, Phase::Eval);
    BeamOptions plain;
    plain.beam = 4;
    plain.max_len = 10;
    BeamOptions zero = plain;
    zero.lm = &lm;
    zero.lambda = 0.0;
    const auto a = beam_search(model, h, plain), b = beam_search(model, h, zero);
    c.expect(a.size() == b.size(), "hypothesis counts differ");
    for (std::size_t k = 0; k < std::min(a.size(), b.size()); ++k)
      c.expect(a[k].tokens == b[k].tokens && a[k].score == b[k].score, "lambda 0 changed decode");

    BeamOptions one = plain;
    one.beam = 1;
    const auto beam1 = beam_search(model, h, one);
    c.expect(!beam1.empty() && beam1.front().tokens == greedy_decode(model, h, 10),
             "beam 1 differs from greedy");
  }
  return c.done("100 inputs: lambda=0 and beam=1 identities hold");
}

// Exact edit distances by breadth-first search over single-token edits.
// Sequences of length ≤ 6 over 4 symbols are indexed by (length, base-4 value).
Outcome wer_bleu_oracles() {
  Checker c;
  constexpr std::size_t kMax = 6, kSym = 4;
  std::vector<std::size_t> offset(kMax + 2, 0);
  for (std::size_t l = 0, p = 1; l <= kMax; ++l, p *= kSym) offset[l + 1] = offset[l] + p;
  const std::size_t n = offset[kMax + 1];
  std::vector<TokenSequence> seqs(n);
  for (std::size_t l = 0; l <= kMax; ++l)
    for (std::size_t v = 0; v < offset[l + 1] - offset[l]; ++v) {
      TokenSequence s(l);
      for (std::size_t i = 0, r = v; i < l; ++i, r /= kSym) s[i] = static_cast<Token>(r % kSym);
      seqs[offset[l] + v] = s;
    }
  auto index_of = [&](const TokenSequence& s) {
    std::size_t v = 0;
    for (std::size_t i = s.size(); i-- > 0;) v = v * kSym + s[i];
    return offset[s.size()] + v;
  };
  std::vector<std::vector<std::uint32_t>> adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = seqs[i];
    std::set<std::uint32_t> nb;
    for (std::size_t p = 0; p < s.size(); ++p) {
      auto d = s;
      d.erase(d.begin() + p);
      nb.insert(index_of(d));
      for (Token t = 0; t < kSym; ++t) {
        if (t == s[p]) continue;
        auto u = s;
        u[p] = t;
        nb.insert(index_of(u));
      }
    }
    if (s.size() < kMax)
      for (std::size_t p = 0; p <= s.size(); ++p)
        for (Token t = 0; t < kSym; ++t) {
          auto u = s;
          u.insert(u.begin() + p, t);
          nb.insert(index_of(u));
        }
    adj[i].assign(nb.begin(), nb.end());
  }

  std::vector<int> dist(n);
  std::vector<std::uint32_t> queue(n);
  std::size_t pairs = 0;
  for (std::size_t src = 0; src < n; ++src) {
    std::fill(dist.begin(), dist.end(), -1);
    std::size_t head = 0, tail = 0;
    dist[src] = 0;
    queue[tail++] = static_cast<std::uint32_t>(src);
    while (head < tail) {
      const auto u = queue[head++];
      for (auto v : adj[u])
        if (dist[v] < 0) dist[v] = dist[u] + 1, queue[tail++] = v;
    }
    for (std::size_t dst = 0; dst < n; ++dst) {
      const auto e = edit_align(seqs[src], seqs[dst]);
      if (e.errors() != static_cast<std::size_t>(dist[dst]) ||
          e.ref_length - e.deletions + e.insertions != seqs[dst].size())
        c.expect(false, "edit_align disagrees with the oracle");
      ++pairs;
    }
  }

  const std::vector<TokenSequence> refs{{3, 4, 5, 6, 7}, {8, 9, 10, 11}};
  c.expect(corpus_bleu(refs, refs) == 1.0, "bleu(ref, ref) != 1");
  const double bp = corpus_bleu(std::vector<TokenSequence>{{1, 2, 3}},
                                std::vector<TokenSequence>{{1, 2}}, 2);
  c.expect(std::abs(bp - 0.60653) < 1e-5, "brevity example " + fmt("%.8f", bp));
  return c.done(std::to_string(pairs) + " pairs match; bleu(ref,ref)=1; brevity example " +
                fmt("%.5f", bp));
}

Outcome copy_convergence() {
  Checker c;
  TaskSpec task;  // copy, vocab 16, length 8
  const auto data = make_sequence_data(task);
  std::string summary;
  for (const double gamma : {0.0, 0.01}) {
    const auto t0 = std::chrono::steady_clock::now();
    ModelConfig cfg;  // N_e = N_d = 2, d = 32, 4 heads
    cfg.vocab_size = data.target_vocab;
    cfg.src_vocab_size = data.source_vocab;
    if (gamma > 0.0) cfg.relax_self = RelaxationConfig::train_only(gamma);
    Seq2Seq model(cfg, 1);
    TrainConfig t;
    t.steps = 2000;
    t.eval_every = 100;
    t.stop_at_accuracy = 0.95;
    const auto r = train(model, data.train, std::span<const Example>(data.dev), t);
    const double acc = sequence_accuracy(model, data.test);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::string name = gamma > 0.0 ? "gamma_self=0.01" : "baseline";
    c.expect(acc >= 0.95, name + " test accuracy " + fmt("%.3f", acc));
    c.expect(secs < 180.0, name + " took " + fmt("%.0f s", secs));
    summary += (summary.empty() ? "" : ", ") + name + " " + fmt("%.3f", acc) + " after " +
               std::to_string(r.steps_run) + " steps (" + fmt("%.0f s", secs) + ")";
  }
  return c.done(summary);
}

Outcome mode_contract() {
  Checker c;
  TaskSpec task;
  task.vocab = 10;
  task.length = 5;
  task.n_train = 300;
  task.n_test = 20;
  const auto data = make_sequence_data(task);
  auto cfg = tiny_model(data.target_vocab, 16);
  cfg.relax_self = RelaxationConfig::train_only(0.1);
  cfg.relax_cross = RelaxationConfig::train_only(0.2);
  Seq2Seq trained(cfg, 11);
  TrainConfig t;
  t.steps = 100;
  t.eval_every = 0;
  train(trained, data.train, std::span<const Example>(data.test), t);

  auto off_cfg = cfg, matched_cfg = cfg;
  off_cfg.relax_self = off_cfg.relax_cross = RelaxationConfig::off();
  matched_cfg.relax_self = RelaxationConfig::matched(0.1);
  matched_cfg.relax_cross = RelaxationConfig::matched(0.2);
  Seq2Seq off(off_cfg, 0), matched(matched_cfg, 0);
  off.load_parameters(trained.named_parameters());
  matched.load_parameters(trained.named_parameters());

  RngStream rng(9, "c11");
  std::size_t differing = 0;
  for (const auto& ex : data.test) {
    TokenSequence y{kBos};
    y.insert(y.end(), ex.target.begin(), ex.target.end());
    const Tensor a = trained.forward_teacher_forced(ex.source, y, rng, Phase::Eval);
    const Tensor b = off.forward_teacher_forced(ex.source, y, rng, Phase::Eval);
    const Tensor m = matched.forward_teacher_forced(ex.source, y, rng, Phase::Eval);
    c.expect(identical(a, b), "TrainOnly eval output differs from Off");
    double diff = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a.at(i) - m.at(i)));
    differing += diff > 1e-6;
  }
  const auto g_train = greedy_decode_batch(trained, std::vector<TokenSequence>{data.test[0].source}, 8);
  const auto g_off = greedy_decode_batch(off, std::vector<TokenSequence>{data.test[0].source}, 8);
  c.expect(g_train == g_off, "greedy outputs differ between TrainOnly and Off");
  c.expect(differing > 0, "Matched outputs equal TrainOnly outputs");
  return c.done("TrainOnly == Off bit-exactly on 20 inputs; Matched differs on " +
                std::to_string(differing));
}

Outcome ilm_suppression(const fs::path& config) {
  Checker c;
  const auto spec = load_spec(config);
  c.expect(spec.seeds.size() >= 5, "fewer than 5 seeds");
  const auto dir = scratch("ilm");
  const auto rows = run_experiment(spec, dir, 1);
  for (const auto& r : rows) c.expect(r.status == "ok", "cell failed: " + r.error);
  const auto cells = ilm_suppression_report(rows, "wer");
  std::printf("%s", format_ilm_report(cells, "wer").c_str());
  auto find = [&](const std::string& setting, const std::string& lm) {
    for (const auto& cell : cells)
      if (cell.setting == setting && cell.lm == lm) return cell.median_improvement;
    throw std::runtime_error("missing report cell " + setting + "/" + lm);
  };
  const double base_ext = find("baseline", "extended"), relaxed_ext = find("relaxed_cross", "extended");
  const double base_in = find("baseline", "in_domain"), relaxed_in = find("relaxed_cross", "in_domain");
  c.expect(relaxed_ext >= base_ext, "relaxed extended-LM gain below baseline");
  c.expect(std::abs(base_in) <= base_ext, "baseline in-domain gain not near zero");
  c.expect(std::abs(relaxed_in) <= base_ext, "relaxed in-domain gain not near zero");
  return c.done("extended-LM WER gain: relaxed " + fmt("%.4f", relaxed_ext) + " >= baseline " +
                fmt("%.4f", base_ext) + "; in-domain gains " + fmt("%+.4f", base_in) + ", " +
                fmt("%+.4f", relaxed_in));
}

Outcome fuzzy_statistics() {
  Checker c;
  RngStream rng(13, "c13");
  const RelaxationConfig cfg{0.1, 0.03 * 0.03, RelaxMode::Matched, true};
  const int n = 100000;
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = sample_fuzzy_gamma(cfg, rng, Phase::Train);
    c.expect(g >= 0.0 && g <= 1.0, "sample outside [0,1]");
    s += g;
  }
  const double mean = s / n, bound = 3 * 0.03 / std::sqrt(static_cast<double>(n));
  c.expect(std::abs(mean - 0.1) < bound, "sample mean " + fmt("%.6f", mean));
  c.expect(sample_fuzzy_gamma(cfg, rng, Phase::Eval) == 0.1, "Eval-Matched is not gamma0");
  return c.done("mean " + fmt("%.6f", mean) + " (|err| < " + fmt("%.2g", bound) + ")");
}

ExperimentSpec small_copy_spec() {
  ExperimentSpec spec;
  spec.name = "acceptance";
  spec.task.vocab = 8;
  spec.task.length = 4;
  spec.task.n_train = 200;
  spec.task.n_dev = 12;
  spec.task.n_test = 16;
  spec.model.encoder_layers = spec.model.decoder_layers = 1;
  spec.model.heads = 2;
  spec.model.d_model = 16;
  spec.model.d_ff = 32;
  spec.train.steps = 40;
  spec.train.batch_size = 8;
  spec.train.eval_every = 0;
  spec.eval_examples = 12;
  return spec;
}

Outcome sweep_sanity() {
  Checker c;
  auto spec = small_copy_spec();
  spec.seeds = {1, 2};
  spec.sweep.sites = {"self", "cross"};
  spec.sweep.self = {0.01, 0.1};
  spec.sweep.cross = {0.2};
  const auto dir = scratch("sweep");
  const auto points = gamma_sweep(spec, dir, 1);
  for (const auto& [site, grid] :
       std::vector<std::pair<std::string, std::size_t>>{{"self", 3}, {"cross", 2}}) {
    std::ifstream csv(dir / ("gamma_sweep_" + site + ".csv"));
    std::string line;
    std::getline(csv, line);
    c.expect(line == "site,gamma,seed,metric,value", "bad CSV header");
    std::size_t rows = 0;
    while (std::getline(csv, line)) ++rows;
    c.expect(rows == grid * spec.seeds.size(), site + " CSV has " + std::to_string(rows) + " rows");
  }
  std::size_t zero_points = 0;
  for (const auto& p : points) {
    if (p.gamma != 0.0) continue;
    double baseline = std::numeric_limits<double>::quiet_NaN();
    for (const auto& r : run_cell(spec, RelaxSetting{}, p.seed))
      if (r.metric == p.metric && r.lm == "none") baseline = r.value;
    c.expect(p.value == baseline, "gamma 0 point differs from the baseline cell");
    ++zero_points;
  }
  c.expect(zero_points == 4, "expected 4 gamma=0 points");
  return c.done(std::to_string(points.size()) + " sweep points; gamma=0 equals baseline bit-exactly");
}

Outcome determinism_persistence() {
  Checker c;
  auto spec = small_copy_spec();
  spec.task.kind = TaskKind::ToyTranslate;
  spec.task.source_symbols = 6;
  spec.task.n_extended = 500;
  spec.lm = LmSpec{};
  spec.seeds = {1, 2};
  spec.save_checkpoints = true;
  spec.settings.push_back({"relaxed", "cross", RelaxationConfig::train_only(0.2)});
  const auto a = scratch("det_a"), b = scratch("det_b");
  run_experiment(spec, a, 1);
  run_experiment(spec, b, 1);
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    c.expect(fs::exists(b / rel) && slurp(entry.path()) == slurp(b / rel),
             rel.string() + " differs between runs");
    ++compared;
  }
  c.expect(fs::exists(a / "results.jsonl"), "no results.jsonl");

  std::size_t checkpoints = 0;
  for (const auto& entry : fs::directory_iterator(a / "cells")) {
    if (entry.path().extension() != ".ratn") continue;
    const auto copy = scratch("det_ckpt") / "again.ratn";
    checkpoint_save(checkpoint_load(entry.path()), copy);
    c.expect(slurp(entry.path()) == slurp(copy), "save-load-save changed " + entry.path().string());
    c.expect(slurp(config_sidecar(entry.path())) == slurp(config_sidecar(copy)), "sidecar changed");
    ++checkpoints;
  }
  c.expect(checkpoints == 4, "expected 4 checkpoints, found " + std::to_string(checkpoints));
  return c.done(std::to_string(compared) + " output files byte-identical; " +
                std::to_string(checkpoints) + " checkpoints round-trip byte-identically");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> only;
  std::string ilm_config = std::string(RAT_SOURCE_DIR) + "/configs/ilm_toy_translate.json";
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--ilm-config", ilm_config, "spec used for criterion 12");
  CLI11_PARSE(app, argc, argv);

  struct Criterion {
    int id;
    const char* name;
    double budget_s;  // 0 → no runtime bound
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "relaxation exactness", 1, relaxation_exactness},
      {2, "composition law", 1, composition_law},
      {3, "entropy monotonicity", 1, entropy_monotonicity},
      {4, "attention gradient suite", 30, gradient_suite},
      {5, "teacher forcing equivalence", 5, teacher_forcing},
      {6, "decoder causality", 0, causality},
      {7, "beam search oracle", 10, beam_oracle},
      {8, "fusion identities", 0, fusion_identities},
      {9, "WER/BLEU oracles", 0, wer_bleu_oracles},
      {10, "copy task convergence", 360, copy_convergence},
      {11, "relaxation mode contract", 0, mode_contract},
      {12, "ILM suppression analog", 1800, [&] { return ilm_suppression(ilm_config); }},
      {13, "fuzzy relaxation statistics", 0, fuzzy_statistics},
      {14, "gamma sweep sanity", 0, sweep_sanity},
      {15, "determinism and persistence", 0, determinism_persistence},
  };

  int failed = 0;
  for (const auto& cr : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), cr.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cr.budget_s > 0 && secs >= cr.budget_s) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f s", cr.budget_s) + " budget";
    }
    failed += !o.pass;
    std::printf("%s %2d %-28s %8.2fs  %s\n", o.pass ? "PASS" : "FAIL", cr.id, cr.name, secs,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rat/attention.hpp"
#include "rat/metrics.hpp"
#include "test_util.hpp"

using namespace rat;
using rat::test::param_grad_check;
using rat::test::random_stochastic;
using rat::test::random_tensor;

namespace {

std::vector<double> row(const Tensor& t, std::size_t r) {
  const auto c = t.cols();
  return {t.data().begin() + r * c, t.data().begin() + (r + 1) * c};
}

double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0) h -= x * std::log(x);
  return h;
}

// Straight-line single-head attention without relaxation or dropout.
std::vector<double> reference_head(const Tensor& q, const Tensor& k, const Tensor& v,
                                   const MhaParams& p, std::size_t head, double scale,
                                   double gamma = 0.0) {
  const std::size_t d = p.d, dk = p.head_dim(), lq = q.rows(), lk = k.rows();
  auto project = [&](const Tensor& x, const Tensor& w) {
    std::vector<double> out(x.rows() * dk, 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t j = 0; j < dk; ++j)
        for (std::size_t i = 0; i < d; ++i) out[r * dk + j] += x.at(r, i) * w.at(i, head * dk + j);
    return out;
  };
  const auto qp = project(q, p.w_q), kp = project(k, p.w_k), vp = project(v, p.w_v);
  std::vector<double> out(lq * dk, 0.0);
  for (std::size_t a = 0; a < lq; ++a) {
    std::vector<double> e(lk);
    for (std::size_t b = 0; b < lk; ++b) {
      double s = 0.0;
      for (std::size_t j = 0; j < dk; ++j) s += qp[a * dk + j] * kp[b * dk + j];
      e[b] = s * scale;
    }
    const double mx = *std::max_element(e.begin(), e.end());
    double z = 0.0;
    for (auto& x : e) z += x = std::exp(x - mx);
    for (auto& x : e) x = (1 - gamma) * x / z + gamma / static_cast<double>(lk);
    for (std::size_t b = 0; b < lk; ++b)
      for (std::size_t j = 0; j < dk; ++j) out[a * dk + j] += e[b] * vp[b * dk + j];
  }
  return out;
}

}  // namespace

TEST_CASE("relax_weights examples") {
  const Tensor g = Tensor::from({1, 3}, {0.7, 0.2, 0.1});
  const Tensor same = relax_weights(g, 0.0, 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(same.at(i) == g.at(i));

  const Tensor u = relax_weights(Tensor::from({1, 4}, {0.4, 0.3, 0.2, 0.1}), 1.0, 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(u.at(i) == doctest::Approx(0.25).epsilon(1e-15));

  const Tensor r = relax_weights(g, 0.2, 3);
  CHECK(r.at(0) == doctest::Approx(0.7 * 0.8 + 0.2 / 3).epsilon(1e-14));
  CHECK(std::abs(r.at(0) - 0.62667) < 5e-6);
  CHECK(std::abs(r.at(1) - 0.22667) < 5e-6);
  CHECK(std::abs(r.at(2) - 0.14667) < 5e-6);

  CHECK_THROWS(relax_weights(g, 1.5, 3));
  CHECK_THROWS(relax_weights(g, -0.1, 3));
  CHECK_THROWS(relax_weights(g, 0.2, 4));
}

TEST_CASE("property: relaxation keeps rows on the simplex within bounds") {
  RngStream rng(1, "simplex");
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = 1 + rng.uniform_int(9);
    const Tensor g = random_stochastic(rng, 4, len);
    const double gamma = trial % 10 == 0 ? 0.0 : rng.uniform();
    const Tensor r = relax_weights(g, gamma, len);
    const double lo = gamma / len, hi = 1 - gamma + gamma / len;
    for (std::size_t i = 0; i < 4; ++i) {
      const auto orig = row(g, i), rel = row(r, i);
      double total = 0.0;
      for (double x : rel) {
        total += x;
        CHECK(x >= lo - 1e-15);
        CHECK(x <= hi + 1e-15);
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
      CHECK(entropy(rel) >= entropy(orig) - 1e-12);
      const double peak = *std::max_element(orig.begin(), orig.end());
      const double rpeak = *std::max_element(rel.begin(), rel.end());
      CHECK(rpeak <= peak + 1e-15);
      const bool uniform = peak - *std::min_element(orig.begin(), orig.end()) < 1e-12;
      if (gamma > 0 && !uniform) {
        CHECK(entropy(rel) > entropy(orig));
        CHECK(rpeak < peak);
      }
    }
  }
}

TEST_CASE("property: composition law and affinity in gamma") {
  RngStream rng(2, "compose");
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = 2 + rng.uniform_int(6);
    const Tensor g = random_stochastic(rng, 3, len);
    const double a = rng.uniform(), b = rng.uniform(), t = rng.uniform();
    const Tensor twice = relax_weights(relax_weights(g, a, len), b, len);
    const Tensor once = relax_weights(g, a + b - a * b, len);
    const Tensor r0 = relax_weights(g, a, len), r1 = relax_weights(g, b, len);
    const Tensor mid = relax_weights(g, t * a + (1 - t) * b, len);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      CHECK(std::abs(twice.at(i) - once.at(i)) < 1e-12);
      CHECK(std::abs(mid.at(i) - (t * r0.at(i) + (1 - t) * r1.at(i))) < 1e-12);
    }
  }
}

TEST_CASE("relaxation jacobian is (1-gamma) times identity") {
  RngStream rng(3, "jac");
  const Tensor g = random_stochastic(rng, 2, 4);
  const double gamma = 0.35;
  for (std::size_t j = 0; j < g.numel(); ++j) {
    const Tensor fd = finite_diff_grad(
        [&](const Tensor& x) { return relax_weights(x, gamma, 4).at(j); }, g);
    for (std::size_t i = 0; i < g.numel(); ++i)
      CHECK(std::abs(fd.at(i) - (i == j ? 1 - gamma : 0.0)) < 1e-8);
  }
}

TEST_CASE("fuzzy gamma sampling") {
  RngStream rng(4, "fuzzy");
  RelaxationConfig degenerate{0.3, 0.0, RelaxMode::TrainOnly, false};
  for (int i = 0; i < 10; ++i) CHECK(sample_fuzzy_gamma(degenerate, rng, Phase::Train) == 0.3);
  CHECK(sample_fuzzy_gamma(degenerate, rng, Phase::Eval) == 0.0);

  RelaxationConfig matched{0.1, 0.03 * 0.03, RelaxMode::Matched, true};
  CHECK(sample_fuzzy_gamma(matched, rng, Phase::Eval) == 0.1);

  const int n = 100000;
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = sample_fuzzy_gamma(matched, rng, Phase::Train);
    REQUIRE(g >= 0.0);
    REQUIRE(g <= 1.0);
    s += g;
  }
  CHECK(std::abs(s / n - 0.1) < 3 * 0.03 / std::sqrt(static_cast<double>(n)));

  RelaxationConfig wide{0.05, 0.25, RelaxMode::TrainOnly, true};
  for (int i = 0; i < 1000; ++i) {
    const double g = sample_fuzzy_gamma(wide, rng, Phase::Train);
    CHECK(g >= 0.0);
    CHECK(g <= 1.0);
  }
  CHECK(sample_fuzzy_gamma(RelaxationConfig::off(), rng, Phase::Train) == 0.0);
}

TEST_CASE("relaxation config validation") {
  CHECK_THROWS(RelaxationConfig({1.2, 0.0, RelaxMode::Matched, false}).validate());
  CHECK_THROWS(RelaxationConfig({0.1, -1.0, RelaxMode::Matched, false}).validate());
  CHECK_THROWS(RelaxationConfig({0.1, 0.0, RelaxMode::Matched, true}).validate());
  CHECK_NOTHROW(RelaxationConfig::matched(0.2).validate());
}

TEST_CASE("smoothed focus") {
  const Tensor a = smoothed_focus_weights(Tensor::from({1, 3}, {0, 0, 0}));
  for (int i = 0; i < 3; ++i) CHECK(a.at(i) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  const Tensor b = smoothed_focus_weights(Tensor::from({1, 2}, {0, std::log(3.0)}));
  CHECK(std::abs(b.at(0) - 0.4) < 1e-14);
  CHECK(std::abs(b.at(1) - 0.6) < 1e-14);

  const Tensor flat = smoothed_focus_weights(Tensor::from({2, 2}, {0, 0, 5, 5}));
  for (int i = 0; i < 4; ++i) CHECK(flat.at(i) == doctest::Approx(0.5));
  const Tensor shifted = smoothed_focus_weights(Tensor::from({2, 2}, {0, 5, -5, 0}));
  CHECK(std::abs(shifted.at(0) - shifted.at(2)) > 1e-3);

  RngStream rng(5, "focus");
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor s = smoothed_focus_weights(random_tensor(rng, {3, 5}, 10.0));
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0.0;
      for (double x : row(s, r)) total += x;
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }
  CHECK_THROWS(smoothed_focus_weights(Tensor::from({1, 2}, {-1e30, -1e30})));
}

TEST_CASE("attention dropout") {
  RngStream rng(6, "drop");
  const Tensor g = random_stochastic(rng, 4, 5);
  const Tensor same = attention_dropout(g, 0.0, rng, Phase::Train);
  const Tensor eval = attention_dropout(g, 0.7, rng, Phase::Eval);
  for (std::size_t i = 0; i < g.numel(); ++i) {
    CHECK(same.at(i) == g.at(i));
    CHECK(eval.at(i) == g.at(i));
  }
  const Tensor ones = Tensor::full({1000, 100}, 1.0);
  const Tensor dropped = attention_dropout(ones, 0.5, rng, Phase::Train);
  std::size_t kept = 0;
  for (double x : dropped.data()) {
    CHECK((x == 0.0 || x == 2.0));
    kept += x != 0.0;
  }
  CHECK(std::abs(static_cast<double>(kept) / 100000.0 - 0.5) < 0.005);
}

TEST_CASE("attention head matches a straight-line reference") {
  RngStream rng(7, "head");
  const MhaParams p = MhaParams::init(4, 2, rng);
  const Tensor q = random_tensor(rng, {2, 4}), kv = random_tensor(rng, {3, 4});
  AttentionOptions opts;
  for (std::size_t head = 0; head < 2; ++head) {
    const auto out = attention_head(q, kv, kv, p, head, opts, rng);
    const auto ref = reference_head(q, kv, kv, p, head, 0.5);
    REQUIRE(out.output.numel() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(out.output.at(i) - ref[i]) < 1e-12);
  }

  opts.relax = RelaxationConfig::matched(0.3);
  const auto relaxed = attention_head(q, kv, kv, p, 1, opts, rng);
  const auto ref = reference_head(q, kv, kv, p, 1, 0.5, 0.3);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(relaxed.output.at(i) - ref[i]) < 1e-12);
}

TEST_CASE("attention head edge cases") {
  RngStream rng(8, "edge");
  const MhaParams p = MhaParams::init(4, 2, rng);
  const Tensor q = random_tensor(rng, {3, 4});
  const Tensor one = random_tensor(rng, {1, 4});
  for (double gamma : {0.0, 0.4, 1.0}) {
    AttentionOptions opts;
    opts.relax = RelaxationConfig::matched(gamma);
    const auto out = attention_head(q, one, one, p, 0, opts, rng);
    for (double w : out.weights.data()) CHECK(w == 1.0);
  }

  // γ = 1: output is the column mean of the value projections for any query.
  const Tensor kv = random_tensor(rng, {5, 4});
  AttentionOptions full;
  full.relax = RelaxationConfig::matched(1.0);
  const auto a = attention_head(q, kv, kv, p, 1, full, rng);
  const auto b = attention_head(random_tensor(rng, {3, 4}), kv, kv, p, 1, full, rng);
  const auto vp = matmul(kv, slice_cols(p.w_v, 2, 2));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 2; ++j) {
      double m = 0.0;
      for (std::size_t t = 0; t < 5; ++t) m += vp.at(t, j) / 5.0;
      CHECK(std::abs(a.output.at(r, j) - m) < 1e-12);
      CHECK(std::abs(b.output.at(r, j) - m) < 1e-12);
    }

  AttentionOptions bad;
  bad.dropout_p = 1.0;
  CHECK_THROWS(attention_head(q, kv, kv, p, 0, bad, rng));
  CHECK_THROWS_AS(attention_head(q, random_tensor(rng, {5, 3}), kv, p, 0, AttentionOptions{}, rng),
                  DimensionError);
  CHECK_THROWS_AS(attention_head(q, kv, random_tensor(rng, {4, 4}), p, 0, AttentionOptions{}, rng),
                  DimensionError);
  CHECK_THROWS(attention_head(q, kv, kv, p, 2, AttentionOptions{}, rng));
}

TEST_CASE("single-head MHA equals head plus output projection") {
  RngStream rng(9, "single");
  const MhaParams p = MhaParams::init(3, 1, rng);
  const Tensor q = random_tensor(rng, {2, 3}), kv = random_tensor(rng, {4, 3});
  AttentionOptions opts;
  opts.relax = RelaxationConfig::matched(0.2);
  const auto head = attention_head(q, kv, kv, p, 0, opts, rng);
  const Tensor expect = add_bias(matmul(head.output, p.w_o), p.b_o);
  const Tensor got = multi_head_attention(q, kv, kv, p, opts, rng);
  for (std::size_t i = 0; i < expect.numel(); ++i) CHECK(std::abs(got.at(i) - expect.at(i)) < 1e-12);
}

TEST_CASE("self-attention aliasing equals separate copies") {
  RngStream rng(10, "alias");
  const MhaParams p = MhaParams::init(4, 2, rng);
  const Tensor h = random_tensor(rng, {3, 4});
  const Tensor h1 = Tensor::from(h.shape(), {h.data().begin(), h.data().end()});
  const Tensor h2 = Tensor::from(h.shape(), {h.data().begin(), h.data().end()});
  AttentionOptions opts;
  opts.relax = RelaxationConfig::matched(0.1);
  const Tensor a = multi_head_attention(h, h, h, p, opts, rng);
  const Tensor b = multi_head_attention(h, h1, h2, p, opts, rng);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == b.at(i));
}

TEST_CASE("MHA gradient matches finite differences") {
  RngStream rng(11, "mhagrad");
  for (int trial = 0; trial < 5; ++trial) {
    const MhaParams p = MhaParams::init(4, 2, rng);
    const Tensor q = random_tensor(rng, {3, 4}, 1.0, true), kv = random_tensor(rng, {4, 4}, 1.0, true);
    const Tensor w = random_tensor(rng, {3, 4});
    const std::vector<std::uint8_t> mask{0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0};
    AttentionOptions opts;
    opts.relax = RelaxationConfig::matched(0.25);
    opts.mask = mask;
    opts.weight_fn = trial % 2 ? WeightFn::SmoothedFocus : WeightFn::Softmax;
    std::vector<Tensor> params{q, kv, p.w_q, p.w_k, p.w_v, p.w_o, p.b_o};
    const double err = param_grad_check(params, [&] {
      RngStream unused(0, "x");
      return sum(mul(multi_head_attention(q, kv, kv, p, opts, unused), w));
    });
    CHECK(err < 1e-5);
  }
}

TEST_CASE("mode contract") {
  RngStream rng(12, "mode");
  const MhaParams p = MhaParams::init(4, 2, rng);
  const Tensor q = random_tensor(rng, {3, 4}), kv = random_tensor(rng, {5, 4});
  AttentionOptions off, train_only, matched;
  train_only.relax = RelaxationConfig::train_only(0.3);
  matched.relax = RelaxationConfig::matched(0.3);
  for (auto* o : {&off, &train_only, &matched}) o->phase = Phase::Eval;
  const Tensor a = multi_head_attention(q, kv, kv, p, off, rng);
  const Tensor b = multi_head_attention(q, kv, kv, p, train_only, rng);
  MhaTrace trace;
  const Tensor c = multi_head_attention(q, kv, kv, p, matched, rng, &trace);
  bool differs = false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    CHECK(a.at(i) == b.at(i));
    differs |= a.at(i) != c.at(i);
  }
  CHECK(differs);
  CHECK(trace.gamma == 0.3);

  train_only.phase = Phase::Train;
  MhaTrace train_trace;
  multi_head_attention(q, kv, kv, p, train_only, rng, &train_trace);
  CHECK(train_trace.gamma == 0.3);
  for (const auto& w : train_trace.weights)
    for (double x : w.data()) CHECK(x >= 0.3 / 5 - 1e-15);
}

TEST_CASE("window partition") {
  const Tensor x = Tensor::from({2, 2, 1}, {1, 2, 3, 4});
  const Tensor one = window_partition(x, 2);
  CHECK(one.shape() == Shape{1, 4, 1});
  for (std::size_t i = 0; i < 4; ++i) CHECK(one.at(i) == x.at(i));

  std::vector<double> v(16);
  for (std::size_t i = 0; i < 16; ++i) v[i] = static_cast<double>(i);
  const Tensor grid = Tensor::from({4, 4, 1}, v);
  const Tensor w = window_partition(grid, 2);
  CHECK(w.shape() == Shape{4, 4, 1});
  CHECK(w.at(3 * 4 + 1) == 2 * 4 + 3);

  RngStream rng(13, "round");
  const Tensor big = random_tensor(rng, {8, 8, 16});
  const Tensor back = window_merge(window_partition(big, 4), 8, 8, 4);
  CHECK(back.shape() == big.shape());
  for (std::size_t i = 0; i < big.numel(); ++i) CHECK(back.at(i) == big.at(i));

  CHECK_THROWS_AS(window_partition(random_tensor(rng, {6, 4, 2}), 4), DimensionError);
}

TEST_CASE("windowed MHA") {
  RngStream rng(14, "window");
  WindowAttnParams p = WindowAttnParams::init(8, 2, 2, rng);
  const Tensor x = random_tensor(rng, {4, 4, 8});

  SUBCASE("zero bias and gamma 0 reduce to plain per-window attention") {
    p.bias_table = Tensor::zeros(p.bias_table.shape());
    const Tensor got = windowed_mha(x, p, WindowOptions{}, rng);
    const Tensor windows = window_partition(x, 2);
    std::vector<Tensor> outs;
    for (std::size_t wi = 0; wi < 4; ++wi) {
      const Tensor tokens = reshape(slice_rows(reshape(windows, {16, 8}), wi * 4, 4), {4, 8});
      AttentionOptions ao;
      ao.scale = 1.0 / std::sqrt(2.0);
      outs.push_back(multi_head_attention(tokens, tokens, tokens, p.mha, ao, rng));
    }
    const Tensor expect = window_merge(reshape(concat_rows(outs), {4, 4, 8}), 4, 4, 2);
    for (std::size_t i = 0; i < expect.numel(); ++i) CHECK(std::abs(got.at(i) - expect.at(i)) < 1e-12);
  }

  SUBCASE("gamma 1 averages value projections within each window") {
    WindowOptions o;
    o.relax = RelaxationConfig::matched(1.0);
    const Tensor got = windowed_mha(x, p, o, rng);
    const Tensor windows = reshape(window_partition(x, 2), {16, 8});
    const Tensor vp = matmul(windows, p.mha.w_v);
    std::vector<Tensor> means;
    for (std::size_t wi = 0; wi < 4; ++wi) {
      std::vector<double> m(8, 0.0);
      for (std::size_t s = 0; s < 4; ++s)
        for (std::size_t c = 0; c < 8; ++c) m[c] += vp.at(wi * 4 + s, c) / 4.0;
      const Tensor proj = add_bias(matmul(Tensor::from({1, 8}, m), p.mha.w_o), p.mha.b_o);
      for (int s = 0; s < 4; ++s) means.push_back(proj);
    }
    const Tensor expect = window_merge(reshape(concat_rows(means), {4, 4, 8}), 4, 4, 2);
    for (std::size_t i = 0; i < expect.numel(); ++i) CHECK(std::abs(got.at(i) - expect.at(i)) < 1e-12);
  }

  SUBCASE("gradient through the bias table") {
    p.bias_table = random_tensor(rng, p.bias_table.shape(), 1.0, true);
    const Tensor w = random_tensor(rng, {4, 4, 8});
    WindowOptions o;
    o.relax = RelaxationConfig::matched(0.1);
    const double err = param_grad_check({p.bias_table, p.mha.w_q}, [&] {
      RngStream unused(0, "x");
      return sum(mul(windowed_mha(x, p, o, unused), w));
    });
    CHECK(err < 1e-5);
  }

  SUBCASE("relaxed window weights respect the M² floor") {
    WindowOptions o;
    o.relax = RelaxationConfig::matched(0.2);
    MhaTrace trace;
    windowed_mha(x, p, o, rng, &trace);
    for (const auto& g : trace.weights) {
      CHECK(g.cols() == 4);
      for (double v : g.data()) CHECK(v >= 0.2 / 4 - 1e-15);
    }
  }
}

TEST_CASE("relaxed attention raises attention entropy") {
  RngStream rng(15, "entropy");
  const Tensor g = random_stochastic(rng, 6, 7);
  const auto before = attention_entropy(g), after = attention_entropy(relax_weights(g, 0.3, 7));
  REQUIRE(before.size() == 6);
  for (std::size_t r = 0; r < 6; ++r) CHECK(after[r] > before[r]);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "rat/attention.hpp"
#include "rat/metrics.hpp"
#include "test_util.hpp"

using namespace rat;

namespace {

// Minimal edit distance by memoized recursion over suffixes.
std::size_t oracle_distance(const TokenSequence& a, const TokenSequence& b) {
  std::vector<std::vector<int>> memo(a.size() + 1, std::vector<int>(b.size() + 1, -1));
  std::function<int(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> int {
    if (i == a.size()) return static_cast<int>(b.size() - j);
    if (j == b.size()) return static_cast<int>(a.size() - i);
    int& m = memo[i][j];
    if (m >= 0) return m;
    m = std::min({go(i + 1, j) + 1, go(i, j + 1) + 1, go(i + 1, j + 1) + (a[i] != b[j])});
    return m;
  };
  return static_cast<std::size_t>(go(0, 0));
}

std::vector<TokenSequence> all_sequences(std::size_t max_len, std::size_t vocab) {
  std::vector<TokenSequence> out{{}};
  for (std::size_t begin = 0, len = 1; len <= max_len; ++len) {
    const std::size_t end = out.size();
    for (std::size_t i = begin; i < end; ++i)
      for (Token t = 0; t < vocab; ++t) {
        auto s = out[i];
        s.push_back(t);
        out.push_back(std::move(s));
      }
    begin = end;
  }
  return out;
}

}  // namespace

TEST_CASE("edit alignment examples") {
  const TokenSequence abc{0, 1, 2};
  auto e = edit_align(abc, abc);
  CHECK(e.errors() == 0);
  CHECK(e.ref_length == 3);

  e = edit_align(abc, TokenSequence{0, 9, 2, 3});
  CHECK(e.substitutions == 1);
  CHECK(e.insertions == 1);
  CHECK(e.deletions == 0);
  CHECK(e.ref_length == 3);

  e = edit_align(TokenSequence{0}, TokenSequence{});
  CHECK(e.deletions == 1);
  CHECK(e.errors() == 1);

  e = edit_align(TokenSequence{}, TokenSequence{5, 6});
  CHECK(e.insertions == 2);
  CHECK(e.ref_length == 0);

  // Two substitutions beat a deletion plus an insertion of equal cost.
  e = edit_align(TokenSequence{0, 1}, TokenSequence{1, 2});
  CHECK(e.substitutions == 2);
  CHECK(e.deletions == 0);
  CHECK(e.insertions == 0);
}

TEST_CASE("edit alignment matches exhaustive minimal distance") {
  const auto seqs = all_sequences(4, 4);
  for (const auto& r : seqs)
    for (const auto& h : seqs) {
      const auto e = edit_align(r, h);
      REQUIRE(e.errors() == oracle_distance(r, h));
      REQUIRE(e.deletions + e.substitutions <= e.ref_length);
      REQUIRE(e.ref_length - e.deletions + e.insertions == h.size());
    }
}

TEST_CASE("wer") {
  const std::vector<TokenSequence> refs{{0, 1, 2}}, hyps{{0, 9, 2, 3}};
  CHECK(std::abs(wer(refs, hyps) - 2.0 / 3.0) < 1e-15);
  CHECK(wer(refs, refs) == 0.0);

  const std::vector<TokenSequence> r1{{1}, {2}, {3}}, h1{{1, 5}, {2, 5}, {3, 5}};
  CHECK(wer(r1, h1) == 1.0);
  const std::vector<TokenSequence> h2{{1, 5, 6}, {2, 5, 6}, {3, 5, 6}};
  CHECK(wer(r1, h2) == 2.0);

  RngStream rng(1, "wer");
  std::vector<TokenSequence> a(20), b(20);
  for (std::size_t i = 0; i < 20; ++i) {
    for (int j = 0; j < 5; ++j) a[i].push_back(rng.uniform_int(4));
    for (int j = 0; j < 4; ++j) b[i].push_back(rng.uniform_int(4));
  }
  const double base = wer(a, b);
  std::reverse(a.begin(), a.end());
  std::reverse(b.begin(), b.end());
  CHECK(wer(a, b) == base);

  CHECK_THROWS(wer(refs, std::vector<TokenSequence>{}));
  CHECK_THROWS(wer(std::vector<TokenSequence>{{}}, std::vector<TokenSequence>{{1}}));
}

TEST_CASE("corpus bleu") {
  const std::vector<TokenSequence> refs{{1, 2, 3, 4, 5}, {6, 7, 8, 9}};
  CHECK(corpus_bleu(refs, refs) == 1.0);
  const std::vector<TokenSequence> disjoint{{10, 11, 12, 13, 14}, {15, 16, 17, 18}};
  CHECK(corpus_bleu(refs, disjoint) == 0.0);

  const std::vector<TokenSequence> sat{{1, 2, 3}}, cat{{1, 2}};
  const double bleu = corpus_bleu(sat, cat, 2);
  CHECK(std::abs(bleu - std::exp(1.0 - 3.0 / 2.0)) < 1e-12);
  CHECK(std::abs(bleu - 0.60653) < 1e-5);

  // Clipping: a repeated unigram only counts as often as in the reference.
  const std::vector<TokenSequence> r{{1, 2}}, h{{1, 1}};
  CHECK(std::abs(corpus_bleu(r, h, 1) - 0.5) < 1e-15);

  RngStream rng(2, "bleu");
  std::vector<TokenSequence> a(10), b(10);
  for (std::size_t i = 0; i < 10; ++i) {
    for (int j = 0; j < 8; ++j) a[i].push_back(rng.uniform_int(3));
    b[i] = a[i];
    b[i][rng.uniform_int(8)] = 7;
  }
  const double base = corpus_bleu(a, b);
  CHECK(base > 0.0);
  CHECK(base < 1.0);
  std::rotate(a.begin(), a.begin() + 3, a.end());
  std::rotate(b.begin(), b.begin() + 3, b.end());
  CHECK(std::abs(corpus_bleu(a, b) - base) < 1e-15);

  CHECK_THROWS(corpus_bleu(std::vector<TokenSequence>{}, std::vector<TokenSequence>{}));
  CHECK_THROWS(corpus_bleu(refs, cat));
}

TEST_CASE("attention entropy") {
  const auto u = attention_entropy(Tensor::from({1, 5}, {0.2, 0.2, 0.2, 0.2, 0.2}));
  CHECK(std::abs(u[0] - std::log(5.0)) < 1e-14);
  CHECK(attention_entropy(Tensor::from({1, 3}, {0, 1, 0}))[0] == 0.0);
  CHECK(std::abs(attention_entropy(Tensor::from({1, 4}, {0.5, 0.5, 0, 0}))[0] - std::log(2.0)) < 1e-15);

  RngStream rng(3, "ent");
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = test::random_stochastic(rng, 3, 6);
    const auto before = attention_entropy(g);
    const auto after = attention_entropy(relax_weights(g, rng.uniform(), 6));
    for (std::size_t r = 0; r < 3; ++r) CHECK(after[r] >= before[r] - 1e-12);
  }
}

TEST_CASE("metric report and config hash") {
  const nlohmann::json cfg{{"d_model", 32}, {"heads", 4}};
  const auto h = config_hash(cfg);
  CHECK(h.size() == 16);
  CHECK(h == config_hash(nlohmann::json{{"heads", 4}, {"d_model", 32}}));
  CHECK(h != config_hash(nlohmann::json{{"heads", 2}, {"d_model", 32}}));
  const auto j = metric_report("wer", 0.25, 40, h);
  CHECK(j["metric"] == "wer");
  CHECK(j["value"] == 0.25);
  CHECK(j["n_utterances"] == 40);
  CHECK(j["config_hash"] == h);
}

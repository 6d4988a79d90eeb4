#include "rat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

#include "rat/rng.hpp"

namespace rat {

EditAlignment edit_align(std::span<const Token> ref, std::span<const Token> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> cost((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return cost[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1), at(i - 1, j) + 1,
                           at(i, j - 1) + 1});

  EditAlignment a;
  a.ref_length = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const std::size_t diag = ref[i - 1] == hyp[j - 1] ? 0 : 1;
      if (at(i, j) == at(i - 1, j - 1) + diag) {
        a.substitutions += diag;
        --i, --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++a.deletions;
      --i;
    } else {
      ++a.insertions;
      --j;
    }
  }
  return a;
}

double wer(std::span<const TokenSequence> refs, std::span<const TokenSequence> hyps) {
  if (refs.size() != hyps.size())
    throw std::invalid_argument("WER needs parallel corpora, got " + std::to_string(refs.size()) +
                                " references and " + std::to_string(hyps.size()) + " hypotheses");
  std::size_t errors = 0, words = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto a = edit_align(refs[i], hyps[i]);
    errors += a.errors();
    words += a.ref_length;
  }
  if (words == 0) throw std::invalid_argument("WER undefined for an empty reference corpus");
  return static_cast<double>(errors) / static_cast<double>(words);
}

double corpus_bleu(std::span<const TokenSequence> refs, std::span<const TokenSequence> hyps,
                   std::size_t max_n) {
  if (hyps.empty()) throw std::invalid_argument("BLEU needs a non-empty hypothesis corpus");
  if (refs.size() != hyps.size())
    throw std::invalid_argument("BLEU needs parallel corpora");
  if (max_n == 0) throw std::invalid_argument("BLEU max_n must be positive");

  std::vector<std::size_t> matched(max_n, 0), total(max_n, 0);
  std::size_t hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& h = hyps[s];
    const auto& r = refs[s];
    hyp_len += h.size();
    ref_len += r.size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      if (h.size() < n) continue;
      std::map<std::vector<Token>, std::size_t> ref_counts, hyp_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[{r.begin() + i, r.begin() + i + n}];
      for (std::size_t i = 0; i + n <= h.size(); ++i) ++hyp_counts[{h.begin() + i, h.begin() + i + n}];
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        matched[n - 1] += std::min(c, it == ref_counts.end() ? 0 : it->second);
      }
      total[n - 1] += h.size() - n + 1;
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_precision = 0.0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (matched[n] == 0) return 0.0;
    log_precision += std::log(static_cast<double>(matched[n]) / static_cast<double>(total[n]));
  }
  const double bp = hyp_len > ref_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return bp * std::exp(log_precision / static_cast<double>(max_n));
}

std::vector<double> attention_entropy(const Tensor& g) {
  if (g.dim() != 2) throw DimensionError("attention weights must be 2-D, got " + shape_str(g.shape()));
  const std::size_t r = g.rows(), c = g.cols();
  std::vector<double> h(r, 0.0);
  const auto v = g.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const double p = v[i * c + j];
      if (p > 0.0) h[i] -= p * std::log(p);
    }
  return h;
}

std::string config_hash(const nlohmann::json& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(config.dump())));
  return buf;
}

nlohmann::json metric_report(const std::string& metric, double value, std::size_t n_utterances,
                             const std::string& hash) {
  return {{"metric", metric}, {"value", value}, {"n_utterances", n_utterances}, {"config_hash", hash}};
}

}  // namespace rat

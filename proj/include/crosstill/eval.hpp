#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "crosstill/corpus.hpp"
#include "crosstill/encoder.hpp"

namespace crosstill {

/// Average (1-based) ranks; tied values share the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw ContractViolation("correlation undefined for constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Spearman's rho: Pearson correlation of average ranks.
inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  CROSSTILL_EXPECT(xs.size() == ys.size(), "spearman: length mismatch");
  CROSSTILL_EXPECT(xs.size() >= 2, "spearman: need at least two observations");
  return pearson(average_ranks(xs), average_ranks(ys));
}

/// Anything that maps a batch of sentences to embedding rows.
template <class E>
concept SentenceEmbedder = requires(const E& e, const std::vector<Sentence>& s) {
  { e(s) } -> std::convertible_to<std::vector<std::vector<double>>>;
};

/// Adapts a SentenceEncoder: BOS/EOS framing and blocked inference.
template <class T>
struct EncoderEmbedder {
  const SentenceEncoder<T>& encoder;
  std::size_t max_seq_len;
  std::vector<std::vector<double>> operator()(const std::vector<Sentence>& sentences) const {
    return embed_sentences(encoder, sentences, max_seq_len);
  }
};

/// Adapts the oracle teacher (language-2 input goes through the inverse cipher).
struct OracleEmbedder {
  const OracleSemantics& oracle;
  std::vector<std::vector<double>> operator()(const std::vector<Sentence>& sentences) const {
    std::vector<std::vector<double>> out;
    out.reserve(sentences.size());
    for (const auto& s : sentences) out.push_back(oracle.embed(s));
    return out;
  }
};

struct EvalReport {
  std::string task;
  double spearman_x100 = 0.0;  // rho * 100
  double retrieval_accuracy = 0.0;
  std::size_t n_examples = 0;
  nlohmann::json config;

  nlohmann::json to_json() const {
    return {{"task", task},
            {"spearman_x100", spearman_x100},
            {"retrieval_accuracy", retrieval_accuracy},
            {"n", n_examples},
            {"config", config}};
  }
};

/// Spearman between embedding cosines and gold scores.
template <SentenceEmbedder E>
double sts_spearman(const E& embed, const std::vector<StsExample>& examples) {
  CROSSTILL_EXPECT(examples.size() >= 2, "sts_evaluate: need at least two examples");
  std::vector<Sentence> a, b;
  std::vector<double> gold;
  for (const auto& e : examples) {
    a.push_back(e.sentence_a);
    b.push_back(e.sentence_b);
    gold.push_back(e.gold_score);
  }
  const auto ea = embed(a);
  const auto eb = embed(b);
  std::vector<double> cos(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) cos[i] = sts_cosine(ea[i], eb[i]);
  return spearman(cos, gold);
}

template <SentenceEmbedder E>
EvalReport sts_evaluate(const E& embed, const std::vector<StsExample>& examples, std::string task = "sts") {
  EvalReport r;
  r.task = std::move(task);
  r.spearman_x100 = 100.0 * sts_spearman(embed, examples);
  r.n_examples = examples.size();
  return r;
}

/// Fraction of sources whose most cosine-similar target, among the targets of
/// the same block, is their own translation. Trailing pairs that do not fill a
/// block are ignored.
inline double retrieval_accuracy_from_embeddings(const std::vector<std::vector<double>>& src,
                                                 const std::vector<std::vector<double>>& tgt,
                                                 std::size_t block_size = 64) {
  CROSSTILL_EXPECT(block_size > 0 && src.size() == tgt.size(), "retrieval: mismatched embeddings");
  CROSSTILL_EXPECT(src.size() >= block_size, "retrieval: " + std::to_string(src.size()) +
                                                 " pairs do not fill one block of " + std::to_string(block_size));
  const std::size_t blocks = src.size() / block_size;
  std::size_t hits = 0;
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t base = b * block_size;
    for (std::size_t i = 0; i < block_size; ++i) {
      std::size_t best = 0;
      double best_cos = -2.0;
      for (std::size_t j = 0; j < block_size; ++j) {
        const double c = cosine_similarity<double>(src[base + i], tgt[base + j]);
        if (c > best_cos) {
          best_cos = c;
          best = j;
        }
      }
      hits += best == i;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(blocks * block_size);
}

template <SentenceEmbedder E>
double retrieval_accuracy(const E& embed, const std::vector<ParallelPair>& pairs, std::size_t block_size = 64) {
  CROSSTILL_EXPECT(pairs.size() >= block_size, "retrieval: " + std::to_string(pairs.size()) +
                                                   " pairs do not fill one block of " + std::to_string(block_size));
  std::vector<Sentence> src, tgt;
  for (const auto& p : pairs) {
    src.push_back(p.source_ids);
    tgt.push_back(p.target_ids);
  }
  return retrieval_accuracy_from_embeddings(embed(src), embed(tgt), block_size);
}

/// Renders rho*100 with one decimal.
inline std::string format_rho(double spearman_x100) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", spearman_x100);
  return buf;
}

}  // namespace crosstill

#pragma once

// Synthetic bilingual world: two disjoint token languages related by a seeded
// token-level cipher, an oracle "teacher" that embeds language-1 sentences as the
// mean of fixed Gaussian concept vectors, and the TSV formats for parallel pairs
// and STS triples.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "crosstill/error.hpp"
#include "crosstill/ops.hpp"
#include "crosstill/rng.hpp"

namespace crosstill {

using TokenId = std::int32_t;
using Sentence = std::vector<TokenId>;

struct VocabSpec {
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr TokenId kSpecials = 4;

  std::size_t tokens_per_language = 512;

  std::size_t size() const { return kSpecials + 2 * tokens_per_language; }
  TokenId l1_begin() const { return kSpecials; }
  TokenId l2_begin() const { return kSpecials + static_cast<TokenId>(tokens_per_language); }
  bool is_special(TokenId id) const { return id >= 0 && id < kSpecials; }
  bool is_l1(TokenId id) const { return id >= l1_begin() && id < l2_begin(); }
  bool is_l2(TokenId id) const { return id >= l2_begin() && static_cast<std::size_t>(id) < size(); }
};

// Stream ids for Rng::split, so every derived table is independent of the others.
inline constexpr std::uint64_t kCipherStream = 1;
inline constexpr std::uint64_t kOracleStream = 2;
inline constexpr std::uint64_t kSentenceStream = 3;

/// Vocabulary plus the cipher bijection between language 1 and language 2.
class Lexicon {
 public:
  Lexicon() = default;

  Lexicon(VocabSpec vocab, std::uint64_t seed) : vocab_(vocab), seed_(seed) {
    std::vector<TokenId> perm(vocab.tokens_per_language);
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<TokenId>(i);
    Rng rng = Rng(seed).split(kCipherStream);
    rng.shuffle(perm);
    set_cipher(std::move(perm));
  }

  /// `cipher[k]` is the language-2 local index paired with language-1 local index k.
  Lexicon(VocabSpec vocab, std::uint64_t seed, std::vector<TokenId> cipher) : vocab_(vocab), seed_(seed) {
    if (cipher.size() != vocab.tokens_per_language)
      throw FormatError("cipher has " + std::to_string(cipher.size()) + " entries, expected " +
                        std::to_string(vocab.tokens_per_language));
    set_cipher(std::move(cipher));
  }

  const VocabSpec& vocab() const { return vocab_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<TokenId>& cipher() const { return cipher_; }

  TokenId encode_token(TokenId l1) const {
    CROSSTILL_EXPECT(vocab_.is_l1(l1), "encode: id " + std::to_string(l1) + " is not a language-1 token");
    return vocab_.l2_begin() + cipher_[static_cast<std::size_t>(l1 - vocab_.l1_begin())];
  }
  TokenId decode_token(TokenId l2) const {
    CROSSTILL_EXPECT(vocab_.is_l2(l2), "decode: id " + std::to_string(l2) + " is not a language-2 token");
    return vocab_.l1_begin() + inverse_[static_cast<std::size_t>(l2 - vocab_.l2_begin())];
  }

  /// Translate a language-1 sentence; specials pass through.
  Sentence encode(const Sentence& s) const {
    Sentence out(s.size());
    std::transform(s.begin(), s.end(), out.begin(),
                   [&](TokenId id) { return vocab_.is_l1(id) ? encode_token(id) : id; });
    return out;
  }
  /// Map language-2 tokens back to language 1; other ids pass through.
  Sentence decode(const Sentence& s) const {
    Sentence out(s.size());
    std::transform(s.begin(), s.end(), out.begin(),
                   [&](TokenId id) { return vocab_.is_l2(id) ? decode_token(id) : id; });
    return out;
  }

  std::string surface(TokenId id) const {
    if (vocab_.is_l1(id)) return "l1_" + std::to_string(id - vocab_.l1_begin());
    if (vocab_.is_l2(id)) return "l2_" + std::to_string(id - vocab_.l2_begin());
    return std::to_string(id);
  }

  /// Parse a surface token (`l1_<k>`, `l2_<k>` or a decimal id); UNK when unknown.
  TokenId parse_token(std::string_view tok) const {
    auto parse_index = [](std::string_view s, long long& out) {
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
      return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
    };
    long long k = 0;
    if (tok.size() > 3 && (tok.substr(0, 3) == "l1_" || tok.substr(0, 3) == "l2_")) {
      if (!parse_index(tok.substr(3), k) || k < 0 || static_cast<std::size_t>(k) >= vocab_.tokens_per_language)
        return VocabSpec::kUnk;
      return (tok[1] == '1' ? vocab_.l1_begin() : vocab_.l2_begin()) + static_cast<TokenId>(k);
    }
    if (!parse_index(tok, k) || k < 0 || static_cast<std::size_t>(k) >= vocab_.size()) return VocabSpec::kUnk;
    return static_cast<TokenId>(k);
  }

  nlohmann::json manifest() const {
    return {{"tokens_per_language", vocab_.tokens_per_language}, {"seed", seed_}, {"cipher", cipher_}};
  }

  static Lexicon from_manifest(const nlohmann::json& j) {
    try {
      VocabSpec vocab;
      vocab.tokens_per_language = j.at("tokens_per_language").get<std::size_t>();
      return Lexicon(vocab, j.at("seed").get<std::uint64_t>(), j.at("cipher").get<std::vector<TokenId>>());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("vocab manifest: ") + e.what());
    }
  }

 private:
  void set_cipher(std::vector<TokenId> cipher) {
    inverse_.assign(cipher.size(), -1);
    for (std::size_t k = 0; k < cipher.size(); ++k) {
      const TokenId c = cipher[k];
      if (c < 0 || static_cast<std::size_t>(c) >= cipher.size() || inverse_[static_cast<std::size_t>(c)] != -1)
        throw FormatError("cipher is not a bijection at entry " + std::to_string(k));
      inverse_[static_cast<std::size_t>(c)] = static_cast<TokenId>(k);
    }
    cipher_ = std::move(cipher);
  }

  VocabSpec vocab_;
  std::uint64_t seed_ = 0;
  std::vector<TokenId> cipher_;
  std::vector<TokenId> inverse_;
};

inline Lexicon load_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read vocab manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("vocab manifest " + path.string() + ": " + e.what());
  }
  return Lexicon::from_manifest(j);
}

// ---------------------------------------------------------------- oracle teacher

/// Frozen stand-in teacher: one unit-variance Gaussian concept vector per
/// language-1 token. Sentences embed as the mean over their content tokens.
class OracleSemantics {
 public:
  OracleSemantics(const Lexicon& lexicon, std::size_t dim) : lexicon_(lexicon), dim_(dim) {
    Rng rng = Rng(lexicon.seed()).split(kOracleStream);
    table_.resize(lexicon.vocab().tokens_per_language * dim);
    for (auto& x : table_) x = rng.normal();
  }

  std::size_t dim() const { return dim_; }
  const Lexicon& lexicon() const { return lexicon_; }
  std::span<const double> concept_vector(TokenId l1) const {
    const auto k = static_cast<std::size_t>(l1 - lexicon_.vocab().l1_begin());
    return std::span<const double>(table_).subspan(k * dim_, dim_);
  }
  const std::vector<double>& table() const { return table_; }

  /// Mean concept vector of the sentence's content tokens. Language-2 tokens are
  /// mapped through the inverse cipher first; specials and UNK are skipped.
  std::vector<double> embed(const Sentence& ids) const {
    std::vector<double> out(dim_, 0.0);
    std::size_t count = 0;
    for (TokenId id : ids) {
      TokenId l1 = id;
      if (lexicon_.vocab().is_l2(id)) l1 = lexicon_.decode_token(id);
      if (!lexicon_.vocab().is_l1(l1)) continue;
      auto v = concept_vector(l1);
      for (std::size_t d = 0; d < dim_; ++d) out[d] += v[d];
      ++count;
    }
    CROSSTILL_EXPECT(count > 0, "oracle_embed: sentence has no content tokens");
    for (auto& x : out) x /= static_cast<double>(count);
    return out;
  }

 private:
  Lexicon lexicon_;
  std::size_t dim_;
  std::vector<double> table_;
};

inline std::vector<double> oracle_embed(const Sentence& ids, const OracleSemantics& oracle) {
  return oracle.embed(ids);
}

// ---------------------------------------------------------------- records

struct ParallelPair {
  Sentence source_ids;
  Sentence target_ids;
  bool operator==(const ParallelPair&) const = default;
};

struct StsExample {
  Sentence sentence_a;
  Sentence sentence_b;
  double gold_score = 0.0;
  bool operator==(const StsExample&) const = default;
};

/// N x L padded id matrix with its {0,1} mask.
struct TokenBatch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> mask;

  std::size_t length(std::size_t row) const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < cols; ++l) n += mask[row * cols + l];
    return n;
  }
};

struct ParallelBatch {
  TokenBatch source;
  TokenBatch target;
  std::vector<Sentence> source_sentences;  // unframed, for the teacher
  std::size_t size() const { return source.rows; }
};

/// BOS + content (truncated so the framed length fits) + EOS.
inline Sentence frame(const Sentence& content, std::size_t max_seq_len) {
  CROSSTILL_EXPECT(max_seq_len >= 3, "max_seq_len must leave room for BOS, EOS and one token");
  Sentence out;
  out.reserve(std::min(content.size(), max_seq_len - 2) + 2);
  out.push_back(VocabSpec::kBos);
  for (std::size_t i = 0; i < content.size() && i < max_seq_len - 2; ++i) out.push_back(content[i]);
  out.push_back(VocabSpec::kEos);
  return out;
}

/// Pad framed sequences to the longest one.
inline TokenBatch make_token_batch(const std::vector<Sentence>& framed) {
  TokenBatch b;
  b.rows = framed.size();
  for (const auto& s : framed) b.cols = std::max(b.cols, s.size());
  b.ids.assign(b.rows * b.cols, VocabSpec::kPad);
  b.mask.assign(b.rows * b.cols, 0);
  for (std::size_t r = 0; r < b.rows; ++r)
    for (std::size_t l = 0; l < framed[r].size(); ++l) {
      b.ids[r * b.cols + l] = framed[r][l];
      b.mask[r * b.cols + l] = 1;
    }
  return b;
}

// ---------------------------------------------------------------- generation

struct LengthRange {
  std::size_t min = 3;
  std::size_t max = 12;
};

/// Zipf(exponent) sampler over language-1 tokens; local index 0 is the most frequent.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double exponent = 1.0) : cdf_(n) {
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) cdf_[k] = total += 1.0 / std::pow(static_cast<double>(k + 1), exponent);
    for (auto& c : cdf_) c /= total;
  }
  std::size_t sample(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

inline Sentence sample_sentence(Rng& rng, const ZipfSampler& zipf, const VocabSpec& vocab, LengthRange len) {
  const std::size_t n = len.min + static_cast<std::size_t>(rng.below(len.max - len.min + 1));
  Sentence s(n);
  for (auto& id : s) id = vocab.l1_begin() + static_cast<TokenId>(zipf.sample(rng));
  return s;
}

struct CorpusSplits {
  double dev_fraction = 0.05;
  double test_fraction = 0.05;
};

struct CorpusFiles {
  std::filesystem::path train, dev, test, vocab;
  std::size_t train_pairs = 0, dev_pairs = 0, test_pairs = 0;
};

inline std::string sentence_to_text(const Sentence& s, const Lexicon& lex) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ' ';
    out += lex.surface(s[i]);
  }
  return out;
}

namespace detail {

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

inline void write_pairs(const std::filesystem::path& path, const std::vector<ParallelPair>& pairs,
                        const Lexicon& lex) {
  auto out = open_for_write(path);
  for (const auto& p : pairs)
    out << sentence_to_text(p.source_ids, lex) << '\t' << sentence_to_text(p.target_ids, lex) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

/// Generate distinct Zipf-distributed sentences and their cipher images, split
/// into train/dev/test TSVs plus the vocab manifest under `out_dir`.
inline CorpusFiles gen_parallel_corpus(std::uint64_t seed, std::size_t n_pairs, const Lexicon& lexicon,
                                       LengthRange length_range, const std::filesystem::path& out_dir,
                                       std::size_t max_seq_len = 16, CorpusSplits splits = {}) {
  CROSSTILL_EXPECT(n_pairs >= 1, "gen_parallel_corpus: n_pairs must be at least 1");
  CROSSTILL_EXPECT(length_range.min >= 3 && length_range.min <= length_range.max &&
                       length_range.max + 2 <= max_seq_len,
                   "gen_parallel_corpus: length range must lie within [3, max_seq_len-2]");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  const VocabSpec& vocab = lexicon.vocab();
  ZipfSampler zipf(vocab.tokens_per_language);
  Rng rng = Rng(seed).split(kSentenceStream);
  std::set<Sentence> seen;
  std::vector<ParallelPair> pairs;
  pairs.reserve(n_pairs);
  std::size_t attempts = 0;
  while (pairs.size() < n_pairs) {
    if (++attempts > 100 * n_pairs + 1000)
      throw ConfigError("gen_parallel_corpus: cannot draw " + std::to_string(n_pairs) + " distinct sentences");
    Sentence s = sample_sentence(rng, zipf, vocab, length_range);
    if (!seen.insert(s).second) continue;
    pairs.push_back({s, lexicon.encode(s)});
  }

  const auto n_dev = static_cast<std::size_t>(std::floor(splits.dev_fraction * static_cast<double>(n_pairs)));
  const auto n_test = static_cast<std::size_t>(std::floor(splits.test_fraction * static_cast<double>(n_pairs)));
  CROSSTILL_EXPECT(n_dev + n_test < n_pairs || n_pairs == 0, "gen_parallel_corpus: splits leave no training data");
  const std::size_t n_train = n_pairs - n_dev - n_test;

  CorpusFiles files{out_dir / "train.tsv", out_dir / "dev.tsv", out_dir / "test.tsv", out_dir / "vocab.json",
                    n_train, n_dev, n_test};
  auto first = pairs.begin();
  detail::write_pairs(files.train, {first, first + static_cast<std::ptrdiff_t>(n_train)}, lexicon);
  detail::write_pairs(files.dev, {first + static_cast<std::ptrdiff_t>(n_train),
                                  first + static_cast<std::ptrdiff_t>(n_train + n_dev)},
                      lexicon);
  detail::write_pairs(files.test, {first + static_cast<std::ptrdiff_t>(n_train + n_dev), pairs.end()}, lexicon);
  auto out = detail::open_for_write(files.vocab);
  out << lexicon.manifest().dump() << '\n';
  return files;
}

/// Cosine used for STS scoring and evaluation, rounded to 12 decimals so that
/// summation-order noise cannot split pairs that are equal in exact arithmetic.
inline double sts_cosine(std::span<const double> a, std::span<const double> b) {
  return std::round(cosine_similarity<double>(a, b) * 1e12) / 1e12;
}

/// Score STS pairs with the oracle: 2.5 * (1 + cosine).
inline double oracle_sts_score(const Sentence& a, const Sentence& b, const OracleSemantics& oracle) {
  const auto ea = oracle.embed(a);
  const auto eb = oracle.embed(b);
  return 2.5 * (1.0 + sts_cosine(ea, eb));
}

/// STS pairs with controlled overlap: sentence B keeps each token of A with a
/// per-pair probability drawn uniformly from [0,1] and resamples the rest, then
/// shuffles. With `cross_lingual`, B is emitted in language 2.
inline std::vector<StsExample> gen_sts_examples(std::uint64_t seed, std::size_t n_examples,
                                                const OracleSemantics& oracle, bool cross_lingual = false,
                                                LengthRange length_range = {}) {
  const Lexicon& lex = oracle.lexicon();
  const VocabSpec& vocab = lex.vocab();
  ZipfSampler zipf(vocab.tokens_per_language);
  Rng rng = Rng(seed).split(kSentenceStream + 100);
  std::vector<StsExample> out;
  out.reserve(n_examples);
  for (std::size_t i = 0; i < n_examples; ++i) {
    Sentence a = sample_sentence(rng, zipf, vocab, length_range);
    const double keep = rng.uniform();
    Sentence b = a;
    for (auto& id : b)
      if (rng.uniform() >= keep) id = vocab.l1_begin() + static_cast<TokenId>(zipf.sample(rng));
    rng.shuffle(b);
    const double score = oracle_sts_score(a, b, oracle);
    out.push_back({a, cross_lingual ? lex.encode(b) : b, score});
  }
  return out;
}

inline void write_sts_tsv(const std::filesystem::path& path, const std::vector<StsExample>& examples,
                          const Lexicon& lex) {
  auto out = detail::open_for_write(path);
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& e : examples)
    out << sentence_to_text(e.sentence_a, lex) << '\t' << sentence_to_text(e.sentence_b, lex) << '\t'
        << e.gold_score << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::vector<StsExample> gen_sts_set(std::uint64_t seed, std::size_t n_examples, const OracleSemantics& oracle,
                                           const std::filesystem::path& path, bool cross_lingual = false) {
  auto examples = gen_sts_examples(seed, n_examples, oracle, cross_lingual);
  write_sts_tsv(path, examples, oracle.lexicon());
  return examples;
}

// ---------------------------------------------------------------- loading

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline Sentence parse_sentence(std::string_view text, const Lexicon& lex, std::size_t& unknown) {
  Sentence s;
  for (auto tok : split(text, ' ')) {
    if (tok.empty()) continue;
    const TokenId id = lex.parse_token(tok);
    if (id == VocabSpec::kUnk) ++unknown;
    s.push_back(id);
  }
  return s;
}

inline std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return in;
}

}  // namespace detail

struct ParallelData {
  std::vector<ParallelPair> pairs;
  std::size_t unknown_tokens = 0;
};

inline ParallelData read_parallel_tsv(const std::filesystem::path& path, const Lexicon& lex) {
  auto in = detail::open_for_read(path);
  ParallelData data;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split(line, '\t');
    if (fields.size() != 2) throw ParseError(lineno, "expected 2 tab-separated fields, found " + std::to_string(fields.size()));
    ParallelPair p{detail::parse_sentence(fields[0], lex, data.unknown_tokens),
                   detail::parse_sentence(fields[1], lex, data.unknown_tokens)};
    if (p.source_ids.empty() || p.target_ids.empty()) throw ParseError(lineno, "empty sentence");
    data.pairs.push_back(std::move(p));
  }
  return data;
}

inline std::vector<StsExample> load_sts_tsv(const std::filesystem::path& path, const Lexicon& lex) {
  auto in = detail::open_for_read(path);
  std::vector<StsExample> out;
  std::string line;
  std::size_t lineno = 0, unknown = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split(line, '\t');
    if (fields.size() != 3) throw ParseError(lineno, "expected 3 tab-separated fields, found " + std::to_string(fields.size()));
    double score = 0.0;
    const std::string score_text(fields[2]);
    std::size_t used = 0;
    try {
      score = std::stod(score_text, &used);
    } catch (const std::exception&) {
      throw ParseError(lineno, "score '" + score_text + "' is not a number");
    }
    if (used != score_text.size()) throw ParseError(lineno, "score '" + score_text + "' is not a number");
    if (!(score >= 0.0 && score <= 5.0)) throw ParseError(lineno, "score " + score_text + " outside [0,5]");
    StsExample e{detail::parse_sentence(fields[0], lex, unknown), detail::parse_sentence(fields[1], lex, unknown), score};
    if (e.sentence_a.empty() || e.sentence_b.empty()) throw ParseError(lineno, "empty sentence");
    out.push_back(std::move(e));
  }
  return out;
}

/// Epoch-wise batch stream over parallel pairs. Each epoch shuffles with a
/// stream derived from (seed, epoch); batches are BOS/EOS framed and padded.
class BatchStream {
 public:
  BatchStream(std::vector<ParallelPair> pairs, std::size_t max_seq_len, std::size_t batch_size,
              std::uint64_t shuffle_seed, bool shuffle = true)
      : pairs_(std::move(pairs)), max_seq_len_(max_seq_len), batch_size_(batch_size), seed_(shuffle_seed),
        shuffle_(shuffle) {
    CROSSTILL_EXPECT(batch_size_ > 0, "batch size must be positive");
    order_.resize(pairs_.size());
    start_epoch(0);
  }

  std::size_t batches_per_epoch() const { return (pairs_.size() + batch_size_ - 1) / batch_size_; }
  std::size_t size() const { return pairs_.size(); }
  const std::vector<ParallelPair>& pairs() const { return pairs_; }

  void start_epoch(std::size_t epoch) {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    if (shuffle_) {
      Rng rng = Rng(seed_).split(epoch);
      rng.shuffle(order_);
    }
    cursor_ = 0;
  }

  bool next(ParallelBatch& batch) {
    if (cursor_ >= order_.size()) return false;
    const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
    std::vector<Sentence> src, tgt;
    batch.source_sentences.clear();
    for (std::size_t i = cursor_; i < end; ++i) {
      const auto& p = pairs_[order_[i]];
      src.push_back(frame(p.source_ids, max_seq_len_));
      tgt.push_back(frame(p.target_ids, max_seq_len_));
      batch.source_sentences.push_back(p.source_ids);
    }
    batch.source = make_token_batch(src);
    batch.target = make_token_batch(tgt);
    cursor_ = end;
    return true;
  }

 private:
  std::vector<ParallelPair> pairs_;
  std::size_t max_seq_len_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

inline BatchStream load_parallel_tsv(const std::filesystem::path& path, const Lexicon& lex, std::size_t max_seq_len,
                                     std::size_t batch_size, std::uint64_t shuffle_seed) {
  return BatchStream(read_parallel_tsv(path, lex).pairs, max_seq_len, batch_size, shuffle_seed);
}

}  // namespace crosstill

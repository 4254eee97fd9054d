#pragma once

// Siamese transformer sentence encoder with an optional factorized embedding
// (V x B lookup followed by a B -> H projection) and parameter-recurrent layers:
// M distinct post-norm blocks applied r times in sequence, sharing tensors.

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "crosstill/corpus.hpp"
#include "crosstill/ops.hpp"
#include "crosstill/optim.hpp"
#include "crosstill/rng.hpp"

namespace crosstill {

struct EncoderConfig {
  std::size_t vocab_size = 1028;
  std::size_t hidden = 64;
  bool bottleneck = false;
  std::size_t bottleneck_size = 16;
  std::size_t ffn = 128;
  std::size_t heads = 4;
  std::size_t distinct_layers = 4;  // |RU|
  std::size_t recurrence = 1;
  std::size_t max_positions = 16;
  double layernorm_eps = 1e-5;
  double init_std = 0.02;

  std::size_t depth() const { return distinct_layers * recurrence; }
  std::size_t embedding_width() const { return bottleneck ? bottleneck_size : hidden; }

  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("encoder config: " + msg); };
    if (vocab_size == 0 || hidden == 0 || ffn == 0 || max_positions == 0) fail("dimensions must be positive");
    if (heads == 0 || hidden % heads != 0) fail("hidden " + std::to_string(hidden) + " not divisible by heads");
    if (distinct_layers < 1) fail("distinct_layers must be >= 1");
    if (recurrence < 1) fail("recurrence must be >= 1");
    if (bottleneck && bottleneck_size == 0) fail("bottleneck_size must be positive");
    if (!(layernorm_eps > 0.0)) fail("layernorm_eps must be positive");
  }

  bool operator==(const EncoderConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"vocab_size", c.vocab_size},   {"hidden", c.hidden},
       {"bottleneck", c.bottleneck},   {"bottleneck_size", c.bottleneck_size},
       {"ffn", c.ffn},                 {"heads", c.heads},
       {"distinct_layers", c.distinct_layers}, {"recurrence", c.recurrence},
       {"max_positions", c.max_positions},     {"layernorm_eps", c.layernorm_eps},
       {"init_std", c.init_std}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  EncoderConfig d;
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.hidden = j.value("hidden", d.hidden);
  c.bottleneck = j.value("bottleneck", d.bottleneck);
  c.bottleneck_size = j.value("bottleneck_size", d.bottleneck_size);
  c.ffn = j.value("ffn", d.ffn);
  c.heads = j.value("heads", d.heads);
  c.distinct_layers = j.value("distinct_layers", d.distinct_layers);
  c.recurrence = j.value("recurrence", d.recurrence);
  c.max_positions = j.value("max_positions", d.max_positions);
  c.layernorm_eps = j.value("layernorm_eps", d.layernorm_eps);
  c.init_std = j.value("init_std", d.init_std);
}

template <class T>
struct TransformerLayer {
  Tensor<T> query_weight, query_bias, key_weight, key_bias, value_weight, value_bias;
  Tensor<T> output_weight, output_bias, attention_norm_gamma, attention_norm_beta;
  Tensor<T> ffn_input_weight, ffn_input_bias, ffn_output_weight, ffn_output_bias;
  Tensor<T> ffn_norm_gamma, ffn_norm_beta;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "attention.query.weight", query_weight, true);
    f(prefix + "attention.query.bias", query_bias, false);
    f(prefix + "attention.key.weight", key_weight, true);
    f(prefix + "attention.key.bias", key_bias, false);
    f(prefix + "attention.value.weight", value_weight, true);
    f(prefix + "attention.value.bias", value_bias, false);
    f(prefix + "attention.output.weight", output_weight, true);
    f(prefix + "attention.output.bias", output_bias, false);
    f(prefix + "attention_norm.gamma", attention_norm_gamma, false);
    f(prefix + "attention_norm.beta", attention_norm_beta, false);
    f(prefix + "ffn.input.weight", ffn_input_weight, true);
    f(prefix + "ffn.input.bias", ffn_input_bias, false);
    f(prefix + "ffn.output.weight", ffn_output_weight, true);
    f(prefix + "ffn.output.bias", ffn_output_bias, false);
    f(prefix + "ffn_norm.gamma", ffn_norm_gamma, false);
    f(prefix + "ffn_norm.beta", ffn_norm_beta, false);
  }

  /// Post-norm block: LN(x + Attn(x)), then LN(x + FFN(x)).
  Tensor<T> forward(const Tensor<T>& x, const TokenBatch& batch, std::size_t heads, T eps) const {
    auto q = linear(x, query_weight, query_bias);
    auto k = linear(x, key_weight, key_bias);
    auto v = linear(x, value_weight, value_bias);
    auto attended = attention(q, k, v, std::span<const std::uint8_t>(batch.mask), batch.rows, batch.cols, heads);
    auto h = layer_norm(add(x, linear(attended, output_weight, output_bias)), attention_norm_gamma,
                        attention_norm_beta, eps);
    auto f = linear(gelu(linear(h, ffn_input_weight, ffn_input_bias)), ffn_output_weight, ffn_output_bias);
    return layer_norm(add(h, f), ffn_norm_gamma, ffn_norm_beta, eps);
  }
};

namespace detail {

template <class T>
Tensor<T> gaussian(Shape shape, double std, Rng& rng) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(std * rng.normal());
  return Tensor<T>::from(std::move(shape), std::move(v), true);
}

template <class T>
Tensor<T> filled(Shape shape, T value) {
  return Tensor<T>::from(shape, std::vector<T>(numel(shape), value), true);
}

}  // namespace detail

template <class T>
class SentenceEncoder {
 public:
  using value_type = T;

  /// Random initialization: Gaussian(init_std) matrices, 1/sqrt(B) for the
  /// bottleneck projection, zero biases, unit layer-norm scales.
  SentenceEncoder(EncoderConfig cfg, Rng& rng) : config_(std::move(cfg)) {
    config_.validate();
    const auto& c = config_;
    const double s = c.init_std;
    word_ = detail::gaussian<T>({c.vocab_size, c.embedding_width()}, s, rng);
    if (c.bottleneck)
      projection_ = detail::gaussian<T>({c.bottleneck_size, c.hidden}, 1.0 / std::sqrt(double(c.bottleneck_size)), rng);
    position_ = detail::gaussian<T>({c.max_positions, c.hidden}, s, rng);
    norm_gamma_ = detail::filled<T>({c.hidden}, T(1));
    norm_beta_ = detail::filled<T>({c.hidden}, T(0));
    layers_.resize(c.distinct_layers);
    for (auto& layer : layers_) {
      const std::size_t h = c.hidden, f = c.ffn;
      layer.query_weight = detail::gaussian<T>({h, h}, s, rng);
      layer.key_weight = detail::gaussian<T>({h, h}, s, rng);
      layer.value_weight = detail::gaussian<T>({h, h}, s, rng);
      layer.output_weight = detail::gaussian<T>({h, h}, s, rng);
      layer.ffn_input_weight = detail::gaussian<T>({h, f}, s, rng);
      layer.ffn_output_weight = detail::gaussian<T>({f, h}, s, rng);
      layer.query_bias = detail::filled<T>({h}, T(0));
      layer.key_bias = detail::filled<T>({h}, T(0));
      layer.value_bias = detail::filled<T>({h}, T(0));
      layer.output_bias = detail::filled<T>({h}, T(0));
      layer.ffn_input_bias = detail::filled<T>({f}, T(0));
      layer.ffn_output_bias = detail::filled<T>({h}, T(0));
      layer.attention_norm_gamma = detail::filled<T>({h}, T(1));
      layer.attention_norm_beta = detail::filled<T>({h}, T(0));
      layer.ffn_norm_gamma = detail::filled<T>({h}, T(1));
      layer.ffn_norm_beta = detail::filled<T>({h}, T(0));
    }
  }

  /// Deep copy: the new encoder owns independent tensors.
  SentenceEncoder(const SentenceEncoder& other)
      : config_(other.config_), word_(other.word_), projection_(other.projection_), position_(other.position_),
        norm_gamma_(other.norm_gamma_), norm_beta_(other.norm_beta_), layers_(other.layers_) {
    visit([](const std::string&, Tensor<T>& t, bool) { t = t.clone(); });
  }
  SentenceEncoder& operator=(const SentenceEncoder& other) {
    if (this != &other) *this = SentenceEncoder(other);
    return *this;
  }
  SentenceEncoder(SentenceEncoder&&) noexcept = default;
  SentenceEncoder& operator=(SentenceEncoder&&) noexcept = default;

  const EncoderConfig& config() const { return config_; }
  std::vector<TransformerLayer<T>>& layers() { return layers_; }
  const std::vector<TransformerLayer<T>>& layers() const { return layers_; }
  Tensor<T>& word_embeddings() { return word_; }
  Tensor<T>& projection() { return projection_; }
  Tensor<T>& position_embeddings() { return position_; }
  Tensor<T>& embedding_norm_gamma() { return norm_gamma_; }
  Tensor<T>& embedding_norm_beta() { return norm_beta_; }

  /// Visit every distinct parameter tensor in registry order: f(name, tensor&, decays).
  template <class F>
  void visit(F&& f) {
    f("embeddings.word", word_, true);
    if (config_.bottleneck) f("embeddings.projection", projection_, true);
    f("embeddings.position", position_, true);
    f("embeddings.norm.gamma", norm_gamma_, false);
    f("embeddings.norm.beta", norm_beta_, false);
    for (std::size_t j = 0; j < layers_.size(); ++j) layers_[j].visit("layers." + std::to_string(j) + ".", f);
  }
  template <class F>
  void visit(F&& f) const {
    const_cast<SentenceEncoder*>(this)->visit(std::forward<F>(f));
  }

  /// Named handles onto every parameter (aliases, not copies).
  std::vector<TrainableParam<T>> parameters() const {
    std::vector<TrainableParam<T>> out;
    visit([&](const std::string& name, Tensor<T>& t, bool decay) { out.push_back({name, t, decay}); });
    return out;
  }

  /// Parameters of the embedding path trained in the embedding-alignment
  /// stage: word table, projection (when present) and embedding layer-norm.
  std::vector<TrainableParam<T>> embedding_path_parameters() const {
    std::vector<TrainableParam<T>> out;
    visit([&](const std::string& name, Tensor<T>& t, bool decay) {
      if (name == "embeddings.word" || name == "embeddings.projection" || name.rfind("embeddings.norm", 0) == 0)
        out.push_back({name, t, decay});
    });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, Tensor<T>& t, bool) { n += t.numel(); });
    return n;
  }

  void set_requires_grad(bool on) const {
    visit([&](const std::string&, Tensor<T>& t, bool) { t.set_requires_grad(on); });
  }

  void zero_grad() const {
    visit([&](const std::string&, Tensor<T>& t, bool) { t.zero_grad(); });
  }

  /// Token states after lookup, (projection), positional add and layer-norm: [N*L, H].
  Tensor<T> embed_tokens(const TokenBatch& batch) const {
    check_batch(batch);
    auto x = gather_rows(word_, std::span<const TokenId>(batch.ids));
    if (config_.bottleneck) x = linear(x, projection_);
    std::vector<TokenId> positions(batch.rows * batch.cols);
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<TokenId>(i % batch.cols);
    x = add(x, gather_rows(position_, std::span<const TokenId>(positions)));
    return layer_norm(x, norm_gamma_, norm_beta_, static_cast<T>(config_.layernorm_eps));
  }

  /// Mean-pooled embedding-layer output: [N, H].
  Tensor<T> embed_pooled(const TokenBatch& batch) const {
    return masked_mean(embed_tokens(batch), std::span<const std::uint8_t>(batch.mask), batch.rows, batch.cols);
  }

  /// Final-layer token states: the M distinct layers applied r times.
  Tensor<T> token_states(const TokenBatch& batch) const {
    auto x = embed_tokens(batch);
    const T eps = static_cast<T>(config_.layernorm_eps);
    for (std::size_t rep = 0; rep < config_.recurrence; ++rep)
      for (const auto& layer : layers_) x = layer.forward(x, batch, config_.heads, eps);
    return x;
  }

  /// Mean-pooled sentence embeddings: [N, H].
  Tensor<T> encode(const TokenBatch& batch) const {
    return masked_mean(token_states(batch), std::span<const std::uint8_t>(batch.mask), batch.rows, batch.cols);
  }

  /// Same architecture at another element width.
  template <class U>
  SentenceEncoder<U> cast() const {
    Rng rng(0);
    SentenceEncoder<U> out(config_, rng);
    auto src = parameters();
    auto dst = out.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) {
      auto from = src[i].tensor.data();
      auto to = dst[i].tensor.data();
      for (std::size_t k = 0; k < from.size(); ++k) to[k] = static_cast<U>(from[k]);
    }
    return out;
  }

 private:
  void check_batch(const TokenBatch& batch) const {
    CROSSTILL_EXPECT(batch.rows > 0 && batch.ids.size() == batch.rows * batch.cols &&
                         batch.mask.size() == batch.ids.size(),
                     "encode: malformed token batch");
    CROSSTILL_EXPECT(batch.cols <= config_.max_positions,
                     "encode: sequence length " + std::to_string(batch.cols) + " exceeds max_positions " +
                         std::to_string(config_.max_positions));
    for (std::size_t r = 0; r < batch.rows; ++r)
      CROSSTILL_EXPECT(batch.length(r) > 0, "encode: row " + std::to_string(r) + " is fully masked");
  }

  EncoderConfig config_;
  Tensor<T> word_, projection_, position_, norm_gamma_, norm_beta_;
  std::vector<TransformerLayer<T>> layers_;
};

/// Build a student whose M distinct layers copy the assistant's first M layers.
/// Positional table and embedding layer-norm are copied; the word table is
/// copied when no bottleneck is used, otherwise the V x B table and B x H
/// projection are fresh random draws.
template <class T>
SentenceEncoder<T> init_student_from_assistant(const SentenceEncoder<T>& assistant, const EncoderConfig& student_cfg,
                                               Rng& rng) {
  const auto& a = assistant.config();
  student_cfg.validate();
  if (student_cfg.hidden != a.hidden)
    throw ConfigError("student hidden " + std::to_string(student_cfg.hidden) + " differs from assistant " +
                      std::to_string(a.hidden));
  if (student_cfg.ffn != a.ffn || student_cfg.heads != a.heads)
    throw ConfigError("student ffn/heads must match the assistant to copy layers");
  if (student_cfg.distinct_layers > a.depth())
    throw ConfigError("student distinct_layers " + std::to_string(student_cfg.distinct_layers) +
                      " exceeds assistant depth " + std::to_string(a.depth()));
  if (student_cfg.vocab_size != a.vocab_size) throw ConfigError("student and assistant vocabularies differ");
  if (student_cfg.max_positions > a.max_positions)
    throw ConfigError("student max_positions exceeds the assistant's positional table");

  SentenceEncoder<T> student(student_cfg, rng);
  if (!student_cfg.bottleneck) {
    auto src = assistant.parameters().front().tensor.data();
    std::copy(src.begin(), src.end(), student.word_embeddings().data().begin());
  }
  auto assistant_params = assistant.parameters();
  auto find = [&](const std::string& name) -> const Tensor<T>& {
    for (const auto& p : assistant_params)
      if (p.name == name) return p.tensor;
    throw ConfigError("assistant has no parameter " + name);
  };
  {
    auto src = find("embeddings.position").data();
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(student_cfg.max_positions * a.hidden),
              student.position_embeddings().data().begin());
  }
  std::copy(find("embeddings.norm.gamma").data().begin(), find("embeddings.norm.gamma").data().end(),
            student.embedding_norm_gamma().data().begin());
  std::copy(find("embeddings.norm.beta").data().begin(), find("embeddings.norm.beta").data().end(),
            student.embedding_norm_beta().data().begin());
  for (std::size_t j = 0; j < student_cfg.distinct_layers; ++j) {
    TransformerLayer<T> copy = assistant.layers()[j % a.distinct_layers];
    copy.visit("", [](const std::string&, Tensor<T>& t, bool) { t = t.clone(); });
    student.layers()[j] = copy;
  }
  return student;
}

/// Physically distinct copy of the layer schedule: M*r layers, recurrence 1.
template <class T>
SentenceEncoder<T> unroll(const SentenceEncoder<T>& encoder) {
  SentenceEncoder<T> out(encoder);
  const auto& c = encoder.config();
  if (c.recurrence == 1) return out;
  EncoderConfig flat = c;
  flat.distinct_layers = c.depth();
  flat.recurrence = 1;
  Rng rng(0);
  SentenceEncoder<T> result(flat, rng);
  result.word_embeddings() = out.word_embeddings();
  if (c.bottleneck) result.projection() = out.projection();
  result.position_embeddings() = out.position_embeddings();
  result.embedding_norm_gamma() = out.embedding_norm_gamma();
  result.embedding_norm_beta() = out.embedding_norm_beta();
  for (std::size_t i = 0; i < flat.distinct_layers; ++i) {
    TransformerLayer<T> copy = out.layers()[i % c.distinct_layers];
    copy.visit("", [](const std::string&, Tensor<T>& t, bool) { t = t.clone(); });
    result.layers()[i] = copy;
  }
  return result;
}

/// Frame, pad and encode sentences in blocks without recording a graph.
template <class T>
std::vector<std::vector<double>> embed_sentences(const SentenceEncoder<T>& encoder, const std::vector<Sentence>& sentences,
                                                 std::size_t max_seq_len, std::size_t block = 64) {
  NoGradGuard no_grad;
  std::vector<std::vector<double>> out;
  out.reserve(sentences.size());
  for (std::size_t start = 0; start < sentences.size(); start += block) {
    std::vector<Sentence> framed;
    for (std::size_t i = start; i < std::min(sentences.size(), start + block); ++i)
      framed.push_back(frame(sentences[i], max_seq_len));
    auto emb = encoder.encode(make_token_batch(framed));
    const std::size_t h = emb.dim(1);
    for (std::size_t r = 0; r < emb.dim(0); ++r)
      out.emplace_back(emb.data().begin() + static_cast<std::ptrdiff_t>(r * h),
                       emb.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * h));
  }
  return out;
}

}  // namespace crosstill

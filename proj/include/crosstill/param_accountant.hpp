#pragma once

// Closed-form parameter counts for embedding and encoder blocks, and an audit
// of live encoders against them.

#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crosstill/encoder.hpp"

namespace crosstill {

using Count = std::uint64_t;

/// Q, K, V, O with bias; two FFN matrices with bias; two layer-norms.
constexpr Count encoder_size(Count hidden, Count ffn, Count distinct_layers) {
  const Count h = hidden, f = ffn;
  const Count per_layer = 4 * (h * h + h) + (h * f + f) + (f * h + h) + 2 * (2 * h);
  return distinct_layers * per_layer;
}

struct SizePreset {
  std::string name;
  Count vocab = 0;
  Count hidden = 0;
  Count ffn = 0;
  Count positions = 0;
  Count token_types = 0;
  Count layers = 0;       // distinct layers (|RU|)
  Count base_layers = 0;  // depth of the model the recurrent unit was cut from
  std::optional<Count> bottleneck;
  bool include_positional = false;
  bool include_token_type = false;
  bool include_embedding_layernorm = false;
};

/// Word table (factorized when a bottleneck is set) plus the flagged extras.
constexpr Count embedding_size(const SizePreset& p) {
  Count n = p.bottleneck ? p.vocab * *p.bottleneck + *p.bottleneck * p.hidden : p.vocab * p.hidden;
  if (p.include_positional) n += p.positions * p.hidden;
  if (p.include_token_type) n += p.token_types * p.hidden;
  if (p.include_embedding_layernorm) n += 2 * p.hidden;
  return n;
}

/// Millions at two decimals, rounded half-up: 192397056 -> "192.40M".
inline std::string render_millions(Count count) {
  const Count hundredths = (count + 5000) / 10000;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%llu.%02lluM", static_cast<unsigned long long>(hundredths / 100),
                static_cast<unsigned long long>(hundredths % 100));
  return buf;
}

inline std::string render_hundredths(Count hundredths) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%llu.%02lluM", static_cast<unsigned long long>(hundredths / 100),
                static_cast<unsigned long long>(hundredths % 100));
  return buf;
}

/// Encoder size as tabulated for a recurrent unit cut from a deeper model: the
/// full-depth size rendered in hundredths of millions, divided by the recurrence
/// count and rounded half-to-even. Equals render_millions for r = 1.
inline std::string render_recurrent_encoder(Count hidden, Count ffn, Count layers, Count base_layers) {
  if (base_layers == 0 || base_layers == layers || base_layers % layers != 0)
    return render_millions(encoder_size(hidden, ffn, layers));
  const Count full = (encoder_size(hidden, ffn, base_layers) + 5000) / 10000;
  const Count r = base_layers / layers;
  Count q = full / r;
  const Count rem = full % r;
  if (2 * rem > r || (2 * rem == r && q % 2 == 1)) ++q;
  return render_hundredths(q);
}

struct SizeReport {
  std::string preset;
  Count embedding_params = 0;
  Count encoder_params = 0;
  std::string embedding_m;
  std::string encoder_m;        // table rendering (see render_recurrent_encoder)
  std::string encoder_m_exact;  // half-up rendering of encoder_params
};

inline SizeReport model_report(const SizePreset& p) {
  SizeReport r;
  r.preset = p.name;
  r.embedding_params = embedding_size(p);
  r.encoder_params = encoder_size(p.hidden, p.ffn, p.layers);
  r.embedding_m = render_millions(r.embedding_params);
  r.encoder_m = render_recurrent_encoder(p.hidden, p.ffn, p.layers, p.base_layers);
  r.encoder_m_exact = render_millions(r.encoder_params);
  return r;
}

/// `preset<TAB>embedding<TAB>encoder<TAB>embedding_M<TAB>encoder_M`
inline std::string to_tsv(const SizeReport& r) {
  return r.preset + '\t' + std::to_string(r.embedding_params) + '\t' + std::to_string(r.encoder_params) + '\t' +
         r.embedding_m + '\t' + r.encoder_m;
}

/// XLM-R (base) and Multilingual-MiniLM-L12-H384 size presets. XLM-R rows count
/// positional, token-type and embedding layer-norm parameters inside the
/// embedding; MiniLM bottleneck rows count only the factorized table.
inline std::vector<SizePreset> builtin_presets() {
  constexpr Count kVocab = 250002;
  auto xlmr = [&](std::string name, std::optional<Count> b, Count layers) {
    return SizePreset{std::move(name), kVocab, 768, 3072, 512, 1, layers, 12, b, true, true, true};
  };
  auto minilm = [&](std::string name, std::optional<Count> b, Count layers, bool flags) {
    return SizePreset{std::move(name), kVocab, 384, 1536, 512, 2, layers, 12, b, flags, flags, flags};
  };
  return {
      xlmr("xlmr", std::nullopt, 12),
      xlmr("xlmr-ru3", std::nullopt, 3),
      xlmr("xlmr-b128-ru3", 128, 3),
      xlmr("xlmr-b128-ru6", 128, 6),
      xlmr("xlmr-b128-ru12", 128, 12),
      xlmr("xlmr-b256-ru3", 256, 3),
      minilm("minilm", std::nullopt, 12, true),
      minilm("minilm-ru3", std::nullopt, 3, true),
      minilm("minilm-b128-ru3", 128, 3, false),
      minilm("minilm-b128-ru6", 128, 6, false),
      minilm("minilm-b128-ru12", 128, 12, false),
      minilm("minilm-b256-ru3", 256, 3, false),
  };
}

inline std::optional<SizePreset> find_preset(const std::string& name) {
  for (auto& p : builtin_presets())
    if (p.name == name) return p;
  return std::nullopt;
}

/// Preset describing a live encoder: positional table and embedding layer-norm
/// counted, no token-type table.
inline SizePreset preset_for(const EncoderConfig& c, std::string name = "live") {
  SizePreset p;
  p.name = std::move(name);
  p.vocab = c.vocab_size;
  p.hidden = c.hidden;
  p.ffn = c.ffn;
  p.positions = c.max_positions;
  p.layers = c.distinct_layers;
  if (c.bottleneck) p.bottleneck = c.bottleneck_size;
  p.include_positional = true;
  p.include_embedding_layernorm = true;
  return p;
}

struct AuditError : Error {
  AuditError(const std::string& what, std::vector<std::string> offending)
      : Error(ErrorKind::contract, what), offending_tensors(std::move(offending)) {}
  std::vector<std::string> offending_tensors;
};

/// Expected element count per named tensor, derived from the config alone.
inline std::map<std::string, Count> expected_tensor_sizes(const EncoderConfig& c) {
  std::map<std::string, Count> out;
  const Count h = c.hidden, f = c.ffn;
  out["embeddings.word"] = c.vocab_size * (c.bottleneck ? c.bottleneck_size : h);
  if (c.bottleneck) out["embeddings.projection"] = c.bottleneck_size * h;
  out["embeddings.position"] = c.max_positions * h;
  out["embeddings.norm.gamma"] = h;
  out["embeddings.norm.beta"] = h;
  for (std::size_t j = 0; j < c.distinct_layers; ++j) {
    const std::string p = "layers." + std::to_string(j) + ".";
    for (const char* m : {"query", "key", "value", "output"}) {
      out[p + "attention." + m + ".weight"] = h * h;
      out[p + "attention." + m + ".bias"] = h;
    }
    out[p + "attention_norm.gamma"] = h;
    out[p + "attention_norm.beta"] = h;
    out[p + "ffn.input.weight"] = h * f;
    out[p + "ffn.input.bias"] = f;
    out[p + "ffn.output.weight"] = f * h;
    out[p + "ffn.output.bias"] = h;
    out[p + "ffn_norm.gamma"] = h;
    out[p + "ffn_norm.beta"] = h;
  }
  return out;
}

/// Report for a live encoder; throws AuditError naming mismatching tensors when
/// its registry disagrees with the closed-form counts.
template <class T>
SizeReport audit_encoder(const SentenceEncoder<T>& encoder, const std::string& name = "live") {
  const auto& cfg = encoder.config();
  auto expected = expected_tensor_sizes(cfg);
  std::vector<std::string> offending;
  Count total = 0;
  for (const auto& p : encoder.parameters()) {
    total += p.tensor.numel();
    auto it = expected.find(p.name);
    if (it == expected.end() || it->second != p.tensor.numel()) offending.push_back(p.name);
    if (it != expected.end()) expected.erase(it);
  }
  for (const auto& [missing, _] : expected) offending.push_back(missing);
  SizeReport report = model_report(preset_for(cfg, name));
  if (total != report.embedding_params + report.encoder_params) offending.push_back("<total>");
  if (!offending.empty()) {
    std::string msg = "parameter audit failed for";
    for (const auto& o : offending) msg += " " + o;
    throw AuditError(msg, offending);
  }
  return report;
}

}  // namespace crosstill

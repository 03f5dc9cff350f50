#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mote/common.hpp"

namespace mote {

enum class TextKind : uint8_t { Query = 0, Passage = 1 };

inline TextKind other(TextKind k) {
  return k == TextKind::Query ? TextKind::Passage : TextKind::Query;
}
inline const char* kind_name(TextKind k) {
  return k == TextKind::Query ? "Q" : "P";
}

// Dual-encoder parameter sharing scheme.
//   MoTE    - shared attention, per-kind feed-forward experts
//   Siamese - everything shared
//   FullSep - two fully independent towers (embeddings included)
enum class ArchMode : uint8_t { MoTE = 0, Siamese = 1, FullSep = 2 };

inline const char* mode_name(ArchMode m) {
  switch (m) {
    case ArchMode::MoTE: return "mote";
    case ArchMode::Siamese: return "siamese";
    case ArchMode::FullSep: return "fullsep";
  }
  return "?";
}

inline ArchMode parse_mode(const std::string& s) {
  if (s == "mote") return ArchMode::MoTE;
  if (s == "siamese") return ArchMode::Siamese;
  if (s == "fullsep") return ArchMode::FullSep;
  throw ConfigError("unknown architecture_mode: " + s);
}

struct ModelConfig {
  int num_layers = 2;      // encoder layers (the decoder always has one)
  int hidden_dim = 64;
  int num_heads = 4;
  int ffn_dim = 256;
  int vocab_size = 0;      // set from the vocabulary
  int max_seq_len = 144;
  ArchMode architecture_mode = ArchMode::MoTE;
  bool swap_experts = false;
  int64_t seed = 42;

  void validate() const {
    if (num_layers < 1) throw ConfigError("num_layers must be positive");
    if (hidden_dim < 1) throw ConfigError("hidden_dim must be positive");
    if (num_heads < 1 || hidden_dim % num_heads != 0)
      throw ConfigError("num_heads must divide hidden_dim");
    if (ffn_dim < 1) throw ConfigError("ffn_dim must be positive");
    if (max_seq_len < 3)
      throw ConfigError("max_seq_len must be at least 3 (CLS, token, SEP)");
    if (vocab_size <= kNumSpecialTokens)
      throw ConfigError("vocab_size must exceed the special token count");
  }

  static constexpr int kNumSpecialTokens = 5;
};

// Reserved vocabulary slots. Fixed ids 0..4 in every vocabulary.
constexpr int kClsId = 0;
constexpr int kSepId = 1;
constexpr int kMaskId = 2;
constexpr int kPadId = 3;
constexpr int kUnkId = 4;

struct TokenSequence {
  std::vector<int> ids;  // [CLS, ..., SEP]
  TextKind kind = TextKind::Passage;

  int length() const { return int(ids.size()); }

  void validate(const ModelConfig& cfg) const {
    if (ids.size() < 2) throw InputError("token sequence too short");
    if (ids.front() != kClsId) throw InputError("sequence must start with CLS");
    if (ids.back() != kSepId) throw InputError("sequence must end with SEP");
    if (int(ids.size()) > cfg.max_seq_len)
      throw InputError(strfmt("sequence length %zu exceeds max_seq_len %d",
                              ids.size(), cfg.max_seq_len));
    for (int id : ids)
      if (id < 0 || id >= cfg.vocab_size)
        throw InputError(strfmt("token id %d out of range (vocab %d)", id,
                                cfg.vocab_size));
  }
};

}  // namespace mote

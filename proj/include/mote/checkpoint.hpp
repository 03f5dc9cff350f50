#pragma once

#include <cstring>
#include <string>

#include "mote/corpus.hpp"
#include "mote/params.hpp"

namespace mote {

// Versioned binary checkpoint: magic, format version, full ModelConfig, then
// every named tensor as little-endian float32 with explicit shape. Loading a
// saved file and saving again reproduces the bytes exactly.
namespace ckpt {

constexpr char kMagic[8] = {'M', 'O', 'T', 'E', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

inline void put_u16(std::string& s, uint16_t v) {
  s.push_back(char(v & 0xff));
  s.push_back(char((v >> 8) & 0xff));
}
inline void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_i64(std::string& s, int64_t v) {
  uint64_t u = uint64_t(v);
  for (int i = 0; i < 8; ++i) s.push_back(char((u >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& s, float f) {
  uint32_t u;
  std::memcpy(&u, &f, 4);
  put_u32(s, u);
}

struct Cursor {
  const std::string* data;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > data->size()) throw ParseError("checkpoint truncated");
  }
  uint16_t u16() {
    need(2);
    uint16_t v = uint16_t(uint8_t((*data)[pos])) |
                 uint16_t(uint8_t((*data)[pos + 1])) << 8;
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t((*data)[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  int64_t i64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t((*data)[pos + i])) << (8 * i);
    pos += 8;
    return int64_t(v);
  }
  float f32() {
    uint32_t u = u32();
    float f;
    std::memcpy(&f, &u, 4);
    return f;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = data->substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace ckpt

inline std::string serialize_checkpoint(const ModelParams& params) {
  std::string s;
  s.append(ckpt::kMagic, 8);
  ckpt::put_u32(s, ckpt::kVersion);
  const ModelConfig& c = params.config;
  ckpt::put_u32(s, uint32_t(c.num_layers));
  ckpt::put_u32(s, uint32_t(c.hidden_dim));
  ckpt::put_u32(s, uint32_t(c.num_heads));
  ckpt::put_u32(s, uint32_t(c.ffn_dim));
  ckpt::put_u32(s, uint32_t(c.vocab_size));
  ckpt::put_u32(s, uint32_t(c.max_seq_len));
  s.push_back(char(uint8_t(c.architecture_mode)));
  s.push_back(char(c.swap_experts ? 1 : 0));
  ckpt::put_i64(s, c.seed);
  ckpt::put_u32(s, uint32_t(params.layout->tensors.size()));
  for (const TensorInfo& t : params.layout->tensors) {
    ckpt::put_u16(s, uint16_t(t.name.size()));
    s += t.name;
    ckpt::put_u32(s, uint32_t(t.rows));
    ckpt::put_u32(s, uint32_t(t.cols));
    const double* p = params.data.data() + t.offset;
    for (size_t i = 0, n = size_t(t.rows) * t.cols; i < n; ++i)
      ckpt::put_f32(s, float(p[i]));
  }
  return s;
}

inline void save_checkpoint(const ModelParams& params, const std::string& path) {
  atomic_write(path, serialize_checkpoint(params));
}

inline ModelParams deserialize_checkpoint(const std::string& bytes) {
  ckpt::Cursor cur{&bytes};
  if (cur.bytes(8) != std::string(ckpt::kMagic, 8))
    throw ParseError("not a model checkpoint (bad magic)");
  uint32_t version = cur.u32();
  if (version != ckpt::kVersion)
    throw ParseError(strfmt("unsupported checkpoint version %u", version));
  ModelConfig c;
  c.num_layers = int(cur.u32());
  c.hidden_dim = int(cur.u32());
  c.num_heads = int(cur.u32());
  c.ffn_dim = int(cur.u32());
  c.vocab_size = int(cur.u32());
  c.max_seq_len = int(cur.u32());
  uint8_t mode = uint8_t(cur.bytes(1)[0]);
  if (mode > 2) throw ParseError("bad architecture mode in checkpoint");
  c.architecture_mode = ArchMode(mode);
  c.swap_experts = cur.bytes(1)[0] != 0;
  c.seed = cur.i64();
  ModelParams p;
  p.config = c;
  p.layout = std::make_shared<Layout>(Layout::build(c));
  p.data.assign(p.layout->total, 0.0);
  uint32_t count = cur.u32();
  if (count != p.layout->tensors.size())
    throw ParseError("checkpoint tensor count does not match config");
  for (const TensorInfo& t : p.layout->tensors) {
    uint16_t name_len = cur.u16();
    std::string name = cur.bytes(name_len);
    if (name != t.name)
      throw ParseError("checkpoint tensor order mismatch: " + name + " vs " + t.name);
    uint32_t rows = cur.u32(), cols = cur.u32();
    if (int(rows) != t.rows || int(cols) != t.cols)
      throw ParseError("checkpoint tensor shape mismatch: " + name);
    double* dst = p.data.data() + t.offset;
    for (size_t i = 0, n = size_t(t.rows) * t.cols; i < n; ++i)
      dst[i] = double(cur.f32());
  }
  if (cur.pos != bytes.size()) throw ParseError("trailing bytes in checkpoint");
  return p;
}

inline ModelParams load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace mote

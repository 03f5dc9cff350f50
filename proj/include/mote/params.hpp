#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mote/config.hpp"
#include "mote/mat.hpp"
#include "mote/rng.hpp"

namespace mote {

enum class InitKind : uint8_t { TruncNormal, Zero, One, Copy };

struct TensorInfo {
  std::string name;
  int rows = 0;
  int cols = 0;
  size_t offset = 0;
  InitKind init = InitKind::TruncNormal;
  int copy_of = -1;     // source tensor for InitKind::Copy
  bool decay = false;   // participates in weight decay
};

struct FfnHandles {
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1, ln_g = -1, ln_b = -1;
};

struct AttnHandles {
  int wq = -1, bq = -1, wk = -1, bk = -1, wv = -1, bv = -1, wo = -1, bo = -1;
  int ln_g = -1, ln_b = -1;
};

// One transformer block. ffn is indexed by routed TextKind; the two entries
// alias the same tensors when the block has a single feed-forward path.
struct BlockHandles {
  AttnHandles attn;
  FfnHandles ffn[2];
};

struct TowerHandles {
  int tok_emb = -1, pos_emb = -1, ln_g = -1, ln_b = -1;
  std::vector<BlockHandles> blocks;
};

// Named-tensor layout for a ModelConfig. tower[] is indexed by routed
// TextKind; both entries alias the same tensors except in FullSep mode.
struct Layout {
  std::vector<TensorInfo> tensors;
  size_t total = 0;
  TowerHandles tower[2];
  BlockHandles decoder;

  int find(const std::string& name) const {
    for (size_t i = 0; i < tensors.size(); ++i)
      if (tensors[i].name == name) return int(i);
    return -1;
  }

  static Layout build(const ModelConfig& cfg) {
    cfg.validate();
    Layout lay;
    auto add = [&lay](const std::string& name, int rows, int cols,
                      InitKind init, bool decay) {
      TensorInfo t;
      t.name = name;
      t.rows = rows;
      t.cols = cols;
      t.offset = lay.total;
      t.init = init;
      t.decay = decay;
      lay.total += size_t(rows) * size_t(cols);
      lay.tensors.push_back(t);
      return int(lay.tensors.size()) - 1;
    };
    int d = cfg.hidden_dim, f = cfg.ffn_dim;
    auto add_ffn = [&](const std::string& p) {
      FfnHandles h;
      h.w1 = add(p + ".w1", d, f, InitKind::TruncNormal, true);
      h.b1 = add(p + ".b1", 1, f, InitKind::Zero, false);
      h.w2 = add(p + ".w2", f, d, InitKind::TruncNormal, true);
      h.b2 = add(p + ".b2", 1, d, InitKind::Zero, false);
      h.ln_g = add(p + ".ln_g", 1, d, InitKind::One, false);
      h.ln_b = add(p + ".ln_b", 1, d, InitKind::Zero, false);
      return h;
    };
    auto add_attn = [&](const std::string& p) {
      AttnHandles h;
      h.wq = add(p + ".wq", d, d, InitKind::TruncNormal, true);
      h.bq = add(p + ".bq", 1, d, InitKind::Zero, false);
      h.wk = add(p + ".wk", d, d, InitKind::TruncNormal, true);
      h.bk = add(p + ".bk", 1, d, InitKind::Zero, false);
      h.wv = add(p + ".wv", d, d, InitKind::TruncNormal, true);
      h.bv = add(p + ".bv", 1, d, InitKind::Zero, false);
      h.wo = add(p + ".wo", d, d, InitKind::TruncNormal, true);
      h.bo = add(p + ".bo", 1, d, InitKind::Zero, false);
      h.ln_g = add(p + ".ln_g", 1, d, InitKind::One, false);
      h.ln_b = add(p + ".ln_b", 1, d, InitKind::Zero, false);
      return h;
    };
    auto add_tower = [&](const std::string& p) {
      TowerHandles t;
      t.tok_emb = add(p + "emb.tok", cfg.vocab_size, d, InitKind::TruncNormal, true);
      t.pos_emb = add(p + "emb.pos", cfg.max_seq_len, d, InitKind::TruncNormal, true);
      t.ln_g = add(p + "emb.ln_g", 1, d, InitKind::One, false);
      t.ln_b = add(p + "emb.ln_b", 1, d, InitKind::Zero, false);
      for (int l = 0; l < cfg.num_layers; ++l) {
        std::string bp = p + "enc" + std::to_string(l);
        BlockHandles blk;
        blk.attn = add_attn(bp + ".attn");
        if (cfg.architecture_mode == ArchMode::MoTE) {
          // Passage expert first; the query expert is initialized as a
          // bit-exact copy of it.
          blk.ffn[int(TextKind::Passage)] = add_ffn(bp + ".pffn");
          blk.ffn[int(TextKind::Query)] = add_ffn(bp + ".qffn");
        } else {
          FfnHandles shared = add_ffn(bp + ".ffn");
          blk.ffn[0] = shared;
          blk.ffn[1] = shared;
        }
        t.blocks.push_back(blk);
      }
      return t;
    };

    if (cfg.architecture_mode == ArchMode::FullSep) {
      size_t p_begin = lay.tensors.size();
      lay.tower[int(TextKind::Passage)] = add_tower("p.");
      size_t p_end = lay.tensors.size();
      lay.tower[int(TextKind::Query)] = add_tower("q.");
      // The query tower starts as a bit-exact copy of the passage tower,
      // mirroring the shared initialization of the expert paths.
      for (size_t i = p_end; i < lay.tensors.size(); ++i) {
        TensorInfo& t = lay.tensors[i];
        t.init = InitKind::Copy;
        t.copy_of = int(p_begin + (i - p_end));
      }
    } else {
      TowerHandles t = add_tower("");
      lay.tower[0] = t;
      lay.tower[1] = t;
    }
    if (cfg.architecture_mode == ArchMode::MoTE) {
      // Mark query experts as copies of the passage experts.
      for (const BlockHandles& blk : lay.tower[0].blocks) {
        const FfnHandles& pf = blk.ffn[int(TextKind::Passage)];
        const FfnHandles& qf = blk.ffn[int(TextKind::Query)];
        int pairs[6][2] = {{qf.w1, pf.w1},     {qf.b1, pf.b1},
                           {qf.w2, pf.w2},     {qf.b2, pf.b2},
                           {qf.ln_g, pf.ln_g}, {qf.ln_b, pf.ln_b}};
        for (auto& pr : pairs) {
          lay.tensors[pr[0]].init = InitKind::Copy;
          lay.tensors[pr[0]].copy_of = pr[1];
        }
      }
    }

    lay.decoder.attn = add_attn("dec.attn");
    FfnHandles df = add_ffn("dec.ffn");
    lay.decoder.ffn[0] = df;
    lay.decoder.ffn[1] = df;
    return lay;
  }
};

// All trainable state of a model: config, named-tensor layout, flat arena.
struct ModelParams {
  ModelConfig config;
  std::shared_ptr<const Layout> layout;
  std::vector<double> data;

  TensorView view(int id) {
    const TensorInfo& t = layout->tensors[id];
    return TensorView{data.data() + t.offset, t.rows, t.cols};
  }
  TensorView view(int id) const {
    const TensorInfo& t = layout->tensors[id];
    return TensorView{const_cast<double*>(data.data()) + t.offset, t.rows,
                      t.cols};
  }

  // Routed parameter lookup. swap_experts inverts the routing decision.
  TextKind routed(TextKind k) const {
    return config.swap_experts ? other(k) : k;
  }
  const TowerHandles& tower(TextKind k) const {
    return layout->tower[int(routed(k))];
  }

  bool all_finite() const {
    for (double x : data)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

// Gradient arena shaped like a ModelParams.
struct Grads {
  std::shared_ptr<const Layout> layout;
  std::vector<double> data;

  explicit Grads(const ModelParams& p)
      : layout(p.layout), data(p.data.size(), 0.0) {}

  TensorView view(int id) {
    const TensorInfo& t = layout->tensors[id];
    return TensorView{data.data() + t.offset, t.rows, t.cols};
  }
  void zero() { std::fill(data.begin(), data.end(), 0.0); }
};

inline ModelParams init_params(const ModelConfig& cfg, int64_t seed) {
  cfg.validate();
  ModelParams p;
  p.config = cfg;
  p.layout = std::make_shared<Layout>(Layout::build(cfg));
  p.data.assign(p.layout->total, 0.0);
  Rng rng{uint64_t(seed)};
  for (const TensorInfo& t : p.layout->tensors) {
    double* dst = p.data.data() + t.offset;
    size_t n = size_t(t.rows) * size_t(t.cols);
    switch (t.init) {
      case InitKind::TruncNormal:
        for (size_t i = 0; i < n; ++i) dst[i] = rng.trunc_normal(0.02);
        break;
      case InitKind::Zero:
        break;
      case InitKind::One:
        for (size_t i = 0; i < n; ++i) dst[i] = 1.0;
        break;
      case InitKind::Copy:
        break;  // second pass
    }
  }
  for (const TensorInfo& t : p.layout->tensors) {
    if (t.init != InitKind::Copy) continue;
    const TensorInfo& src = p.layout->tensors[t.copy_of];
    std::copy(p.data.begin() + src.offset,
              p.data.begin() + src.offset + size_t(src.rows) * src.cols,
              p.data.begin() + t.offset);
  }
  return p;
}

inline ModelParams init_params(const ModelConfig& cfg) {
  return init_params(cfg, cfg.seed);
}

}  // namespace mote

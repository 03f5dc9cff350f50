#include "doctest.h"
#include "mote/checkpoint.hpp"
#include "mote/model.hpp"

using namespace mote;

namespace {

ModelConfig cfg_of(ArchMode mode) {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_dim = 16;
  cfg.num_heads = 4;
  cfg.ffn_dim = 32;
  cfg.vocab_size = 25;
  cfg.max_seq_len = 12;
  cfg.architecture_mode = mode;
  cfg.seed = 77;
  return cfg;
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact for every mode") {
  for (ArchMode mode : {ArchMode::MoTE, ArchMode::Siamese, ArchMode::FullSep}) {
    CAPTURE(int(mode));
    ModelParams p = init_params(cfg_of(mode), 42);
    std::string bytes = serialize_checkpoint(p);
    ModelParams loaded = deserialize_checkpoint(bytes);
    // The file round-trips exactly once values are float32-representable.
    CHECK(serialize_checkpoint(loaded) == bytes);
    ModelParams loaded2 = deserialize_checkpoint(serialize_checkpoint(loaded));
    CHECK(loaded2.data == loaded.data);
    CHECK(loaded.config.architecture_mode == mode);
    CHECK(loaded.config.seed == 77);
    // Loaded values are the float32 rounding of the originals.
    for (size_t i = 0; i < p.data.size(); ++i)
      CHECK(loaded.data[i] == double(float(p.data[i])));
  }
}

TEST_CASE("re-encoding after a checkpoint round-trip is bit-identical") {
  ModelParams p = init_params(cfg_of(ArchMode::MoTE), 1);
  ModelParams canonical = deserialize_checkpoint(serialize_checkpoint(p));
  TokenSequence t;
  t.kind = TextKind::Query;
  t.ids = {kClsId, 7, 9, 11, kSepId};
  Mat h1 = encode(canonical, t);
  ModelParams reloaded =
      deserialize_checkpoint(serialize_checkpoint(canonical));
  Mat h2 = encode(reloaded, t);
  CHECK(h1.v == h2.v);
}

TEST_CASE("swap_experts flag survives the round trip") {
  ModelConfig cfg = cfg_of(ArchMode::MoTE);
  cfg.swap_experts = true;
  ModelParams p = init_params(cfg, 2);
  ModelParams loaded = deserialize_checkpoint(serialize_checkpoint(p));
  CHECK(loaded.config.swap_experts);
}

TEST_CASE("checkpoint parsing rejects corrupt input") {
  ModelParams p = init_params(cfg_of(ArchMode::MoTE), 3);
  std::string bytes = serialize_checkpoint(p);
  CHECK_THROWS_AS(deserialize_checkpoint("JUNKJUNK" + bytes.substr(8)), ParseError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() / 2)), ParseError);
  std::string extra = bytes + "x";
  CHECK_THROWS_AS(deserialize_checkpoint(extra), ParseError);
}

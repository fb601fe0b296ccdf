#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fetilda/chunker.hpp"
#include "fetilda/numcore/ops.hpp"
#include "fetilda/rng.hpp"

namespace fetilda {

enum class PoolingStrategy { kDefaultPooler, kMeanPenultimate, kMaxPenultimate, kMeanLast4, kMaxLast4 };
enum class FreezeMode { kNone, kAll, kLastLayer };

PoolingStrategy parse_pooling(const std::string& s);
std::string to_string(PoolingStrategy p);
FreezeMode parse_freeze(const std::string& s);
std::string to_string(FreezeMode f);

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t model_dim = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t ff_dim = 128;
  std::size_t max_positions = 512;
  PoolingStrategy pooling = PoolingStrategy::kDefaultPooler;
  FreezeMode freeze = FreezeMode::kNone;
  double init_std = 0.02;

  void validate() const;
};

struct ChunkEmbedding {
  std::string doc_id;
  std::uint32_t index = 0;
  std::vector<double> vector;

  friend bool operator==(const ChunkEmbedding&, const ChunkEmbedding&) = default;
};

/// Output of one chunk: per-layer hidden states (rows = positions) and the
/// activated [CLS] projection.
struct EncoderOutput {
  std::vector<Var> hidden;
  Var pooler;
};

/// Post-norm transformer encoder with learned positions and a tanh pooler.
class Encoder {
 public:
  Encoder(EncoderConfig config, Rng& rng);

  const EncoderConfig& config() const { return config_; }

  /// Runs all positions of the chunk, or only its unpadded prefix when
  /// `valid_only` is set. Unpadded states are identical either way because
  /// padded keys receive -inf attention logits.
  EncoderOutput encode_chunk(Tape& tape, const Chunk& chunk, bool valid_only = false);

  /// encode_chunk followed by the configured pooling strategy; a 1 x D value.
  Var embed_chunk(Tape& tape, const Chunk& chunk);

  std::vector<Parameter*> parameters();
  /// Parameters of transformer layer `layer` (0-based).
  std::vector<Parameter*> layer_parameters(std::size_t layer);

 private:
  struct Layer {
    Parameter wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter ln1_gamma, ln1_beta;
    Parameter w1, b1, w2, b2;
    Parameter ln2_gamma, ln2_beta;
  };

  Var attention(Tape& tape, Layer& layer, Var x, std::size_t valid);

  EncoderConfig config_;
  Parameter token_embedding_;
  Parameter position_embedding_;
  Parameter emb_ln_gamma_, emb_ln_beta_;
  std::vector<Layer> layers_;
  Parameter pooler_w_, pooler_b_;
};

/// Reduces encoder output to one chunk vector. Mean/max run over the first
/// `valid_rows` positions only; last-4 strategies need at least four layers.
Var pool_chunk(std::span<const Var> hidden, Var pooler, PoolingStrategy strategy, std::size_t valid_rows);

/// Sets trainable flags on the encoder's parameters and returns the flags in
/// `parameters()` order. kLastLayer freezes only the top transformer layer.
std::vector<bool> apply_freeze(Encoder& encoder, FreezeMode mode);

/// Embeds every chunk without recording gradients; chunks run in parallel.
std::vector<ChunkEmbedding> embed_chunks(Encoder& encoder, std::span<const Chunk> chunks);

// Embedding file: 8-byte magic "FTLDEMBD", version byte, u32 D, u64 count,
// then per record u32 doc_id length, doc_id bytes, u32 chunk index and D
// f64 values. Little-endian throughout.
void save_embeddings(const std::filesystem::path& path, std::span<const ChunkEmbedding> embeddings);

/// Precomputed chunk vectors keyed by (doc_id, chunk index).
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  explicit EmbeddingStore(std::size_t dim) : dim_(dim) {}

  static EmbeddingStore load(const std::filesystem::path& path, std::size_t expected_dim);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }
  void insert(ChunkEmbedding e);
  const std::vector<double>& get(const std::string& doc_id, std::uint32_t index) const;
  /// The document's chunk vectors stacked as an m x D tensor.
  Tensor document(const std::string& doc_id, std::size_t chunk_count) const;
  std::vector<ChunkEmbedding> records() const;

 private:
  std::size_t dim_ = 0;
  std::map<std::pair<std::string, std::uint32_t>, std::vector<double>> vectors_;
};

EmbeddingStore load_frozen_embeddings(const std::filesystem::path& path, std::size_t expected_dim);

}  // namespace fetilda

#include "fetilda/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fetilda/binary_io.hpp"

namespace fetilda {

namespace {

Parameter normal_param(std::string name, Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.normal(0.0, stddev);
  return Parameter(std::move(name), std::move(t));
}

Parameter const_param(std::string name, std::size_t n, double value) {
  return Parameter(std::move(name), Tensor(Shape{1, n}, value));
}

constexpr char kEmbeddingMagic[8] = {'F', 'T', 'L', 'D', 'E', 'M', 'B', 'D'};
constexpr unsigned char kEmbeddingVersion = 1;

}  // namespace

PoolingStrategy parse_pooling(const std::string& s) {
  if (s == "default_pooler") return PoolingStrategy::kDefaultPooler;
  if (s == "mean_penultimate") return PoolingStrategy::kMeanPenultimate;
  if (s == "max_penultimate") return PoolingStrategy::kMaxPenultimate;
  if (s == "mean_last4") return PoolingStrategy::kMeanLast4;
  if (s == "max_last4") return PoolingStrategy::kMaxLast4;
  throw std::invalid_argument("unknown pooling strategy '" + s + "'");
}

std::string to_string(PoolingStrategy p) {
  switch (p) {
    case PoolingStrategy::kDefaultPooler: return "default_pooler";
    case PoolingStrategy::kMeanPenultimate: return "mean_penultimate";
    case PoolingStrategy::kMaxPenultimate: return "max_penultimate";
    case PoolingStrategy::kMeanLast4: return "mean_last4";
    case PoolingStrategy::kMaxLast4: return "max_last4";
  }
  return "?";
}

FreezeMode parse_freeze(const std::string& s) {
  if (s == "none") return FreezeMode::kNone;
  if (s == "all") return FreezeMode::kAll;
  if (s == "last_layer") return FreezeMode::kLastLayer;
  throw std::invalid_argument("unknown freeze mode '" + s + "'");
}

std::string to_string(FreezeMode f) {
  switch (f) {
    case FreezeMode::kNone: return "none";
    case FreezeMode::kAll: return "all";
    case FreezeMode::kLastLayer: return "last_layer";
  }
  return "?";
}

void EncoderConfig::validate() const {
  if (vocab_size < 4) throw std::invalid_argument("encoder: vocab_size must cover the special tokens");
  if (model_dim == 0 || num_layers == 0 || num_heads == 0 || ff_dim == 0 || max_positions == 0) {
    throw std::invalid_argument("encoder: dimensions must be positive");
  }
  if (model_dim % num_heads != 0) {
    throw std::invalid_argument("encoder: model_dim " + std::to_string(model_dim) + " not divisible by num_heads " +
                                std::to_string(num_heads));
  }
  if ((pooling == PoolingStrategy::kMeanLast4 || pooling == PoolingStrategy::kMaxLast4) && num_layers < 4) {
    throw std::invalid_argument("encoder: " + to_string(pooling) + " needs at least 4 layers");
  }
  if ((pooling == PoolingStrategy::kMeanPenultimate || pooling == PoolingStrategy::kMaxPenultimate) &&
      num_layers < 2) {
    throw std::invalid_argument("encoder: " + to_string(pooling) + " needs at least 2 layers");
  }
}

Encoder::Encoder(EncoderConfig config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t d = config_.model_dim, f = config_.ff_dim;
  const double s = config_.init_std;
  token_embedding_ = normal_param("encoder.token_embedding", {config_.vocab_size, d}, s, rng);
  position_embedding_ = normal_param("encoder.position_embedding", {config_.max_positions, d}, s, rng);
  emb_ln_gamma_ = const_param("encoder.embedding_ln.gamma", d, 1.0);
  emb_ln_beta_ = const_param("encoder.embedding_ln.beta", d, 0.0);
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const std::string p = "encoder.layer" + std::to_string(l) + ".";
    layers_.push_back(Layer{
        normal_param(p + "wq", {d, d}, s, rng), const_param(p + "bq", d, 0.0),
        normal_param(p + "wk", {d, d}, s, rng), const_param(p + "bk", d, 0.0),
        normal_param(p + "wv", {d, d}, s, rng), const_param(p + "bv", d, 0.0),
        normal_param(p + "wo", {d, d}, s, rng), const_param(p + "bo", d, 0.0),
        const_param(p + "ln1.gamma", d, 1.0), const_param(p + "ln1.beta", d, 0.0),
        normal_param(p + "w1", {d, f}, s, rng), const_param(p + "b1", f, 0.0),
        normal_param(p + "w2", {f, d}, s, rng), const_param(p + "b2", d, 0.0),
        const_param(p + "ln2.gamma", d, 1.0), const_param(p + "ln2.beta", d, 0.0),
    });
  }
  pooler_w_ = normal_param("encoder.pooler.w", {d, d}, s, rng);
  pooler_b_ = const_param("encoder.pooler.b", d, 0.0);
  apply_freeze(*this, config_.freeze);
}

std::vector<Parameter*> Encoder::layer_parameters(std::size_t l) {
  Layer& y = layers_.at(l);
  return {&y.wq, &y.bq, &y.wk, &y.bk, &y.wv, &y.bv, &y.wo, &y.bo,
          &y.ln1_gamma, &y.ln1_beta, &y.w1, &y.b1, &y.w2, &y.b2, &y.ln2_gamma, &y.ln2_beta};
}

std::vector<Parameter*> Encoder::parameters() {
  std::vector<Parameter*> out{&token_embedding_, &position_embedding_, &emb_ln_gamma_, &emb_ln_beta_};
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto lp = layer_parameters(l);
    out.insert(out.end(), lp.begin(), lp.end());
  }
  out.push_back(&pooler_w_);
  out.push_back(&pooler_b_);
  return out;
}

Var Encoder::attention(Tape& tape, Layer& layer, Var x, std::size_t valid) {
  const std::size_t n = x.rows();
  const std::size_t heads = config_.num_heads;
  const std::size_t dh = config_.model_dim / heads;
  Var q = ops::add(ops::matmul(x, tape.param(layer.wq)), tape.param(layer.bq));
  Var k = ops::add(ops::matmul(x, tape.param(layer.wk)), tape.param(layer.bk));
  Var v = ops::add(ops::matmul(x, tape.param(layer.wv)), tape.param(layer.bv));

  Var mask;
  if (valid < n) {
    Tensor bias(Shape{n, n}, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = valid; j < n; ++j) bias.at(i, j) = -std::numeric_limits<double>::infinity();
    }
    mask = tape.constant(std::move(bias));
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> contexts;
  contexts.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? q : ops::slice_cols(q, h * dh, dh);
    Var kh = heads == 1 ? k : ops::slice_cols(k, h * dh, dh);
    Var vh = heads == 1 ? v : ops::slice_cols(v, h * dh, dh);
    Var scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt);
    if (valid < n) scores = ops::add(scores, mask);
    contexts.push_back(ops::matmul(ops::softmax(scores, 1), vh));
  }
  Var ctx = heads == 1 ? contexts.front() : ops::concat(contexts, 1);
  return ops::add(ops::matmul(ctx, tape.param(layer.wo)), tape.param(layer.bo));
}

EncoderOutput Encoder::encode_chunk(Tape& tape, const Chunk& chunk, bool valid_only) {
  const std::size_t len = chunk.ids.size();
  if (len == 0) throw std::invalid_argument("encode_chunk: empty chunk");
  if (len > config_.max_positions) {
    throw std::invalid_argument("encode_chunk: chunk length " + std::to_string(len) + " exceeds max_positions " +
                                std::to_string(config_.max_positions));
  }
  if (chunk.mask.size() != len) throw std::invalid_argument("encode_chunk: mask length differs from ids");
  const std::size_t valid = chunk.valid_length();
  if (valid == 0) throw std::invalid_argument("encode_chunk: chunk has no unmasked position");
  const std::size_t rows = valid_only ? valid : len;

  std::vector<int> positions(rows);
  std::iota(positions.begin(), positions.end(), 0);
  Var x = ops::add(ops::embedding(tape, token_embedding_, std::span<const int>(chunk.ids.data(), rows)),
                   ops::embedding(tape, position_embedding_, positions));
  x = ops::layer_norm(x, tape.param(emb_ln_gamma_), tape.param(emb_ln_beta_));

  EncoderOutput out;
  for (Layer& layer : layers_) {
    Var a = attention(tape, layer, x, valid);
    x = ops::layer_norm(ops::add(x, a), tape.param(layer.ln1_gamma), tape.param(layer.ln1_beta));
    Var h = ops::gelu(ops::add(ops::matmul(x, tape.param(layer.w1)), tape.param(layer.b1)));
    h = ops::add(ops::matmul(h, tape.param(layer.w2)), tape.param(layer.b2));
    x = ops::layer_norm(ops::add(x, h), tape.param(layer.ln2_gamma), tape.param(layer.ln2_beta));
    out.hidden.push_back(x);
  }
  Var cls = ops::slice_rows(x, 0, 1);
  out.pooler = ops::tanh(ops::add(ops::matmul(cls, tape.param(pooler_w_)), tape.param(pooler_b_)));
  return out;
}

Var Encoder::embed_chunk(Tape& tape, const Chunk& chunk) {
  const std::size_t valid = chunk.valid_length();
  EncoderOutput out = encode_chunk(tape, chunk, true);
  return pool_chunk(out.hidden, out.pooler, config_.pooling, valid);
}

Var pool_chunk(std::span<const Var> hidden, Var pooler, PoolingStrategy strategy, std::size_t valid_rows) {
  const std::size_t layers = hidden.size();
  auto reduce = [valid_rows](Var h, bool use_max) {
    Var v = valid_rows < h.rows() ? ops::slice_rows(h, 0, valid_rows) : h;
    return use_max ? ops::max(v, 0) : ops::mean(v, 0);
  };
  switch (strategy) {
    case PoolingStrategy::kDefaultPooler:
      return pooler;
    case PoolingStrategy::kMeanPenultimate:
    case PoolingStrategy::kMaxPenultimate: {
      if (layers < 2) throw std::invalid_argument("pool_chunk: penultimate pooling needs >= 2 layers");
      return ops::tanh(reduce(hidden[layers - 2], strategy == PoolingStrategy::kMaxPenultimate));
    }
    case PoolingStrategy::kMeanLast4:
    case PoolingStrategy::kMaxLast4: {
      if (layers < 4) {
        throw std::invalid_argument("pool_chunk: " + to_string(strategy) + " needs >= 4 layers, got " +
                                    std::to_string(layers));
      }
      const bool use_max = strategy == PoolingStrategy::kMaxLast4;
      std::vector<Var> per_layer;
      for (std::size_t l = layers - 4; l < layers; ++l) per_layer.push_back(reduce(hidden[l], use_max));
      Var stacked = ops::concat(per_layer, 0);
      return ops::tanh(use_max ? ops::max(stacked, 0) : ops::mean(stacked, 0));
    }
  }
  throw std::invalid_argument("pool_chunk: unknown strategy");
}

std::vector<bool> apply_freeze(Encoder& encoder, FreezeMode mode) {
  auto all = encoder.parameters();
  std::vector<Parameter*> top;
  if (mode == FreezeMode::kLastLayer) top = encoder.layer_parameters(encoder.config().num_layers - 1);
  std::vector<bool> mask;
  for (Parameter* p : all) {
    bool trainable = true;
    if (mode == FreezeMode::kAll) {
      trainable = false;
    } else if (mode == FreezeMode::kLastLayer) {
      trainable = std::find(top.begin(), top.end(), p) == top.end();
    }
    p->trainable = trainable;
    mask.push_back(trainable);
  }
  return mask;
}

std::vector<ChunkEmbedding> embed_chunks(Encoder& encoder, std::span<const Chunk> chunks) {
  std::vector<ChunkEmbedding> out(chunks.size());
  const auto n = static_cast<std::int64_t>(chunks.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    const Chunk& c = chunks[static_cast<std::size_t>(i)];
    Tape tape(false);
    const Tensor& v = encoder.embed_chunk(tape, c).value();
    out[static_cast<std::size_t>(i)] =
        ChunkEmbedding{c.doc_id, static_cast<std::uint32_t>(c.index), std::vector<double>(v.data().begin(), v.data().end())};
  }
  return out;
}

void save_embeddings(const std::filesystem::path& path, std::span<const ChunkEmbedding> embeddings) {
  const std::size_t dim = embeddings.empty() ? 0 : embeddings.front().vector.size();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write embedding file: " + path.string());
  os.write(kEmbeddingMagic, sizeof(kEmbeddingMagic));
  os.put(static_cast<char>(kEmbeddingVersion));
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(dim));
  binio::write_le<std::uint64_t>(os, embeddings.size());
  for (const auto& e : embeddings) {
    if (e.vector.size() != dim) throw std::invalid_argument("save_embeddings: inconsistent vector width");
    binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.doc_id.size()));
    os.write(e.doc_id.data(), static_cast<std::streamsize>(e.doc_id.size()));
    binio::write_le<std::uint32_t>(os, e.index);
    for (double v : e.vector) binio::write_f64(os, v);
  }
  if (!os) throw std::runtime_error("failed writing embedding file: " + path.string());
}

void EmbeddingStore::insert(ChunkEmbedding e) {
  if (e.vector.size() != dim_) {
    throw std::invalid_argument("embedding dimension " + std::to_string(e.vector.size()) + " does not match " +
                                std::to_string(dim_));
  }
  vectors_[{std::move(e.doc_id), e.index}] = std::move(e.vector);
}

const std::vector<double>& EmbeddingStore::get(const std::string& doc_id, std::uint32_t index) const {
  auto it = vectors_.find({doc_id, index});
  if (it == vectors_.end()) {
    throw std::out_of_range("missing chunk embedding (" + doc_id + ", " + std::to_string(index) + ")");
  }
  return it->second;
}

Tensor EmbeddingStore::document(const std::string& doc_id, std::size_t chunk_count) const {
  if (chunk_count == 0) throw std::invalid_argument("document: zero chunks for " + doc_id);
  Tensor t(Shape{chunk_count, dim_});
  for (std::size_t c = 0; c < chunk_count; ++c) {
    const auto& v = get(doc_id, static_cast<std::uint32_t>(c));
    std::copy(v.begin(), v.end(), t.data().begin() + static_cast<std::ptrdiff_t>(c * dim_));
  }
  return t;
}

std::vector<ChunkEmbedding> EmbeddingStore::records() const {
  std::vector<ChunkEmbedding> out;
  for (const auto& [key, v] : vectors_) out.push_back({key.first, key.second, v});
  return out;
}

EmbeddingStore EmbeddingStore::load(const std::filesystem::path& path, std::size_t expected_dim) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open embedding file: " + path.string());
  char magic[sizeof(kEmbeddingMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kEmbeddingMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not an embedding file (bad magic): " + path.string());
  }
  if (is.get() != kEmbeddingVersion) throw std::runtime_error("unsupported embedding file version");
  const auto dim = binio::read_le<std::uint32_t>(is, "dimension");
  if (expected_dim != 0 && dim != expected_dim) {
    throw std::invalid_argument("embedding file has dimension " + std::to_string(dim) + ", configuration expects " +
                                std::to_string(expected_dim));
  }
  const auto count = binio::read_le<std::uint64_t>(is, "record count");
  EmbeddingStore store(dim);
  for (std::uint64_t r = 0; r < count; ++r) {
    ChunkEmbedding e;
    const auto len = binio::read_le<std::uint32_t>(is, "doc_id length");
    e.doc_id.resize(len);
    if (!is.read(e.doc_id.data(), len)) throw std::runtime_error("truncated embedding file (doc_id)");
    e.index = binio::read_le<std::uint32_t>(is, "chunk index");
    e.vector.resize(dim);
    for (auto& v : e.vector) v = binio::read_f64(is, "embedding values");
    store.insert(std::move(e));
  }
  return store;
}

EmbeddingStore load_frozen_embeddings(const std::filesystem::path& path, std::size_t expected_dim) {
  return EmbeddingStore::load(path, expected_dim);
}

}  // namespace fetilda

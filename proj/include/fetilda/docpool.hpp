#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fetilda/numcore/ops.hpp"
#include "fetilda/rng.hpp"

namespace fetilda {

struct DocPoolConfig {
  std::size_t input_dim = 64;
  std::size_t hidden_dim = 32;
  /// Divide the attention-weighted sum by the chunk count (the published form).
  bool normalize_by_chunks = true;
};

/// One direction of the recurrence. Gate blocks are ordered input, forget,
/// cell, output along the 4H columns.
struct LstmParams {
  Parameter w_input;   // D x 4H
  Parameter w_hidden;  // H x 4H
  Parameter bias;      // 1 x 4H
};

struct BiLstmOutput {
  Var outputs;       // m x 2H, row i = forward_i (+) backward_i
  Var final_hidden;  // 1 x 2H, forward at step m (+) backward at step 1
};

struct AttentionPoolResult {
  Var document;   // 1 x D
  Var attention;  // m x 1
};

/// Finished pooling result for a document, detached from any tape.
struct DocEmbedding {
  std::string doc_id;
  std::vector<double> vector;
  std::vector<double> attention;
};

/// alpha = softmax_j(o_j . h); d = sum_j alpha_j c_j, divided by m when
/// `normalize_by_chunks` is set.
AttentionPoolResult attention_pool(Var chunk_vectors, Var outputs, Var context, bool normalize_by_chunks);

/// Bi-LSTM over chunk embeddings followed by chunk-level attention.
class DocPool {
 public:
  DocPool(DocPoolConfig config, Rng& rng);

  const DocPoolConfig& config() const { return config_; }

  /// `chunks` is m x D with m >= 1.
  BiLstmOutput bilstm_forward(Tape& tape, Var chunks);
  AttentionPoolResult pool_document(Tape& tape, Var chunks);

  std::vector<Parameter*> parameters();
  LstmParams& forward_params() { return forward_; }
  LstmParams& backward_params() { return backward_; }
  /// Exchanges the two directions' weights.
  void swap_directions();

 private:
  std::vector<Var> run_direction(Tape& tape, LstmParams& p, Var chunks, bool reverse);

  DocPoolConfig config_;
  LstmParams forward_;
  LstmParams backward_;
};

DocEmbedding detach(const std::string& doc_id, const AttentionPoolResult& r);

/// Rows of `doc_id,chunk_index,alpha`.
void write_attention_dump(const std::filesystem::path& path, const std::vector<DocEmbedding>& docs);

}  // namespace fetilda

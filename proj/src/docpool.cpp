#include "fetilda/docpool.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace fetilda {

namespace {

Parameter uniform_param(std::string name, Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return Parameter(std::move(name), std::move(t));
}

LstmParams make_lstm(const std::string& prefix, std::size_t d, std::size_t h, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  return LstmParams{uniform_param(prefix + ".w_input", {d, 4 * h}, bound, rng),
                    uniform_param(prefix + ".w_hidden", {h, 4 * h}, bound, rng),
                    uniform_param(prefix + ".bias", {1, 4 * h}, bound, rng)};
}

}  // namespace

DocPool::DocPool(DocPoolConfig config, Rng& rng) : config_(config) {
  if (config_.input_dim == 0 || config_.hidden_dim == 0) throw std::invalid_argument("docpool: zero dimension");
  forward_ = make_lstm("docpool.forward", config_.input_dim, config_.hidden_dim, rng);
  backward_ = make_lstm("docpool.backward", config_.input_dim, config_.hidden_dim, rng);
}

std::vector<Parameter*> DocPool::parameters() {
  return {&forward_.w_input, &forward_.w_hidden, &forward_.bias,
          &backward_.w_input, &backward_.w_hidden, &backward_.bias};
}

void DocPool::swap_directions() {
  std::swap(forward_.w_input.value, backward_.w_input.value);
  std::swap(forward_.w_hidden.value, backward_.w_hidden.value);
  std::swap(forward_.bias.value, backward_.bias.value);
}

std::vector<Var> DocPool::run_direction(Tape& tape, LstmParams& p, Var chunks, bool reverse) {
  const std::size_t m = chunks.rows();
  const std::size_t h = config_.hidden_dim;
  // Input projections for every step at once; recurrent part per step.
  Var projected = ops::add(ops::matmul(chunks, tape.param(p.w_input)), tape.param(p.bias));
  Var w_hidden = tape.param(p.w_hidden);
  std::vector<Var> states(m);
  Var hidden, cell;
  for (std::size_t step = 0; step < m; ++step) {
    const std::size_t t = reverse ? m - 1 - step : step;
    Var z = ops::slice_rows(projected, t, 1);
    if (step > 0) z = ops::add(z, ops::matmul(hidden, w_hidden));
    Var in_gate = ops::sigmoid(ops::slice_cols(z, 0, h));
    Var forget_gate = ops::sigmoid(ops::slice_cols(z, h, h));
    Var candidate = ops::tanh(ops::slice_cols(z, 2 * h, h));
    Var out_gate = ops::sigmoid(ops::slice_cols(z, 3 * h, h));
    Var fresh = ops::mul(in_gate, candidate);
    cell = step > 0 ? ops::add(ops::mul(forget_gate, cell), fresh) : fresh;
    hidden = ops::mul(out_gate, ops::tanh(cell));
    states[t] = hidden;
  }
  return states;
}

BiLstmOutput DocPool::bilstm_forward(Tape& tape, Var chunks) {
  const std::size_t m = chunks.rows();
  if (m == 0) throw std::invalid_argument("bilstm_forward: empty chunk sequence");
  if (chunks.cols() != config_.input_dim) {
    throw ShapeError("bilstm_forward: chunk width " + std::to_string(chunks.cols()) + " vs input_dim " +
                     std::to_string(config_.input_dim));
  }
  const auto fwd = run_direction(tape, forward_, chunks, false);
  const auto bwd = run_direction(tape, backward_, chunks, true);
  std::vector<Var> rows;
  rows.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<Var> pair{fwd[i], bwd[i]};
    rows.push_back(ops::concat(pair, 1));
  }
  BiLstmOutput out;
  out.outputs = m == 1 ? rows.front() : ops::concat(rows, 0);
  std::vector<Var> last{fwd[m - 1], bwd[0]};
  out.final_hidden = ops::concat(last, 1);
  return out;
}

AttentionPoolResult attention_pool(Var chunk_vectors, Var outputs, Var context, bool normalize_by_chunks) {
  const std::size_t m = chunk_vectors.rows();
  if (outputs.rows() != m) {
    throw ShapeError("attention_pool: " + std::to_string(outputs.rows()) + " outputs for " + std::to_string(m) +
                     " chunks");
  }
  if (context.rows() != 1 || context.cols() != outputs.cols()) {
    throw ShapeError("attention_pool: context " + shape_str(context.shape()) + " vs outputs " +
                     shape_str(outputs.shape()));
  }
  Var scores = ops::matmul(outputs, ops::transpose(context));  // m x 1
  Var alpha = ops::softmax(scores, 0);
  Var doc = ops::matmul(ops::transpose(alpha), chunk_vectors);  // 1 x D
  if (normalize_by_chunks && m > 1) doc = ops::scale(doc, 1.0 / static_cast<double>(m));
  return {doc, alpha};
}

AttentionPoolResult DocPool::pool_document(Tape& tape, Var chunks) {
  BiLstmOutput lstm = bilstm_forward(tape, chunks);
  return attention_pool(chunks, lstm.outputs, lstm.final_hidden, config_.normalize_by_chunks);
}

DocEmbedding detach(const std::string& doc_id, const AttentionPoolResult& r) {
  const auto d = r.document.value().data();
  const auto a = r.attention.value().data();
  return {doc_id, std::vector<double>(d.begin(), d.end()), std::vector<double>(a.begin(), a.end())};
}

void write_attention_dump(const std::filesystem::path& path, const std::vector<DocEmbedding>& docs) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write attention dump: " + path.string());
  os << "doc_id,chunk_index,alpha\n" << std::setprecision(17);
  for (const auto& d : docs) {
    for (std::size_t j = 0; j < d.attention.size(); ++j) os << d.doc_id << ',' << j << ',' << d.attention[j] << '\n';
  }
}

}  // namespace fetilda

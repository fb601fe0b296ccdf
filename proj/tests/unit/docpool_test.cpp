#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "fetilda/docpool.hpp"
#include "fetilda/numcore/gradcheck.hpp"

using namespace fetilda;

namespace {

using Vec = std::vector<double>;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Plain-loop LSTM over rows of x; returns per-step hidden states in input order.
std::vector<Vec> lstm_reference(const LstmParams& p, const std::vector<Vec>& x, bool reverse) {
  const std::size_t h = p.w_hidden.value.rows();
  const std::size_t d = p.w_input.value.rows();
  const std::size_t m = x.size();
  std::vector<Vec> out(m);
  Vec hidden(h, 0.0), cell(h, 0.0);
  for (std::size_t s = 0; s < m; ++s) {
    const std::size_t t = reverse ? m - 1 - s : s;
    Vec z(4 * h);
    for (std::size_t g = 0; g < 4 * h; ++g) {
      double acc = p.bias.value[g];
      for (std::size_t i = 0; i < d; ++i) acc += x[t][i] * p.w_input.value.at(i, g);
      for (std::size_t i = 0; i < h; ++i) acc += hidden[i] * p.w_hidden.value.at(i, g);
      z[g] = acc;
    }
    for (std::size_t k = 0; k < h; ++k) {
      const double ig = sigmoid(z[k]), fg = sigmoid(z[h + k]), cg = std::tanh(z[2 * h + k]), og = sigmoid(z[3 * h + k]);
      cell[k] = fg * cell[k] + ig * cg;
      hidden[k] = og * std::tanh(cell[k]);
    }
    out[t] = hidden;
  }
  return out;
}

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Tensor t(Shape{r, c});
  for (auto& v : t.data()) v = rng.normal(0.0, scale);
  return t;
}

double norm(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST(BiLstm, MatchesReferenceRecurrence) {
  Rng rng(21);
  DocPool pool({4, 2, true}, rng);
  const Tensor chunks = random_matrix(rng, 3, 4);
  Tape tape(false);
  const auto out = pool.bilstm_forward(tape, tape.constant(chunks));

  std::vector<Vec> x(3, Vec(4));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) x[i][j] = chunks.at(i, j);
  }
  const auto fwd = lstm_reference(pool.forward_params(), x, false);
  const auto bwd = lstm_reference(pool.backward_params(), x, true);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 2; ++k) {
      EXPECT_NEAR(out.outputs.value().at(i, k), fwd[i][k], 1e-10);
      EXPECT_NEAR(out.outputs.value().at(i, 2 + k), bwd[i][k], 1e-10);
    }
  }
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_NEAR(out.final_hidden.value().at(0, k), fwd[2][k], 1e-10);
    EXPECT_NEAR(out.final_hidden.value().at(0, 2 + k), bwd[0][k], 1e-10);
  }
}

TEST(BiLstm, ZeroWeightsGiveZeroOutputsAndEmptyInputThrows) {
  Rng rng(1);
  DocPool pool({3, 2, true}, rng);
  for (Parameter* p : pool.parameters()) p->value.fill(0.0);
  Tape tape(false);
  const auto out = pool.bilstm_forward(tape, tape.constant(random_matrix(rng, 4, 3)));
  for (double v : out.outputs.value().data()) EXPECT_EQ(v, 0.0);
  for (double v : out.final_hidden.value().data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(pool.bilstm_forward(tape, tape.constant(Tensor(Shape{0, 3}))), std::invalid_argument);
  EXPECT_THROW(pool.bilstm_forward(tape, tape.constant(Tensor(Shape{2, 5}))), ShapeError);
}

TEST(AttentionPool, HandFixedThreeChunks) {
  Tape tape(false);
  const Tensor c = Tensor::matrix({{1.0, 0.0}, {0.0, 2.0}, {-1.0, 1.0}});
  const Tensor o = Tensor::matrix({{0.5, 0.1}, {-0.2, 0.3}, {0.0, 0.4}});
  const Tensor h = Tensor::matrix({{1.0, 2.0}});
  const auto r = attention_pool(tape.constant(c), tape.constant(o), tape.constant(h), true);
  // s = [0.7, 0.4, 0.8]
  const double e0 = std::exp(0.7), e1 = std::exp(0.4), e2 = std::exp(0.8), z = e0 + e1 + e2;
  const double a[3] = {e0 / z, e1 / z, e2 / z};
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(r.attention.value()[j], a[j], 1e-12);
  EXPECT_NEAR(r.document.value()[0], (a[0] - a[2]) / 3.0, 1e-12);
  EXPECT_NEAR(r.document.value()[1], (2.0 * a[1] + a[2]) / 3.0, 1e-12);

  const auto raw = attention_pool(tape.constant(c), tape.constant(o), tape.constant(h), false);
  EXPECT_NEAR(raw.document.value()[0], a[0] - a[2], 1e-12);
}

TEST(AttentionPool, IdenticalChunksGiveUniformWeights) {
  Tape tape(false);
  const Tensor c = Tensor::matrix({{0.3, -0.6}, {0.3, -0.6}, {0.3, -0.6}, {0.3, -0.6}});
  const Tensor o = Tensor::matrix({{1, 2}, {1, 2}, {1, 2}, {1, 2}});
  const auto r = attention_pool(tape.constant(c), tape.constant(o), tape.constant(Tensor::matrix({{0.5, 0.5}})), true);
  for (double a : r.attention.value().data()) EXPECT_DOUBLE_EQ(a, 0.25);
  EXPECT_NEAR(r.document.value()[0], 0.3 / 4, 1e-15);
  EXPECT_NEAR(r.document.value()[1], -0.6 / 4, 1e-15);
}

TEST(AttentionPool, ScoreShiftInvariance) {
  Rng rng(5);
  Tape tape(false);
  const Tensor c = random_matrix(rng, 5, 3);
  const Tensor o = random_matrix(rng, 5, 4);
  const Tensor h = random_matrix(rng, 1, 4);
  // append a constant column to o and h: every score moves by the same gamma
  Tensor o2(Shape{5, 5}), h2(Shape{1, 5});
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 4; ++j) o2.at(i, j) = o.at(i, j);
    o2.at(i, 4) = 1.0;
  }
  for (std::size_t j = 0; j < 4; ++j) h2.at(0, j) = h.at(0, j);
  h2.at(0, 4) = 37.0;
  const auto a = attention_pool(tape.constant(c), tape.constant(o), tape.constant(h), true);
  const auto b = attention_pool(tape.constant(c), tape.constant(o2), tape.constant(h2), true);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(a.attention.value()[j], b.attention.value()[j], 1e-15);
}

TEST(DocPool, SingleChunkReturnsChunk) {
  Rng rng(2);
  DocPool pool({6, 3, true}, rng);
  Tape tape(false);
  const Tensor c = random_matrix(rng, 1, 6);
  const auto r = pool.pool_document(tape, tape.constant(c));
  EXPECT_EQ(r.attention.value().item(), 1.0);
  EXPECT_EQ(r.document.value(), c);
}

TEST(DocPool, SimplexAndNormBoundOnRandomDocuments) {
  Rng rng(3);
  DocPool pool({8, 4, true}, rng);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng.below(16);
    const Tensor c = random_matrix(rng, m, 8, 2.0);
    Tape tape(false);
    const auto r = pool.pool_document(tape, tape.constant(c));
    double sum = 0;
    for (double a : r.attention.value().data()) {
      EXPECT_GE(a, 0.0);
      sum += a;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
    double max_norm = 0;
    for (std::size_t j = 0; j < m; ++j) max_norm = std::max(max_norm, norm(c.data().subspan(j * 8, 8)));
    EXPECT_LE(norm(r.document.value().data()), max_norm + 1e-9);
  }
}

TEST(DocPool, ReversingSequenceAndSwappingDirectionsIsSymmetric) {
  Rng rng(4);
  DocPool pool({5, 3, true}, rng);
  const Tensor c = random_matrix(rng, 6, 5);
  Tensor reversed(Shape{6, 5});
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 5; ++j) reversed.at(i, j) = c.at(5 - i, j);
  }
  Tape t1(false), t2(false);
  const Tensor d1 = pool.pool_document(t1, t1.constant(c)).document.value();
  pool.swap_directions();
  const Tensor d2 = pool.pool_document(t2, t2.constant(reversed)).document.value();
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(d1[j], d2[j], 1e-9);
}

TEST(DocPool, GradientCheck) {
  Rng rng(6);
  DocPool pool({5, 3, true}, rng);
  const Tensor c = random_matrix(rng, 4, 5);
  const Tensor target = random_matrix(rng, 1, 5);
  Parameter chunks("chunks", c);
  auto params = pool.parameters();
  params.push_back(&chunks);
  const auto report = grad_check(
      params,
      [&](Tape& t) { return ops::mse(pool.pool_document(t, t.param(chunks)).document, t.constant(target)); },
      1e-4);
  for (const auto& e : report.entries) EXPECT_LT(e.max_rel_error, 1e-4) << e.name;
}

TEST(DocPool, AttentionDumpWritesOneRowPerChunk) {
  const auto path = std::filesystem::temp_directory_path() / "fetilda_attention.csv";
  write_attention_dump(path, {{"a", {1.0}, {0.25, 0.75}}, {"b", {1.0}, {1.0}}});
  std::ifstream is(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "doc_id,chunk_index,alpha");
  EXPECT_EQ(lines[2], "a,1,0.75");
  std::filesystem::remove(path);
}

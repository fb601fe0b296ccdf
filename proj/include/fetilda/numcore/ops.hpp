#pragma once

#include <span>
#include <vector>

#include "fetilda/numcore/tape.hpp"
#include "fetilda/rng.hpp"

// Differentiable primitives on 2-D values. Every op records itself on the
// tape of its first argument; all arguments must live on the same tape.
// Shape mismatches throw ShapeError naming both shapes.

namespace fetilda::ops {

Var matmul(Var a, Var b);
/// Elementwise sum; `b` may also be a single row broadcast over the rows of `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product; `b` may also be a single row broadcast over the rows of `a`.
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var transpose(Var a);

Var tanh(Var a);
Var sigmoid(Var a);
Var leaky_relu(Var a, double slope = 0.01);
/// tanh approximation of GELU.
Var gelu(Var a);

/// Softmax along `axis` (1: within each row, 0: within each column).
Var softmax(Var a, int axis = 1);
/// Reductions along `axis`; the reduced axis keeps extent 1.
Var mean(Var a, int axis);
Var max(Var a, int axis);
Var sum(Var a);

/// axis 0 stacks rows, axis 1 joins columns.
Var concat(std::span<const Var> parts, int axis);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);

/// Inverted dropout: in train mode kept entries are scaled by 1/(1-p);
/// in eval mode this is the identity and records nothing new.
Var dropout(Var a, double p, bool train, Rng& rng);

/// Per-row normalisation followed by gamma/beta (each 1 x cols).
Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5);

/// Gathers rows `ids` of `table`; backward scatters straight into `table.grad`.
Var embedding(Tape& tape, Parameter& table, std::span<const int> ids);

/// Mean squared error between equally shaped values, as a 1x1 value.
Var mse(Var pred, Var target);

}  // namespace fetilda::ops

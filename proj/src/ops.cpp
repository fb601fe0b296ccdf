#include "fetilda/numcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "fetilda/kernels/kernels.hpp"

namespace fetilda::ops {

namespace {

Shape mat(std::size_t r, std::size_t c) { return Shape{r, c}; }

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
}

void same_tape(const char* op, Var a, Var b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

enum class Broadcast { kSame, kRow };

Broadcast binary_layout(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kSame;
  if (b.rows() == 1 && a.cols() == b.cols()) return Broadcast::kRow;
  mismatch(op, a, b);
}

template <typename F>
Var unary(Var a, F&& f, Tape::BackwardFn back) {
  const Tensor& x = a.value();
  Tensor y(mat(x.rows(), x.cols()));
  auto xs = x.data();
  auto ys = y.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = f(xs[i]);
  return a.tape().push(std::move(y), {a.id()}, std::move(back));
}

}  // namespace

Var matmul(Var a, Var b) {
  same_tape("matmul", a, b);
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  if (x.cols() != w.rows()) mismatch("matmul", x, w);
  const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
  Tensor y(mat(m, n));
  kernels::matmul(x.data(), w.data(), y.data(), m, k, n);
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(std::move(y), {ia, ib}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_for(ia)) {
      kernels::matmul_nt(g.data(), t.value(ib).data(), ga->data(), m, n, k, true);
    }
    if (Tensor* gb = t.grad_for(ib)) {
      kernels::matmul_tn(t.value(ia).data(), g.data(), gb->data(), k, m, n, true);
    }
  });
}

Var add(Var a, Var b) {
  same_tape("add", a, b);
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  const Broadcast layout = binary_layout("add", x, z);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor y(mat(r, c));
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      y.at(i, j) = x.at(i, j) + (layout == Broadcast::kSame ? z.at(i, j) : z[j]);
    }
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(std::move(y), {ia, ib}, [ia, ib, layout, r, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_for(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = t.grad_for(ib)) {
      if (layout == Broadcast::kSame) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
      } else {
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) (*gb)[j] += g.at(i, j);
        }
      }
    }
  });
}

Var sub(Var a, Var b) {
  same_tape("sub", a, b);
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  if (x.rows() != z.rows() || x.cols() != z.cols()) mismatch("sub", x, z);
  Tensor y(mat(x.rows(), x.cols()));
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] - z[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(std::move(y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_for(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = t.grad_for(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  same_tape("mul", a, b);
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  const Broadcast layout = binary_layout("mul", x, z);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor y(mat(r, c));
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      y.at(i, j) = x.at(i, j) * (layout == Broadcast::kSame ? z.at(i, j) : z[j]);
    }
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(std::move(y), {ia, ib}, [ia, ib, layout, r, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ia);
    const Tensor& z = t.value(ib);
    if (Tensor* ga = t.grad_for(ia)) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          ga->at(i, j) += g.at(i, j) * (layout == Broadcast::kSame ? z.at(i, j) : z[j]);
        }
      }
    }
    if (Tensor* gb = t.grad_for(ib)) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const double v = g.at(i, j) * x.at(i, j);
          if (layout == Broadcast::kSame) {
            gb->at(i, j) += v;
          } else {
            (*gb)[j] += v;
          }
        }
      }
    }
  });
}

Var scale(Var a, double s) {
  const auto ia = a.id();
  return unary(a, [s](double v) { return v * s; }, [ia, s](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_for(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
    }
  });
}

Var transpose(Var a) {
  const Tensor& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  Tensor y(mat(c, r));
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) y.at(j, i) = x.at(i, j);
  }
  const auto ia = a.id();
  return a.tape().push(std::move(y), {ia}, [ia, r, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_for(ia)) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) ga->at(i, j) += g.at(j, i);
      }
    }
  });
}

Var tanh(Var a) {
  const auto ia = a.id();
  return unary(a, [](double v) { return std::tanh(v); }, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    if (Tensor* ga = t.grad_for(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (1.0 - y[i] * y[i]);
    }
  });
}

Var sigmoid(Var a) {
  const auto ia = a.id();
  auto f = [](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary(a, f, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    if (Tensor* ga = t.grad_for(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[i] * (1.0 - y[i]);
    }
  });
}

Var leaky_relu(Var a, double slope) {
  const auto ia = a.id();
  return unary(a, [slope](double v) { return v >= 0.0 ? v : slope * v; },
               [ia, slope](Tape& t, std::size_t self) {
                 const Tensor& g = t.grad(self);
                 const Tensor& x = t.value(ia);
                 if (Tensor* ga = t.grad_for(ia)) {
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     (*ga)[i] += g[i] * (x[i] >= 0.0 ? 1.0 : slope);
                   }
                 }
               });
}

Var gelu(Var a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const auto ia = a.id();
  return unary(a, [](double x) { return 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x))); },
               [ia](Tape& t, std::size_t self) {
                 const Tensor& g = t.grad(self);
                 const Tensor& x = t.value(ia);
                 if (Tensor* ga = t.grad_for(ia)) {
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     const double v = x[i];
                     const double th = std::tanh(kC * (v + kA * v * v * v));
                     const double dth = (1.0 - th * th) * kC * (1.0 + 3.0 * kA * v * v);
                     (*ga)[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * v * dth);
                   }
                 }
               });
}

Var softmax(Var a, int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("softmax: axis must be 0 or 1");
  const Tensor& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  Tensor y(mat(r, c));
  // Lines are rows (axis 1) or columns (axis 0); stride walks along a line.
  const std::size_t lines = axis == 1 ? r : c;
  const std::size_t len = axis == 1 ? c : r;
  const std::size_t stride = axis == 1 ? 1 : c;
  auto base = [&](std::size_t l) { return axis == 1 ? l * c : l; };
  for (std::size_t l = 0; l < lines; ++l) {
    const std::size_t b = base(l);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, x[b + j * stride]);
    double z = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      const double e = std::exp(x[b + j * stride] - mx);
      y[b + j * stride] = e;
      z += e;
    }
    for (std::size_t j = 0; j < len; ++j) y[b + j * stride] /= z;
  }
  const auto ia = a.id();
  return a.tape().push(std::move(y), {ia}, [ia, lines, len, stride, axis, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor* ga = t.grad_for(ia);
    if (ga == nullptr) return;
    for (std::size_t l = 0; l < lines; ++l) {
      const std::size_t b = axis == 1 ? l * c : l;
      double dot = 0.0;
      for (std::size_t j = 0; j < len; ++j) dot += g[b + j * stride] * y[b + j * stride];
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t idx = b + j * stride;
        (*ga)[idx] += y[idx] * (g[idx] - dot);
      }
    }
  });
}

Var mean(Var a, int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("mean: axis must be 0 or 1");
  const Tensor& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  Tensor y(axis == 0 ? mat(1, c) : mat(r, 1));
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) y[axis == 0 ? j : i] += x.at(i, j);
  }
  const double inv = 1.0 / static_cast<double>(axis == 0 ? r : c);
  for (auto& v : y.data()) v *= inv;
  const auto ia = a.id();
  return a.tape().push(std::move(y), {ia}, [ia, r, c, axis, inv](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_for(ia)) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) ga->at(i, j) += inv * g[axis == 0 ? j : i];
      }
    }
  });
}

Var max(Var a, int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("max: axis must be 0 or 1");
  const Tensor& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  const std::size_t outs = axis == 0 ? c : r;
  Tensor y(axis == 0 ? mat(1, c) : mat(r, 1));
  std::vector<std::size_t> arg(outs, 0);
  for (std::size_t o = 0; o < outs; ++o) {
    const std::size_t len = axis == 0 ? r : c;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < len; ++k) {
      const double v = axis == 0 ? x.at(k, o) : x.at(o, k);
      if (v > best) {
        best = v;
        arg[o] = k;
      }
    }
    y[o] = best;
  }
  const auto ia = a.id();
  return a.tape().push(std::move(y), {ia}, [ia, arg = std::move(arg), axis](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_for(ia)) {
      for (std::size_t o = 0; o < arg.size(); ++o) {
        if (axis == 0) {
          ga->at(arg[o], o) += g[o];
        } else {
          ga->at(o, arg[o]) += g[o];
        }
      }
    }
  });
}

Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.data()) s += v;
  const auto ia = a.id();
  return a.tape().push(Tensor::scalar(s), {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    if (Tensor* ga = t.grad_for(ia)) {
      for (auto& v : ga->data()) v += g;
    }
  });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
  Tape& tape = parts.front().tape();
  const Tensor& first = parts.front().value();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (&p.tape() != &tape) throw std::invalid_argument("concat: operands on different tapes");
    const Tensor& v = p.value();
    if (axis == 0 ? v.cols() != first.cols() : v.rows() != first.rows()) mismatch("concat", first, v);
    total += axis == 0 ? v.rows() : v.cols();
  }
  const std::size_t r = axis == 0 ? total : first.rows();
  const std::size_t c = axis == 0 ? first.cols() : total;
  Tensor y(mat(r, c));
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < v.rows(); ++i) {
      for (std::size_t j = 0; j < v.cols(); ++j) {
        if (axis == 0) {
          y.at(off + i, j) = v.at(i, j);
        } else {
          y.at(i, off + j) = v.at(i, j);
        }
      }
    }
    ids.push_back(p.id());
    offsets.push_back(off);
    off += axis == 0 ? v.rows() : v.cols();
  }
  std::vector<std::size_t> inputs = ids;
  return tape.push(std::move(y), std::move(inputs),
                   [ids = std::move(ids), offsets = std::move(offsets), axis](Tape& t, std::size_t self) {
                     const Tensor& g = t.grad(self);
                     for (std::size_t p = 0; p < ids.size(); ++p) {
                       Tensor* gp = t.grad_for(ids[p]);
                       if (gp == nullptr) continue;
                       const std::size_t pr = gp->rows(), pc = gp->cols();
                       for (std::size_t i = 0; i < pr; ++i) {
                         for (std::size_t j = 0; j < pc; ++j) {
                           gp->at(i, j) += axis == 0 ? g.at(offsets[p] + i, j) : g.at(i, offsets[p] + j);
                         }
                       }
                     }
                   });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& x = a.value();
  if (count == 0 || begin + count > x.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for shape " + shape_str(x.shape()));
  }
  const std::size_t c = x.cols();
  Tensor y(mat(count, c));
  std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(begin * c), count * c, y.data().begin());
  const auto ia = a.id();
  return a.tape().push(std::move(y), {ia}, [ia, begin, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_for(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[begin * c + i] += g[i];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& x = a.value();
  if (count == 0 || begin + count > x.cols()) {
    throw ShapeError("slice_cols: cols [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for shape " + shape_str(x.shape()));
  }
  const std::size_t r = x.rows();
  Tensor y(mat(r, count));
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < count; ++j) y.at(i, j) = x.at(i, begin + j);
  }
  const auto ia = a.id();
  return a.tape().push(std::move(y), {ia}, [ia, begin, r, count](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_for(ia)) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < count; ++j) ga->at(i, begin + j) += g.at(i, j);
      }
    }
  });
}

Var dropout(Var a, double p, bool train, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (!train || p == 0.0) return a;
  const Tensor& x = a.value();
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor m(mat(x.rows(), x.cols()));
  for (auto& v : m.data()) v = rng.bernoulli(p) ? 0.0 : keep_scale;
  Tensor y(mat(x.rows(), x.cols()));
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * m[i];
  const auto ia = a.id();
  return a.tape().push(std::move(y), {ia}, [ia, m = std::move(m)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_for(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * m[i];
    }
  });
}

Var layer_norm(Var a, Var gamma, Var beta, double eps) {
  same_tape("layer_norm", a, gamma);
  same_tape("layer_norm", a, beta);
  const Tensor& x = a.value();
  const Tensor& gm = gamma.value();
  const Tensor& bt = beta.value();
  const std::size_t r = x.rows(), c = x.cols();
  if (gm.size() != c) mismatch("layer_norm", x, gm);
  if (bt.size() != c) mismatch("layer_norm", x, bt);
  Tensor xhat(mat(r, c));
  std::vector<double> inv_std(r);
  Tensor y(mat(r, c));
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += x.at(i, j);
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = x.at(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat.at(i, j) = (x.at(i, j) - mu) * inv_std[i];
      y.at(i, j) = xhat.at(i, j) * gm[j] + bt[j];
    }
  }
  const auto ia = a.id(), ig = gamma.id(), ib = beta.id();
  return a.tape().push(
      std::move(y), {ia, ig, ib},
      [ia, ig, ib, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& gm = t.value(ig);
        if (Tensor* gg = t.grad_for(ig)) {
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) (*gg)[j] += g.at(i, j) * xhat.at(i, j);
          }
        }
        if (Tensor* gb = t.grad_for(ib)) {
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) (*gb)[j] += g.at(i, j);
          }
        }
        if (Tensor* ga = t.grad_for(ia)) {
          const double n = static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double gh = g.at(i, j) * gm[j];
              s1 += gh;
              s2 += gh * xhat.at(i, j);
            }
            for (std::size_t j = 0; j < c; ++j) {
              const double gh = g.at(i, j) * gm[j];
              ga->at(i, j) += inv_std[i] / n * (n * gh - s1 - xhat.at(i, j) * s2);
            }
          }
        }
      });
}

Var embedding(Tape& tape, Parameter& table, std::span<const int> ids) {
  const std::size_t rows = table.value.rows(), c = table.value.cols();
  if (ids.empty()) throw std::invalid_argument("embedding: empty id list");
  Tensor y(mat(ids.size(), c));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside table '" + table.name +
                              "' with " + std::to_string(rows) + " rows");
    }
    std::copy_n(table.value.data().begin() + static_cast<std::ptrdiff_t>(ids[i]) * static_cast<std::ptrdiff_t>(c),
                c, y.data().begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  std::vector<int> idv(ids.begin(), ids.end());
  Parameter* p = &table;
  return tape.push_source(std::move(y), table.trainable, [p, idv = std::move(idv), c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      double* dst = p->grad.data().data() + static_cast<std::size_t>(idv[i]) * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += g.at(i, j);
    }
    p->has_grad = true;
  });
}

Var mse(Var pred, Var target) {
  same_tape("mse", pred, target);
  const Tensor& p = pred.value();
  const Tensor& y = target.value();
  if (p.size() != y.size() || p.empty()) mismatch("mse", p, y);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - y[i];
    s += d * d;
  }
  const double n = static_cast<double>(p.size());
  const auto ip = pred.id(), iy = target.id();
  return pred.tape().push(Tensor::scalar(s / n), {ip, iy}, [ip, iy, n](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const Tensor& p = t.value(ip);
    const Tensor& y = t.value(iy);
    Tensor* gp = t.grad_for(ip);
    Tensor* gy = t.grad_for(iy);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = 2.0 * (p[i] - y[i]) / n * g;
      if (gp) (*gp)[i] += d;
      if (gy) (*gy)[i] -= d;
    }
  });
}

}  // namespace fetilda::ops

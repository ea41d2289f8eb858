#include "cftraj/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace cftraj::diff {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t p = 1;
  for (auto d : shape) p *= d;
  return p;
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " +
                              b.shape_str());
}

[[noreturn]] void shape_error(const char* op, const Tensor& a) {
  throw std::invalid_argument(std::string(op) + ": unsupported shape " + a.shape_str());
}

Tape& tape_of(const Var& a) {
  if (a.tape() == nullptr) throw std::logic_error("Var is not attached to a tape");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::logic_error("Vars belong to different tapes");
  return tape_of(a);
}

// Elementwise unary op: y = f(x), dx = g * df(x, y).
template <typename F, typename DF>
Var unary(const Var& a, F f, DF df) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  Tensor y = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  return tape.record(std::move(y), {a}, [ia, df](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(self);
    Tensor dx = Tensor::zeros_like(xv);
    for (std::size_t i = 0; i < xv.size(); ++i) dx[i] = g[i] * df(xv[i], yv[i]);
    t.accumulate(ia, dx);
  });
}

void check_same(const char* op, const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) shape_error(op, a.value(), b.value());
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------------------------

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  if (shape_.size() > 2) throw std::invalid_argument("Tensor: rank > 2 is not supported");
  data_.assign(product(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > 2) throw std::invalid_argument("Tensor: rank > 2 is not supported");
  if (data_.size() != product(shape_)) {
    throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str());
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw std::invalid_argument("Tensor::item on shape " + shape_str());
  return data_[0];
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << ']';
  return os.str();
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ---- Tape -----------------------------------------------------------------------------------

const Tensor& Var::value() const { return tape_of(*this).value(id_); }

Tensor Gradients::of(const Var& v) const {
  if (v.id() < grads_.size() && grads_[v.id()].size() > 0) return grads_[v.id()];
  return Tensor::zeros_like(v.value());
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back({std::move(value), {}, {}, true});
  return {this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back({std::move(value), {}, {}, false});
  return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
  bool needs = false;
  for (const auto& p : parents) {
    if (p.tape() != this) throw std::logic_error("parent Var belongs to another tape");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back({std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, needs});
  return {this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

Gradients Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw std::logic_error("loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + loss.value().shape_str());
  }
  for (auto& n : nodes_) n.grad = Tensor();
  Node& root = nodes_[loss.id()];
  if (root.requires_grad) root.grad = Tensor(root.value.shape(), 1.0);
  for (std::size_t k = loss.id() + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (n.backward && n.grad.size() > 0) n.backward(*this, k);
  }
  std::vector<Tensor> grads;
  grads.reserve(nodes_.size());
  for (auto& n : nodes_) grads.push_back(std::move(n.grad));
  return Gradients(std::move(grads));
}

// ---- Ops ------------------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() == 0 || B.rank() == 0 || A.cols() != B.rows()) shape_error("matmul", A, B);
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &B.data()[p * n];
      double* crow = &C.data()[i * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(C), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const Tensor& G = t.grad(self);
    const Tensor& Av = t.value(ia);
    const Tensor& Bv = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor dA = Tensor::zeros_like(Av);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * Bv[p * n + j];
          dA[i * k + p] = s;
        }
      }
      t.accumulate(ia, dA);
    }
    if (t.requires_grad(ib)) {
      Tensor dB = Tensor::zeros_like(Bv);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = Av[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += aip * G[i * n + j];
        }
      }
      t.accumulate(ib, dB);
    }
  });
}

Var add(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  check_same("add", a, b);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  check_same("sub", a, b);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    if (t.requires_grad(ib)) {
      Tensor g = t.grad(self);
      for (auto& v : g.data()) v = -v;
      t.accumulate(ib, g);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  check_same("mul", a, b);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor d = t.value(ib);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= g[i];
      t.accumulate(ia, d);
    }
    if (t.requires_grad(ib)) {
      Tensor d = t.value(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= g[i];
      t.accumulate(ib, d);
    }
  });
}

Var div(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  check_same("div", a, b);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor d = Tensor::zeros_like(bv);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] / bv[i];
      t.accumulate(ia, d);
    }
    if (t.requires_grad(ib)) {
      const Tensor& yv = t.value(self);
      Tensor d = Tensor::zeros_like(bv);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = -g[i] * yv[i] / bv[i];
      t.accumulate(ib, d);
    }
  });
}

Var add_bias(const Var& a, const Var& bias) {
  Tape& tape = tape_of(a, bias);
  const Tensor& A = a.value();
  const Tensor& b = bias.value();
  if (A.rank() == 0 || b.size() != A.cols() || b.rows() != 1) shape_error("add_bias", A, b);
  const std::size_t m = A.rows(), n = A.cols();
  Tensor y = A;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] += b[j];
  }
  const std::size_t ia = a.id(), ib = bias.id();
  return tape.record(std::move(y), {a, bias}, [ia, ib, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    t.accumulate(ia, g);
    if (t.requires_grad(ib)) {
      Tensor db = Tensor::zeros_like(t.value(ib));
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
      }
      t.accumulate(ib, db);
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var softmax(const Var& a) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  if (x.size() == 0) shape_error("softmax", x);
  const std::size_t m = x.rows(), n = x.cols();
  Tensor y = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = x[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[i * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[i * n + j] = std::exp(x[i * n + j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] /= z;
  }
  const std::size_t ia = a.id();
  return tape.record(std::move(y), {a}, [ia, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& yv = t.value(self);
    Tensor dx = Tensor::zeros_like(yv);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * yv[i * n + j];
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] = yv[i * n + j] * (g[i * n + j] - dot);
    }
    t.accumulate(ia, dx);
  });
}

Var log_softmax(const Var& a) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  if (x.size() == 0) shape_error("log_softmax", x);
  const std::size_t m = x.rows(), n = x.cols();
  Tensor y = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = x[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[i * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[i * n + j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = x[i * n + j] - lse;
  }
  const std::size_t ia = a.id();
  return tape.record(std::move(y), {a}, [ia, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& yv = t.value(self);
    Tensor dx = Tensor::zeros_like(yv);
    for (std::size_t i = 0; i < m; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] = g[i * n + j] - std::exp(yv[i * n + j]) * gs;
    }
    t.accumulate(ia, dx);
  });
}

Var sum(const Var& a) {
  Tape& tape = tape_of(a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return tape.record(Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
    t.accumulate(ia, Tensor(t.value(ia).shape(), t.grad(self)[0]));
  });
}

Var mean(const Var& a) {
  const auto n = a.value().size();
  if (n == 0) shape_error("mean", a.value());
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape& tape = tape_of(parts[0]);
  const std::size_t m = parts[0].value().rows();
  std::size_t n = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    tape_of(p, parts[0]);
    if (p.value().rank() == 0 || p.value().rows() != m) shape_error("concat_cols", parts[0].value(), p.value());
    widths.push_back(p.value().cols());
    n += widths.back();
  }
  Tensor y = Tensor::zeros(m, n);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(&v.data()[i * widths[k]], widths[k], &y.data()[i * n + off]);
    }
    off += widths[k];
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return tape.record(std::move(y), parts, [ids, widths, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        Tensor d = Tensor::zeros_like(t.value(ids[k]));
        for (std::size_t i = 0; i < m; ++i) {
          std::copy_n(&g.data()[i * n + off], widths[k], &d.data()[i * widths[k]]);
        }
        t.accumulate(ids[k], d);
      }
      off += widths[k];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Tape& tape = tape_of(parts[0]);
  const std::size_t n = parts[0].value().cols();
  std::size_t m = 0;
  std::vector<std::size_t> heights;
  for (const auto& p : parts) {
    tape_of(p, parts[0]);
    if (p.value().rank() == 0 || p.value().cols() != n) shape_error("concat_rows", parts[0].value(), p.value());
    heights.push_back(p.value().rows());
    m += heights.back();
  }
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return tape.record(Tensor::matrix(m, n, std::move(data)), parts,
                     [ids, heights, n](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         const std::size_t len = heights[k] * n;
                         if (t.requires_grad(ids[k])) {
                           Tensor d = Tensor::zeros_like(t.value(ids[k]));
                           std::copy_n(&g.data()[off], len, d.data().begin());
                           t.accumulate(ids[k], d);
                         }
                         off += len;
                       }
                     });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  if (x.rank() == 0 || begin >= end || end > x.cols()) {
    throw std::invalid_argument("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") invalid for shape " + x.shape_str());
  }
  const std::size_t m = x.rows(), n = x.cols(), w = end - begin;
  Tensor y = Tensor::zeros(m, w);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(&x.data()[i * n + begin], w, &y.data()[i * w]);
  const std::size_t ia = a.id();
  return tape.record(std::move(y), {a}, [ia, m, n, w, begin](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor d = Tensor::zeros_like(t.value(ia));
    for (std::size_t i = 0; i < m; ++i) std::copy_n(&g.data()[i * w], w, &d.data()[i * n + begin]);
    t.accumulate(ia, d);
  });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  if (x.rank() == 0 || begin >= end || end > x.rows()) {
    throw std::invalid_argument("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") invalid for shape " + x.shape_str());
  }
  const std::size_t n = x.cols(), h = end - begin;
  std::vector<double> data(x.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                           x.data().begin() + static_cast<std::ptrdiff_t>(end * n));
  const std::size_t ia = a.id();
  return tape.record(Tensor::matrix(h, n, std::move(data)), {a}, [ia, n, h, begin](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor d = Tensor::zeros_like(t.value(ia));
    std::copy_n(g.data().begin(), h * n, &d.data()[begin * n]);
    t.accumulate(ia, d);
  });
}

Var transpose(const Var& a) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  if (x.rank() == 0) shape_error("transpose", x);
  const std::size_t m = x.rows(), n = x.cols();
  Tensor y = Tensor::zeros(n, m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = x[i * n + j];
  }
  const std::size_t ia = a.id();
  return tape.record(std::move(y), {a}, [ia, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor d = Tensor::zeros_like(t.value(ia));
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) d[i * n + j] = g[j * m + i];
    }
    t.accumulate(ia, d);
  });
}

Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  if (rows * cols != x.size()) {
    throw std::invalid_argument("reshape: cannot view " + x.shape_str() + " as [" + std::to_string(rows) + "x" +
                                std::to_string(cols) + "]");
  }
  const std::size_t ia = a.id();
  return tape.record(Tensor::matrix(rows, cols, x.data()), {a}, [ia](Tape& t, std::size_t self) {
    t.accumulate(ia, Tensor(t.value(ia).shape(), t.grad(self).data()));
  });
}

// ---- Parameters -----------------------------------------------------------------------------

std::size_t ParamStore::add(std::string name, Tensor init) {
  for (const auto& n : names_) {
    if (n == name) throw std::invalid_argument("duplicate parameter '" + name + "'");
  }
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return values_.size() - 1;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

std::vector<Var> ParamStore::bind(Tape& tape) const {
  std::vector<Var> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.push_back(tape.leaf(v));
  return out;
}

std::vector<Var> ParamStore::bind_constant(Tape& tape) const {
  std::vector<Var> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.push_back(tape.constant(v));
  return out;
}

nlohmann::json ParamStore::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < values_.size(); ++i) {
    arr.push_back({{"name", names_[i]}, {"shape", values_[i].shape()}, {"data", values_[i].data()}});
  }
  return arr;
}

ParamStore ParamStore::from_json(const nlohmann::json& j) {
  ParamStore ps;
  for (const auto& e : j) {
    Tensor t(e.at("shape").get<std::vector<std::size_t>>(), e.at("data").get<std::vector<double>>());
    if (!t.all_finite()) throw std::invalid_argument("parameter '" + e.at("name").get<std::string>() + "' is not finite");
    ps.add(e.at("name").get<std::string>(), std::move(t));
  }
  return ps;
}

Tensor xavier(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t = Tensor::zeros(rows, cols);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

Adam::Adam(const ParamStore& params, AdamConfig cfg) : cfg_(cfg) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.push_back(Tensor::zeros_like(params.value(i)));
    v_.push_back(Tensor::zeros_like(params.value(i)));
  }
}

void Adam::step(ParamStore& params, const std::vector<Tensor>& grads) {
  if (grads.size() != params.size()) throw std::invalid_argument("Adam::step: gradient count mismatch");
  double clip = 1.0;
  if (cfg_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& g : grads) {
      for (double v : g.values()) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = params.value(p);
    const Tensor& g = grads[p];
    if (g.size() != w.size()) throw std::invalid_argument("Adam::step: gradient shape mismatch for " + params.name(p));
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * clip;
      m_[p][i] = cfg_.beta1 * m_[p][i] + (1.0 - cfg_.beta1) * gi;
      v_[p][i] = cfg_.beta2 * v_[p][i] + (1.0 - cfg_.beta2) * gi * gi;
      w[i] -= cfg_.lr * (m_[p][i] / bc1) / (std::sqrt(v_[p][i] / bc2) + cfg_.eps);
    }
  }
}

double grad_check(const std::function<Var(const Var&)>& f, const Tensor& at, double h, double floor) {
  Tensor analytic;
  {
    Tape tape;
    Var x = tape.leaf(at);
    Var y = f(x);
    analytic = tape.backward(y).of(x);
  }
  auto eval = [&](const Tensor& point) {
    Tape tape;
    return f(tape.constant(point)).value().item();
  };
  double worst = 0.0;
  Tensor probe = at;
  for (std::size_t i = 0; i < at.size(); ++i) {
    probe[i] = at[i] + h;
    const double fp = eval(probe);
    probe[i] = at[i] - h;
    const double fm = eval(probe);
    probe[i] = at[i];
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace cftraj::diff

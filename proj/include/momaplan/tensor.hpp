#pragma once

// Tape-based reverse-mode autodiff over small dense row-major tensors.
// Scalar is float for training and double for finite-difference shadows.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace momaplan::ad {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream o;
  o << "[";
  for (std::size_t i = 0; i < s.size(); ++i) o << (i ? "," : "") << s[i];
  o << "]";
  return o.str();
}

[[noreturn]] inline void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

template <typename T>
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
};

/// Named parameters with stable addresses.
template <typename T>
class ParamSet {
 public:
  Parameter<T>& add(const std::string& name, const Shape& shape) {
    for (const auto& p : params_) {
      if (p.name == name) throw std::invalid_argument("duplicate parameter " + name);
    }
    params_.push_back({name, shape, std::vector<T>(numel(shape), T(0)), std::vector<T>(numel(shape), T(0))});
    return params_.back();
  }
  Parameter<T>& add_uniform(const std::string& name, const Shape& shape, double bound, std::mt19937_64& rng) {
    auto& p = add(name, shape);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : p.value) v = static_cast<T>(u(rng));
    return p;
  }
  Parameter<T>& add_constant(const std::string& name, const Shape& shape, double value) {
    auto& p = add(name, shape);
    for (auto& v : p.value) v = static_cast<T>(value);
    return p;
  }
  Parameter<T>& get(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return p;
    }
    throw std::out_of_range("no parameter named " + name);
  }
  const Parameter<T>& get(const std::string& name) const { return const_cast<ParamSet*>(this)->get(name); }
  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), T(0));
  }
  std::int64_t count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += numel(p.shape);
    return n;
  }
  std::deque<Parameter<T>>& all() { return params_; }
  const std::deque<Parameter<T>>& all() const { return params_; }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& p : params_) {
      auto& q = out.add(p.name, p.shape);
      for (std::size_t i = 0; i < p.value.size(); ++i) q.value[i] = static_cast<U>(p.value[i]);
    }
    return out;
  }

 private:
  std::deque<Parameter<T>> params_;
};

template <typename T>
class Tape;

/// Handle to a node on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Shape& shape() const;
  const std::vector<T>& value() const;
  std::vector<T>& grad() const;
  int dim(int i) const {
    const auto& s = shape();
    return s[i < 0 ? static_cast<int>(s.size()) + i : i];
  }
  std::int64_t size() const { return numel(shape()); }
  T item() const;
};

template <typename T>
class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    std::function<void()> backward;
    Parameter<T>* param = nullptr;
    const std::vector<T>* ref = nullptr;  // parameter storage read in place
    bool needs_grad = false;
    const std::vector<T>& data() const { return ref ? *ref : value; }
  };

  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const { return record_; }
  void clear() { nodes_.clear(); }
  /// Drops every node recorded after the first `n`.
  void truncate(std::size_t n) {
    if (n < nodes_.size()) nodes_.resize(n);
  }
  std::size_t size() const { return nodes_.size(); }

  Node& node(int id) { return nodes_[id]; }
  const Node& node(int id) const { return nodes_[id]; }

  Var<T> make(Shape shape, std::vector<T> value, bool needs_grad) {
    if (static_cast<std::int64_t>(value.size()) != numel(shape)) {
      throw std::invalid_argument("tensor data length does not match shape " + shape_str(shape));
    }
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.needs_grad = record_ && needs_grad;
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> constant(Shape shape, std::vector<T> value) { return make(std::move(shape), std::move(value), false); }
  Var<T> input(Shape shape, std::vector<T> value) { return make(std::move(shape), std::move(value), true); }

  /// Leaf reading `p` in place; `p` must outlive its use on this tape.
  Var<T> param(Parameter<T>& p) {
    Node n;
    n.shape = p.shape;
    n.ref = &p.value;
    n.param = &p;
    n.needs_grad = record_;
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  /// Seeds d(out)/d(out) = 1 for a scalar output and runs recorded closures in reverse.
  void backward(const Var<T>& out) {
    if (!record_) throw std::logic_error("backward on a tape recorded without gradients");
    if (numel(nodes_[out.id].shape) != 1) throw std::invalid_argument("backward needs a scalar output");
    for (auto& n : nodes_) {
      if (n.needs_grad) n.grad.assign(numel(n.shape), T(0));
    }
    nodes_[out.id].grad.assign(1, T(1));
    for (int i = out.id; i >= 0; --i) {
      auto& n = nodes_[i];
      if (!n.needs_grad) continue;
      if (n.backward) n.backward();
      if (n.param) {
        for (std::size_t k = 0; k < n.grad.size(); ++k) n.param->grad[k] += n.grad[k];
      }
    }
  }

 private:
  bool record_;
  std::deque<Node> nodes_;
};

template <typename T>
const Shape& Var<T>::shape() const { return tape->node(id).shape; }
template <typename T>
const std::vector<T>& Var<T>::value() const { return tape->node(id).data(); }
template <typename T>
std::vector<T>& Var<T>::grad() const { return tape->node(id).grad; }
template <typename T>
T Var<T>::item() const {
  if (size() != 1) throw std::invalid_argument("item() on a non-scalar tensor " + shape_str(shape()));
  return value()[0];
}

namespace detail {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using CMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
bool wants(const Var<T>& v) {
  return v.tape->node(v.id).needs_grad;
}

// Output node; it needs a gradient iff any input does.
template <typename T>
Var<T> result(Tape<T>& tape, Shape shape, std::vector<T> value, std::initializer_list<Var<T>> inputs) {
  bool g = false;
  for (const auto& v : inputs) g = g || wants(v);
  return tape.make(std::move(shape), std::move(value), g);
}

template <typename T>
void on_backward(const Var<T>& out, std::function<void()> fn) {
  auto& n = out.tape->node(out.id);
  if (n.needs_grad) n.backward = std::move(fn);
}

inline int rows_of(const Shape& s) { return static_cast<int>(numel(s) / s.back()); }

// Broadcast kinds for binary ops: same shape, trailing-dims match, or scalar b.
enum class Bcast { kSame, kTrailing, kScalar };

inline Bcast broadcast_kind(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Bcast::kSame;
  if (numel(b) == 1) return Bcast::kScalar;
  if (b.size() < a.size() && std::equal(b.rbegin(), b.rend(), a.rbegin())) return Bcast::kTrailing;
  shape_error(op, a, b);
}

}  // namespace detail

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  using namespace detail;
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() != 2 || sa.back() != sb[0]) shape_error("matmul", sa, sb);
  const int n = rows_of(sa), k = sa.back(), m = sb[1];
  Shape so = sa;
  so.back() = m;
  std::vector<T> out(static_cast<std::size_t>(n) * m);
  MatMap<T>(out.data(), n, m).noalias() = CMatMap<T>(a.value().data(), n, k) * CMatMap<T>(b.value().data(), k, m);
  Var<T> r = result(*a.tape, so, std::move(out), {a, b});
  on_backward(r, [a, b, r, n, k, m] {
    CMatMap<T> g(r.grad().data(), n, m);
    if (wants(a)) MatMap<T>(a.grad().data(), n, k).noalias() += g * CMatMap<T>(b.value().data(), k, m).transpose();
    if (wants(b)) MatMap<T>(b.grad().data(), k, m).noalias() += CMatMap<T>(a.value().data(), n, k).transpose() * g;
  });
  return r;
}

/// a [n, k] times b^T for b [m, k].
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  using namespace detail;
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[1]) shape_error("matmul_nt", sa, sb);
  const int n = sa[0], k = sa[1], m = sb[0];
  std::vector<T> out(static_cast<std::size_t>(n) * m);
  MatMap<T>(out.data(), n, m).noalias() =
      CMatMap<T>(a.value().data(), n, k) * CMatMap<T>(b.value().data(), m, k).transpose();
  Var<T> r = result(*a.tape, {n, m}, std::move(out), {a, b});
  on_backward(r, [a, b, r, n, k, m] {
    CMatMap<T> g(r.grad().data(), n, m);
    if (wants(a)) MatMap<T>(a.grad().data(), n, k).noalias() += g * CMatMap<T>(b.value().data(), m, k);
    if (wants(b)) MatMap<T>(b.grad().data(), m, k).noalias() += g.transpose() * CMatMap<T>(a.value().data(), n, k);
  });
  return r;
}

namespace detail {

template <typename T, typename F, typename Ga, typename Gb>
Var<T> binary(const char* op, const Var<T>& a, const Var<T>& b, F f, Ga da, Gb db) {
  const Bcast kind = broadcast_kind(op, a.shape(), b.shape());
  const auto& va = a.value();
  const auto& vb = b.value();
  const std::size_t n = va.size(), nb = vb.size();
  auto bidx = [kind, nb](std::size_t i) { return kind == Bcast::kSame ? i : kind == Bcast::kScalar ? 0 : i % nb; };
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(va[i], vb[bidx(i)]);
  Var<T> r = result(*a.tape, a.shape(), std::move(out), {a, b});
  on_backward(r, [a, b, r, n, bidx, da, db] {
    const auto& g = r.grad();
    const auto& va = a.value();
    const auto& vb = b.value();
    if (wants(a)) {
      auto& ga = a.grad();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * da(va[i], vb[bidx(i)]);
    }
    if (wants(b)) {
      auto& gb = b.grad();
      for (std::size_t i = 0; i < n; ++i) gb[bidx(i)] += g[i] * db(va[i], vb[bidx(i)]);
    }
  });
  return r;
}

template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& a, F f, D d) {
  const auto& va = a.value();
  std::vector<T> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = f(va[i]);
  Var<T> r = result(*a.tape, a.shape(), std::move(out), {a});
  on_backward(r, [a, r, d] {
    const auto& g = r.grad();
    const auto& va = a.value();
    const auto& vr = r.value();
    auto& ga = a.grad();
    for (std::size_t i = 0; i < va.size(); ++i) ga[i] += g[i] * d(va[i], vr[i]);
  });
  return r;
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return detail::binary("add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
                        [](T, T) { return T(1); });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return detail::binary("sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
                        [](T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return detail::binary("mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
                        [](T x, T) { return x; });
}

template <typename T>
Var<T> scale(const Var<T>& a, double s) {
  const T c = static_cast<T>(s);
  return detail::unary(a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, double s) {
  const T c = static_cast<T>(s);
  return detail::unary(a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  return detail::unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return detail::unary(a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

/// Exact GELU, x * Phi(x).
template <typename T>
Var<T> gelu(const Var<T>& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return detail::unary(
      a, [](T x) { return static_cast<T>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2))); },
      [](T x, T) {
        const double xd = x;
        return static_cast<T>(0.5 * (1.0 + std::erf(xd * kInvSqrt2)) + xd * kInvSqrt2Pi * std::exp(-0.5 * xd * xd));
      });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  return detail::unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  return detail::unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

/// Softmax over the last dimension; row sums are accumulated in double.
template <typename T>
Var<T> softmax(const Var<T>& a) {
  using namespace detail;
  const int d = a.shape().back(), n = rows_of(a.shape());
  const auto& va = a.value();
  std::vector<T> out(va.size());
  for (int r = 0; r < n; ++r) {
    const T* x = va.data() + static_cast<std::size_t>(r) * d;
    T* y = out.data() + static_cast<std::size_t>(r) * d;
    T mx = x[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    const T inv = static_cast<T>(1.0 / s);
    for (int j = 0; j < d; ++j) y[j] *= inv;
  }
  Var<T> r = result(*a.tape, a.shape(), std::move(out), {a});
  on_backward(r, [a, r, n, d] {
    const auto& y = r.value();
    const auto& g = r.grad();
    auto& ga = a.grad();
    for (int row = 0; row < n; ++row) {
      const std::size_t o = static_cast<std::size_t>(row) * d;
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += static_cast<double>(g[o + j]) * y[o + j];
      for (int j = 0; j < d; ++j) ga[o + j] += static_cast<T>(y[o + j] * (g[o + j] - dot));
    }
  });
  return r;
}

/// Normalizes the last dimension, then applies gamma/beta of shape [d].
template <typename T>
Var<T> layer_norm(const Var<T>& a, const Var<T>& gamma, const Var<T>& beta, double eps = 1e-5) {
  using namespace detail;
  const int d = a.shape().back(), n = rows_of(a.shape());
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) shape_error("layer_norm", a.shape(), gamma.shape());
  const auto& va = a.value();
  std::vector<T> out(va.size());
  auto xhat = std::make_shared<std::vector<double>>(va.size());
  auto inv = std::make_shared<std::vector<double>>(n);
  for (int r = 0; r < n; ++r) {
    const std::size_t o = static_cast<std::size_t>(r) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += va[o + j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (va[o + j] - mean) * (va[o + j] - mean);
    var /= d;
    (*inv)[r] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) {
      (*xhat)[o + j] = (va[o + j] - mean) * (*inv)[r];
      out[o + j] = static_cast<T>((*xhat)[o + j] * gamma.value()[j] + beta.value()[j]);
    }
  }
  Var<T> r = result(*a.tape, a.shape(), std::move(out), {a, gamma, beta});
  on_backward(r, [a, gamma, beta, r, n, d, xhat, inv] {
    const auto& g = r.grad();
    const auto& gm = gamma.value();
    for (int row = 0; row < n; ++row) {
      const std::size_t o = static_cast<std::size_t>(row) * d;
      if (wants(gamma) || wants(beta)) {
        for (int j = 0; j < d; ++j) {
          if (wants(gamma)) gamma.grad()[j] += static_cast<T>(g[o + j] * (*xhat)[o + j]);
          if (wants(beta)) beta.grad()[j] += g[o + j];
        }
      }
      if (wants(a)) {
        double s1 = 0.0, s2 = 0.0;
        for (int j = 0; j < d; ++j) {
          const double gh = static_cast<double>(g[o + j]) * gm[j];
          s1 += gh;
          s2 += gh * (*xhat)[o + j];
        }
        for (int j = 0; j < d; ++j) {
          const double gh = static_cast<double>(g[o + j]) * gm[j];
          a.grad()[o + j] += static_cast<T>((*inv)[row] * (gh - s1 / d - (*xhat)[o + j] * s2 / d));
        }
      }
    }
  });
  return r;
}

/// Concatenation of 2-D tensors along axis 0 (rows) or 1 (columns).
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  using namespace detail;
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat supports axis 0 or 1");
  Shape so = parts[0].shape();
  if (so.size() != 2) throw std::invalid_argument("concat expects 2-D tensors, got " + shape_str(so));
  so[axis] = 0;
  bool g = false;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != 2 || s[1 - axis] != parts[0].shape()[1 - axis]) shape_error("concat", parts[0].shape(), s);
    so[axis] += s[axis];
    g = g || wants(p);
  }
  std::vector<T> out(numel(so));
  std::vector<int> offsets;
  int off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const int rows = p.shape()[0], cols = p.shape()[1];
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) {
        const std::size_t dst = axis == 0 ? static_cast<std::size_t>(off + i) * so[1] + j
                                          : static_cast<std::size_t>(i) * so[1] + off + j;
        out[dst] = p.value()[static_cast<std::size_t>(i) * cols + j];
      }
    off += p.shape()[axis];
  }
  Var<T> r = parts[0].tape->make(so, std::move(out), g);
  on_backward(r, [parts, offsets, r, axis, so] {
    const auto& gr = r.grad();
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto& p = parts[k];
      if (!wants(p)) continue;
      const int rows = p.shape()[0], cols = p.shape()[1];
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
          const std::size_t src = axis == 0 ? static_cast<std::size_t>(offsets[k] + i) * so[1] + j
                                            : static_cast<std::size_t>(i) * so[1] + offsets[k] + j;
          p.grad()[static_cast<std::size_t>(i) * cols + j] += gr[src];
        }
    }
  });
  return r;
}

/// Half-open slice [begin, end) of a 2-D tensor along axis 0 or 1.
template <typename T>
Var<T> slice(const Var<T>& a, int axis, int begin, int end) {
  using namespace detail;
  const Shape& s = a.shape();
  if (s.size() != 2 || (axis != 0 && axis != 1)) throw std::invalid_argument("slice expects a 2-D tensor, got " + shape_str(s));
  if (begin < 0 || end > s[axis] || begin >= end) {
    throw std::invalid_argument("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                                shape_str(s));
  }
  Shape so = s;
  so[axis] = end - begin;
  std::vector<T> out(numel(so));
  const int cols = s[1];
  for (int i = 0; i < so[0]; ++i)
    for (int j = 0; j < so[1]; ++j) {
      const int si = axis == 0 ? i + begin : i, sj = axis == 1 ? j + begin : j;
      out[static_cast<std::size_t>(i) * so[1] + j] = a.value()[static_cast<std::size_t>(si) * cols + sj];
    }
  Var<T> r = result(*a.tape, so, std::move(out), {a});
  on_backward(r, [a, r, so, axis, begin, cols] {
    for (int i = 0; i < so[0]; ++i)
      for (int j = 0; j < so[1]; ++j) {
        const int si = axis == 0 ? i + begin : i, sj = axis == 1 ? j + begin : j;
        a.grad()[static_cast<std::size_t>(si) * cols + sj] += r.grad()[static_cast<std::size_t>(i) * so[1] + j];
      }
  });
  return r;
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  using namespace detail;
  const Shape& s = a.shape();
  if (s.size() != 2) throw std::invalid_argument("transpose expects a 2-D tensor, got " + shape_str(s));
  const int n = s[0], m = s[1];
  std::vector<T> out(a.value().size());
  MatMap<T>(out.data(), m, n) = CMatMap<T>(a.value().data(), n, m).transpose();
  Var<T> r = result(*a.tape, {m, n}, std::move(out), {a});
  on_backward(r, [a, r, n, m] {
    MatMap<T>(a.grad().data(), n, m) += CMatMap<T>(r.grad().data(), m, n).transpose();
  });
  return r;
}

template <typename T>
Var<T> reshape(const Var<T>& a, const Shape& shape) {
  using namespace detail;
  if (numel(shape) != a.size()) shape_error("reshape", a.shape(), shape);
  Var<T> r = result(*a.tape, shape, a.value(), {a});
  on_backward(r, [a, r] {
    for (std::size_t i = 0; i < r.grad().size(); ++i) a.grad()[i] += r.grad()[i];
  });
  return r;
}

/// Rows of `table` [V, d] gathered by index.
template <typename T>
Var<T> embedding(const Var<T>& table, const std::vector<int>& index) {
  using namespace detail;
  const Shape& s = table.shape();
  if (s.size() != 2) throw std::invalid_argument("embedding table must be 2-D, got " + shape_str(s));
  const int d = s[1];
  const int n = static_cast<int>(index.size());
  std::vector<T> out(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    if (index[i] < 0 || index[i] >= s[0]) throw std::out_of_range("embedding index out of range");
    std::copy_n(table.value().begin() + static_cast<std::size_t>(index[i]) * d, d, out.begin() + static_cast<std::size_t>(i) * d);
  }
  Var<T> r = result(*table.tape, {n, d}, std::move(out), {table});
  on_backward(r, [table, r, index, d] {
    for (std::size_t i = 0; i < index.size(); ++i)
      for (int j = 0; j < d; ++j) table.grad()[static_cast<std::size_t>(index[i]) * d + j] += r.grad()[i * d + j];
  });
  return r;
}

/// Standard sinusoidal table: even columns sin(p / 10000^(2i/d)), odd columns cos.
template <typename T>
std::vector<T> sinusoidal_table(const std::vector<double>& positions, int d) {
  std::vector<T> out(positions.size() * d);
  for (std::size_t p = 0; p < positions.size(); ++p) {
    for (int i = 0; i < d; i += 2) {
      const double w = std::pow(10000.0, -static_cast<double>(i) / d);
      out[p * d + i] = static_cast<T>(std::sin(positions[p] * w));
      if (i + 1 < d) out[p * d + i + 1] = static_cast<T>(std::cos(positions[p] * w));
    }
  }
  return out;
}

template <typename T>
Var<T> sinusoidal_position_encoding(Tape<T>& tape, int n, int d, double offset = 0.0) {
  std::vector<double> pos(n);
  for (int i = 0; i < n; ++i) pos[i] = offset + i;
  return tape.constant({n, d}, sinusoidal_table<T>(pos, d));
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  using namespace detail;
  double s = 0.0;
  for (T v : a.value()) s += v;
  Var<T> r = result(*a.tape, {1}, {static_cast<T>(s)}, {a});
  on_backward(r, [a, r] {
    const T g = r.grad()[0];
    for (auto& v : a.grad()) v += g;
  });
  return r;
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  using namespace detail;
  double s = 0.0;
  for (T v : a.value()) s += v;
  const double n = static_cast<double>(a.size());
  Var<T> r = result(*a.tape, {1}, {static_cast<T>(s / n)}, {a});
  on_backward(r, [a, r, n] {
    const T g = static_cast<T>(r.grad()[0] / n);
    for (auto& v : a.grad()) v += g;
  });
  return r;
}

/// Column means of a 2-D tensor: [n, d] -> [1, d].
template <typename T>
Var<T> mean_rows(const Var<T>& a) {
  using namespace detail;
  const Shape& s = a.shape();
  if (s.size() != 2) throw std::invalid_argument("mean_rows expects a 2-D tensor, got " + shape_str(s));
  const int n = s[0], d = s[1];
  std::vector<T> out(d);
  for (int j = 0; j < d; ++j) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += a.value()[static_cast<std::size_t>(i) * d + j];
    out[j] = static_cast<T>(acc / n);
  }
  Var<T> r = result(*a.tape, {1, d}, std::move(out), {a});
  on_backward(r, [a, r, n, d] {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) a.grad()[static_cast<std::size_t>(i) * d + j] += static_cast<T>(r.grad()[j] / n);
  });
  return r;
}

/// Max over rows sharing a group id: [n, d] -> [groups, d]. Empty groups give zeros.
template <typename T>
Var<T> group_max(const Var<T>& a, const std::vector<int>& group, int groups) {
  using namespace detail;
  const Shape& s = a.shape();
  if (s.size() != 2 || static_cast<int>(group.size()) != s[0]) {
    throw std::invalid_argument("group_max: need one group id per row of " + shape_str(s));
  }
  const int n = s[0], d = s[1];
  std::vector<T> out(static_cast<std::size_t>(groups) * d, T(0));
  auto arg = std::make_shared<std::vector<int>>(static_cast<std::size_t>(groups) * d, -1);
  for (int i = 0; i < n; ++i) {
    const int g = group[i];
    if (g < 0) continue;
    if (g >= groups) throw std::out_of_range("group_max: group id out of range");
    for (int j = 0; j < d; ++j) {
      const std::size_t o = static_cast<std::size_t>(g) * d + j;
      const T v = a.value()[static_cast<std::size_t>(i) * d + j];
      if ((*arg)[o] < 0 || v > out[o]) {
        out[o] = v;
        (*arg)[o] = i;
      }
    }
  }
  Var<T> r = result(*a.tape, {groups, d}, std::move(out), {a});
  on_backward(r, [a, r, arg, d] {
    for (std::size_t o = 0; o < arg->size(); ++o) {
      if ((*arg)[o] >= 0) a.grad()[static_cast<std::size_t>((*arg)[o]) * d + o % d] += r.grad()[o];
    }
  });
  return r;
}

/// Scalar computed outside the tape from `x`, with its gradient supplied by the caller.
template <typename T>
Var<T> external_scalar(const Var<T>& x, double value, std::vector<double> grad) {
  using namespace detail;
  if (static_cast<std::int64_t>(grad.size()) != x.size()) {
    throw std::invalid_argument("external_scalar: gradient length does not match " + shape_str(x.shape()));
  }
  Var<T> r = result(*x.tape, {1}, {static_cast<T>(value)}, {x});
  on_backward(r, [x, r, grad = std::move(grad)] {
    const double g = r.grad()[0];
    for (std::size_t i = 0; i < grad.size(); ++i) x.grad()[i] += static_cast<T>(g * grad[i]);
  });
  return r;
}

/// Single element of a tensor as a scalar node.
template <typename T>
Var<T> element(const Var<T>& a, std::int64_t index) {
  using namespace detail;
  if (index < 0 || index >= a.size()) throw std::out_of_range("element index out of range for " + shape_str(a.shape()));
  Var<T> r = result(*a.tape, {1}, {a.value()[index]}, {a});
  on_backward(r, [a, r, index] { a.grad()[index] += r.grad()[0]; });
  return r;
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  long step = 0;
};

/// Bias-corrected Adam update using each parameter's accumulated grad.
template <typename T>
void adam_step(ParamSet<T>& params, AdamState& state, const AdamConfig& cfg) {
  auto& all = params.all();
  if (state.m.size() != all.size()) {
    state.m.assign(all.size(), {});
    state.v.assign(all.size(), {});
    for (std::size_t k = 0; k < all.size(); ++k) {
      state.m[k].assign(all[k].value.size(), 0.0);
      state.v[k].assign(all[k].value.size(), 0.0);
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < all.size(); ++k) {
    auto& p = all[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mh = m[i] / c1, vh = v[i] / c2;
      p.value[i] = static_cast<T>(p.value[i] - cfg.lr * mh / (std::sqrt(vh) + cfg.eps));
    }
  }
}

void save_weights(const ParamSet<float>& params, const std::string& path);
/// Fills `params` in place; names and shapes must match.
void load_weights(ParamSet<float>& params, const std::string& path);
ParamSet<float> read_weights(const std::string& path);

}  // namespace momaplan::ad

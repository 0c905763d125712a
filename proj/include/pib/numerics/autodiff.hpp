#pragma once

// Reverse-mode differentiation over small dense tensors.
//
// A Graph records every operation of one forward pass together with a closure
// that propagates the output gradient into its inputs. backward() replays the
// closures in reverse and accumulates parameter gradients into the bound
// ParamSet. A graph is single-use and must stay on one thread.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pib/error.hpp"
#include "pib/numerics/gaussian.hpp"
#include "pib/numerics/param_set.hpp"
#include "pib/numerics/tensor.hpp"

namespace pib::ad {

class Graph;

class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : g_(g), id_(id) {}

  Graph* graph() const noexcept { return g_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return g_ != nullptr; }

  inline const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar " + to_string(shape()));
    return value()[0];
  }

 private:
  Graph* g_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t self)>;

  explicit Graph(ParamSet* params = nullptr) : params_(params) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t) { return push(std::move(t), false, nullptr); }
  Var constant(double v) { return constant(Tensor::scalar(v)); }

  // Leaf bound to a ParamSet entry; repeated calls share one node.
  Var param(const std::string& name) {
    if (params_ == nullptr) throw ConfigError("graph has no parameter set bound");
    if (auto it = bound_.find(name); it != bound_.end()) return Var(this, it->second);
    Var v = push(params_->value(name), true, nullptr);
    bound_.emplace(name, v.id());
    return v;
  }

  // For op implementations: the node requires a gradient iff any input does.
  Var make(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    for (const Var& in : inputs) {
      check_owner(in);
      needs = needs || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }
  Var make(Tensor value, const std::vector<Var>& inputs, Backward backward) {
    bool needs = false;
    for (const Var& in : inputs) {
      check_owner(in);
      needs = needs || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::vector<double>& grad(std::size_t id) { return nodes_[id].grad; }
  const std::vector<double>& grad(std::size_t id) const { return nodes_[id].grad; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and accumulates into the bound ParamSet grads.
  void backward(Var loss) {
    check_owner(loss);
    if (loss.size() != 1) throw ShapeError("backward() requires a scalar loss, got " + to_string(loss.shape()));
    if (backward_done_) throw EvaluationError("backward() called twice on one graph");
    backward_done_ = true;
    if (!nodes_[loss.id()].requires_grad) return;
    for (std::size_t i = 0; i <= loss.id(); ++i) {
      if (nodes_[i].requires_grad) nodes_[i].grad.assign(nodes_[i].value.size(), 0.0);
    }
    nodes_[loss.id()].grad[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      if (nodes_[i].backward) nodes_[i].backward(*this, i);
    }
    for (const auto& [name, id] : bound_) {
      Tensor& g = params_->grad(name);
      const auto& src = nodes_[id].grad;
      for (std::size_t j = 0; j < src.size(); ++j) g[j] += src[j];
    }
  }

  // Adds `delta` into the gradient of input `in`, if it wants one.
  template <typename F>
  void accumulate(Var in, F&& fill) {
    if (nodes_[in.id()].requires_grad) fill(nodes_[in.id()].grad);
  }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    Backward backward;
    std::vector<double> grad;
  };

  Var push(Tensor t, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(t), requires_grad, std::move(backward), {}});
    return Var(this, nodes_.size() - 1);
  }

  void check_owner(const Var& v) const {
    if (v.graph() != this) throw EvaluationError("variable belongs to a different graph");
  }

  ParamSet* params_;
  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> bound_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return g_->value(id_); }

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

template <typename Fwd, typename Deriv>
Var unary(Var x, Fwd fwd, Deriv deriv) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return x.graph()->make(std::move(out), {x}, [x, deriv](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    const Tensor& xv = g.value(x.id());
    const Tensor& yv = g.value(self);
    g.accumulate(x, [&](std::vector<double>& gx) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * deriv(xv[i], yv[i]);
    });
  });
}

inline double stable_softplus(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }
inline double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace detail

inline Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.graph()->make(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    g.accumulate(a, [&](auto& ga) { for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i]; });
    g.accumulate(b, [&](auto& gb) { for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i]; });
  });
}

inline Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.graph()->make(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    g.accumulate(a, [&](auto& ga) { for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i]; });
    g.accumulate(b, [&](auto& gb) { for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gy[i]; });
  });
}

inline Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.graph()->make(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    const Tensor& av = g.value(a.id());
    const Tensor& bv = g.value(b.id());
    g.accumulate(a, [&](auto& ga) { for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bv[i]; });
    g.accumulate(b, [&](auto& gb) { for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * av[i]; });
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// s * x for a scalar variable s.
inline Var scale(Var x, Var s) {
  if (s.size() != 1) throw ShapeError("scale: factor must be scalar");
  const double sv = s.value()[0];
  Tensor out = x.value();
  for (double& v : out.values()) v *= sv;
  return x.graph()->make(std::move(out), {x, s}, [x, s](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    const Tensor& xv = g.value(x.id());
    const double sv = g.value(s.id())[0];
    g.accumulate(x, [&](auto& gx) { for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * sv; });
    g.accumulate(s, [&](auto& gs) {
      double acc = 0.0;
      for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i] * xv[i];
      gs[0] += acc;
    });
  });
}

inline Var mul_const(Var x, double c) {
  Tensor out = x.value();
  for (double& v : out.values()) v *= c;
  return x.graph()->make(std::move(out), {x}, [x, c](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    g.accumulate(x, [&](auto& gx) { for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * c; });
  });
}

inline Var add_const(Var x, double c) {
  Tensor out = x.value();
  for (double& v : out.values()) v += c;
  return x.graph()->make(std::move(out), {x}, [x](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    g.accumulate(x, [&](auto& gx) { for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i]; });
  });
}

// Elementwise product with a constant tensor (masks, fixed noise).
inline Var mul_const(Var x, const Tensor& m) {
  require_same_shape(x.value(), m, "mul_const");
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
  return x.graph()->make(std::move(out), {x}, [x, m](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    g.accumulate(x, [&](auto& gx) { for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * m[i]; });
  });
}

inline Var add_const(Var x, const Tensor& m) {
  require_same_shape(x.value(), m, "add_const");
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += m[i];
  return x.graph()->make(std::move(out), {x}, [x](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    g.accumulate(x, [&](auto& gx) { for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i]; });
  });
}

inline Var neg(Var x) { return mul_const(x, -1.0); }

inline Var relu(Var x) {
  return detail::unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var softplus(Var x) {
  return detail::unary(x, detail::stable_softplus, [](double v, double) { return detail::stable_sigmoid(v); });
}

inline Var sigmoid(Var x) {
  return detail::unary(x, detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(Var x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(Var x) {
  return detail::unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var square(Var x) {
  return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// max(x, floor) elementwise; zero gradient where the floor is active.
inline Var clamp_min(Var x, double floor) {
  return detail::unary(x, [floor](double v) { return v > floor ? v : floor; },
                       [floor](double v, double) { return v > floor ? 1.0 : 0.0; });
}

// min(x, ceiling) elementwise; zero gradient where the ceiling is active.
inline Var clamp_max(Var x, double ceiling) {
  return detail::unary(x, [ceiling](double v) { return v < ceiling ? v : ceiling; },
                       [ceiling](double v, double) { return v < ceiling ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Shape manipulation and reductions

inline Var reshape(Var x, Shape shape) {
  if (element_count(shape) != x.size()) throw ShapeError("reshape: element count mismatch");
  Tensor out(std::move(shape), x.value().storage());
  return x.graph()->make(std::move(out), {x}, [x](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    g.accumulate(x, [&](auto& gx) { for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i]; });
  });
}

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.graph()->make(Tensor::scalar(s), {x}, [x](Graph& g, std::size_t self) {
    const double gy = g.grad(self)[0];
    g.accumulate(x, [&](auto& gx) { for (double& v : gx) v += gy; });
  });
}

inline Var mean(Var x) {
  if (x.size() == 0) throw DomainError("mean of empty tensor");
  return mul_const(sum(x), 1.0 / static_cast<double>(x.size()));
}

// Sum of same-shaped variables.
inline Var add_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw DomainError("add_n: empty list");
  Tensor out = xs.front().value();
  for (std::size_t k = 1; k < xs.size(); ++k) {
    require_same_shape(out, xs[k].value(), "add_n");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += xs[k].value()[i];
  }
  return xs.front().graph()->make(std::move(out), xs, [xs](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    for (const Var& x : xs) {
      g.accumulate(x, [&](auto& gx) { for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i]; });
    }
  });
}

// Flattens and concatenates.
inline Var concat(const std::vector<Var>& xs) {
  if (xs.empty()) throw DomainError("concat: empty list");
  std::vector<double> out;
  for (const Var& x : xs) out.insert(out.end(), x.value().values().begin(), x.value().values().end());
  return xs.front().graph()->make(Tensor::vector(std::move(out)), xs, [xs](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    std::size_t off = 0;
    for (const Var& x : xs) {
      const std::size_t n = x.size();
      g.accumulate(x, [&](auto& gx) { for (std::size_t i = 0; i < n; ++i) gx[i] += gy[off + i]; });
      off += n;
    }
  });
}

inline Var index(Var x, std::size_t i) {
  if (i >= x.size()) throw ShapeError("index out of range");
  return x.graph()->make(Tensor::scalar(x.value()[i]), {x}, [x, i](Graph& g, std::size_t self) {
    const double gy = g.grad(self)[0];
    g.accumulate(x, [&](auto& gx) { gx[i] += gy; });
  });
}

// Maximum element; the gradient goes to the first maximiser.
inline Var max_element(Var x) {
  if (x.size() == 0) throw DomainError("max_element of empty tensor");
  const auto& v = x.value().values();
  const std::size_t arg = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  return index(x, arg);
}

// ---------------------------------------------------------------------------
// Layers

// W x + b for x[n_in], W[n_out x n_in], b[n_out].
inline Var linear(Var x, Var W, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = W.value();
  const Tensor& bv = b.value();
  if (wv.rank() != 2 || xv.rank() != 1 || bv.rank() != 1 || wv.dim(1) != xv.dim(0) || wv.dim(0) != bv.dim(0)) {
    throw ShapeError("linear: W" + to_string(wv.shape()) + " x" + to_string(xv.shape()) + " b" +
                     to_string(bv.shape()));
  }
  const std::size_t n_out = wv.dim(0), n_in = wv.dim(1);
  Tensor out = bv;
  for (std::size_t o = 0; o < n_out; ++o) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n_in; ++i) acc += wv[o * n_in + i] * xv[i];
    out[o] += acc;
  }
  return x.graph()->make(std::move(out), {x, W, b}, [x, W, b, n_in, n_out](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    const Tensor& xv = g.value(x.id());
    const Tensor& wv = g.value(W.id());
    g.accumulate(x, [&](auto& gx) {
      for (std::size_t o = 0; o < n_out; ++o)
        for (std::size_t i = 0; i < n_in; ++i) gx[i] += wv[o * n_in + i] * gy[o];
    });
    g.accumulate(W, [&](auto& gw) {
      for (std::size_t o = 0; o < n_out; ++o)
        for (std::size_t i = 0; i < n_in; ++i) gw[o * n_in + i] += gy[o] * xv[i];
    });
    g.accumulate(b, [&](auto& gb) { for (std::size_t o = 0; o < n_out; ++o) gb[o] += gy[o]; });
  });
}

// Max-subtracted softmax over a vector.
inline Var softmax(Var p) {
  const Tensor& pv = p.value();
  if (pv.size() == 0) throw DomainError("softmax of empty input");
  if (!pv.all_finite()) throw DomainError("softmax: non-finite input");
  const double m = *std::max_element(pv.values().begin(), pv.values().end());
  Tensor out(pv.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) z += (out[i] = std::exp(pv[i] - m));
  for (double& v : out.values()) v /= z;
  return p.graph()->make(std::move(out), {p}, [p](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    const Tensor& y = g.value(self);
    double dot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) dot += gy[i] * y[i];
    g.accumulate(p, [&](auto& gp) { for (std::size_t i = 0; i < y.size(); ++i) gp[i] += y[i] * (gy[i] - dot); });
  });
}

// 2-D convolution (cross-correlation) of x[Cin,H,W] with w[Cout,Cin,kh,kw],
// zero padding `pad`, stride `stride`.
inline Var conv2d(Var x, Var w, Var b, std::size_t stride = 1, std::size_t pad = 0) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 3 || wv.rank() != 4 || bv.rank() != 1 || wv.dim(1) != xv.dim(0) || wv.dim(0) != bv.dim(0)) {
    throw ShapeError("conv2d: x" + to_string(xv.shape()) + " w" + to_string(wv.shape()) + " b" +
                     to_string(bv.shape()));
  }
  const std::size_t cin = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  const std::size_t cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  if (H + 2 * pad < kh || W + 2 * pad < kw || stride == 0) throw ShapeError("conv2d: kernel larger than input");
  const std::size_t oh = (H + 2 * pad - kh) / stride + 1, ow = (W + 2 * pad - kw) / stride + 1;
  Tensor out(Shape{cout, oh, ow});
  // Visits every (output, input, weight) triple; `f(out_idx, in_idx, w_idx)`.
  auto for_each_tap = [=](auto&& f) {
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::size_t widx = ((co * cin + ci) * kh + ky) * kw + kx;
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                f((co * oh + oy) * ow + ox, (ci * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix),
                  widx);
              }
            }
          }
  };
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t i = 0; i < oh * ow; ++i) out[co * oh * ow + i] = bv[co];
  for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { out[o] += wv[k] * xv[i]; });
  return x.graph()->make(std::move(out), {x, w, b}, [=](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    const Tensor& xv = g.value(x.id());
    const Tensor& wv = g.value(w.id());
    g.accumulate(x, [&](auto& gx) { for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { gx[i] += wv[k] * gy[o]; }); });
    g.accumulate(w, [&](auto& gw) { for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { gw[k] += gy[o] * xv[i]; }); });
    g.accumulate(b, [&](auto& gb) {
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t i = 0; i < oh * ow; ++i) gb[co] += gy[co * oh * ow + i];
    });
  });
}

// Per-channel (depthwise) convolution: x[C,H,W], w[C,1,k,k], b[C], stride 1.
inline Var depthwise_conv2d(Var x, Var w, Var b, std::size_t pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 3 || wv.rank() != 4 || bv.rank() != 1 || wv.dim(0) != xv.dim(0) || wv.dim(1) != 1 ||
      bv.dim(0) != xv.dim(0)) {
    throw ShapeError("depthwise_conv2d: x" + to_string(xv.shape()) + " w" + to_string(wv.shape()));
  }
  const std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2), kh = wv.dim(2), kw = wv.dim(3);
  if (H + 2 * pad < kh || W + 2 * pad < kw) throw ShapeError("depthwise_conv2d: kernel larger than input");
  const std::size_t oh = H + 2 * pad - kh + 1, ow = W + 2 * pad - kw + 1;
  auto for_each_tap = [=](auto&& f) {
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::size_t widx = (c * kh + ky) * kw + kx;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              f((c * oh + oy) * ow + ox, (c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix), widx);
            }
          }
        }
  };
  Tensor out(Shape{C, oh, ow});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < oh * ow; ++i) out[c * oh * ow + i] = bv[c];
  for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { out[o] += wv[k] * xv[i]; });
  return x.graph()->make(std::move(out), {x, w, b}, [=](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    const Tensor& xv = g.value(x.id());
    const Tensor& wv = g.value(w.id());
    g.accumulate(x, [&](auto& gx) { for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { gx[i] += wv[k] * gy[o]; }); });
    g.accumulate(w, [&](auto& gw) { for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { gw[k] += gy[o] * xv[i]; }); });
    g.accumulate(b, [&](auto& gb) {
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < oh * ow; ++i) gb[c] += gy[c * oh * ow + i];
    });
  });
}

// Non-overlapping transposed convolution: x[Cin,h,w], w[Cin,Cout,k,k] ->
// [Cout, h*k, w*k]. Each input element paints one k x k output block.
inline Var conv_transpose2d(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 3 || wv.rank() != 4 || bv.rank() != 1 || wv.dim(0) != xv.dim(0) || wv.dim(1) != bv.dim(0) ||
      wv.dim(2) != wv.dim(3)) {
    throw ShapeError("conv_transpose2d: x" + to_string(xv.shape()) + " w" + to_string(wv.shape()));
  }
  const std::size_t cin = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
  const std::size_t cout = wv.dim(1), k = wv.dim(2);
  const std::size_t H = h * k, W = wd * k;
  auto for_each_tap = [=](auto&& f) {
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::size_t widx = ((ci * cout + co) * k + ky) * k + kx;
            for (std::size_t y = 0; y < h; ++y)
              for (std::size_t xx = 0; xx < wd; ++xx)
                f((co * H + y * k + ky) * W + xx * k + kx, (ci * h + y) * wd + xx, widx);
          }
  };
  Tensor out(Shape{cout, H, W});
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t i = 0; i < H * W; ++i) out[co * H * W + i] = bv[co];
  for_each_tap([&](std::size_t o, std::size_t i, std::size_t kk) { out[o] += wv[kk] * xv[i]; });
  return x.graph()->make(std::move(out), {x, w, b}, [=](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    const Tensor& xv = g.value(x.id());
    const Tensor& wv = g.value(w.id());
    g.accumulate(x, [&](auto& gx) { for_each_tap([&](std::size_t o, std::size_t i, std::size_t kk) { gx[i] += wv[kk] * gy[o]; }); });
    g.accumulate(w, [&](auto& gw) { for_each_tap([&](std::size_t o, std::size_t i, std::size_t kk) { gw[kk] += gy[o] * xv[i]; }); });
    g.accumulate(b, [&](auto& gb) {
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t i = 0; i < H * W; ++i) gb[co] += gy[co * H * W + i];
    });
  });
}

// Nearest-neighbour upsampling of x[C,h,w] by an integer factor.
inline Var upsample_nearest(Var x, std::size_t factor) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3 || factor == 0) throw ShapeError("upsample_nearest: expects C x H x W");
  const std::size_t C = xv.dim(0), h = xv.dim(1), w = xv.dim(2), H = h * factor, W = w * factor;
  Tensor out(Shape{C, H, W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) out.at(c, y, xx) = xv.at(c, y / factor, xx / factor);
  return x.graph()->make(std::move(out), {x}, [=](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    g.accumulate(x, [&](auto& gx) {
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t xx = 0; xx < W; ++xx)
            gx[(c * h + y / factor) * w + xx / factor] += gy[(c * H + y) * W + xx];
    });
  });
}

// Multiplies channel c of x[C,...] by s[c].
inline Var scale_channels(Var x, Var s) {
  const Tensor& xv = x.value();
  const Tensor& sv = s.value();
  if (xv.rank() < 1 || sv.rank() != 1 || sv.dim(0) != xv.dim(0)) throw ShapeError("scale_channels: shape mismatch");
  const std::size_t C = sv.size(), per = xv.size() / C;
  Tensor out = xv;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < per; ++i) out[c * per + i] *= sv[c];
  return x.graph()->make(std::move(out), {x, s}, [=](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    const Tensor& xv = g.value(x.id());
    const Tensor& sv = g.value(s.id());
    g.accumulate(x, [&](auto& gx) {
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < per; ++i) gx[c * per + i] += gy[c * per + i] * sv[c];
    });
    g.accumulate(s, [&](auto& gs) {
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < per; ++i) gs[c] += gy[c * per + i] * xv[c * per + i];
    });
  });
}

// ---------------------------------------------------------------------------
// Likelihoods

// Elementwise -ln P(x) where P is N(mu, sigma^2) integrated over
// [x - half_width, x + half_width]. P is floored at `floor` (zero gradient
// below the floor).
inline Var gaussian_box_nll(Var x, Var mu, Var sigma, double half_width = 0.5, double floor = 1e-9) {
  require_same_shape(x.value(), mu.value(), "gaussian_box_nll");
  require_same_shape(x.value(), sigma.value(), "gaussian_box_nll");
  const std::size_t n = x.size();
  Tensor out(x.shape());
  // Cached per element: P, dP/du * (1/sigma) pieces.
  std::vector<double> prob(n), pdf_u(n), pdf_l(n), up(n), lo(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = sigma.value()[i];
    if (!(s > 0.0)) throw DomainError("gaussian_box_nll: sigma must be positive");
    const double d = x.value()[i] - mu.value()[i];
    up[i] = (d + half_width) / s;
    lo[i] = (d - half_width) / s;
    prob[i] = normal_interval(lo[i], up[i]);
    pdf_u[i] = normal_pdf(up[i]);
    pdf_l[i] = normal_pdf(lo[i]);
    out[i] = -std::log(std::max(prob[i], floor));
  }
  return x.graph()->make(std::move(out), {x, mu, sigma}, [=](Graph& g, std::size_t self) {
    const auto& gy = g.grad(self);
    const Tensor& sv = g.value(sigma.id());
    std::vector<double> dx(n, 0.0), ds(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (prob[i] <= floor) continue;
      const double coef = -gy[i] / prob[i];
      dx[i] = coef * (pdf_u[i] - pdf_l[i]) / sv[i];
      ds[i] = coef * -(pdf_u[i] * up[i] - pdf_l[i] * lo[i]) / sv[i];
    }
    g.accumulate(x, [&](auto& gx) { for (std::size_t i = 0; i < n; ++i) gx[i] += dx[i]; });
    g.accumulate(mu, [&](auto& gm) { for (std::size_t i = 0; i < n; ++i) gm[i] -= dx[i]; });
    g.accumulate(sigma, [&](auto& gs) { for (std::size_t i = 0; i < n; ++i) gs[i] += ds[i]; });
  });
}

// Sum over elements of log N(x; mu, sigma^2).
inline Var gaussian_log_likelihood(Var x, Var mu, Var sigma) {
  require_same_shape(x.value(), mu.value(), "gaussian_log_likelihood");
  require_same_shape(x.value(), sigma.value(), "gaussian_log_likelihood");
  const double v = pib::gaussian_log_likelihood(x.value().values(), mu.value().values(), sigma.value().values());
  return x.graph()->make(Tensor::scalar(v), {x, mu, sigma}, [=](Graph& g, std::size_t self) {
    const double gy = g.grad(self)[0];
    const Tensor& xv = g.value(x.id());
    const Tensor& mv = g.value(mu.id());
    const Tensor& sv = g.value(sigma.id());
    const std::size_t n = xv.size();
    g.accumulate(x, [&](auto& gx) {
      for (std::size_t i = 0; i < n; ++i) gx[i] += -gy * (xv[i] - mv[i]) / (sv[i] * sv[i]);
    });
    g.accumulate(mu, [&](auto& gm) {
      for (std::size_t i = 0; i < n; ++i) gm[i] += gy * (xv[i] - mv[i]) / (sv[i] * sv[i]);
    });
    g.accumulate(sigma, [&](auto& gs) {
      for (std::size_t i = 0; i < n; ++i) {
        const double d = xv[i] - mv[i];
        gs[i] += gy * (-1.0 / sv[i] + d * d / (sv[i] * sv[i] * sv[i]));
      }
    });
  });
}

// Sum over cells of -log Bernoulli(target | sigmoid(logit)), in nats.
inline Var bernoulli_nll_logits(Var logits, const Tensor& targets) {
  require_same_shape(logits.value(), targets, "bernoulli_nll_logits");
  double total = 0.0;
  const Tensor& lv = logits.value();
  for (std::size_t i = 0; i < lv.size(); ++i) {
    total += targets[i] * detail::stable_softplus(-lv[i]) + (1.0 - targets[i]) * detail::stable_softplus(lv[i]);
  }
  return logits.graph()->make(Tensor::scalar(total), {logits}, [logits, targets](Graph& g, std::size_t self) {
    const double gy = g.grad(self)[0];
    const Tensor& lv = g.value(logits.id());
    g.accumulate(logits, [&](auto& gl) {
      for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += gy * (detail::stable_sigmoid(lv[i]) - targets[i]);
    });
  });
}

}  // namespace pib::ad

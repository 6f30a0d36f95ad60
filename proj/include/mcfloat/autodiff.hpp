#pragma once

/// Minimal reverse-mode tape over working-precision arrays.
///
/// MC parameters enter as leaves through their evaluated sums; every op's
/// Jacobian is evaluated at the approx() point of its MC operands rather
/// than through the expansion branches (those are piecewise linear with
/// measure-zero kinks, and the formulation differentiates with respect to
/// the lead component anyway; finite-difference tests bound the
/// discrepancy). Gradients are stored and propagated in working precision.
/// MC-producing ops stash their full expansion so MC-consuming ops
/// (mc_relu, mc_softmax) can chain without losing components.
///
/// Gradient buffers on parameters accumulate across backward() calls until
/// explicitly zeroed.

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mcfloat/linalg.hpp"
#include "mcfloat/mc_ops.hpp"
#include "mcfloat/ndarray.hpp"

namespace mcf {

struct Var {
  int idx = -1;
};

template <class P>
class Tape {
 public:
  struct Node {
    NdArray value;
    NdArray grad;
    std::optional<MCTensor<P>> mc;       // expansion behind `value`, if any
    MCTensor<P>* param = nullptr;        // MC parameter leaf destination
    std::function<void(Tape&, int)> backward;
  };

  Var leaf(NdArray v) { return push(std::move(v)); }

  /// MC parameter leaf: value is the evaluated sum; backward accumulates
  /// into the parameter's grad buffer. The parameter must outlive the tape.
  Var mc_param(MCTensor<P>& p) {
    const Var out = push(p.approx());
    node(out).mc = p;
    node(out).param = &p;
    return out;
  }

  const NdArray& value(Var v) const { return node(v).value; }
  const NdArray& grad(Var v) const { return node(v).grad; }

  const MCTensor<P>& mc_value(Var v) const {
    const Node& n = node(v);
    if (!n.mc) throw std::logic_error("Tape: node carries no MC expansion");
    return *n.mc;
  }

  /// Generic op builder; `backward` receives the tape and the node id and is
  /// responsible for pushing grad into the parents.
  Var custom(NdArray value, std::optional<MCTensor<P>> mc,
             std::function<void(Tape&, int)> backward) {
    const Var out = push(std::move(value));
    node(out).mc = std::move(mc);
    node(out).backward = std::move(backward);
    return out;
  }

  NdArray& grad_ref(int idx) { return nodes_[idx].grad; }
  const NdArray& value_of_node(int idx) const { return nodes_[idx].value; }

  // --- elementwise -------------------------------------------------------
  Var add(Var a, Var b) {
    check_same_shape(value(a), value(b), "tape add");
    Var out = push(mcf::add<P>(value(a), value(b)));
    node(out).backward = [ai = a.idx, bi = b.idx](Tape& t, int self) {
      t.accumulate(ai, t.grad_ref(self));
      t.accumulate(bi, t.grad_ref(self));
    };
    return out;
  }

  Var sub(Var a, Var b) {
    check_same_shape(value(a), value(b), "tape sub");
    Var out = push(mcf::sub<P>(value(a), value(b)));
    node(out).backward = [ai = a.idx, bi = b.idx](Tape& t, int self) {
      t.accumulate(ai, t.grad_ref(self));
      NdArray neg = t.grad_ref(self);
      for (std::size_t i = 0; i < neg.numel(); ++i) neg[i] = -neg[i];
      t.accumulate(bi, neg);
    };
    return out;
  }

  Var mul(Var a, Var b) {
    check_same_shape(value(a), value(b), "tape mul");
    Var out = push(mcf::mul<P>(value(a), value(b)));
    node(out).backward = [ai = a.idx, bi = b.idx](Tape& t, int self) {
      const NdArray& g = t.grad_ref(self);
      t.accumulate(ai, mcf::mul<P>(g, t.value_of_node(bi)));
      t.accumulate(bi, mcf::mul<P>(g, t.value_of_node(ai)));
    };
    return out;
  }

  Var scale(Var a, double c) {
    const double cp = P::round(c);
    Var out = push(mcf::scale<P>(value(a), cp));
    node(out).backward = [ai = a.idx, cp](Tape& t, int self) {
      t.accumulate(ai, mcf::scale<P>(t.grad_ref(self), cp));
    };
    return out;
  }

  // --- matmul (working precision x working precision) ---------------------
  Var matmul(Var a, Var b) {
    Var out = push(matmul2d<P>(value(a), value(b)));
    node(out).backward = [ai = a.idx, bi = b.idx](Tape& t, int self) {
      const NdArray& g = t.grad_ref(self);
      t.accumulate(ai, matmul2d<P>(g, transpose2d(t.value_of_node(bi))));
      t.accumulate(bi, matmul2d<P>(transpose2d(t.value_of_node(ai)), g));
    };
    return out;
  }

  // --- activations --------------------------------------------------------
  Var relu(Var a) {
    Var out = push(map<P>(value(a), [](double x) { return x > 0.0 ? x : 0.0; }));
    node(out).backward = [ai = a.idx](Tape& t, int self) {
      const NdArray& x = t.value_of_node(ai);
      NdArray g = t.grad_ref(self);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        if (x[i] <= 0.0) g[i] = 0.0;
      }
      t.accumulate(ai, g);
    };
    return out;
  }

  Var sigmoid(Var a) {
    Var out = push(map<P>(value(a), [](double x) { return 1.0 / (1.0 + std::exp(-x)); }));
    node(out).backward = [ai = a.idx](Tape& t, int self) {
      const NdArray& y = t.value_of_node(self);
      NdArray g = t.grad_ref(self);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        const double s = fl_mul<P>(y[i], fl_sub<P>(1.0, y[i]));
        g[i] = fl_mul<P>(g[i], s);
      }
      t.accumulate(ai, g);
    };
    return out;
  }

  /// tanh-form GELU on evaluated sums.
  Var gelu(Var a) {
    auto fwd = [](double x) {
      const double k = 0.7978845608028654;  // sqrt(2/pi)
      const double inner = k * (x + 0.044715 * x * x * x);
      return 0.5 * x * (1.0 + std::tanh(inner));
    };
    Var out = push(map<P>(value(a), fwd));
    node(out).backward = [ai = a.idx](Tape& t, int self) {
      const NdArray& x = t.value_of_node(ai);
      NdArray g = t.grad_ref(self);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        const double k = 0.7978845608028654;
        const double u = k * (x[i] + 0.044715 * x[i] * x[i] * x[i]);
        const double th = std::tanh(u);
        const double du = k * (1.0 + 3.0 * 0.044715 * x[i] * x[i]);
        const double d = 0.5 * (1.0 + th) + 0.5 * x[i] * (1.0 - th * th) * du;
        g[i] = fl_mul<P>(g[i], P::round(d));
      }
      t.accumulate(ai, g);
    };
    return out;
  }

  // --- reductions and losses ----------------------------------------------
  Var sum(Var a) {
    Var out = push(NdArray::scalar(mcf::sum<P>(value(a))));
    node(out).backward = [ai = a.idx](Tape& t, int self) {
      const double g = t.grad_ref(self)[0];
      NdArray full(t.value_of_node(ai).shape(), g);
      t.accumulate(ai, full);
    };
    return out;
  }

  Var mean(Var a) {
    const double n = static_cast<double>(value(a).numel());
    Var out = push(NdArray::scalar(mcf::mean<P>(value(a))));
    node(out).backward = [ai = a.idx, n](Tape& t, int self) {
      const double g = fl_div<P>(t.grad_ref(self)[0], n);
      NdArray full(t.value_of_node(ai).shape(), g);
      t.accumulate(ai, full);
    };
    return out;
  }

  // --- driver ---------------------------------------------------------------
  /// Reverse sweep from a scalar loss. Leaf gradients land on MC parameter
  /// buffers additively; call zero_grad on the parameters between steps.
  void backward(Var loss) {
    if (loss.idx < 0 || loss.idx >= static_cast<int>(nodes_.size())) {
      throw std::logic_error("Tape::backward called before any forward op");
    }
    if (node(loss).value.numel() != 1) {
      throw std::invalid_argument("Tape::backward requires a scalar loss");
    }
    for (Node& n : nodes_) n.grad = NdArray(n.value.shape());
    node(loss).grad[0] = 1.0;
    for (int i = loss.idx; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.backward) n.backward(*this, i);
      if (n.param) {
        NdArray& dst = n.param->ensure_grad();
        for (std::size_t k = 0; k < dst.numel(); ++k) {
          dst[k] = fl_add<P>(dst[k], n.grad[k]);
        }
      }
    }
  }

  void accumulate(int idx, const NdArray& g) {
    NdArray& dst = nodes_[idx].grad;
    check_same_shape(dst, g, "tape accumulate");
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] = fl_add<P>(dst[i], g[i]);
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  Node& node(Var v) { return nodes_.at(v.idx); }
  const Node& node(Var v) const { return nodes_.at(v.idx); }

  Var push(NdArray v) {
    nodes_.push_back(Node{std::move(v), NdArray(Shape{0}), std::nullopt, nullptr, {}});
    nodes_.back().grad = NdArray(nodes_.back().value.shape());
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// MC-aware ops
// ---------------------------------------------------------------------------

/// input (N,in) times weight (out,in) transposed, plus bias: the linear-layer
/// forward in MC arithmetic. Output stashes the (N,out) expansion.
template <class P>
Var mc_linear_op(Tape<P>& tape, Var input, MCTensor<P>& weight, MCTensor<P>* bias,
                 const ReductionPlan& plan = {}) {
  const NdArray& in_val = tape.value(input);
  if (in_val.rank() != 2 || in_val.dim(1) != weight.dim(1)) {
    throw std::invalid_argument("mc_linear: input " + shape_str(in_val.shape()) +
                                " incompatible with weight " + shape_str(weight.shape()));
  }
  MCTensor<P> prod = mc_transpose2d(matmul_mcn(weight, transpose2d(in_val), plan));
  if (bias != nullptr) {
    MCTensor<P> expanded(prod.shape(), bias->nc());
    const std::size_t bn = bias->numel();
    for (std::size_t e = 0; e < prod.numel(); ++e) {
      const double* s = bias->comps(e % bn);
      double* d = expanded.comps(e);
      for (int c = 0; c < bias->nc(); ++c) d[c] = s[c];
    }
    prod = add_mcn(prod, expanded);
  }
  NdArray out_val = prod.approx();
  MCTensor<P>* w_ptr = &weight;
  return tape.custom(std::move(out_val), std::move(prod),
                     [ii = input.idx, w_ptr, bias](Tape<P>& t, int self) {
                       const NdArray& g = t.grad_ref(self);  // (N,out)
                       const NdArray w_approx = w_ptr->approx();
                       // dL/dW = g^T @ input
                       NdArray gw = matmul2d<P>(transpose2d(g), t.value_of_node(ii));
                       NdArray& wdst = w_ptr->ensure_grad();
                       for (std::size_t k = 0; k < wdst.numel(); ++k) {
                         wdst[k] = fl_add<P>(wdst[k], gw[k]);
                       }
                       if (bias != nullptr) {
                         NdArray& bdst = bias->ensure_grad();
                         for (std::size_t r = 0; r < g.dim(0); ++r) {
                           for (std::size_t c = 0; c < g.dim(1); ++c) {
                             bdst[c] = fl_add<P>(bdst[c], g.at(r, c));
                           }
                         }
                       }
                       t.accumulate(ii, matmul2d<P>(g, w_approx));
                     });
}

/// Row gather from an MC table; gradients scatter-add into the table buffer.
template <class P>
Var mc_embedding_op(Tape<P>& tape, MCTensor<P>& table,
                    const std::vector<std::size_t>& indices) {
  if (table.rank() != 2) {
    throw std::invalid_argument("mc_embedding: table must be rank 2");
  }
  const std::size_t rows = table.dim(0), dim = table.dim(1);
  for (const auto ix : indices) {
    if (ix >= rows) {
      throw std::out_of_range("mc_embedding: index " + std::to_string(ix) +
                              " out of range for " + std::to_string(rows) + " rows");
    }
  }
  MCTensor<P> gathered(Shape{indices.size(), dim}, table.nc());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    for (std::size_t c = 0; c < dim; ++c) {
      const double* s = table.comps(indices[r] * dim + c);
      double* d = gathered.comps(r * dim + c);
      for (int k = 0; k < table.nc(); ++k) d[k] = s[k];
    }
  }
  NdArray val = gathered.approx();
  MCTensor<P>* t_ptr = &table;
  return tape.custom(std::move(val), std::move(gathered),
                     [t_ptr, indices, dim](Tape<P>& t, int self) {
                       const NdArray& g = t.grad_ref(self);
                       NdArray& dst = t_ptr->ensure_grad();
                       for (std::size_t r = 0; r < indices.size(); ++r) {
                         for (std::size_t c = 0; c < dim; ++c) {
                           double& slot = dst[indices[r] * dim + c];
                           slot = fl_add<P>(slot, g.at(r, c));
                         }
                       }
                     });
}

/// ReLU on the expansion: zero every component where the evaluated sum is
/// not positive (the mask is decided on approx()).
template <class P>
Var mc_relu_op(Tape<P>& tape, Var a) {
  const MCTensor<P>& x = tape.mc_value(a);
  const NdArray ax = x.approx();
  MCTensor<P> out = x;
  for (std::size_t e = 0; e < out.numel(); ++e) {
    if (ax[e] <= 0.0) {
      double* c = out.comps(e);
      for (int i = 0; i < out.nc(); ++i) c[i] = 0.0;
    }
  }
  NdArray val = out.approx();
  return tape.custom(std::move(val), std::move(out),
                     [ai = a.idx, ax](Tape<P>& t, int self) {
                       NdArray g = t.grad_ref(self);
                       for (std::size_t i = 0; i < g.numel(); ++i) {
                         if (ax[i] <= 0.0) g[i] = 0.0;
                       }
                       t.accumulate(ai, g);
                     });
}

namespace detail {

template <class P>
void softmax_axis_dims(const MCTensor<P>& x, int axis, std::size_t& outer,
                       std::size_t& n, std::size_t& inner) {
  const int rank = x.rank();
  if (axis < 0) axis += rank;
  if (rank < 1 || rank > 2 || axis < 0 || axis >= rank) {
    throw std::invalid_argument("mc_softmax: supported on rank 1/2 tensors");
  }
  outer = 1;
  inner = 1;
  n = x.dim(axis);
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < rank; ++d) inner *= x.dim(d);
}

}  // namespace detail

/// Softmax over `axis` in MC arithmetic: max-shift via grow_expn, exp via
/// exp_mcn, normalization via div_mcn by the add_mcn row sum.
template <class P>
MCTensor<P> mc_softmax(const MCTensor<P>& x, int axis = -1) {
  std::size_t outer, n, inner;
  detail::softmax_axis_dims(x, axis, outer, n, inner);
  const NdArray ax = x.approx();

  NdArray shift(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) m = std::max(m, ax[(o * n + k) * inner + i]);
      for (std::size_t k = 0; k < n; ++k) shift[(o * n + k) * inner + i] = -m;
    }
  }
  const MCTensor<P> e = exp_mcn(grow_expn(x, shift));

  MCTensor<P> denom(x.shape(), x.nc());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      double acc[kMaxNc] = {};
      for (std::size_t k = 0; k < n; ++k) {
        detail::add_kernel<P>(acc, x.nc(), e.comps((o * n + k) * inner + i), x.nc(),
                              acc, x.nc());
      }
      for (std::size_t k = 0; k < n; ++k) {
        double* d = denom.comps((o * n + k) * inner + i);
        for (int c = 0; c < x.nc(); ++c) d[c] = acc[c];
      }
    }
  }
  return div_mcn(e, denom);
}

/// Tape wrapper for mc_softmax; Jacobian evaluated at the approx() outputs.
template <class P>
Var mc_softmax_op(Tape<P>& tape, Var a, int axis = -1) {
  MCTensor<P> y = mc_softmax(tape.mc_value(a), axis);
  std::size_t outer, n, inner;
  detail::softmax_axis_dims(y, axis, outer, n, inner);
  NdArray val = y.approx();
  const NdArray yv = val;
  return tape.custom(
      std::move(val), std::move(y),
      [ai = a.idx, yv, outer, n, inner](Tape<P>& t, int self) {
        const NdArray& g = t.grad_ref(self);
        NdArray out(yv.shape());
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < inner; ++i) {
            double dot = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
              const std::size_t ix = (o * n + k) * inner + i;
              dot = fl_add<P>(dot, fl_mul<P>(g[ix], yv[ix]));
            }
            for (std::size_t k = 0; k < n; ++k) {
              const std::size_t ix = (o * n + k) * inner + i;
              out[ix] = fl_mul<P>(yv[ix], fl_sub<P>(g[ix], dot));
            }
          }
        }
        t.accumulate(ai, out);
      });
}

// ---------------------------------------------------------------------------
// Losses (working-precision arrays; MC predictions enter via approx()).
// ---------------------------------------------------------------------------

template <class P>
Var mse_loss(Tape<P>& tape, Var pred, const NdArray& target) {
  check_same_shape(tape.value(pred), target, "mse_loss");
  const NdArray& p = tape.value(pred);
  const double n = static_cast<double>(p.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double d = fl_sub<P>(p[i], target[i]);
    acc = fl_add<P>(acc, fl_mul<P>(d, d));
  }
  NdArray val = NdArray::scalar(fl_div<P>(acc, n));
  return tape.custom(std::move(val), std::nullopt,
                     [pi = pred.idx, target, n](Tape<P>& t, int self) {
                       const double g = t.grad_ref(self)[0];
                       const NdArray& pv = t.value_of_node(pi);
                       NdArray out(pv.shape());
                       for (std::size_t i = 0; i < pv.numel(); ++i) {
                         const double d = fl_sub<P>(pv[i], target[i]);
                         out[i] = fl_mul<P>(g, fl_div<P>(fl_mul<P>(2.0, d), n));
                       }
                       t.accumulate(pi, out);
                     });
}

/// Binary cross entropy on probabilities, log terms clamped at -100 like the
/// usual library implementations. Prefer sigmoid_bce_loss when the input is
/// a logit; its gradient is immune to saturation.
template <class P>
Var bce_loss(Tape<P>& tape, Var prob, const NdArray& target) {
  check_same_shape(tape.value(prob), target, "bce_loss");
  const NdArray& p = tape.value(prob);
  const double n = static_cast<double>(p.numel());
  auto clamped_log = [](double v) { return std::max(std::log(v), -100.0); };
  double acc = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double term =
        fl_add<P>(fl_mul<P>(target[i], P::round(clamped_log(p[i]))),
                  fl_mul<P>(fl_sub<P>(1.0, target[i]),
                            P::round(clamped_log(1.0 - p[i]))));
    acc = fl_sub<P>(acc, term);
  }
  NdArray val = NdArray::scalar(fl_div<P>(acc, n));
  return tape.custom(std::move(val), std::nullopt,
                     [pi = prob.idx, target, n](Tape<P>& t, int self) {
                       const double g = t.grad_ref(self)[0];
                       const NdArray& pv = t.value_of_node(pi);
                       NdArray out(pv.shape());
                       for (std::size_t i = 0; i < pv.numel(); ++i) {
                         const double denom =
                             std::max(pv[i] * (1.0 - pv[i]),
                                      static_cast<double>(P::min_normal));
                         const double d = fl_div<P>(fl_sub<P>(pv[i], target[i]),
                                                    P::round(denom));
                         out[i] = fl_mul<P>(g, fl_div<P>(d, n));
                       }
                       t.accumulate(pi, out);
                     });
}

/// Fused sigmoid + binary cross entropy: loss value matches
/// bce(sigmoid(logits)) with the same clamping, gradient is (p - y)/n.
template <class P>
Var sigmoid_bce_loss(Tape<P>& tape, Var logits, const NdArray& target) {
  check_same_shape(tape.value(logits), target, "sigmoid_bce_loss");
  const NdArray& z = tape.value(logits);
  const double n = static_cast<double>(z.numel());
  NdArray probs(z.shape());
  for (std::size_t i = 0; i < z.numel(); ++i) {
    probs[i] = P::round(1.0 / (1.0 + std::exp(-z[i])));
  }
  auto clamped_log = [](double v) { return std::max(std::log(v), -100.0); };
  double acc = 0.0;
  for (std::size_t i = 0; i < z.numel(); ++i) {
    const double term =
        fl_add<P>(fl_mul<P>(target[i], P::round(clamped_log(probs[i]))),
                  fl_mul<P>(fl_sub<P>(1.0, target[i]),
                            P::round(clamped_log(1.0 - probs[i]))));
    acc = fl_sub<P>(acc, term);
  }
  NdArray val = NdArray::scalar(fl_div<P>(acc, n));
  return tape.custom(std::move(val), std::nullopt,
                     [li = logits.idx, probs, target, n](Tape<P>& t, int self) {
                       const double g = t.grad_ref(self)[0];
                       NdArray out(probs.shape());
                       for (std::size_t i = 0; i < probs.numel(); ++i) {
                         out[i] = fl_mul<P>(
                             g, fl_div<P>(fl_sub<P>(probs[i], target[i]), n));
                       }
                       t.accumulate(li, out);
                     });
}

/// Mean negative log likelihood over rows of logits (N,C).
template <class P>
Var cross_entropy_loss(Tape<P>& tape, Var logits, const std::vector<int>& labels) {
  const NdArray& z = tape.value(logits);
  if (z.rank() != 2 || z.dim(0) != labels.size()) {
    throw std::invalid_argument("cross_entropy: logits " + shape_str(z.shape()) +
                                " do not match " + std::to_string(labels.size()) +
                                " labels");
  }
  const std::size_t n = z.dim(0), c = z.dim(1);
  NdArray softmax(z.shape());
  double acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double m = z.at(r, 0);
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, z.at(r, j));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      softmax.at(r, j) = P::round(std::exp(fl_sub<P>(z.at(r, j), m)));
      s = fl_add<P>(s, softmax.at(r, j));
    }
    for (std::size_t j = 0; j < c; ++j) {
      softmax.at(r, j) = fl_div<P>(softmax.at(r, j), s);
    }
    const double lse = fl_add<P>(m, P::round(std::log(s)));
    acc = fl_add<P>(acc, fl_sub<P>(lse, z.at(r, static_cast<std::size_t>(labels[r]))));
  }
  NdArray val = NdArray::scalar(fl_div<P>(acc, static_cast<double>(n)));
  return tape.custom(
      std::move(val), std::nullopt,
      [li = logits.idx, softmax, labels, n, c](Tape<P>& t, int self) {
        const double g = t.grad_ref(self)[0];
        NdArray out(softmax.shape());
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            double d = softmax.at(r, j);
            if (j == static_cast<std::size_t>(labels[r])) d = fl_sub<P>(d, 1.0);
            out.at(r, j) = fl_mul<P>(g, fl_div<P>(d, static_cast<double>(n)));
          }
        }
        t.accumulate(li, out);
      });
}

}  // namespace mcf

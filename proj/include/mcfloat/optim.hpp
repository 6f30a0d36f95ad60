#pragma once

/// Optimizers whose parameter accumulation goes through grow_expn, so an
/// update far below one ulp of the leading component still lands in the
/// trailing components instead of vanishing.
///
/// Side buffers (momentum, Adam moments) default to working precision; the
/// mc_state option stores them as 2-component MCTensors instead for
/// comparison runs. Steps mutate parameters and require exclusive access.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcfloat/mc_ops.hpp"
#include "mcfloat/nn.hpp"

namespace mcf {

namespace detail {

template <class P>
const NdArray& require_grad(const NamedParam<P>& p, const char* who) {
  if (!p.tensor->has_grad()) {
    throw std::runtime_error(std::string(who) + ": parameter '" + p.name +
                             "' has no gradient");
  }
  return p.tensor->grad();
}

}  // namespace detail

template <class P>
class MCSGD {
 public:
  struct Options {
    double lr = 0.01;
    double momentum = 0.0;
    bool mc_state = false;
  };

  MCSGD(std::vector<NamedParam<P>> params, Options opts)
      : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) {
      if (opts_.mc_state) {
        mc_velocity_.emplace_back(p.tensor->shape(), 2);
      } else {
        velocity_.emplace_back(p.tensor->shape());
      }
    }
  }

  void step() {
    const double lr = P::round(opts_.lr);
    const double mu = P::round(opts_.momentum);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      const NdArray& g = detail::require_grad(params_[k], "mc_sgd");
      NdArray update(g.shape());
      if (opts_.mc_state) {
        MCTensor<P>& u = mc_velocity_[k];
        u = opts_.momentum == 0.0 ? MCTensor<P>::from_float(g, 2)
                                  : grow_expn(scaling_n(u, NdArray::scalar(mu)), g);
        const NdArray ua = u.approx();
        for (std::size_t i = 0; i < update.numel(); ++i) {
          update[i] = -fl_mul<P>(lr, ua[i]);
        }
      } else {
        NdArray& u = velocity_[k];
        for (std::size_t i = 0; i < update.numel(); ++i) {
          u[i] = fl_add<P>(fl_mul<P>(mu, u[i]), g[i]);
          update[i] = -fl_mul<P>(lr, u[i]);
        }
      }
      detail::apply_update(*params_[k].tensor, update);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor->zero_grad();
  }

 private:
  std::vector<NamedParam<P>> params_;
  Options opts_;
  std::vector<NdArray> velocity_;
  std::vector<MCTensor<P>> mc_velocity_;
};

template <class P>
class MCAdam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  MCAdam(std::vector<NamedParam<P>> params, Options opts)
      : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor->shape());
      v_.emplace_back(p.tensor->shape());
    }
  }

  void step() {
    ++t_;
    const double lr = P::round(opts_.lr);
    const double b1 = P::round(opts_.beta1);
    const double b2 = P::round(opts_.beta2);
    const double eps = P::round(opts_.eps);
    // schedule scalars evaluated in binary64, then rounded once
    const double bc1 = P::round(1.0 - std::pow(opts_.beta1, t_));
    const double bc2 = P::round(1.0 - std::pow(opts_.beta2, t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      const NdArray& g = detail::require_grad(params_[k], "mc_adam");
      NdArray update(g.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) {
        m_[k][i] = fl_add<P>(fl_mul<P>(b1, m_[k][i]),
                             fl_mul<P>(fl_sub<P>(1.0, b1), g[i]));
        v_[k][i] = fl_add<P>(fl_mul<P>(b2, v_[k][i]),
                             fl_mul<P>(fl_sub<P>(1.0, b2), fl_mul<P>(g[i], g[i])));
        const double mhat = fl_div<P>(m_[k][i], bc1);
        const double vhat = fl_div<P>(v_[k][i], bc2);
        const double denom = fl_add<P>(fl_sqrt<P>(vhat), eps);
        update[i] = -fl_mul<P>(lr, fl_div<P>(mhat, denom));
      }
      detail::apply_update(*params_[k].tensor, update);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor->zero_grad();
  }

  long step_count() const { return t_; }

 private:
  std::vector<NamedParam<P>> params_;
  Options opts_;
  std::vector<NdArray> m_, v_;
  long t_ = 0;
};

}  // namespace mcf

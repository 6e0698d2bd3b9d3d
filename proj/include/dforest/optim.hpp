#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "model.hpp"

namespace dforest {

enum class OptimizerKind { sgd, adam, qhadam };

inline std::string_view to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::qhadam: return "qhadam";
  }
  return "?";
}

inline OptimizerKind parse_optimizer_kind(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  if (s == "qhadam") return OptimizerKind::qhadam;
  throw Error("unknown optimizer '" + std::string(s) + "'");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::qhadam;
  double learning_rate = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Quasi-hyperbolic weights; nu1 = nu2 = 1 recovers Adam.
  double nu1 = 0.7;
  double nu2 = 1.0;
  // Decoupled: theta *= (1 - lr * weight_decay) before the gradient step.
  double weight_decay = 0.0;

  void validate() const {
    if (!(learning_rate > 0)) throw Error("learning rate must be > 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
      throw Error("beta1 and beta2 must lie in [0, 1)");
    if (!(nu1 >= 0 && nu1 <= 1 && nu2 >= 0 && nu2 <= 1))
      throw Error("nu1 and nu2 must lie in [0, 1]");
    if (!(weight_decay >= 0)) throw Error("weight decay must be >= 0");
  }
};

// SGD / Adam / QHAdam over flat spans. Moment buffers are laid out in the
// order the parameter groups are visited, so one optimizer covers the forest
// and the attention block with a single learning rate.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {}) : config_(config) { config_.validate(); }

  const OptimizerConfig& config() const { return config_; }
  std::uint64_t steps() const { return t_; }

  // Updates `params` in place. Throws without touching anything if any
  // gradient entry is non-finite.
  void step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size()) throw Error("optimizer: parameter/gradient size mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i)
      if (!std::isfinite(grads[i]))
        throw Error("optimizer: non-finite gradient at flat index " + std::to_string(i));
    ensure_moments(params.size());
    ++t_;
    apply(params, grads, 0);
  }

  void step(Parameters& params, const GradientBuffer& grads) {
    std::vector<std::span<const double>> g;
    for_each_group(grads.values,
                   [&](ParamGroup, std::size_t, std::span<const double> s) { g.push_back(s); });
    std::size_t total = 0, i = 0;
    for_each_group(params, [&](ParamGroup, std::size_t, std::span<double> s) {
      if (i >= g.size() || g[i].size() != s.size())
        throw Error("optimizer: gradient buffer does not mirror the parameters");
      for (double v : g[i])
        if (!std::isfinite(v)) throw Error("optimizer: non-finite gradient");
      total += s.size();
      ++i;
    });
    ensure_moments(total);
    ++t_;
    std::size_t offset = 0;
    i = 0;
    for_each_group(params, [&](ParamGroup, std::size_t, std::span<double> s) {
      apply(s, g[i++], offset);
      offset += s.size();
    });
  }

  std::size_t capacity_bytes() const {
    return (m_.capacity() + v_.capacity()) * sizeof(double);
  }

 private:
  void ensure_moments(std::size_t n) {
    if (config_.kind == OptimizerKind::sgd) return;
    if (m_.empty()) {
      m_.assign(n, 0.0);
      v_.assign(n, 0.0);
    } else if (m_.size() != n) {
      throw Error("optimizer: parameter count changed between steps");
    }
  }

  void apply(std::span<double> theta, std::span<const double> g, std::size_t offset) {
    const auto& c = config_;
    const double lr = c.learning_rate;
    if (c.weight_decay > 0)
      for (auto& w : theta) w *= 1.0 - lr * c.weight_decay;

    if (c.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * g[i];
      return;
    }
    const double bc1 = 1.0 - std::pow(c.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(c.beta2, double(t_));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      double& m = m_[offset + i];
      double& v = v_[offset + i];
      m = c.beta1 * m + (1.0 - c.beta1) * g[i];
      v = c.beta2 * v + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      if (c.kind == OptimizerKind::adam) {
        theta[i] -= lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
      } else {
        const double num = (1.0 - c.nu1) * g[i] + c.nu1 * m_hat;
        const double den = std::sqrt((1.0 - c.nu2) * g[i] * g[i] + c.nu2 * v_hat) + c.epsilon;
        theta[i] -= lr * num / den;
      }
    }
  }

  OptimizerConfig config_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace dforest

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "data.hpp"
#include "error.hpp"
#include "forest.hpp"
#include "matrix.hpp"

namespace dforest {

enum class LossKind { mse, logloss, cross_entropy };
enum class MetricKind { mse, error_rate };

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::mse: return "mse";
    case LossKind::logloss: return "logloss";
    case LossKind::cross_entropy: return "cross_entropy";
  }
  return "?";
}

inline std::string_view to_string(MetricKind k) {
  return k == MetricKind::mse ? "mse" : "error_rate";
}

// Regression binds to mse/mse with one output, binary to logloss/error_rate
// with a single logit, multiclass to cross_entropy/error_rate with C logits.
struct TaskBinding {
  TargetKind kind = TargetKind::regression;
  int classes = 0;
  LossKind loss = LossKind::mse;
  MetricKind metric = MetricKind::mse;

  static TaskBinding for_task(TargetKind kind, int classes = 0) {
    switch (kind) {
      case TargetKind::regression:
        return {kind, 0, LossKind::mse, MetricKind::mse};
      case TargetKind::binary:
        return {kind, 2, LossKind::logloss, MetricKind::error_rate};
      case TargetKind::multiclass:
        if (classes < 2) throw Error("multiclass task needs at least 2 classes");
        return {kind, classes, LossKind::cross_entropy, MetricKind::error_rate};
    }
    throw Error("unknown task kind");
  }

  static TaskBinding for_schema(const DatasetSchema& s) {
    return for_task(s.target_kind, s.classes);
  }

  std::size_t outputs() const {
    return kind == TargetKind::multiclass ? static_cast<std::size_t>(classes) : 1;
  }
};

namespace detail {

// log(1 + exp(t)) without overflow.
template <std::floating_point T>
T softplus(T t) {
  return std::max(t, T(0)) + std::log1p(std::exp(-std::abs(t)));
}

template <std::floating_point T>
T log_sum_exp(std::span<const T> z) {
  const T peak = *std::max_element(z.begin(), z.end());
  T sum = 0;
  for (T v : z) sum += std::exp(v - peak);
  return peak + std::log(sum);
}

}  // namespace detail

template <std::floating_point T>
T sample_loss(const TaskBinding& binding, std::span<const T> pred, double target) {
  switch (binding.loss) {
    case LossKind::mse: {
      const T d = pred[0] - T(target);
      return d * d;
    }
    case LossKind::logloss: {
      const T sign = target > 0.5 ? T(1) : T(-1);
      return detail::softplus<T>(-sign * pred[0]);
    }
    case LossKind::cross_entropy:
      return detail::log_sum_exp<T>(pred) - pred[static_cast<std::size_t>(target)];
  }
  return T(0);
}

// d sample_loss / d pred.
template <std::floating_point T>
void sample_loss_gradient(const TaskBinding& binding, std::span<const T> pred, double target,
                          std::span<T> grad) {
  switch (binding.loss) {
    case LossKind::mse:
      grad[0] = T(2) * (pred[0] - T(target));
      return;
    case LossKind::logloss: {
      const T sign = target > 0.5 ? T(1) : T(-1);
      grad[0] = -sign * sigmoid<T>(-sign * pred[0]);
      return;
    }
    case LossKind::cross_entropy: {
      const T lse = detail::log_sum_exp<T>(pred);
      for (std::size_t c = 0; c < pred.size(); ++c) grad[c] = std::exp(pred[c] - lse);
      grad[static_cast<std::size_t>(target)] -= T(1);
      return;
    }
  }
}

// Squared error for regression, 0/1 misclassification otherwise.
inline double sample_metric(const TaskBinding& binding, std::span<const double> pred,
                            double target) {
  switch (binding.metric) {
    case MetricKind::mse: {
      const double d = pred[0] - target;
      return d * d;
    }
    case MetricKind::error_rate: {
      std::size_t label = 0;
      if (binding.kind == TargetKind::binary) {
        label = pred[0] > 0.0 ? 1 : 0;
      } else {
        label = static_cast<std::size_t>(std::max_element(pred.begin(), pred.end()) -
                                         pred.begin());
      }
      return label == static_cast<std::size_t>(target) ? 0.0 : 1.0;
    }
  }
  return 0.0;
}

struct LossValue {
  double mean = 0;
  std::vector<double> per_sample;
};

namespace detail {
inline void check_shapes(const Matrix<double>& pred, std::span<const double> targets,
                         const TaskBinding& binding) {
  if (pred.rows() != targets.size())
    throw Error("prediction has " + std::to_string(pred.rows()) + " rows but there are " +
                std::to_string(targets.size()) + " targets");
  if (pred.cols() != binding.outputs())
    throw Error("prediction width " + std::to_string(pred.cols()) + " does not match task (" +
                std::to_string(binding.outputs()) + ")");
}
}  // namespace detail

inline LossValue loss(const Matrix<double>& pred, std::span<const double> targets,
                      const TaskBinding& binding) {
  detail::check_shapes(pred, targets, binding);
  LossValue out;
  out.per_sample.resize(targets.size());
  double sum = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    out.per_sample[i] = sample_loss<double>(binding, pred.row(i), targets[i]);
    sum += out.per_sample[i];
  }
  out.mean = targets.empty() ? 0.0 : sum / double(targets.size());
  return out;
}

inline double metric(const Matrix<double>& pred, std::span<const double> targets,
                     const TaskBinding& binding) {
  detail::check_shapes(pred, targets, binding);
  double sum = 0;
  for (std::size_t i = 0; i < targets.size(); ++i)
    sum += sample_metric(binding, pred.row(i), targets[i]);
  return targets.empty() ? 0.0 : sum / double(targets.size());
}

}  // namespace dforest

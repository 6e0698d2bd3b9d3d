#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <span>
#include <string>
#include <string_view>

#include "error.hpp"
#include "forest.hpp"
#include "matrix.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace dforest {

enum class GateKind { off, sigmoid, softmax };

inline std::string_view to_string(GateKind g) {
  switch (g) {
    case GateKind::off: return "off";
    case GateKind::sigmoid: return "sigmoid";
    case GateKind::softmax: return "softmax";
  }
  return "?";
}

inline GateKind parse_gate_kind(std::string_view s) {
  if (s == "off") return GateKind::off;
  if (s == "sigmoid") return GateKind::sigmoid;
  if (s == "softmax") return GateKind::softmax;
  throw Error("unknown attention gate '" + std::string(s) + "'");
}

// Hidden width of the regulate bottleneck: K / r, clamped to at least one
// unit when r > K.
inline std::size_t attention_hidden_width(std::size_t trees, std::size_t reduction) {
  if (reduction == 0) throw Error("reduction ratio must be >= 1");
  if (trees >= reduction && trees % reduction != 0)
    throw Error("reduction ratio " + std::to_string(reduction) + " does not divide " +
                std::to_string(trees) + " trees");
  return std::max<std::size_t>(1, trees / reduction);
}

// Tree attention block weights: W1 is hidden x K, W2 is K x hidden. Both are
// empty when the gate is off.
struct AttentionParameters {
  GateKind gate = GateKind::sigmoid;
  std::size_t reduction = 16;
  Matrix<double> W1;
  Matrix<double> W2;

  static AttentionParameters zeros(std::size_t trees, std::size_t reduction, GateKind gate) {
    AttentionParameters a;
    a.gate = gate;
    a.reduction = reduction;
    if (gate != GateKind::off) {
      const std::size_t hidden = attention_hidden_width(trees, reduction);
      a.W1 = Matrix<double>(hidden, trees);
      a.W2 = Matrix<double>(trees, hidden);
    }
    return a;
  }

  bool enabled() const { return gate != GateKind::off; }
  std::size_t hidden() const { return W1.rows(); }
  std::size_t trees() const { return W1.cols(); }

  bool operator==(const AttentionParameters&) const = default;
};

// Uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)] for both layers.
inline void init_attention(AttentionParameters& att, Engine& engine) {
  if (!att.enabled()) return;
  std::uniform_real_distribution<double> w1(-1.0 / std::sqrt(double(att.W1.cols())),
                                            1.0 / std::sqrt(double(att.W1.cols())));
  std::uniform_real_distribution<double> w2(-1.0 / std::sqrt(double(att.W2.cols())),
                                            1.0 / std::sqrt(double(att.W2.cols())));
  for (auto& w : att.W1.flat()) w = w1(engine);
  for (auto& w : att.W2.flat()) w = w2(engine);
}

// Per-tree descriptor: the mean of that tree's F response components.
template <std::floating_point T>
void squeeze(std::span<const T> responses, std::size_t outputs, std::span<T> z) {
  for (std::size_t h = 0; h < z.size(); ++h) {
    T sum = 0;
    for (std::size_t f = 0; f < outputs; ++f) sum += responses[h * outputs + f];
    z[h] = sum / T(outputs);
  }
}

inline Matrix<double> squeeze(const Tensor3<double>& responses) {
  if (responses.dim2() == 0) throw Error("squeeze needs at least one response component");
  Matrix<double> z(responses.dim0(), responses.dim1());
  for (std::size_t i = 0; i < responses.dim0(); ++i) {
    auto sample = std::span<const double>(responses.slice(i, 0).data(),
                                          responses.dim1() * responses.dim2());
    squeeze<double>(sample, responses.dim2(), z.row(i));
  }
  return z;
}

// Elementwise sigmoid or softmax over all K entries.
template <std::floating_point T>
void apply_gate(GateKind gate, std::span<const T> in, std::span<T> out) {
  switch (gate) {
    case GateKind::sigmoid:
      for (std::size_t h = 0; h < in.size(); ++h) out[h] = sigmoid<T>(in[h]);
      return;
    case GateKind::softmax: {
      const T peak = *std::max_element(in.begin(), in.end());
      T sum = 0;
      for (std::size_t h = 0; h < in.size(); ++h) {
        out[h] = std::exp(in[h] - peak);
        sum += out[h];
      }
      for (auto& v : out) v /= sum;
      return;
    }
    case GateKind::off:
      std::fill(out.begin(), out.end(), T(1));
      return;
  }
}

// omega = gate(W2 relu(W1 z)). hidden_pre (W1 z) and gate_in (W2 relu(.))
// are returned for the backward pass.
template <std::floating_point T>
void regulate(const AttentionParameters& att, std::span<const T> z, std::span<T> hidden_pre,
              std::span<T> gate_in, std::span<T> omega) {
  const std::size_t k = att.trees(), hidden = att.hidden();
  for (std::size_t u = 0; u < hidden; ++u) {
    auto w = att.W1.row(u);
    T acc = 0;
    for (std::size_t h = 0; h < k; ++h) acc += T(w[h]) * z[h];
    hidden_pre[u] = acc;
  }
  for (std::size_t h = 0; h < k; ++h) {
    auto w = att.W2.row(h);
    T acc = 0;
    for (std::size_t u = 0; u < hidden; ++u)
      acc += T(w[u]) * std::max(T(0), hidden_pre[u]);
    gate_in[h] = acc;
  }
  apply_gate<T>(att.gate, gate_in, omega);
}

inline std::vector<double> regulate(const AttentionParameters& att, std::span<const double> z) {
  if (!att.enabled()) throw Error("regulate called with the attention gate off");
  if (z.size() != att.trees())
    throw Error("descriptor has " + std::to_string(z.size()) + " entries, attention expects " +
                std::to_string(att.trees()));
  std::vector<double> hidden(att.hidden()), gate_in(att.trees()), omega(att.trees());
  regulate<double>(att, z, hidden, gate_in, omega);
  return omega;
}

// (1/K) sum_h omega(i, h) * responses(i, h, :).
template <std::floating_point T>
void attended_prediction(const Tensor3<T>& responses, const Matrix<T>& omega, Matrix<T>& out) {
  const std::size_t k = responses.dim1(), f_count = responses.dim2();
  out.resize(responses.dim0(), f_count);
  for (std::size_t i = 0; i < responses.dim0(); ++i) {
    auto row = out.row(i);
    std::fill(row.begin(), row.end(), T(0));
    for (std::size_t h = 0; h < k; ++h) {
      const T w = omega(i, h);
      auto y = responses.slice(i, h);
      for (std::size_t f = 0; f < f_count; ++f) row[f] += w * y[f];
    }
    for (auto& v : row) v /= T(k);
  }
}

inline Matrix<double> attended_prediction(const Tensor3<double>& responses,
                                          const Matrix<double>& omega) {
  if (omega.rows() != responses.dim0() || omega.cols() != responses.dim1())
    throw Error("attention weights do not match the response tensor");
  Matrix<double> out;
  attended_prediction(responses, omega, out);
  return out;
}

// Attention caches for the backward pass.
struct AttentionTrace {
  Matrix<double> descriptors;  // B x K
  Matrix<double> hidden_pre;   // B x hidden
  Matrix<double> gate_in;      // B x K
  Matrix<double> weights;      // B x K

  std::size_t capacity_bytes() const {
    return descriptors.capacity_bytes() + hidden_pre.capacity_bytes() +
           gate_in.capacity_bytes() + weights.capacity_bytes();
  }
};

inline void attention_weights(const AttentionParameters& att, const Tensor3<double>& responses,
                              AttentionTrace& trace, std::size_t threads = 1) {
  const std::size_t n = responses.dim0(), k = responses.dim1(), f_count = responses.dim2();
  if (att.trees() != k)
    throw Error("attention expects " + std::to_string(att.trees()) + " trees, got " +
                std::to_string(k));
  trace.descriptors.resize(n, k);
  trace.hidden_pre.resize(n, att.hidden());
  trace.gate_in.resize(n, k);
  trace.weights.resize(n, k);
  parallel_chunks(n, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto sample = std::span<const double>(responses.slice(i, 0).data(), k * f_count);
      squeeze<double>(sample, f_count, trace.descriptors.row(i));
      regulate<double>(att, trace.descriptors.row(i), trace.hidden_pre.row(i),
                       trace.gate_in.row(i), trace.weights.row(i));
    }
  });
}

}  // namespace dforest

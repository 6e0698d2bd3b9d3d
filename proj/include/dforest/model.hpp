#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

#include "attention.hpp"
#include "error.hpp"
#include "forest.hpp"
#include "matrix.hpp"
#include "random.hpp"

namespace dforest {

struct ModelShape {
  std::size_t trees = 1024;
  std::size_t depth = 5;
  std::size_t features = 1;
  std::size_t outputs = 1;
  std::size_t reduction = 16;
  GateKind gate = GateKind::sigmoid;
};

// Every learnable tensor of the model: the forest plus the attention block.
struct Parameters {
  ForestParameters forest;
  AttentionParameters attention;

  static Parameters zeros(const ModelShape& s) {
    if (s.trees < 1 || s.depth < 1 || s.features < 1 || s.outputs < 1)
      throw Error("model shape needs trees, depth, features and outputs >= 1");
    return {ForestParameters::zeros(s.trees, s.depth, s.features, s.outputs),
            AttentionParameters::zeros(s.trees, s.reduction, s.gate)};
  }

  ModelShape shape() const {
    return {forest.size(), forest.depth(), forest.features(), forest.outputs(),
            attention.reduction, attention.gate};
  }

  bool operator==(const Parameters&) const = default;
};

inline Parameters initialize_parameters(const ModelShape& shape, std::uint64_t seed) {
  auto p = Parameters::zeros(shape);
  auto forest_rng = make_engine(seed, Stream::forest_init);
  init_forest(p.forest, forest_rng);
  auto attention_rng = make_engine(seed, Stream::attention_init);
  init_attention(p.attention, attention_rng);
  return p;
}

enum class ParamGroup { A, b, Q, W1, W2 };

inline std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::A: return "A";
    case ParamGroup::b: return "b";
    case ParamGroup::Q: return "Q";
    case ParamGroup::W1: return "W1";
    case ParamGroup::W2: return "W2";
  }
  return "?";
}

// Visits every parameter tensor in declaration order: A, b, Q of tree 0,
// then tree 1, ..., then W1 and W2. fn(group, tree_index, span).
template <typename P, typename Fn>
  requires std::is_same_v<std::remove_const_t<P>, Parameters>
void for_each_group(P& params, Fn&& fn) {
  for (std::size_t h = 0; h < params.forest.trees.size(); ++h) {
    auto& t = params.forest.trees[h];
    fn(ParamGroup::A, h, t.A.flat());
    fn(ParamGroup::b, h, std::span(t.b));
    fn(ParamGroup::Q, h, t.Q.flat());
  }
  if (params.attention.enabled()) {
    fn(ParamGroup::W1, std::size_t{0}, params.attention.W1.flat());
    fn(ParamGroup::W2, std::size_t{0}, params.attention.W2.flat());
  }
}

inline std::size_t parameter_count(const Parameters& p) {
  std::size_t n = 0;
  for_each_group(p, [&](ParamGroup, std::size_t, auto span) { n += span.size(); });
  return n;
}

inline std::size_t parameter_bytes(const Parameters& p) {
  std::size_t n = 0;
  for (const auto& t : p.forest.trees)
    n += t.A.capacity_bytes() + capacity_bytes(t.b) + t.Q.capacity_bytes();
  return n + p.attention.W1.capacity_bytes() + p.attention.W2.capacity_bytes();
}

// Gradient accumulator, shape-congruent with the parameters it mirrors.
struct GradientBuffer {
  Parameters values;

  static GradientBuffer like(const Parameters& p) { return {Parameters::zeros(p.shape())}; }

  void zero() {
    for_each_group(values, [](ParamGroup, std::size_t, std::span<double> s) {
      std::fill(s.begin(), s.end(), 0.0);
    });
  }

  void add(const GradientBuffer& other) {
    std::vector<std::span<const double>> src;
    for_each_group(other.values,
                   [&](ParamGroup, std::size_t, std::span<const double> s) { src.push_back(s); });
    std::size_t i = 0;
    for_each_group(values, [&](ParamGroup, std::size_t, std::span<double> s) {
      for (std::size_t j = 0; j < s.size(); ++j) s[j] += src[i][j];
      ++i;
    });
  }
};

struct ForwardTrace {
  ForestTrace forest;
  AttentionTrace attention;
  Matrix<double> predictions;  // B x F

  std::size_t batch_size() const { return predictions.rows(); }

  std::size_t capacity_bytes() const {
    return forest.capacity_bytes() + attention.capacity_bytes() + predictions.capacity_bytes();
  }
};

// Full forward pass over a block of rows: gates, leaf probabilities, tree
// responses, attention weights and the ensemble prediction.
inline void forward(const Parameters& params, const Matrix<double>& rows, ForwardTrace& trace,
                    std::size_t threads = 1) {
  forest_responses(params.forest, rows, trace.forest, threads);
  if (params.attention.enabled()) {
    attention_weights(params.attention, trace.forest.responses, trace.attention, threads);
    attended_prediction(trace.forest.responses, trace.attention.weights, trace.predictions);
  } else {
    ensemble_average(trace.forest.responses, trace.predictions);
  }
}

inline Matrix<double> predict(const Parameters& params, const Matrix<double>& rows,
                              std::size_t threads = 1) {
  ForwardTrace trace;
  forward(params, rows, trace, threads);
  return trace.predictions;
}

}  // namespace dforest

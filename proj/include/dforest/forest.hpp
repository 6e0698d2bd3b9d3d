#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "data.hpp"
#include "error.hpp"
#include "matrix.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace dforest {

// Logistic sigmoid, branch form so exp() never overflows.
template <std::floating_point T>
T sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

constexpr std::size_t internal_node_count(std::size_t depth) {
  return (std::size_t{1} << depth) - 1;
}
constexpr std::size_t leaf_count(std::size_t depth) { return std::size_t{1} << depth; }

// One soft tree of uniform depth. Internal nodes use heap numbering 1..2^d-1
// (children of n are 2n, 2n+1) and are stored at index n-1; leaves are stored
// left to right, leaf j being heap node 2^d + j.
struct TreeParameters {
  std::size_t depth = 0;
  Matrix<double> A;       // internal nodes x features
  std::vector<double> b;  // internal nodes
  Matrix<double> Q;       // leaves x outputs

  static TreeParameters zeros(std::size_t depth, std::size_t features, std::size_t outputs) {
    TreeParameters t;
    t.depth = depth;
    t.A = Matrix<double>(internal_node_count(depth), features);
    t.b.assign(internal_node_count(depth), 0.0);
    t.Q = Matrix<double>(leaf_count(depth), outputs);
    return t;
  }

  std::size_t nodes() const { return b.size(); }
  std::size_t leaves() const { return Q.rows(); }
  std::size_t features() const { return A.cols(); }
  std::size_t outputs() const { return Q.cols(); }

  bool operator==(const TreeParameters&) const = default;
};

struct ForestParameters {
  std::vector<TreeParameters> trees;

  static ForestParameters zeros(std::size_t trees, std::size_t depth, std::size_t features,
                                std::size_t outputs) {
    ForestParameters f;
    f.trees.assign(trees, TreeParameters::zeros(depth, features, outputs));
    return f;
  }

  std::size_t size() const { return trees.size(); }
  std::size_t depth() const { return trees.front().depth; }
  std::size_t features() const { return trees.front().features(); }
  std::size_t outputs() const { return trees.front().outputs(); }

  void validate() const {
    if (trees.empty()) throw Error("forest needs at least one tree");
    const auto& t0 = trees.front();
    if (t0.depth < 1) throw Error("tree depth must be >= 1");
    for (const auto& t : trees) {
      if (t.depth != t0.depth || t.A.rows() != internal_node_count(t.depth) ||
          t.A.cols() != t0.A.cols() || t.b.size() != t.A.rows() ||
          t.Q.rows() != leaf_count(t.depth) || t.Q.cols() != t0.Q.cols())
        throw Error("forest trees have inconsistent shapes");
    }
  }

  bool operator==(const ForestParameters&) const = default;
};

// A ~ N(0, 1/sqrt(M)), b = 0, Q ~ N(0, 0.01).
inline void init_forest(ForestParameters& forest, Engine& engine) {
  for (auto& t : forest.trees) {
    std::normal_distribution<double> weight(0.0, 1.0 / std::sqrt(double(t.features())));
    std::normal_distribution<double> response(0.0, 0.01);
    for (auto& a : t.A.flat()) a = weight(engine);
    std::fill(t.b.begin(), t.b.end(), 0.0);
    for (auto& q : t.Q.flat()) q = response(engine);
  }
}

template <std::floating_point T>
void gating_values(const TreeParameters& tree, std::span<const T> x, std::span<T> g) {
  for (std::size_t n = 0; n < tree.nodes(); ++n) {
    auto a = tree.A.row(n);
    T z = 0;
    for (std::size_t m = 0; m < a.size(); ++m) z += T(a[m]) * x[m];
    g[n] = sigmoid<T>(z - T(tree.b[n]));
  }
}

// B x nodes matrix of gate values for every row of `rows`.
inline Matrix<double> gating_values(const TreeParameters& tree, const Matrix<double>& rows) {
  if (rows.cols() != tree.features())
    throw Error("batch has " + std::to_string(rows.cols()) + " features, tree expects " +
                std::to_string(tree.features()));
  Matrix<double> g(rows.rows(), tree.nodes());
  for (std::size_t i = 0; i < rows.rows(); ++i)
    gating_values<double>(tree, rows.row(i), g.row(i));
  return g;
}

// Path products with left factor (1 - g) and right factor g, expanded one
// level at a time in place. p must hold 2^depth entries.
template <std::floating_point T>
void leaf_probabilities(std::span<const T> g, std::size_t depth, std::span<T> p) {
  p[0] = T(1);
  for (std::size_t level = 0; level < depth; ++level) {
    const std::size_t width = std::size_t{1} << level;
    for (std::size_t i = width; i-- > 0;) {
      const T gate = g[width + i - 1];
      const T reach = p[i];
      p[2 * i] = reach * (T(1) - gate);
      p[2 * i + 1] = reach * gate;
    }
  }
}

inline std::vector<double> leaf_probabilities(std::span<const double> g, std::size_t depth) {
  if (g.size() != internal_node_count(depth))
    throw Error("gate vector has wrong length for depth " + std::to_string(depth));
  std::vector<double> p(leaf_count(depth));
  leaf_probabilities<double>(g, depth, p);
  return p;
}

template <std::floating_point T>
void tree_response(const TreeParameters& tree, std::span<const T> p, std::span<T> out) {
  std::fill(out.begin(), out.end(), T(0));
  for (std::size_t j = 0; j < tree.leaves(); ++j) {
    auto q = tree.Q.row(j);
    for (std::size_t f = 0; f < out.size(); ++f) out[f] += p[j] * T(q[f]);
  }
}

inline std::vector<double> tree_response(const TreeParameters& tree, std::span<const double> p) {
  std::vector<double> out(tree.outputs());
  tree_response<double>(tree, p, out);
  return out;
}

// (1/K) sum_h responses(i, h, :). The attention-off prediction.
template <std::floating_point T>
void ensemble_average(const Tensor3<T>& responses, Matrix<T>& out) {
  const std::size_t k = responses.dim1(), f_count = responses.dim2();
  out.resize(responses.dim0(), f_count);
  for (std::size_t i = 0; i < responses.dim0(); ++i) {
    auto row = out.row(i);
    std::fill(row.begin(), row.end(), T(0));
    for (std::size_t h = 0; h < k; ++h) {
      auto y = responses.slice(i, h);
      for (std::size_t f = 0; f < f_count; ++f) row[f] += y[f];
    }
    for (auto& v : row) v /= T(k);
  }
}

inline Matrix<double> ensemble_average(const Tensor3<double>& responses) {
  if (responses.dim1() == 0) throw Error("ensemble_average needs K >= 1");
  Matrix<double> out;
  ensemble_average(responses, out);
  return out;
}

// Forward caches of the forest part of the pass: B x K x nodes gates,
// B x K x leaves probabilities and B x K x F responses.
struct ForestTrace {
  Tensor3<double> gates;
  Tensor3<double> probabilities;
  Tensor3<double> responses;

  std::size_t capacity_bytes() const {
    return gates.capacity_bytes() + probabilities.capacity_bytes() +
           responses.capacity_bytes();
  }
};

inline void forest_responses(const ForestParameters& forest, const Matrix<double>& rows,
                             ForestTrace& trace, std::size_t threads = 1) {
  if (rows.cols() != forest.features())
    throw Error("batch has " + std::to_string(rows.cols()) + " features, forest expects " +
                std::to_string(forest.features()));
  const std::size_t n = rows.rows(), k = forest.size();
  const std::size_t depth = forest.depth();
  trace.gates.resize(n, k, internal_node_count(depth));
  trace.probabilities.resize(n, k, leaf_count(depth));
  trace.responses.resize(n, k, forest.outputs());
  parallel_chunks(n, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto x = rows.row(i);
      for (std::size_t h = 0; h < k; ++h) {
        const auto& tree = forest.trees[h];
        auto g = trace.gates.slice(i, h);
        auto p = trace.probabilities.slice(i, h);
        gating_values<double>(tree, x, g);
        leaf_probabilities<double>(g, depth, p);
        tree_response<double>(tree, p, trace.responses.slice(i, h));
      }
    }
  });
}

}  // namespace dforest

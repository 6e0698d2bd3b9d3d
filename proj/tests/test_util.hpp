#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "dforest/data.hpp"
#include "dforest/matrix.hpp"

namespace dforest::testing {

inline std::string temp_path(const std::string& name) {
  auto dir = std::filesystem::path(DFOREST_TEST_TMP) / "tmp";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

inline std::string write_file(const std::string& name, const std::string& content) {
  auto path = temp_path(name);
  std::ofstream(path) << content;
  return path;
}

inline Batch make_batch(const Matrix<double>& rows, std::vector<double> targets) {
  Batch b;
  b.rows = rows;
  b.targets = std::move(targets);
  b.ids.resize(b.targets.size());
  for (std::size_t i = 0; i < b.ids.size(); ++i) b.ids[i] = i;
  return b;
}

inline Matrix<double> random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng,
                                    double scale = 1.0) {
  std::normal_distribution<double> unit(0.0, scale);
  Matrix<double> m(r, c);
  for (auto& v : m.flat()) v = unit(rng);
  return m;
}

// y = sum_j w_j x_j over standard-normal features.
inline DataMatrix linear_dataset(std::size_t n, std::size_t m, const std::vector<double>& w,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  DataMatrix d;
  d.schema.feature_count = m;
  d.rows = Matrix<double>(n, m);
  d.targets.resize(n);
  d.ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double y = 0;
    for (std::size_t j = 0; j < m; ++j) {
      d.rows(i, j) = unit(rng);
      if (j < w.size()) y += w[j] * d.rows(i, j);
    }
    d.targets[i] = y;
    d.ids[i] = i;
  }
  return d;
}

}  // namespace dforest::testing

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "error.hpp"
#include "matrix.hpp"
#include "random.hpp"

namespace dforest {

enum class TargetKind { regression, binary, multiclass };

inline std::string_view to_string(TargetKind k) {
  switch (k) {
    case TargetKind::regression: return "regression";
    case TargetKind::binary: return "binary";
    case TargetKind::multiclass: return "multiclass";
  }
  return "?";
}

inline TargetKind parse_target_kind(std::string_view s) {
  if (s == "regression") return TargetKind::regression;
  if (s == "binary") return TargetKind::binary;
  if (s == "multiclass") return TargetKind::multiclass;
  throw Error("unknown task kind '" + std::string(s) + "'");
}

struct DatasetSchema {
  // 0 means "take it from the CSV header" when loading.
  std::size_t feature_count = 0;
  TargetKind target_kind = TargetKind::regression;
  // C for multiclass; ignored otherwise.
  int classes = 0;
  // Header name or zero-based column index; empty selects the last column.
  std::string target_column;
  std::vector<std::string> feature_names;

  // Width of the model output: C logits for multiclass, one value otherwise.
  std::size_t output_width() const {
    return target_kind == TargetKind::multiclass ? static_cast<std::size_t>(classes) : 1;
  }

  void validate() const {
    if (feature_count < 1) throw Error("schema: feature_count must be >= 1");
    if (target_kind == TargetKind::multiclass && classes < 2)
      throw Error("schema: multiclass needs at least 2 classes");
  }
};

struct DataMatrix {
  DatasetSchema schema;
  Matrix<double> rows;
  std::vector<double> targets;
  // Row index in the originally loaded file; survives split and shuffling.
  std::vector<std::size_t> ids;

  std::size_t size() const { return rows.rows(); }
  std::size_t features() const { return rows.cols(); }
};

struct Batch {
  Matrix<double> rows;
  std::vector<double> targets;
  std::vector<std::size_t> ids;

  std::size_t size() const { return rows.rows(); }

  std::size_t capacity_bytes() const {
    return rows.capacity_bytes() + dforest::capacity_bytes(targets) +
           dforest::capacity_bytes(ids);
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      break;
    }
    cells.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return cells;
}

inline std::optional<double> parse_real(std::string_view cell) {
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || ptr != cell.data() + cell.size() || cell.empty())
    return std::nullopt;
  return v;
}

inline std::string cell_ref(std::size_t line_no, std::size_t col,
                            const std::vector<std::string>& header) {
  std::string s = "row " + std::to_string(line_no) + ", column " + std::to_string(col);
  if (col < header.size()) s += " ('" + header[col] + "')";
  return s;
}

// Resolves the target column by header name first, then by index.
inline std::size_t resolve_target(const std::string& column,
                                  const std::vector<std::string>& header) {
  if (column.empty()) return header.size() - 1;
  if (auto it = std::find(header.begin(), header.end(), column); it != header.end())
    return static_cast<std::size_t>(it - header.begin());
  std::size_t idx = 0;
  auto [ptr, ec] = std::from_chars(column.data(), column.data() + column.size(), idx);
  if (ec == std::errc{} && ptr == column.data() + column.size() && idx < header.size())
    return idx;
  throw Error("target column '" + column + "' not found in header");
}

struct RawCsv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> cells;
};

inline RawCsv read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  RawCsv csv;
  std::string line;
  if (!std::getline(in, line)) throw Error("'" + path + "' is empty (no header row)");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  for (auto c : split_line(line)) csv.header.emplace_back(c);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto parts = split_line(line);
    if (parts.size() != csv.header.size())
      throw Error(path + ": row " + std::to_string(line_no) + " has " +
                  std::to_string(parts.size()) + " cells, header has " +
                  std::to_string(csv.header.size()));
    std::vector<std::string> row;
    row.reserve(parts.size());
    for (auto p : parts) row.emplace_back(p);
    csv.cells.push_back(std::move(row));
  }
  return csv;
}

inline double parse_cell(const std::string& path, const std::string& cell,
                         std::size_t line_no, std::size_t col,
                         const std::vector<std::string>& header) {
  auto v = parse_real(cell);
  if (!v)
    throw Error(path + ": cannot parse '" + cell + "' as a number at " +
                cell_ref(line_no, col, header));
  if (!std::isfinite(*v))
    throw Error(path + ": non-finite value '" + cell + "' at " +
                cell_ref(line_no, col, header));
  return *v;
}

}  // namespace detail

// Reads a headered CSV. The target column is removed from the feature rows;
// row order is preserved. Missing or non-finite values are rejected.
inline DataMatrix load_csv(const std::string& path, const DatasetSchema& schema) {
  auto csv = detail::read_csv(path);
  if (csv.header.size() < 2)
    throw Error(path + ": need at least one feature column and a target column");
  const std::size_t target_col = detail::resolve_target(schema.target_column, csv.header);

  DataMatrix out;
  out.schema = schema;
  out.schema.target_column = csv.header[target_col];
  out.schema.feature_names.clear();
  for (std::size_t c = 0; c < csv.header.size(); ++c)
    if (c != target_col) out.schema.feature_names.push_back(csv.header[c]);
  const std::size_t m = out.schema.feature_names.size();
  if (schema.feature_count != 0 && schema.feature_count != m)
    throw Error(path + ": expected " + std::to_string(schema.feature_count) +
                " feature columns, found " + std::to_string(m));
  out.schema.feature_count = m;
  if (schema.target_kind == TargetKind::binary) out.schema.classes = 2;
  out.schema.validate();

  const std::size_t n = csv.cells.size();
  out.rows = Matrix<double>(n, m);
  out.targets.resize(n);
  out.ids.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t line_no = r + 2;
    std::size_t f = 0;
    for (std::size_t c = 0; c < csv.header.size(); ++c) {
      double v = detail::parse_cell(path, csv.cells[r][c], line_no, c, csv.header);
      if (c == target_col) {
        out.targets[r] = v;
      } else {
        out.rows(r, f++) = v;
      }
    }
    if (schema.target_kind != TargetKind::regression) {
      const double y = out.targets[r];
      const int classes = out.schema.classes;
      if (y != std::floor(y) || y < 0 || y >= classes)
        throw Error(path + ": target " + csv.cells[r][target_col] + " at " +
                    detail::cell_ref(line_no, target_col, csv.header) +
                    " is not a class index in [0, " + std::to_string(classes) + ")");
    }
    out.ids[r] = r;
  }
  return out;
}

// Reads feature rows for prediction. The target column is dropped when the
// header contains it; the remaining width must equal schema.feature_count.
inline DataMatrix load_features_csv(const std::string& path, const DatasetSchema& schema) {
  auto csv = detail::read_csv(path);
  std::optional<std::size_t> target_col;
  if (!schema.target_column.empty()) {
    auto it = std::find(csv.header.begin(), csv.header.end(), schema.target_column);
    if (it != csv.header.end()) target_col = static_cast<std::size_t>(it - csv.header.begin());
  }
  const std::size_t m = csv.header.size() - (target_col ? 1 : 0);
  if (m != schema.feature_count)
    throw Error(path + ": schema mismatch, expected " + std::to_string(schema.feature_count) +
                " features, found " + std::to_string(m));
  DataMatrix out;
  out.schema = schema;
  const std::size_t n = csv.cells.size();
  out.rows = Matrix<double>(n, m);
  out.targets.assign(n, 0.0);
  out.ids.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t f = 0;
    for (std::size_t c = 0; c < csv.header.size(); ++c) {
      double v = detail::parse_cell(path, csv.cells[r][c], r + 2, c, csv.header);
      if (target_col && c == *target_col) {
        out.targets[r] = v;
      } else {
        out.rows(r, f++) = v;
      }
    }
    out.ids[r] = r;
  }
  return out;
}

// Copies the listed rows (in that order) into a new matrix.
inline DataMatrix take_rows(const DataMatrix& data, std::span<const std::size_t> index) {
  DataMatrix out;
  out.schema = data.schema;
  out.rows = Matrix<double>(index.size(), data.features());
  out.targets.resize(index.size());
  out.ids.resize(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    auto src = data.rows.row(index[i]);
    std::copy(src.begin(), src.end(), out.rows.row(i).begin());
    out.targets[i] = data.targets[index[i]];
    out.ids[i] = data.ids[index[i]];
  }
  return out;
}

struct SplitFractions {
  double train = 0.7;
  double validation = 0.15;
  double test = 0.15;
};

// Validation and test sizes are floor(N * fraction); train takes the rest.
inline std::tuple<DataMatrix, DataMatrix, DataMatrix> split(const DataMatrix& data,
                                                            SplitFractions fr,
                                                            std::uint64_t seed) {
  if (!(fr.train > 0 && fr.validation > 0 && fr.test > 0))
    throw Error("split fractions must be positive");
  if (std::abs(fr.train + fr.validation + fr.test - 1.0) > 1e-9)
    throw Error("split fractions must sum to 1");
  const std::size_t n = data.size();
  const auto n_val = static_cast<std::size_t>(std::floor(n * fr.validation));
  const auto n_test = static_cast<std::size_t>(std::floor(n * fr.test));
  if (n_val == 0 || n_test == 0 || n_val + n_test >= n)
    throw Error("split of " + std::to_string(n) + " rows leaves an empty partition");
  const std::size_t n_train = n - n_val - n_test;

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto engine = make_engine(seed, Stream::split);
  std::shuffle(perm.begin(), perm.end(), engine);

  std::span<const std::size_t> all(perm);
  return {take_rows(data, all.subspan(0, n_train)),
          take_rows(data, all.subspan(n_train, n_val)),
          take_rows(data, all.subspan(n_train + n_val, n_test))};
}

struct Standardizer {
  std::vector<double> means;
  std::vector<double> stds;

  // Population statistics; columns whose values are all equal get std = 1.
  static Standardizer fit(const DataMatrix& train) {
    if (train.size() == 0) throw Error("cannot fit a standardizer on an empty split");
    const std::size_t n = train.size(), m = train.features();
    Standardizer s;
    s.means.assign(m, 0.0);
    s.stds.assign(m, 1.0);
    for (std::size_t c = 0; c < m; ++c) {
      double sum = 0, lo = train.rows(0, c), hi = lo;
      for (std::size_t r = 0; r < n; ++r) {
        const double v = train.rows(r, c);
        sum += v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      const double mean = sum / static_cast<double>(n);
      double ss = 0;
      for (std::size_t r = 0; r < n; ++r) {
        const double d = train.rows(r, c) - mean;
        ss += d * d;
      }
      s.means[c] = mean;
      if (lo != hi) s.stds[c] = std::sqrt(ss / static_cast<double>(n));
      if (!(s.stds[c] > 0)) s.stds[c] = 1.0;
    }
    return s;
  }

  void apply_inplace(DataMatrix& data) const {
    if (data.features() != means.size())
      throw Error("standardizer expects " + std::to_string(means.size()) +
                  " features, data has " + std::to_string(data.features()));
    for (std::size_t r = 0; r < data.size(); ++r) {
      auto row = data.rows.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = (row[c] - means[c]) / stds[c];
    }
  }

  DataMatrix apply(DataMatrix data) const {
    apply_inplace(data);
    return data;
  }
};

// Serves one epoch of shuffled batches into a caller-owned Batch, so batch
// buffers stay at batch_size rows no matter how large the dataset is.
class BatchStream {
 public:
  BatchStream(const DataMatrix& data, std::size_t batch_size, std::uint64_t seed,
              std::uint64_t epoch)
      : data_(&data), batch_size_(batch_size), order_(data.size()) {
    if (batch_size == 0) throw Error("batch size must be >= 1");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    auto engine = make_engine(seed, Stream::shuffle, epoch);
    std::shuffle(order_.begin(), order_.end(), engine);
  }

  std::size_t batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

  bool next(Batch& out) {
    if (cursor_ >= order_.size()) return false;
    const std::size_t b = std::min(batch_size_, order_.size() - cursor_);
    fill_batch(*data_, std::span<const std::size_t>(order_).subspan(cursor_, b), out);
    cursor_ += b;
    return true;
  }

  static void fill_batch(const DataMatrix& data, std::span<const std::size_t> index,
                         Batch& out) {
    out.rows.resize(index.size(), data.features());
    out.targets.resize(index.size());
    out.ids.resize(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
      auto src = data.rows.row(index[i]);
      std::copy(src.begin(), src.end(), out.rows.row(i).begin());
      out.targets[i] = data.targets[index[i]];
      out.ids[i] = data.ids[index[i]];
    }
  }

 private:
  const DataMatrix* data_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Materializes every batch of one epoch.
inline std::vector<Batch> batches(const DataMatrix& data, std::size_t batch_size,
                                  std::uint64_t seed, std::uint64_t epoch) {
  BatchStream stream(data, batch_size, seed, epoch);
  std::vector<Batch> out(stream.batch_count());
  for (auto& b : out) stream.next(b);
  return out;
}

// Unshuffled, contiguous batch [begin, begin + count).
inline void slice_batch(const DataMatrix& data, std::size_t begin, std::size_t count,
                        Batch& out) {
  out.rows.resize(count, data.features());
  out.targets.resize(count);
  out.ids.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto src = data.rows.row(begin + i);
    std::copy(src.begin(), src.end(), out.rows.row(i).begin());
    out.targets[i] = data.targets[begin + i];
    out.ids[i] = data.ids[begin + i];
  }
}

}  // namespace dforest

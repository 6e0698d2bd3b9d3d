#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "dforest/data.hpp"
#include "test_util.hpp"

namespace dforest {
namespace {

using testing::linear_dataset;
using testing::write_file;

DataMatrix iota_data(std::size_t n, std::size_t m = 2) {
  DataMatrix d;
  d.rows = Matrix<double>(n, m);
  d.targets.resize(n);
  d.ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) d.rows(i, j) = double(i * m + j);
    d.targets[i] = double(i);
    d.ids[i] = i;
  }
  return d;
}

TEST(LoadCsv, ParsesRegressionFile) {
  auto path = write_file("reg.csv", "f0,f1,y\n1,2,3\n4.5,-1e2,0.25\n7,8,9\n");
  DatasetSchema schema;
  schema.target_column = "y";
  auto d = load_csv(path, schema);
  ASSERT_EQ(d.size(), 3u);
  ASSERT_EQ(d.features(), 2u);
  EXPECT_EQ(d.schema.feature_count, 2u);
  EXPECT_EQ(d.rows(1, 0), 4.5);
  EXPECT_EQ(d.rows(1, 1), -100.0);
  EXPECT_EQ(d.targets, (std::vector<double>{3, 0.25, 9}));
  EXPECT_EQ(d.schema.feature_names, (std::vector<std::string>{"f0", "f1"}));
}

TEST(LoadCsv, TargetByIndexAndDefaultLast) {
  auto path = write_file("idx.csv", "y,a,b\n1,2,3\n4,5,6\n");
  DatasetSchema schema;
  schema.target_column = "0";
  auto d = load_csv(path, schema);
  EXPECT_EQ(d.targets, (std::vector<double>{1, 4}));
  EXPECT_EQ(d.rows(0, 0), 2.0);

  schema.target_column.clear();
  auto last = load_csv(path, schema);
  EXPECT_EQ(last.targets, (std::vector<double>{3, 6}));
  EXPECT_EQ(last.schema.target_column, "b");
}

TEST(LoadCsv, BadCellIsReportedWithLocation) {
  auto path = write_file("bad.csv", "f0,f1,y\n1,2,3\n1,abc,3\n");
  DatasetSchema schema;
  schema.target_column = "y";
  try {
    load_csv(path, schema);
    FAIL() << "expected parse error";
  } catch (const Error& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("abc"), std::string::npos) << msg;
    EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("column 1"), std::string::npos) << msg;
  }
}

TEST(LoadCsv, RejectsNonFiniteAndMissing) {
  DatasetSchema schema;
  schema.target_column = "y";
  EXPECT_THROW(load_csv(write_file("nan.csv", "a,y\nnan,1\n"), schema), Error);
  EXPECT_THROW(load_csv(write_file("inf.csv", "a,y\n1,inf\n"), schema), Error);
  EXPECT_THROW(load_csv(write_file("empty.csv", "a,y\n,1\n"), schema), Error);
  EXPECT_THROW(load_csv(write_file("ragged.csv", "a,y\n1\n"), schema), Error);
  EXPECT_THROW(load_csv(testing::temp_path("does_not_exist.csv"), schema), Error);
}

TEST(LoadCsv, BinaryAndMulticlassTargets) {
  DatasetSchema schema;
  schema.target_kind = TargetKind::binary;
  schema.target_column = "y";
  auto d = load_csv(write_file("bin.csv", "a,y\n0.5,0\n1.5,1\n2.5,1\n"), schema);
  EXPECT_EQ(d.targets, (std::vector<double>{0, 1, 1}));
  EXPECT_EQ(d.schema.classes, 2);
  EXPECT_THROW(load_csv(write_file("bin2.csv", "a,y\n0.5,2\n"), schema), Error);
  EXPECT_THROW(load_csv(write_file("bin3.csv", "a,y\n0.5,0.5\n"), schema), Error);

  schema.target_kind = TargetKind::multiclass;
  schema.classes = 3;
  auto mc = load_csv(write_file("mc.csv", "a,y\n1,2\n2,0\n"), schema);
  EXPECT_EQ(mc.targets, (std::vector<double>{2, 0}));
  EXPECT_THROW(load_csv(write_file("mc2.csv", "a,y\n1,3\n"), schema), Error);
}

TEST(LoadCsv, FeatureCountIsChecked) {
  DatasetSchema schema;
  schema.target_column = "y";
  schema.feature_count = 3;
  EXPECT_THROW(load_csv(write_file("w.csv", "a,b,y\n1,2,3\n"), schema), Error);
}

TEST(Split, SizesFloorThenRemainderToTrain) {
  auto [tr, va, te] = split(iota_data(10), {0.6, 0.2, 0.2}, 7);
  EXPECT_EQ(tr.size(), 6u);
  EXPECT_EQ(va.size(), 2u);
  EXPECT_EQ(te.size(), 2u);
}

TEST(Split, DeterministicForSeed) {
  auto a = split(iota_data(50), {0.6, 0.2, 0.2}, 7);
  auto b = split(iota_data(50), {0.6, 0.2, 0.2}, 7);
  EXPECT_EQ(std::get<0>(a).ids, std::get<0>(b).ids);
  EXPECT_EQ(std::get<1>(a).ids, std::get<1>(b).ids);
  EXPECT_EQ(std::get<2>(a).ids, std::get<2>(b).ids);
  auto c = split(iota_data(50), {0.6, 0.2, 0.2}, 8);
  EXPECT_NE(std::get<0>(a).ids, std::get<0>(c).ids);
}

TEST(Split, ErrorCases) {
  EXPECT_THROW(split(iota_data(2), {0.6, 0.2, 0.2}, 7), Error);
  EXPECT_THROW(split(iota_data(10), {0.5, 0.2, 0.2}, 7), Error);
  EXPECT_THROW(split(iota_data(10), {1.0, 0.0, 0.0}, 7), Error);
}

TEST(Split, DisjointAndExhaustiveForManySeeds) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const std::size_t n = 20 + seed * 3;
    auto data = iota_data(n);
    auto [tr, va, te] = split(data, {0.5, 0.25, 0.25}, seed);
    std::vector<std::size_t> all;
    for (const auto* part : {&tr, &va, &te}) {
      all.insert(all.end(), part->ids.begin(), part->ids.end());
      for (std::size_t i = 0; i < part->size(); ++i)
        EXPECT_EQ(part->rows(i, 0), data.rows(part->ids[i], 0));
    }
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expect(n);
    std::iota(expect.begin(), expect.end(), std::size_t{0});
    EXPECT_EQ(all, expect) << "seed " << seed;
  }
}

TEST(Standardizer, ColumnOneTwoThree) {
  DataMatrix d;
  d.rows = Matrix<double>(3, 2);
  for (int i = 0; i < 3; ++i) {
    d.rows(i, 0) = i + 1;
    d.rows(i, 1) = 5;
  }
  d.targets = {0, 0, 0};
  auto s = Standardizer::fit(d);
  EXPECT_DOUBLE_EQ(s.means[0], 2.0);
  EXPECT_NEAR(s.stds[0], std::sqrt(2.0 / 3.0), 1e-15);
  EXPECT_EQ(s.stds[1], 1.0);
  auto t = s.apply(d);
  // (x - 2) / sqrt(2/3)
  EXPECT_NEAR(t.rows(0, 0), -1.224744871391589, 1e-12);
  EXPECT_NEAR(t.rows(1, 0), 0.0, 1e-15);
  EXPECT_NEAR(t.rows(2, 0), 1.224744871391589, 1e-12);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(t.rows(i, 1), 0.0);
}

TEST(Standardizer, TrainStatisticsOnlyAndMomentInvariant) {
  auto data = linear_dataset(400, 5, {1.0}, 3);
  for (std::size_t i = 0; i < data.size(); ++i) {
    data.rows(i, 1) = 3.0 * data.rows(i, 1) + 10.0;
    data.rows(i, 4) = 0.1;  // constant, not exactly representable
  }
  auto [tr, va, te] = split(data, {0.6, 0.2, 0.2}, 1);
  auto s = Standardizer::fit(tr);
  auto trs = s.apply(tr);
  for (std::size_t c = 0; c < trs.features(); ++c) {
    double mean = 0, ss = 0;
    for (std::size_t r = 0; r < trs.size(); ++r) mean += trs.rows(r, c);
    mean /= double(trs.size());
    for (std::size_t r = 0; r < trs.size(); ++r) ss += std::pow(trs.rows(r, c) - mean, 2);
    EXPECT_LT(std::abs(mean), 1e-10) << c;
    if (c != 4) {
      EXPECT_NEAR(std::sqrt(ss / double(trs.size())), 1.0, 1e-10) << c;
    }
  }
  auto tes = s.apply(te);
  double test_mean = 0;
  for (std::size_t r = 0; r < tes.size(); ++r) test_mean += tes.rows(r, 1);
  EXPECT_NE(test_mean / double(tes.size()), 0.0);
}

TEST(Batches, PartitionSizes) {
  auto b = batches(iota_data(5), 2, 1, 0);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].size(), 2u);
  EXPECT_EQ(b[1].size(), 2u);
  EXPECT_EQ(b[2].size(), 1u);
  EXPECT_THROW(batches(iota_data(5), 0, 1, 0), Error);
}

TEST(Batches, EpochChangesPermutation) {
  auto order = [](std::uint64_t epoch) {
    std::vector<std::size_t> ids;
    for (const auto& b : batches(iota_data(64), 16, 9, epoch))
      ids.insert(ids.end(), b.ids.begin(), b.ids.end());
    return ids;
  };
  EXPECT_EQ(order(0), order(0));
  EXPECT_NE(order(0), order(1));
}

TEST(Batches, RoundTripReproducesSplit) {
  auto data = linear_dataset(203, 3, {1.0, -1.0}, 4);
  auto [tr, va, te] = split(data, {0.7, 0.15, 0.15}, 2);
  for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
    std::vector<std::pair<std::size_t, std::vector<double>>> seen;
    for (const auto& b : batches(tr, 32, 5, epoch)) {
      EXPECT_LE(b.size(), 32u);
      for (std::size_t i = 0; i < b.size(); ++i) {
        std::vector<double> row(b.rows.row(i).begin(), b.rows.row(i).end());
        row.push_back(b.targets[i]);
        seen.emplace_back(b.ids[i], row);
      }
    }
    std::sort(seen.begin(), seen.end());
    std::vector<std::pair<std::size_t, std::vector<double>>> expect;
    for (std::size_t i = 0; i < tr.size(); ++i) {
      std::vector<double> row(tr.rows.row(i).begin(), tr.rows.row(i).end());
      row.push_back(tr.targets[i]);
      expect.emplace_back(tr.ids[i], row);
    }
    std::sort(expect.begin(), expect.end());
    EXPECT_EQ(seen, expect);
  }
}

}  // namespace
}  // namespace dforest

#include <catch2/catch_amalgamated.hpp>

#include "spos/data.hpp"

#include <filesystem>
#include <fstream>
#include <map>

using Catch::Approx;
using namespace spos;

namespace {

std::string write_temp(const std::string& name, const std::string& contents) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path);
  out << contents;
  return path.string();
}

TEST_CASE("load_csv") {
  SECTION("two-row example") {
    const auto path = write_temp("spos_csv_basic.csv", "x1,x2,y\n1,2,0\n3,4,1\n");
    const Dataset ds = load_csv(path, "y");
    REQUIRE(ds.n() == 2);
    REQUIRE(ds.dim() == 2);
    CHECK(ds.features(0, 0) == 1.0);
    CHECK(ds.features(1, 1) == 4.0);
    REQUIRE(ds.labels);
    CHECK((*ds.labels)(0) == 0.0);
    CHECK((*ds.labels)(1) == 1.0);
  }
  SECTION("-1 labels coerce to 0 and index selection works") {
    const auto path = write_temp("spos_csv_neg.csv", "a,b\n-1,0.5\n1,0.25\n");
    const Dataset ds = load_csv(path, "0");
    REQUIRE(ds.labels);
    CHECK((*ds.labels)(0) == 0.0);
    CHECK((*ds.labels)(1) == 1.0);
    CHECK(ds.dim() == 1);
  }
  SECTION("unlabeled load") {
    const auto path = write_temp("spos_csv_nolabel.csv", "x1,x2\n1,2\n3,4\n");
    const Dataset ds = load_csv(path);
    CHECK_FALSE(ds.labels.has_value());
    CHECK(ds.dim() == 2);
  }
  SECTION("errors carry locations") {
    const auto missing = write_temp("spos_csv_missing.csv", "x1,x2,y\n1,2,0\n3,1\n");
    CHECK_THROWS_WITH(load_csv(missing, "y"), Catch::Matchers::ContainsSubstring(":3"));
    const auto bad = write_temp("spos_csv_bad.csv", "x1,y\nfoo,1\n");
    CHECK_THROWS_WITH(load_csv(bad, "y"), Catch::Matchers::ContainsSubstring("foo"));
    const auto nonbinary = write_temp("spos_csv_nonbin.csv", "x1,y\n1,2\n");
    CHECK_THROWS_AS(load_csv(nonbinary, "y"), std::invalid_argument);
    CHECK_THROWS_AS(load_csv("/nonexistent/file.csv", "y"), std::invalid_argument);
    const auto ok = write_temp("spos_csv_ok.csv", "x1,y\n1,1\n");
    CHECK_THROWS_AS(load_csv(ok, "nope"), std::invalid_argument);
  }
}

TEST_CASE("load_libsvm") {
  SECTION("sparse line") {
    const auto path = write_temp("spos_libsvm_a.txt", "1 1:0.5 3:2.0\n");
    const Dataset ds = load_libsvm(path);
    REQUIRE(ds.n() == 1);
    REQUIRE(ds.dim() == 3);
    CHECK(ds.features(0, 0) == 0.5);
    CHECK(ds.features(0, 1) == 0.0);
    CHECK(ds.features(0, 2) == 2.0);
    CHECK((*ds.labels)(0) == 1.0);
  }
  SECTION("label-only line and nonmonotone indices") {
    const auto path = write_temp("spos_libsvm_b.txt", "-1\n+1 3:1 1:2\n");
    const Dataset ds = load_libsvm(path);
    REQUIRE(ds.n() == 2);
    REQUIRE(ds.dim() == 3);
    CHECK((*ds.labels)(0) == 0.0);
    CHECK(ds.features(0, 0) == 0.0);
    CHECK(ds.features(1, 0) == 2.0);
    CHECK(ds.features(1, 2) == 1.0);
  }
  SECTION("malformed token carries location") {
    const auto path = write_temp("spos_libsvm_c.txt", "1 1:0.5\n1 oops\n");
    CHECK_THROWS_WITH(load_libsvm(path), Catch::Matchers::ContainsSubstring(":2"));
  }
}

TEST_CASE("split") {
  Dataset ds;
  ds.features.resize(10, 2);
  for (int i = 0; i < 10; ++i) {
    ds.features(i, 0) = i;
    ds.features(i, 1) = 100 + i;
  }
  Eigen::VectorXd y(10);
  for (int i = 0; i < 10; ++i) y(i) = i % 2;
  ds.labels = y;
  ds.name = "split-test";

  const SplitSpec spec{0.8, 7};
  const auto [train, test] = split(ds, spec);
  CHECK(train.n() == 8);
  CHECK(test.n() == 2);

  const auto [train2, test2] = split(ds, spec);
  CHECK(train.features == train2.features);
  CHECK(test.features == test2.features);

  // union of splits is the original multiset (rows are distinct here)
  std::map<double, int> seen;
  for (int i = 0; i < train.n(); ++i) ++seen[train.features(i, 0)];
  for (int i = 0; i < test.n(); ++i) ++seen[test.features(i, 0)];
  CHECK(seen.size() == 10);
  for (const auto& [k, v] : seen) CHECK(v == 1);

  // labels travel with their rows
  for (int i = 0; i < train.n(); ++i)
    CHECK((*train.labels)(i) == static_cast<int>(train.features(i, 0)) % 2);

  CHECK_THROWS_AS(split(ds, SplitSpec{1.5, 0}), std::invalid_argument);
}

TEST_CASE("standardize") {
  Dataset train, test;
  train.features.resize(2, 3);
  train.features << 0, 5, 1, 2, 5, 3;
  train.name = "train";
  test.features.resize(1, 3);
  test.features << 1, 7, 5;
  test.name = "test";

  const auto [strain, stest, tf] = standardize(train, test);
  CHECK(strain.features(0, 0) == Approx(-1.0).epsilon(1e-12));
  CHECK(strain.features(1, 0) == Approx(1.0).epsilon(1e-12));
  CHECK(strain.features(0, 1) == 0.0);  // constant column maps to zero
  CHECK(strain.features(1, 1) == 0.0);

  // test transformed with train statistics, not its own
  CHECK(stest.features(0, 0) == Approx((1.0 - 1.0) / 1.0).margin(1e-12));
  CHECK(stest.features(0, 2) == Approx((5.0 - 2.0) / 1.0).epsilon(1e-12));
  CHECK(stest.features(0, 1) == 0.0);

  // standardized train columns: mean 0, population std 1 (unless constant)
  for (int c = 0; c < 3; ++c) {
    const double mean = strain.features.col(c).mean();
    const double var = (strain.features.col(c).array() - mean).square().mean();
    CHECK(std::abs(mean) < 1e-10);
    if (tf.std_dev(c) > 0) CHECK(var == Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("subsample") {
  Dataset ds;
  ds.features.resize(20, 1);
  for (int i = 0; i < 20; ++i) ds.features(i, 0) = i;
  ds.name = "sub";
  const Dataset small = subsample(ds, 5, 3);
  CHECK(small.n() == 5);
  const Dataset again = subsample(ds, 5, 3);
  CHECK(small.features == again.features);
  const Dataset all = subsample(ds, 25, 3);
  CHECK(all.n() == 20);
}

}  // namespace

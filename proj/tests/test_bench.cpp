#include "affold/bench.hpp"
#include "affold/collapse.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace affold;

TEST(Quantile, LinearInterpolation) {
  const std::vector<double> s{1, 2, 3, 4, 5};
  EXPECT_EQ(quantile(s, 0.5), 3.0);
  EXPECT_EQ(quantile(s, 0.25), 2.0);
  EXPECT_EQ(quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_EQ(quantile({1, 2, 3, 4}, 0.25), 1.75);
  EXPECT_EQ(quantile({7}, 0.75), 7.0);
  EXPECT_EQ(quantile({}, 0.5), 0.0);
}

TEST(BenchPredict, SelfComparisonIsNearUnity) {
  const AffineMap map = collapse_theorem1(preset("basic3")).map;
  BenchOptions opt;
  opt.reps = 300;
  opt.warmup = 50;
  opt.batch = 4;
  const auto reps = bench_predict({{"a", map}, {"b", map}}, opt);
  ASSERT_EQ(reps.size(), 2u);
  EXPECT_EQ(reps[0].speedup, 1.0);
  EXPECT_GE(reps[1].speedup, 0.8);
  EXPECT_LE(reps[1].speedup, 1.25);
  for (const auto& r : reps) {
    EXPECT_LE(r.p25_us, r.median_us);
    EXPECT_LE(r.median_us, r.p75_us);
    EXPECT_EQ(r.flops, 7850u);
    EXPECT_EQ(r.reps, 300u);
  }
}

TEST(BenchPredict, CollapsedBeatsLayered) {
  const Network net = preset("deep_linear", 10, 1);
  BenchOptions opt;
  opt.reps = 60;
  opt.warmup = 5;
  const auto reps = bench_predict({{"layered", net}, {"collapsed", collapse_theorem1(net).map}}, opt);
  EXPECT_EQ(reps[0].flops, flops(net));
  EXPECT_GT(reps[1].speedup, 1.0);
}

TEST(BenchPredict, RejectsBadOptions) {
  const AffineMap map(DenseMatrix(2, 3), Vector(2));
  BenchOptions opt;
  opt.reps = 29;
  EXPECT_THROW(bench_predict({{"a", map}}, opt), ConfigError);
  opt.reps = 30;
  EXPECT_THROW(bench_predict({{"a", map}, {"b", AffineMap(DenseMatrix(2, 4), Vector(2))}}, opt), DimensionError);
  EXPECT_TRUE(bench_predict({}, opt).empty());
}

TEST(BenchCsv, Format) {
  std::ostringstream os;
  write_bench_csv(os, {{"layered", 1000, 12.5, 11, 14, 23938, 1}});
  EXPECT_EQ(os.str(), "variant,reps,median_us,p25_us,p75_us,flops,speedup\nlayered,1000,12.5,11,14,23938,1\n");
}

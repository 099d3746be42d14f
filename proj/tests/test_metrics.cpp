#include <doctest.h>

#include <algorithm>

#include "cbfuse/metrics.hpp"
#include "cbfuse/rng.hpp"

using namespace cbfuse;

TEST_CASE("binarization uses an inclusive threshold") {
  CHECK(binarize(std::vector<float>{0.5f})[0] == 1);
  CHECK(binarize(std::vector<float>{0.499f})[0] == 0);
  auto empty = binarize(std::vector<float>(10, 0.0f));
  CHECK(std::count(empty.begin(), empty.end(), 1) == 0);
  auto full = binarize(std::vector<float>(10, 0.6f));
  CHECK(std::count(full.begin(), full.end(), 1) == 10);
}

TEST_CASE("dice on hand-checked cases") {
  std::vector<uint8_t> a = {1, 1, 0, 0};
  std::vector<uint8_t> b = {1, 1, 0, 0};
  CHECK(dice(a, b) == 1.0);

  std::vector<uint8_t> c = {1, 1, 0, 0};
  std::vector<uint8_t> d = {0, 0, 1, 1};
  CHECK(dice(c, d) == 0.0);

  // |P| = 2, |G| = 2, overlap 1 -> 2*1/(2+2)
  std::vector<uint8_t> e = {1, 1, 0, 0};
  std::vector<uint8_t> f = {0, 1, 1, 0};
  CHECK(dice(e, f) == 0.5);

  std::vector<uint8_t> none = {0, 0, 0};
  CHECK(dice(none, none) == 1.0);  // both empty counts as a perfect match
  std::vector<uint8_t> some = {1, 0, 0};
  CHECK(dice(some, none) == 0.0);

  std::vector<uint8_t> wrong = {1, 0};
  CHECK_THROWS_AS(dice(some, wrong), ShapeMismatch);
}

TEST_CASE("exhaustive 3-voxel enumeration matches the set-arithmetic oracle") {
  for (int pm = 0; pm < 8; ++pm) {
    for (int gm = 0; gm < 8; ++gm) {
      std::vector<uint8_t> p(3), g(3);
      for (int v = 0; v < 3; ++v) {
        p[v] = (pm >> v) & 1;
        g[v] = (gm >> v) & 1;
      }
      int np = 0, ng = 0, inter = 0;
      for (int v = 0; v < 3; ++v) {
        np += p[v];
        ng += g[v];
        inter += p[v] && g[v];
      }
      double expect = (np + ng) == 0 ? 1.0 : 2.0 * inter / static_cast<double>(np + ng);
      CHECK(dice(p, g) == expect);
    }
  }
}

TEST_CASE("dice is symmetric and permutation-invariant") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<uint8_t> p(64), g(64);
    for (int i = 0; i < 64; ++i) {
      p[i] = rng.unit() < 0.3;
      g[i] = rng.unit() < 0.4;
    }
    CHECK(dice(p, g) == dice(g, p));

    std::vector<std::size_t> perm(64);
    for (std::size_t i = 0; i < 64; ++i) perm[i] = i;
    for (std::size_t i = 64; i > 1; --i)
      std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.unit() * i)]);
    std::vector<uint8_t> pp(64), gp(64);
    for (std::size_t i = 0; i < 64; ++i) {
      pp[i] = p[perm[i]];
      gp[i] = g[perm[i]];
    }
    CHECK(dice(pp, gp) == dice(p, g));
  }
}

TEST_CASE("aggregation averages volumes then reports") {
  DiceReport r1;
  r1.per_volume = {{0.8, 0.2}, {0.9, 0.4}};
  CHECK(r1.mean_liver() == doctest::Approx(0.85));
  CHECK(r1.mean_tumor() == doctest::Approx(0.3));

  AggregateDice single = aggregate({r1});
  CHECK(single.liver == doctest::Approx(0.85));

  AggregateDice same4 = aggregate({r1, r1, r1, r1});
  CHECK(same4.liver == doctest::Approx(0.85));
  CHECK(same4.n_reports == 4);

  DiceReport r2;
  r2.per_volume = {{0.9, 0.5}};
  AggregateDice mixed = aggregate({r1, r2});
  CHECK(mixed.liver == doctest::Approx(0.5 * (0.85 + 0.9)));

  CHECK_THROWS_AS(aggregate({}), EmptyInput);
  DiceReport empty;
  CHECK_THROWS_AS(aggregate({empty}), EmptyInput);
}

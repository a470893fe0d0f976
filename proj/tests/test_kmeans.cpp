#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "sembridge/kmeans.hpp"
#include "sembridge/rng.hpp"

using namespace sembridge;

TEST_CASE("k = 1 puts the centroid on the mean of all points") {
  Rng rng(1);
  TensorT<float> pts = rng.randn<float>(10, 3);
  auto res = kmeans(pts, 1, 5, 42);
  for (int64_t d = 0; d < 3; ++d) {
    double mean = 0;
    for (int64_t i = 0; i < 10; ++i) mean += pts.at(i, d);
    mean /= 10;
    CHECK(res.centroids.at(0, d) == doctest::Approx(mean).epsilon(1e-5));
  }
  for (int a : res.assignment) CHECK(a == 0);
}

TEST_CASE("well-separated pairs match the exhaustive best 2-partition") {
  // N=6, D=1: three tight pairs, but two clusters -> enumerate all 2-partitions
  TensorT<float> pts(6, 1, {0.0f, 0.1f, 0.05f, 10.0f, 10.1f, 9.95f});
  auto res = kmeans(pts, 2, 20, 7);

  // oracle: all 2^6 assignments, both clusters nonempty
  double best = 1e300;
  std::vector<int> best_assign;
  for (int m = 1; m < 63; ++m) {
    std::vector<int> assign(6);
    double sum[2] = {0, 0};
    int cnt[2] = {0, 0};
    for (int i = 0; i < 6; ++i) {
      assign[i] = (m >> i) & 1;
      sum[assign[i]] += pts.at(i, 0);
      ++cnt[assign[i]];
    }
    if (cnt[0] == 0 || cnt[1] == 0) continue;
    double mu[2] = {sum[0] / cnt[0], sum[1] / cnt[1]};
    double obj = 0;
    for (int i = 0; i < 6; ++i) obj += std::pow(pts.at(i, 0) - mu[assign[i]], 2);
    if (obj < best) {
      best = obj;
      best_assign = assign;
    }
  }

  // compare as a partition (cluster ids may be swapped)
  bool same = true, swapped = true;
  for (int i = 0; i < 6; ++i) {
    if (res.assignment[i] != best_assign[i]) same = false;
    if (res.assignment[i] != 1 - best_assign[i]) swapped = false;
  }
  CHECK((same || swapped));
  CHECK(res.objective.back() == doctest::Approx(best).epsilon(1e-5));
}

TEST_CASE("objective is monotone non-increasing over iterations") {
  Rng rng(3);
  TensorT<float> pts = rng.randn<float>(40, 4);
  auto res = kmeans(pts, 5, 15, 11);
  for (size_t i = 1; i < res.objective.size(); ++i)
    CHECK(res.objective[i] <= res.objective[i - 1] + 1e-9);
}

TEST_CASE("k greater than N is rejected") {
  TensorT<float> pts(3, 2);
  CHECK_THROWS_AS(kmeans(pts, 4, 5, 1), std::invalid_argument);
}

TEST_CASE("assignments are nearest-centroid and deterministic in the seed") {
  Rng rng(4);
  TensorT<float> pts = rng.randn<float>(30, 3);
  auto a = kmeans(pts, 4, 10, 123);
  auto b = kmeans(pts, 4, 10, 123);
  CHECK(a.assignment == b.assignment);
  CHECK(a.centroids.data == b.centroids.data);

  for (int64_t i = 0; i < 30; ++i)
    CHECK(kmeans_assign(a.centroids, &pts.data[static_cast<size_t>(i * 3)], 3) == a.assignment[static_cast<size_t>(i)]);
}

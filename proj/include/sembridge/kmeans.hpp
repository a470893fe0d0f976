#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "sembridge/rng.hpp"
#include "sembridge/tensor.hpp"

namespace sembridge {

struct KmeansResult {
  TensorT<float> centroids;          // k x D
  std::vector<int> assignment;       // per point
  std::vector<double> objective;     // per iteration (after the update)
};

namespace detail {
inline double sq_dist(const TensorT<float> &pts, int64_t i, const TensorT<float> &c, int64_t j) {
  double s = 0;
  for (int64_t d = 0; d < pts.cols; ++d) {
    double diff = static_cast<double>(pts.at(i, d)) - static_cast<double>(c.at(j, d));
    s += diff * diff;
  }
  return s;
}
}  // namespace detail

// Lloyd's algorithm with k-means++ seeding. Deterministic in (points, k, seed);
// ties in assignment go to the lowest centroid index.
inline KmeansResult kmeans(const TensorT<float> &points, int k, int iters, uint64_t seed) {
  const int64_t n = points.rows;
  if (k < 1 || static_cast<int64_t>(k) > n)
    throw std::invalid_argument("kmeans: need 1 <= k <= number of points");

  Rng rng(seed);
  KmeansResult res;
  res.centroids = TensorT<float>(k, points.cols);

  // k-means++ seeding
  std::vector<int64_t> chosen;
  chosen.push_back(rng.uniform_int(0, n - 1));
  std::vector<double> d2(static_cast<size_t>(n), 0.0);
  while (static_cast<int>(chosen.size()) < k) {
    double total = 0;
    for (int64_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int64_t c : chosen) {
        double s = 0;
        for (int64_t d = 0; d < points.cols; ++d) {
          double diff = static_cast<double>(points.at(i, d)) - static_cast<double>(points.at(c, d));
          s += diff * diff;
        }
        best = std::min(best, s);
      }
      d2[static_cast<size_t>(i)] = best;
      total += best;
    }
    int64_t pick;
    if (total <= 0) {
      pick = rng.uniform_int(0, n - 1);  // all points coincide with centroids
    } else {
      double r = rng.uniform() * total;
      double acc = 0;
      pick = n - 1;
      for (int64_t i = 0; i < n; ++i) {
        acc += d2[static_cast<size_t>(i)];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    }
    chosen.push_back(pick);
  }
  for (int j = 0; j < k; ++j)
    for (int64_t d = 0; d < points.cols; ++d)
      res.centroids.at(j, d) = points.at(chosen[static_cast<size_t>(j)], d);

  res.assignment.assign(static_cast<size_t>(n), 0);
  for (int it = 0; it < iters; ++it) {
    // assign
    for (int64_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = detail::sq_dist(points, i, res.centroids, 0);
      for (int j = 1; j < k; ++j) {
        double dj = detail::sq_dist(points, i, res.centroids, j);
        if (dj < bd) {
          bd = dj;
          best = j;
        }
      }
      res.assignment[static_cast<size_t>(i)] = best;
    }
    // update
    std::vector<std::vector<double>> sums(static_cast<size_t>(k),
                                          std::vector<double>(static_cast<size_t>(points.cols), 0));
    std::vector<int64_t> counts(static_cast<size_t>(k), 0);
    for (int64_t i = 0; i < n; ++i) {
      int a = res.assignment[static_cast<size_t>(i)];
      ++counts[static_cast<size_t>(a)];
      for (int64_t d = 0; d < points.cols; ++d)
        sums[static_cast<size_t>(a)][static_cast<size_t>(d)] += points.at(i, d);
    }
    for (int j = 0; j < k; ++j) {
      if (counts[static_cast<size_t>(j)] == 0) {
        // move an empty centroid onto the point farthest from its centroid
        int64_t far = 0;
        double fd = -1;
        for (int64_t i = 0; i < n; ++i) {
          double di = detail::sq_dist(points, i, res.centroids, res.assignment[static_cast<size_t>(i)]);
          if (di > fd) {
            fd = di;
            far = i;
          }
        }
        for (int64_t d = 0; d < points.cols; ++d) res.centroids.at(j, d) = points.at(far, d);
        res.assignment[static_cast<size_t>(far)] = j;
      } else {
        for (int64_t d = 0; d < points.cols; ++d)
          res.centroids.at(j, d) = static_cast<float>(sums[static_cast<size_t>(j)][static_cast<size_t>(d)] /
                                                      static_cast<double>(counts[static_cast<size_t>(j)]));
      }
    }
    // re-assign against updated centroids before scoring so the reported
    // objective is consistent with the returned assignment
    double obj = 0;
    for (int64_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = detail::sq_dist(points, i, res.centroids, 0);
      for (int j = 1; j < k; ++j) {
        double dj = detail::sq_dist(points, i, res.centroids, j);
        if (dj < bd) {
          bd = dj;
          best = j;
        }
      }
      res.assignment[static_cast<size_t>(i)] = best;
      obj += bd;
    }
    res.objective.push_back(obj);
  }
  return res;
}

// Nearest-centroid lookup for new points.
inline int kmeans_assign(const TensorT<float> &centroids, const float *point, int64_t dim) {
  int best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (int64_t j = 0; j < centroids.rows; ++j) {
    double s = 0;
    for (int64_t d = 0; d < dim; ++d) {
      double diff = static_cast<double>(point[d]) - static_cast<double>(centroids.at(j, d));
      s += diff * diff;
    }
    if (s < bd) {
      bd = s;
      best = static_cast<int>(j);
    }
  }
  return best;
}

}  // namespace sembridge

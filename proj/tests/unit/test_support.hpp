#pragma once

#include <doctest.h>

#include <random>
#include <vector>

#include "ssgp/linalg.hpp"

namespace ssgp::test {

inline Matrix random_spd(Index n, std::mt19937_64& rng, double shift = 1.0) {
  std::normal_distribution<double> g;
  Matrix a(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) a(i, j) = g(rng);
  return a * a.transpose() + shift * Matrix::Identity(n, n);
}

inline Matrix random_matrix(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Matrix a(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) a(i, j) = g(rng);
  return a;
}

inline std::vector<Point> random_points_1d(int n, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Point> p;
  for (int i = 0; i < n; ++i) p.push_back(point(u(rng)));
  return p;
}

}  // namespace ssgp::test

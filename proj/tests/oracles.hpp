// Copyright 2026 The copyflow Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Straight-line reference computations. They use plain loops over
// std::vector<double> and share no code with the library.

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec matvec(const Mat& m, const Vec& x) {
  Vec out(m.size(), 0.0);
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j) out[i] += m[i][j] * x[j];
  return out;
}

inline Mat to_mat(const std::vector<double>& flat, std::size_t rows, std::size_t cols) {
  Mat m(rows, Vec(cols));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m[i][j] = flat[i * cols + j];
  return m;
}

/// Gate rows ordered reset, update, candidate.
inline Vec gru(const Vec& x, const Vec& h, const Mat& wx, const Mat& wh, const Vec& b) {
  const std::size_t H = h.size();
  Vec out(H);
  Vec r(H), z(H);
  for (std::size_t k = 0; k < H; ++k) {
    double ar = b[k], az = b[H + k];
    for (std::size_t j = 0; j < x.size(); ++j) {
      ar += wx[k][j] * x[j];
      az += wx[H + k][j] * x[j];
    }
    for (std::size_t j = 0; j < H; ++j) {
      ar += wh[k][j] * h[j];
      az += wh[H + k][j] * h[j];
    }
    r[k] = sigmoid(ar);
    z[k] = sigmoid(az);
  }
  for (std::size_t k = 0; k < H; ++k) {
    double an = b[2 * H + k];
    for (std::size_t j = 0; j < x.size(); ++j) an += wx[2 * H + k][j] * x[j];
    for (std::size_t j = 0; j < H; ++j) an += wh[2 * H + k][j] * (r[j] * h[j]);
    const double n = std::tanh(an);
    out[k] = z[k] * h[k] + (1.0 - z[k]) * n;
  }
  return out;
}

/// Additive score v . tanh(A a + B b).
inline double additive(const Vec& v, const Mat& A, const Vec& a, const Mat& B, const Vec& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    double t = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) t += A[k][j] * a[j];
    for (std::size_t j = 0; j < b.size(); ++j) t += B[k][j] * b[j];
    s += v[k] * std::tanh(t);
  }
  return s;
}

inline Vec softmax(const Vec& s) {
  double m = s[0];
  for (double x : s) m = x > m ? x : m;
  Vec out(s.size());
  double z = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    out[i] = std::exp(s[i] - m);
    z += out[i];
  }
  for (double& x : out) x /= z;
  return out;
}

inline Vec random_vec(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::uniform_real_distribution<double> d(-scale, scale);
  Vec v(n);
  for (double& x : v) x = d(rng);
  return v;
}

inline Vec random_distribution(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> d(0.01, 1.0);
  Vec v(n);
  double s = 0.0;
  for (double& x : v) s += (x = d(rng));
  for (double& x : v) x /= s;
  return v;
}

}  // namespace oracle

// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>

#include "kernels_impl.hpp"

namespace gdc::kernels::scalar {
namespace {

double max_impl(const double* x, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

double sum_impl(const double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

double dot_impl(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double weighted_sum_impl(const double* w, const double* f, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (w[i] != 0.0) s += w[i] * f[i];
  }
  return s;
}

double sum_exp_impl(const double* x, std::size_t n, double shift) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - shift);
  return s;
}

void exp_shift_impl(const double* x, std::size_t n, double shift, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(x[i] - shift);
}

void axpy_impl(double a, const double* x, std::size_t n, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale_impl(double* x, std::size_t n, double a) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

}  // namespace

const KernelTable table = {
    max_impl,     sum_impl,       dot_impl,  weighted_sum_impl,
    sum_exp_impl, exp_shift_impl, axpy_impl, scale_impl,
};

}  // namespace gdc::kernels::scalar

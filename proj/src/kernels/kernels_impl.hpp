// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

// Raw-pointer entry points of each instruction-set variant. Kept free of
// templates so the AVX2 translation unit never emits inline code that the
// linker could pick for the generic path.
namespace gdc::kernels {

struct KernelTable {
  double (*max)(const double* x, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*weighted_sum)(const double* w, const double* f, std::size_t n);
  double (*sum_exp)(const double* x, std::size_t n, double shift);
  void (*exp_shift)(const double* x, std::size_t n, double shift, double* out);
  void (*axpy)(double a, const double* x, std::size_t n, double* y);
  void (*scale)(double* x, std::size_t n, double a);
};

namespace scalar {
extern const KernelTable table;
}

namespace avx2 {
/// nullptr when the build target has no AVX2 variant.
extern const KernelTable* const table;
}

}  // namespace gdc::kernels

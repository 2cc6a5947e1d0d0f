// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include "kernels_impl.hpp"

#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))

#include <immintrin.h>

#include <cmath>
#include <limits>

#define GDC_AVX2 __attribute__((target("avx2,fma")))

namespace gdc::kernels::avx2 {
namespace {

GDC_AVX2 inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

GDC_AVX2 inline double hmax(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d m = _mm_max_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_max_sd(m, _mm_unpackhi_pd(m, m)));
}

// Cephes-style exp: range reduction by ln2 in two parts, then a (3,4) Pade
// form on the remainder. Within ~1 ulp of std::exp on [-708, 709.7].
GDC_AVX2 inline __m256d exp_pd(__m256d x) {
  const __m256d hi = _mm256_set1_pd(709.782712893384);
  const __m256d lo = _mm256_set1_pd(-708.3964185322641);
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
  const __m256d c1 = _mm256_set1_pd(6.93145751953125E-1);
  const __m256d c2 = _mm256_set1_pd(1.42860682030941723212E-6);
  const __m256d p0 = _mm256_set1_pd(1.26177193074810590878E-4);
  const __m256d p1 = _mm256_set1_pd(3.02994407707441961300E-2);
  const __m256d p2 = _mm256_set1_pd(9.99999999999999999910E-1);
  const __m256d q0 = _mm256_set1_pd(3.00198505138664455042E-6);
  const __m256d q1 = _mm256_set1_pd(2.52448340349684104192E-3);
  const __m256d q2 = _mm256_set1_pd(2.27265548208155028766E-1);
  const __m256d q3 = _mm256_set1_pd(2.00000000000000000009E0);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d two = _mm256_set1_pd(2.0);

  const __m256d underflow = _mm256_cmp_pd(x, lo, _CMP_LT_OQ);
  const __m256d overflow = _mm256_cmp_pd(x, hi, _CMP_GT_OQ);
  const __m256d nan = _mm256_cmp_pd(x, x, _CMP_UNORD_Q);

  __m256d r = _mm256_min_pd(_mm256_max_pd(x, lo), hi);
  const __m256d n = _mm256_round_pd(_mm256_mul_pd(r, log2e),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  r = _mm256_fnmadd_pd(n, c1, r);
  r = _mm256_fnmadd_pd(n, c2, r);

  const __m256d rr = _mm256_mul_pd(r, r);
  __m256d px = _mm256_fmadd_pd(p0, rr, p1);
  px = _mm256_fmadd_pd(px, rr, p2);
  px = _mm256_mul_pd(px, r);
  __m256d qx = _mm256_fmadd_pd(q0, rr, q1);
  qx = _mm256_fmadd_pd(qx, rr, q2);
  qx = _mm256_fmadd_pd(qx, rr, q3);
  __m256d e = _mm256_div_pd(px, _mm256_sub_pd(qx, px));
  e = _mm256_fmadd_pd(two, e, one);

  // 2^n applied in two halves so n = 1024 near the overflow edge stays
  // representable in the exponent field.
  const __m128i n32 = _mm256_cvtpd_epi32(n);
  const __m128i half1 = _mm_srai_epi32(n32, 1);
  const __m128i half2 = _mm_sub_epi32(n32, half1);
  const __m256i bias = _mm256_set1_epi64x(1023);
  const __m256i s1 =
      _mm256_slli_epi64(_mm256_add_epi64(_mm256_cvtepi32_epi64(half1), bias), 52);
  const __m256i s2 =
      _mm256_slli_epi64(_mm256_add_epi64(_mm256_cvtepi32_epi64(half2), bias), 52);
  e = _mm256_mul_pd(e, _mm256_castsi256_pd(s1));
  e = _mm256_mul_pd(e, _mm256_castsi256_pd(s2));

  e = _mm256_blendv_pd(e, _mm256_setzero_pd(), underflow);
  e = _mm256_blendv_pd(e, _mm256_set1_pd(std::numeric_limits<double>::infinity()), overflow);
  return _mm256_blendv_pd(e, x, nan);
}

GDC_AVX2 double max_impl(const double* x, std::size_t n) {
  __m256d m = _mm256_set1_pd(-std::numeric_limits<double>::infinity());
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) m = _mm256_max_pd(m, _mm256_loadu_pd(x + i));
  double r = hmax(m);
  for (; i < n; ++i) r = x[i] > r ? x[i] : r;
  return r;
}

GDC_AVX2 double sum_impl(const double* x, std::size_t n) {
  __m256d a0 = _mm256_setzero_pd();
  __m256d a1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    a0 = _mm256_add_pd(a0, _mm256_loadu_pd(x + i));
    a1 = _mm256_add_pd(a1, _mm256_loadu_pd(x + i + 4));
  }
  for (; i + 4 <= n; i += 4) a0 = _mm256_add_pd(a0, _mm256_loadu_pd(x + i));
  double s = hsum(_mm256_add_pd(a0, a1));
  for (; i < n; ++i) s += x[i];
  return s;
}

GDC_AVX2 double dot_impl(const double* a, const double* b, std::size_t n) {
  __m256d a0 = _mm256_setzero_pd();
  __m256d a1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    a0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), a0);
    a1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), a1);
  }
  for (; i + 4 <= n; i += 4) {
    a0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), a0);
  }
  double s = hsum(_mm256_add_pd(a0, a1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

GDC_AVX2 double weighted_sum_impl(const double* w, const double* f, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  __m256d acc = zero;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d wv = _mm256_loadu_pd(w + i);
    const __m256d live = _mm256_cmp_pd(wv, zero, _CMP_NEQ_UQ);
    const __m256d term = _mm256_mul_pd(wv, _mm256_loadu_pd(f + i));
    acc = _mm256_add_pd(acc, _mm256_and_pd(term, live));
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    if (w[i] != 0.0) s += w[i] * f[i];
  }
  return s;
}

GDC_AVX2 double sum_exp_impl(const double* x, std::size_t n, double shift) {
  const __m256d sv = _mm256_set1_pd(shift);
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_add_pd(acc, exp_pd(_mm256_sub_pd(_mm256_loadu_pd(x + i), sv)));
  }
  double s = hsum(acc);
  for (; i < n; ++i) s += std::exp(x[i] - shift);
  return s;
}

GDC_AVX2 void exp_shift_impl(const double* x, std::size_t n, double shift, double* out) {
  const __m256d sv = _mm256_set1_pd(shift);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, exp_pd(_mm256_sub_pd(_mm256_loadu_pd(x + i), sv)));
  }
  for (; i < n; ++i) out[i] = std::exp(x[i] - shift);
}

GDC_AVX2 void axpy_impl(double a, const double* x, std::size_t n, double* y) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

GDC_AVX2 void scale_impl(double* x, std::size_t n, double a) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(x + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) x[i] *= a;
}

const KernelTable kTable = {
    max_impl,     sum_impl,       dot_impl,  weighted_sum_impl,
    sum_exp_impl, exp_shift_impl, axpy_impl, scale_impl,
};

}  // namespace

const KernelTable* const table = &kTable;

}  // namespace gdc::kernels::avx2

#else

namespace gdc::kernels::avx2 {
const KernelTable* const table = nullptr;
}

#endif

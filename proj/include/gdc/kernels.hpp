// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string_view>

/// Data-parallel inner loops used by the estimators and the tuner.
///
/// Every kernel has a scalar reference implementation and, on x86-64, an AVX2
/// variant. The variant is chosen once at startup from the CPU's feature bits;
/// `GDC_SIMD=scalar` in the environment (or `set_isa`) forces the reference
/// path. Both paths are tested against each other.
///
/// Conventions shared by all kernels:
///   - `-inf` inputs to exponentials produce exact zeros.
///   - reductions over empty spans return the identity (0, or -inf for max).
namespace gdc::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);
Isa active_isa();
/// Throws InvalidArgument if the CPU lacks the requested instruction set.
void set_isa(Isa isa);

double max(std::span<const double> x);
double sum(std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);

/// sum_i w_i * f_i where terms with w_i == 0 contribute exactly 0, even when
/// f_i is infinite or NaN.
double weighted_sum(std::span<const double> w, std::span<const double> f);

/// sum_i exp(x_i - shift)
double sum_exp(std::span<const double> x, double shift);

/// out_i = exp(x_i - shift). `out` may alias `x`.
void exp_shift(std::span<const double> x, double shift, std::span<double> out);

/// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);

/// x *= a
void scale(std::span<double> x, double a);

/// log(sum_i exp(x_i)); -inf for empty input or all -inf entries.
double logsumexp(std::span<const double> x);

/// Normalized exponentials of `logits`. `out` may alias `logits`.
void softmax(std::span<const double> logits, std::span<double> out);

}  // namespace gdc::kernels

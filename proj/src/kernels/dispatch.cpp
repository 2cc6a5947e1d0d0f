// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>

#include "gdc/error.hpp"
#include "gdc/kernels.hpp"
#include "kernels_impl.hpp"

namespace gdc::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect() {
  if (const char* forced = std::getenv("GDC_SIMD"); forced != nullptr) {
    if (std::string(forced) == "scalar") return Isa::scalar;
  }
  return isa_supported(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

const KernelTable& table() {
  return current().load(std::memory_order_relaxed) == Isa::avx2 ? *avx2::table
                                                                : scalar::table;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  if (isa == Isa::scalar) return true;
  return avx2::table != nullptr && cpu_has_avx2();
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw InvalidArgument("instruction set not available: " + std::string(isa_name(isa)));
  }
  current().store(isa, std::memory_order_relaxed);
}

double max(std::span<const double> x) { return table().max(x.data(), x.size()); }

double sum(std::span<const double> x) { return table().sum(x.data(), x.size()); }

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("dot: length mismatch");
  return table().dot(a.data(), b.data(), a.size());
}

double weighted_sum(std::span<const double> w, std::span<const double> f) {
  if (w.size() != f.size()) throw InvalidArgument("weighted_sum: length mismatch");
  return table().weighted_sum(w.data(), f.data(), w.size());
}

double sum_exp(std::span<const double> x, double shift) {
  return table().sum_exp(x.data(), x.size(), shift);
}

void exp_shift(std::span<const double> x, double shift, std::span<double> out) {
  if (x.size() != out.size()) throw InvalidArgument("exp_shift: length mismatch");
  table().exp_shift(x.data(), x.size(), shift, out.data());
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw InvalidArgument("axpy: length mismatch");
  table().axpy(a, x.data(), x.size(), y.data());
}

void scale(std::span<double> x, double a) { table().scale(x.data(), x.size(), a); }

double logsumexp(std::span<const double> x) {
  const double m = max(x);
  if (!std::isfinite(m)) return m;
  return m + std::log(sum_exp(x, m));
}

void softmax(std::span<const double> logits, std::span<double> out) {
  if (logits.size() != out.size()) throw InvalidArgument("softmax: length mismatch");
  if (logits.empty()) return;
  const double m = max(logits);
  exp_shift(logits, m, out);
  scale(out, 1.0 / sum(out));
}

}  // namespace gdc::kernels

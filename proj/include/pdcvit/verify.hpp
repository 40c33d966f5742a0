#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pdcvit/ops.hpp"
#include "pdcvit/pdc.hpp"
#include "pdcvit/tensor.hpp"

namespace pdcvit {

// |a - n| / max(|a|, |n|, scale_floor). The floor sits above the ~1e-10
// roundoff of a central difference at h = 1e-5, so gradients below it are
// effectively compared in absolute terms.
double relative_error(double analytic, double numeric, double scale_floor = 1e-5);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t kinks = 0;  // coordinates judged against one-sided slopes
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Compares tape gradients of `fn` with central differences of step h. Checks
// `coords_per_input` random coordinates of every input that requires grad (all
// coordinates when 0). Where the one-sided slopes disagree by more than 0.1%
// (a kink inside the stencil) the closest of the central and one-sided
// estimates is used.
GradCheckResult gradcheck(const ScalarFn& fn, const std::vector<Tensor>& inputs, Rng& rng, double h = 1e-5,
                          std::size_t coords_per_input = 0);

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false);

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyOptions {
  std::size_t pdc_trials = 1000;   // per variant
  std::size_t grad_draws = 3;      // per op
  std::uint64_t seed = 7;
  double converted_fault = 0.0;    // added to every converted weight
};

struct EquivalenceStats {
  double max_abs_diff = 0.0;
  std::size_t trials = 0;
};

// Random (input, weights, stride, padding) draws comparing direct pair
// evaluation with the converted convolution.
EquivalenceStats pdc_equivalence(PdcVariant variant, std::size_t trials, Rng& rng, double converted_fault = 0.0);

std::vector<SuiteResult> run_verify(const VerifyOptions& opts);

struct BenchCase {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
};

struct BenchRow {
  PdcVariant variant = PdcVariant::Angular;
  BenchCase size;
  double direct_ms = 0.0;     // median
  double converted_ms = 0.0;  // median
  double max_abs_diff = 0.0;
  double speedup() const { return converted_ms > 0 ? direct_ms / converted_ms : 0.0; }
};

// "CxHxW" list separated by commas.
std::vector<BenchCase> parse_bench_sizes(const std::string& text);

// Times both execution paths (C_out = C_in, stride 1, size-preserving
// padding) after checking they agree to 1e-10.
std::vector<BenchRow> run_bench(const std::vector<BenchCase>& sizes, std::size_t trials, std::uint64_t seed);
std::string bench_table(const std::vector<BenchRow>& rows);

}  // namespace pdcvit

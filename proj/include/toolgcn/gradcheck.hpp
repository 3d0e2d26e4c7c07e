#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "toolgcn/tape.hpp"
#include "toolgcn/tensor.hpp"

namespace toolgcn {

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Builds a scalar on `tape` from parameters already bound as tape leaves
// (same order as the NamedTensor list). Must be deterministic.
using ScalarFunction = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-6;
  // 0 checks every element; otherwise a seeded subsample of this size
  // that touches every tensor at least once.
  std::size_t max_elements = 0;
  std::uint64_t seed = 0;
  std::size_t worst_count = 10;
  // Replace elements whose perturbation flips the sign of some ReLU input:
  // the central difference then straddles a kink and measures neither
  // one-sided slope.
  bool skip_kinks = true;
};

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;  // |analytic - numeric| / max(1, |numeric|)
};

struct GradCheckReport {
  bool passed = false;
  std::size_t checked = 0;
  double max_error = 0.0;
  std::size_t kinks = 0;  // elements replaced because they straddled a ReLU kink
  std::vector<std::string> unchecked;  // tensors left without any checked element
  // Elements checked although they straddle a kink, because every candidate
  // in their tensor did.
  std::vector<std::string> forced;
  std::vector<GradCheckEntry> worst;  // sorted by decreasing error
  std::optional<std::string> nonfinite;  // location of the first non-finite value

  std::string summary() const;
};

// Compares reverse-mode gradients of `f` against central differences
// (f(w + h) - f(w - h)) / 2h for the selected parameter elements.
GradCheckReport grad_check(const ScalarFunction& f, std::span<const NamedTensor> params,
                           const GradCheckOptions& options = {});

}  // namespace toolgcn

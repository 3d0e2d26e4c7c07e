#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "toolgcn/ops.hpp"
#include "toolgcn/rng.hpp"
#include "toolgcn/tape.hpp"
#include "toolgcn/tensor.hpp"

namespace testutil {

using toolgcn::Rng;
using toolgcn::Shape;
using toolgcn::Tape;
using toolgcn::Tensor;
using toolgcn::Var;

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = scale * rng.normal();
  return t;
}

// Scalar built on a fresh tape from leaves holding `inputs`.
using TapeFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double eval_scalar(const TapeFn& f, const std::vector<Tensor>& inputs) {
  Tape tape(false);
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return tape.value(f(tape, vars))[0];
}

inline std::vector<Tensor> tape_grads(const TapeFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.parameter(t));
  tape.backward(f(tape, vars));
  std::vector<Tensor> out;
  for (Var v : vars) out.push_back(tape.grad(v));
  return out;
}

// Largest |analytic - central difference| / max(1, |central difference|)
// over every element of the inputs selected by `which` (all when empty).
inline double max_fd_error(const TapeFn& f, const std::vector<Tensor>& inputs, double h = 1e-5,
                           std::vector<std::size_t> which = {}) {
  if (which.empty())
    for (std::size_t i = 0; i < inputs.size(); ++i) which.push_back(i);
  const auto analytic = tape_grads(f, inputs);
  double worst = 0.0;
  for (std::size_t i : which) {
    for (std::size_t e = 0; e < inputs[i].size(); ++e) {
      auto plus = inputs;
      auto minus = inputs;
      plus[i][e] += h;
      minus[i][e] -= h;
      const double numeric = (eval_scalar(f, plus) - eval_scalar(f, minus)) / (2.0 * h);
      worst = std::max(worst, std::abs(analytic[i][e] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

// Weighted sum with fixed pseudo-random weights, so every output element
// carries a distinct adjoint.
inline Var weighted_sum(Tape& tape, Var x, std::uint64_t seed = 99) {
  Rng rng(seed);
  const Shape shape = tape.value(x).shape();
  Tensor w = random_tensor(shape, rng);
  const std::size_t n = w.size();
  Var flat = toolgcn::ops::reshape(tape, x, {1, n});
  Var col = tape.constant(w.reshaped({n, 1}));
  return toolgcn::ops::sum(tape, toolgcn::ops::matmul(tape, flat, col));
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    Rng rng(std::hash<std::string>{}(tag) ^ static_cast<std::uint64_t>(::getpid()));
    path_ = std::filesystem::temp_directory_path() /
            ("toolgcn_" + tag + "_" + std::to_string(rng.next() % 1000000000ULL));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace testutil

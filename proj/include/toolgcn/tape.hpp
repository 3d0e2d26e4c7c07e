#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <optional>
#include <vector>

#include "toolgcn/tensor.hpp"

namespace toolgcn {

/// Handle to a value slot on a Tape.
struct Var {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t id = kInvalid;
  bool valid() const { return id != kInvalid; }
};

enum class Primitive {
  kLeaf,
  kMatmul,
  kAdd,
  kRelu,
  kReshape,
  kPermute,
  kTemporalConv,
  kGraphConv,
  kBatchNorm,
  kDropout,
  kGlobalAvgPool,
  kMeanAxis,
  kLinear,
  kSoftmaxCrossEntropy,
  kSum,
};

const char* primitive_name(Primitive p);

/// Reverse-mode record of primitive operations.
///
/// Slots are appended in execution order. backward() zeroes every
/// accumulator, seeds the output with 1 and replays the recorded adjoints
/// from the last slot to the first. A Tape is single-threaded.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  // With record_gradients = false no adjoints are kept (forward-only runs).
  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var parameter(Tensor value) { return leaf(std::move(value), true); }

  // Appends a slot produced by `op`. The adjoint is stored only if some
  // input requires a gradient.
  Var record(Primitive op, Tensor value, std::initializer_list<Var> inputs, Backward backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  // Accumulated gradient; a zero tensor when nothing flowed into the slot.
  Tensor grad(Var v) const;

  // Mutable accumulator for use inside adjoints; allocated on first use.
  Tensor& grad_buffer(Var v);

  void backward(Var scalar_output);

 private:
  struct Node {
    Primitive op = Primitive::kLeaf;
    Tensor value;
    bool requires_grad = false;
    Backward backward;
    std::optional<Tensor> grad;
  };

  std::vector<Node> nodes_;
  bool recording_;
};

namespace testing {
// Negates the incoming adjoint of every slot produced by `p` during
// backward(). Used by negative-control gradient checks; nullopt disables.
void inject_adjoint_fault(std::optional<Primitive> p);
std::optional<Primitive> adjoint_fault();
}  // namespace testing

}  // namespace toolgcn

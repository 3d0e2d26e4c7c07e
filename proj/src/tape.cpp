#include "toolgcn/tape.hpp"

#include <atomic>

#include "toolgcn/error.hpp"

namespace toolgcn {

namespace {
// -1 means no fault.
std::atomic<int> g_fault{-1};
}  // namespace

const char* primitive_name(Primitive p) {
  switch (p) {
    case Primitive::kLeaf: return "leaf";
    case Primitive::kMatmul: return "matmul";
    case Primitive::kAdd: return "add";
    case Primitive::kRelu: return "relu";
    case Primitive::kReshape: return "reshape";
    case Primitive::kPermute: return "permute";
    case Primitive::kTemporalConv: return "temporal_conv";
    case Primitive::kGraphConv: return "graph_conv";
    case Primitive::kBatchNorm: return "batch_norm";
    case Primitive::kDropout: return "dropout";
    case Primitive::kGlobalAvgPool: return "global_avg_pool";
    case Primitive::kMeanAxis: return "mean_axis";
    case Primitive::kLinear: return "linear";
    case Primitive::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case Primitive::kSum: return "sum";
  }
  return "unknown";
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && recording_;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::record(Primitive op, Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  if (recording_) {
    for (Var in : inputs) {
      if (nodes_.at(in.id).requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad) return *n.grad;
  return Tensor(n.value.shape());
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.grad) n.grad.emplace(n.value.shape());
  return *n.grad;
}

void Tape::backward(Var scalar_output) {
  if (!recording_) throw ValidationError("backward() on a tape that does not record gradients");
  if (value(scalar_output).size() != 1)
    throw ValidationError("backward() needs a scalar output, got " +
                          shape_str(value(scalar_output).shape()));
  for (auto& n : nodes_) n.grad.reset();
  grad_buffer(scalar_output).fill(1.0);

  const int fault = g_fault.load();
  for (std::size_t i = scalar_output.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || !n.grad) continue;
    if (fault == static_cast<int>(n.op)) {
      Tensor flipped = *n.grad;
      for (double& g : flipped.data()) g = -g;
      n.backward(*this, flipped);
    } else {
      // The adjoint may allocate accumulators of earlier slots, which never
      // reallocates nodes_, so the reference stays valid.
      n.backward(*this, *n.grad);
    }
  }
}

namespace testing {

void inject_adjoint_fault(std::optional<Primitive> p) {
  g_fault.store(p ? static_cast<int>(*p) : -1);
}

std::optional<Primitive> adjoint_fault() {
  const int f = g_fault.load();
  if (f < 0) return std::nullopt;
  return static_cast<Primitive>(f);
}

}  // namespace testing

}  // namespace toolgcn

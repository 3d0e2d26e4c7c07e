#pragma once

#include <span>
#include <vector>

#include "toolgcn/rng.hpp"
#include "toolgcn/tape.hpp"
#include "toolgcn/tensor.hpp"

// Differentiable primitives. Every function records its adjoint on the
// tape it is given; shapes are checked eagerly and violations throw
// ValidationError.
namespace toolgcn::ops {

enum class Mode { kTrain, kEval };

// [m x k] * [k x n] -> [m x n]
Var matmul(Tape& tape, Var a, Var b);

Var add(Tape& tape, Var a, Var b);
Var relu(Tape& tape, Var x);

// While alive, records the sign of every relu() input evaluated on this
// thread. A finite-difference check compares records to notice a
// perturbation that moved some input across the kink at zero.
class ReluSignProbe {
 public:
  ReluSignProbe();
  ~ReluSignProbe();
  ReluSignProbe(const ReluSignProbe&) = delete;
  ReluSignProbe& operator=(const ReluSignProbe&) = delete;

  void record(bool positive) { signs_.push_back(positive); }
  std::vector<bool> take() { return std::move(signs_); }

 private:
  std::vector<bool> signs_;
  ReluSignProbe* previous_;
};

Var reshape(Tape& tape, Var x, Shape shape);

// out.shape[i] = x.shape[axes[i]]
Var permute(Tape& tape, Var x, std::vector<std::size_t> axes);

inline std::size_t conv_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                      std::size_t pad) {
  return (length + 2 * pad - kernel) / stride + 1;
}

// x [N, C, T, V], w [C', C, Kt, 1] -> [N, C', T', V] with
// T' = floor((T + 2 pad - Kt) / stride) + 1. The kernel spans time only;
// each joint column is convolved independently. Kt must be odd.
Var temporal_conv(Tape& tape, Var x, Var w, std::size_t stride, std::size_t pad);

// Partition-wise spatial graph convolution:
//   y[n,o,t,i] = sum_k sum_c w[k,o,c] * sum_j A_k[i,j] x[n,c,t,j]
// x [N, C, T, V], w [K, C', C]. The adjacency is a constant, either a
// static stack [K, V, V] or a per-frame field [N, T, K, V, V].
Var graph_conv(Tape& tape, Var x, Var w, const Tensor& adjacency);

struct BatchNormStats {
  Tensor mean;
  Tensor var;
};

// Per-channel normalization over every axis except axis 1. Train mode uses
// batch statistics and, when `running` is given, updates it with
// r = (1 - momentum) r + momentum * batch (unbiased variance). Eval mode
// requires `running`.
Var batch_norm(Tape& tape, Var x, Var gamma, Var beta, BatchNormStats* running, Mode mode,
               double momentum = 0.1, double eps = 1e-5);

// Inverted dropout: in train mode keeps each unit with probability
// keep_prob and divides survivors by keep_prob. Identity in eval mode.
Var dropout(Tape& tape, Var x, double keep_prob, Rng* rng, Mode mode);

// [N, C, T, V] -> [N, C], mean over T and V.
Var global_avg_pool(Tape& tape, Var x);

// Mean over one axis, which is removed from the shape.
Var mean_axis(Tape& tape, Var x, std::size_t axis);

// x [N, F], w [O, F], b [O] -> [N, O]
Var linear(Tape& tape, Var x, Var w, Var b);

Var sum(Tape& tape, Var x);

// Mean negative log-likelihood of `labels` under softmax(logits [N, K]).
Var softmax_cross_entropy(Tape& tape, Var logits, std::span<const int> labels);

// Row-wise softmax of [N, K] logits.
Tensor softmax(const Tensor& logits);

}  // namespace toolgcn::ops

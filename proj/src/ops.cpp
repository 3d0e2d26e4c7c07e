#include "toolgcn/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

#include "toolgcn/error.hpp"

namespace toolgcn::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg) {
  require(t.rank() == rank, std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) +
                                ", got " + shape_str(t.shape()));
}

// Column buffer for one sample of a temporal convolution:
// col[(c * Kt + k), (t_out * V + v)] = x[c, t_out * stride + k - pad, v].
void im2col(const double* x, std::size_t C, std::size_t T, std::size_t V, std::size_t Kt,
            std::size_t stride, std::size_t pad, std::size_t To, double* col) {
  const std::size_t cols = To * V;
  for (std::size_t c = 0; c < C; ++c) {
    const double* xc = x + c * T * V;
    for (std::size_t k = 0; k < Kt; ++k) {
      double* row = col + (c * Kt + k) * cols;
      for (std::size_t to = 0; to < To; ++to) {
        const long t = static_cast<long>(to * stride + k) - static_cast<long>(pad);
        double* dst = row + to * V;
        if (t < 0 || t >= static_cast<long>(T)) {
          std::fill(dst, dst + V, 0.0);
        } else {
          std::memcpy(dst, xc + static_cast<std::size_t>(t) * V, V * sizeof(double));
        }
      }
    }
  }
}

void col2im_add(const double* col, std::size_t C, std::size_t T, std::size_t V, std::size_t Kt,
                std::size_t stride, std::size_t pad, std::size_t To, double* dx) {
  const std::size_t cols = To * V;
  for (std::size_t c = 0; c < C; ++c) {
    double* dxc = dx + c * T * V;
    for (std::size_t k = 0; k < Kt; ++k) {
      const double* row = col + (c * Kt + k) * cols;
      for (std::size_t to = 0; to < To; ++to) {
        const long t = static_cast<long>(to * stride + k) - static_cast<long>(pad);
        if (t < 0 || t >= static_cast<long>(T)) continue;
        double* dst = dxc + static_cast<std::size_t>(t) * V;
        const double* src = row + to * V;
        for (std::size_t v = 0; v < V; ++v) dst[v] += src[v];
      }
    }
  }
}

// z[(k * C + c), t, i] = sum_j A(n, t)[k, i, j] * x[c, t, j] for one sample.
void mix_joints(const double* x, const Tensor& adj, std::size_t n, std::size_t C, std::size_t T,
                std::size_t V, std::size_t K, double* z) {
  const bool per_frame = adj.rank() == 5;
  const std::size_t kvv = K * V * V;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* xc = x + c * T * V;
      double* zc = z + (k * C + c) * T * V;
      for (std::size_t t = 0; t < T; ++t) {
        const double* a = per_frame ? adj.ptr() + (n * T + t) * kvv + k * V * V
                                    : adj.ptr() + k * V * V;
        const double* xt = xc + t * V;
        double* zt = zc + t * V;
        for (std::size_t i = 0; i < V; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < V; ++j) s += a[i * V + j] * xt[j];
          zt[i] = s;
        }
      }
    }
  }
}

// dx[c, t, j] += sum_k sum_i A(n, t)[k, i, j] * dz[(k * C + c), t, i]
void mix_joints_adjoint(const double* dz, const Tensor& adj, std::size_t n, std::size_t C,
                        std::size_t T, std::size_t V, std::size_t K, double* dx) {
  const bool per_frame = adj.rank() == 5;
  const std::size_t kvv = K * V * V;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* dzc = dz + (k * C + c) * T * V;
      double* dxc = dx + c * T * V;
      for (std::size_t t = 0; t < T; ++t) {
        const double* a = per_frame ? adj.ptr() + (n * T + t) * kvv + k * V * V
                                    : adj.ptr() + k * V * V;
        const double* g = dzc + t * V;
        double* d = dxc + t * V;
        for (std::size_t i = 0; i < V; ++i) {
          const double gi = g[i];
          if (gi == 0.0) continue;
          for (std::size_t j = 0; j < V; ++j) d[j] += a[i * V + j] * gi;
        }
      }
    }
  }
}

// Wcat[o, k * C + c] = w[k, o, c]
RowMat concat_partition_weights(const Tensor& w) {
  const std::size_t K = w.dim(0), Co = w.dim(1), C = w.dim(2);
  RowMat cat(Co, K * C);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t c = 0; c < C; ++c) cat(o, k * C + c) = w[(k * Co + o) * C + c];
  return cat;
}

}  // namespace

Var matmul(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  require_rank(av, 2, "matmul", "a");
  require_rank(bv, 2, "matmul", "b");
  require(av.dim(1) == bv.dim(0), "matmul: inner extents differ: " + shape_str(av.shape()) + " x " +
                                      shape_str(bv.shape()));
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  MatMap(out.ptr(), m, n).noalias() = ConstMatMap(av.ptr(), m, k) * ConstMatMap(bv.ptr(), k, n);
  return tape.record(Primitive::kMatmul, std::move(out), {a, b},
                     [a, b, m, k, n](Tape& tp, const Tensor& g) {
                       ConstMatMap gm(g.ptr(), m, n);
                       if (tp.requires_grad(a)) {
                         MatMap(tp.grad_buffer(a).ptr(), m, k).noalias() +=
                             gm * ConstMatMap(tp.value(b).ptr(), k, n).transpose();
                       }
                       if (tp.requires_grad(b)) {
                         MatMap(tp.grad_buffer(b).ptr(), k, n).noalias() +=
                             ConstMatMap(tp.value(a).ptr(), m, k).transpose() * gm;
                       }
                     });
}

Var add(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  require(av.shape() == bv.shape(),
          "add: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  Tensor out = av;
  accumulate(out, bv);
  return tape.record(Primitive::kAdd, std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) accumulate(tp.grad_buffer(a), g);
    if (tp.requires_grad(b)) accumulate(tp.grad_buffer(b), g);
  });
}

namespace {
thread_local ReluSignProbe* active_probe = nullptr;
}  // namespace

ReluSignProbe::ReluSignProbe() : previous_(active_probe) { active_probe = this; }
ReluSignProbe::~ReluSignProbe() { active_probe = previous_; }

Var relu(Tape& tape, Var x) {
  Tensor out = tape.value(x);
  if (active_probe)
    for (double v : out.data()) active_probe->record(v > 0.0);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return tape.record(Primitive::kRelu, std::move(out), {x}, [x](Tape& tp, const Tensor& g) {
    const double* in = tp.value(x).ptr();
    Tensor& dx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] > 0.0) dx[i] += g[i];
  });
}

Var reshape(Tape& tape, Var x, Shape shape) {
  Tensor out = tape.value(x).reshaped(std::move(shape));
  return tape.record(Primitive::kReshape, std::move(out), {x}, [x](Tape& tp, const Tensor& g) {
    Tensor& dx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

namespace {

// Offsets into the source for each output element of a permutation.
std::vector<std::size_t> permute_offsets(const Shape& in, const std::vector<std::size_t>& axes,
                                         Shape& out_shape) {
  const std::size_t r = in.size();
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * in[i + 1];
  out_shape.resize(r);
  std::vector<std::size_t> strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in[axes[i]];
    strides[i] = in_strides[axes[i]];
  }
  std::vector<std::size_t> offsets(shape_size(in));
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t lin = 0; lin < offsets.size(); ++lin) {
    offsets[lin] = off;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      off += strides[ax];
      if (idx[ax] < out_shape[ax]) break;
      off -= strides[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return offsets;
}

}  // namespace

Var permute(Tape& tape, Var x, std::vector<std::size_t> axes) {
  const Tensor& xv = tape.value(x);
  std::vector<std::size_t> sorted = axes;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> expect(xv.rank());
  std::iota(expect.begin(), expect.end(), 0);
  require(sorted == expect, "permute: axes are not a permutation of the tensor's axes");
  Shape out_shape;
  auto offsets = permute_offsets(xv.shape(), axes, out_shape);
  Tensor out(out_shape);
  for (std::size_t i = 0; i < offsets.size(); ++i) out[i] = xv[offsets[i]];
  return tape.record(Primitive::kPermute, std::move(out), {x},
                     [x, offsets = std::move(offsets)](Tape& tp, const Tensor& g) {
                       Tensor& dx = tp.grad_buffer(x);
                       for (std::size_t i = 0; i < offsets.size(); ++i) dx[offsets[i]] += g[i];
                     });
}

Var temporal_conv(Tape& tape, Var x, Var w, std::size_t stride, std::size_t pad) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  require_rank(xv, 4, "temporal_conv", "x");
  require_rank(wv, 4, "temporal_conv", "w");
  const std::size_t N = xv.dim(0), C = xv.dim(1), T = xv.dim(2), V = xv.dim(3);
  const std::size_t Co = wv.dim(0), Kt = wv.dim(2);
  require(wv.dim(1) == C, "temporal_conv: weight expects " + std::to_string(wv.dim(1)) +
                              " input channels, x has " + std::to_string(C));
  require(wv.dim(3) == 1, "temporal_conv: kernel must span time only (last extent 1)");
  require(Kt % 2 == 1, "temporal_conv: temporal kernel must be odd, got " + std::to_string(Kt));
  require(stride >= 1, "temporal_conv: stride must be >= 1");
  require(T + 2 * pad >= Kt, "temporal_conv: sequence shorter than kernel");
  const std::size_t To = conv_output_length(T, Kt, stride, pad);
  const std::size_t rows = C * Kt, cols = To * V;
  const bool direct = Kt == 1 && stride == 1 && pad == 0;

  Tensor out({N, Co, To, V});
  ConstMatMap wm(wv.ptr(), Co, rows);
  std::vector<double> col(direct ? 0 : rows * cols);
  for (std::size_t n = 0; n < N; ++n) {
    const double* xn = xv.ptr() + n * C * T * V;
    const double* src = xn;
    if (!direct) {
      im2col(xn, C, T, V, Kt, stride, pad, To, col.data());
      src = col.data();
    }
    MatMap(out.ptr() + n * Co * cols, Co, cols).noalias() = wm * ConstMatMap(src, rows, cols);
  }

  return tape.record(
      Primitive::kTemporalConv, std::move(out), {x, w},
      [=](Tape& tp, const Tensor& g) {
        const Tensor& xv2 = tp.value(x);
        const Tensor& wv2 = tp.value(w);
        const bool need_x = tp.requires_grad(x), need_w = tp.requires_grad(w);
        ConstMatMap wm2(wv2.ptr(), Co, rows);
        std::vector<double> colb(direct ? 0 : rows * cols);
        std::vector<double> dcol(rows * cols);
        for (std::size_t n = 0; n < N; ++n) {
          ConstMatMap gn(g.ptr() + n * Co * cols, Co, cols);
          const double* xn = xv2.ptr() + n * C * T * V;
          if (need_w) {
            const double* src = xn;
            if (!direct) {
              im2col(xn, C, T, V, Kt, stride, pad, To, colb.data());
              src = colb.data();
            }
            MatMap(tp.grad_buffer(w).ptr(), Co, rows).noalias() +=
                gn * ConstMatMap(src, rows, cols).transpose();
          }
          if (need_x) {
            double* dxn = tp.grad_buffer(x).ptr() + n * C * T * V;
            if (direct) {
              MatMap(dxn, rows, cols).noalias() += wm2.transpose() * gn;
            } else {
              MatMap(dcol.data(), rows, cols).noalias() = wm2.transpose() * gn;
              col2im_add(dcol.data(), C, T, V, Kt, stride, pad, To, dxn);
            }
          }
        }
      });
}

Var graph_conv(Tape& tape, Var x, Var w, const Tensor& adjacency) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  require_rank(xv, 4, "graph_conv", "x");
  require_rank(wv, 3, "graph_conv", "w");
  const std::size_t N = xv.dim(0), C = xv.dim(1), T = xv.dim(2), V = xv.dim(3);
  const std::size_t K = wv.dim(0), Co = wv.dim(1);
  require(wv.dim(2) == C, "graph_conv: weight expects " + std::to_string(wv.dim(2)) +
                              " input channels, x has " + std::to_string(C));
  if (adjacency.rank() == 3) {
    require(adjacency.dim(0) == K, "graph_conv: adjacency has " + std::to_string(adjacency.dim(0)) +
                                       " partitions, weights have " + std::to_string(K));
    require(adjacency.dim(1) == V && adjacency.dim(2) == V,
            "graph_conv: adjacency is " + shape_str(adjacency.shape()) + " but x has V=" +
                std::to_string(V));
  } else if (adjacency.rank() == 5) {
    require(adjacency.dim(0) == N && adjacency.dim(1) == T && adjacency.dim(2) == K &&
                adjacency.dim(3) == V && adjacency.dim(4) == V,
            "graph_conv: per-frame adjacency " + shape_str(adjacency.shape()) +
                " does not match x " + shape_str(xv.shape()) + " with K=" + std::to_string(K));
  } else {
    throw ValidationError("graph_conv: adjacency must be [K,V,V] or [N,T,K,V,V]");
  }

  const std::size_t cols = T * V, rows = K * C;
  const RowMat wcat = concat_partition_weights(wv);
  Tensor out({N, Co, T, V});
  std::vector<double> z(rows * cols);
  for (std::size_t n = 0; n < N; ++n) {
    mix_joints(xv.ptr() + n * C * cols, adjacency, n, C, T, V, K, z.data());
    MatMap(out.ptr() + n * Co * cols, Co, cols).noalias() = wcat * ConstMatMap(z.data(), rows, cols);
  }

  return tape.record(
      Primitive::kGraphConv, std::move(out), {x, w},
      [=, adj = adjacency](Tape& tp, const Tensor& g) {
        const Tensor& xv2 = tp.value(x);
        const bool need_x = tp.requires_grad(x), need_w = tp.requires_grad(w);
        const RowMat wc = concat_partition_weights(tp.value(w));
        RowMat dwcat = RowMat::Zero(Co, rows);
        std::vector<double> zb(rows * cols), dz(rows * cols);
        for (std::size_t n = 0; n < N; ++n) {
          ConstMatMap gn(g.ptr() + n * Co * cols, Co, cols);
          if (need_w) {
            mix_joints(xv2.ptr() + n * C * cols, adj, n, C, T, V, K, zb.data());
            dwcat.noalias() += gn * ConstMatMap(zb.data(), rows, cols).transpose();
          }
          if (need_x) {
            MatMap(dz.data(), rows, cols).noalias() = wc.transpose() * gn;
            mix_joints_adjoint(dz.data(), adj, n, C, T, V, K,
                               tp.grad_buffer(x).ptr() + n * C * cols);
          }
        }
        if (need_w) {
          Tensor& dw = tp.grad_buffer(w);
          for (std::size_t k = 0; k < K; ++k)
            for (std::size_t o = 0; o < Co; ++o)
              for (std::size_t c = 0; c < C; ++c) dw[(k * Co + o) * C + c] += dwcat(o, k * C + c);
        }
      });
}

Var batch_norm(Tape& tape, Var x, Var gamma, Var beta, BatchNormStats* running, Mode mode,
               double momentum, double eps) {
  const Tensor& xv = tape.value(x);
  require(xv.rank() >= 2, "batch_norm: x must have a channel axis");
  const std::size_t N = xv.dim(0), C = xv.dim(1);
  const std::size_t inner = xv.size() / (N * C);
  const std::size_t count = N * inner;
  const Tensor& gv = tape.value(gamma);
  const Tensor& bv = tape.value(beta);
  require(gv.size() == C && bv.size() == C,
          "batch_norm: gamma/beta must have " + std::to_string(C) + " entries");
  if (running)
    require(running->mean.size() == C && running->var.size() == C,
            "batch_norm: running statistics must have " + std::to_string(C) + " entries");
  require(mode == Mode::kTrain || running != nullptr, "batch_norm: eval mode needs running stats");

  std::vector<double> mean(C, 0.0), invstd(C, 0.0);
  if (mode == Mode::kTrain) {
    std::vector<double> var(C, 0.0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const double* p = xv.ptr() + (n * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) mean[c] += p[i];
      }
    for (auto& m : mean) m /= static_cast<double>(count);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const double* p = xv.ptr() + (n * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = p[i] - mean[c];
          var[c] += d * d;
        }
      }
    for (std::size_t c = 0; c < C; ++c) {
      const double biased = var[c] / static_cast<double>(count);
      invstd[c] = 1.0 / std::sqrt(biased + eps);
      if (running) {
        const double unbiased =
            count > 1 ? var[c] / static_cast<double>(count - 1) : biased;
        running->mean[c] = (1.0 - momentum) * running->mean[c] + momentum * mean[c];
        running->var[c] = (1.0 - momentum) * running->var[c] + momentum * unbiased;
      }
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = running->mean[c];
      invstd[c] = 1.0 / std::sqrt(running->var[c] + eps);
    }
  }

  Tensor xhat(xv.shape());
  Tensor out(xv.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const double h = (xv[base + i] - mean[c]) * invstd[c];
        xhat[base + i] = h;
        out[base + i] = gv[c] * h + bv[c];
      }
    }

  const bool train = mode == Mode::kTrain;
  return tape.record(
      Primitive::kBatchNorm, std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat), invstd = std::move(invstd)](Tape& tp, const Tensor& g) {
        std::vector<double> sum_g(C, 0.0), sum_gh(C, 0.0);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (n * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              sum_g[c] += g[base + i];
              sum_gh[c] += g[base + i] * xhat[base + i];
            }
          }
        if (tp.requires_grad(gamma)) {
          Tensor& dg = tp.grad_buffer(gamma);
          for (std::size_t c = 0; c < C; ++c) dg[c] += sum_gh[c];
        }
        if (tp.requires_grad(beta)) {
          Tensor& db = tp.grad_buffer(beta);
          for (std::size_t c = 0; c < C; ++c) db[c] += sum_g[c];
        }
        if (!tp.requires_grad(x)) return;
        const Tensor& gam = tp.value(gamma);
        Tensor& dx = tp.grad_buffer(x);
        const double m = static_cast<double>(count);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (n * C + c) * inner;
            const double scale = gam[c] * invstd[c];
            if (train) {
              for (std::size_t i = 0; i < inner; ++i)
                dx[base + i] +=
                    scale * (g[base + i] - sum_g[c] / m - xhat[base + i] * sum_gh[c] / m);
            } else {
              for (std::size_t i = 0; i < inner; ++i) dx[base + i] += scale * g[base + i];
            }
          }
      });
}

Var dropout(Tape& tape, Var x, double keep_prob, Rng* rng, Mode mode) {
  require(keep_prob > 0.0 && keep_prob <= 1.0, "dropout: keep probability must be in (0, 1]");
  if (mode == Mode::kEval || keep_prob == 1.0) return x;
  require(rng != nullptr, "dropout: train mode needs a random source");
  const Tensor& xv = tape.value(x);
  Tensor mask(xv.shape());
  Tensor out(xv.shape());
  const double scale = 1.0 / keep_prob;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng->bernoulli(keep_prob) ? scale : 0.0;
    out[i] = xv[i] * mask[i];
  }
  return tape.record(Primitive::kDropout, std::move(out), {x},
                     [x, mask = std::move(mask)](Tape& tp, const Tensor& g) {
                       Tensor& dx = tp.grad_buffer(x);
                       for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * mask[i];
                     });
}

Var global_avg_pool(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  require_rank(xv, 4, "global_avg_pool", "x");
  const std::size_t N = xv.dim(0), C = xv.dim(1), inner = xv.dim(2) * xv.dim(3);
  Tensor out({N, C});
  for (std::size_t r = 0; r < N * C; ++r) {
    const double* p = xv.ptr() + r * inner;
    out[r] = std::accumulate(p, p + inner, 0.0) / static_cast<double>(inner);
  }
  return tape.record(Primitive::kGlobalAvgPool, std::move(out), {x},
                     [x, N, C, inner](Tape& tp, const Tensor& g) {
                       Tensor& dx = tp.grad_buffer(x);
                       const double s = 1.0 / static_cast<double>(inner);
                       for (std::size_t r = 0; r < N * C; ++r) {
                         double* p = dx.ptr() + r * inner;
                         for (std::size_t i = 0; i < inner; ++i) p[i] += g[r] * s;
                       }
                     });
}

Var mean_axis(Tape& tape, Var x, std::size_t axis) {
  const Tensor& xv = tape.value(x);
  require(axis < xv.rank(), "mean_axis: axis out of range");
  const Shape& s = xv.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * len + l) * inner + i];
  for (double& v : out.data()) v /= static_cast<double>(len);
  return tape.record(Primitive::kMeanAxis, std::move(out), {x},
                     [x, outer, len, inner](Tape& tp, const Tensor& g) {
                       Tensor& dx = tp.grad_buffer(x);
                       const double s2 = 1.0 / static_cast<double>(len);
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t l = 0; l < len; ++l)
                           for (std::size_t i = 0; i < inner; ++i)
                             dx[(o * len + l) * inner + i] += g[o * inner + i] * s2;
                     });
}

Var linear(Tape& tape, Var x, Var w, Var b) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  const Tensor& bv = tape.value(b);
  require_rank(xv, 2, "linear", "x");
  require_rank(wv, 2, "linear", "w");
  const std::size_t N = xv.dim(0), F = xv.dim(1), O = wv.dim(0);
  require(wv.dim(1) == F, "linear: weight expects " + std::to_string(wv.dim(1)) +
                              " features, x has " + std::to_string(F));
  require(bv.size() == O, "linear: bias must have " + std::to_string(O) + " entries");
  Tensor out({N, O});
  MatMap om(out.ptr(), N, O);
  om.noalias() = ConstMatMap(xv.ptr(), N, F) * ConstMatMap(wv.ptr(), O, F).transpose();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o) om(n, o) += bv[o];
  return tape.record(Primitive::kLinear, std::move(out), {x, w, b},
                     [x, w, b, N, F, O](Tape& tp, const Tensor& g) {
                       ConstMatMap gm(g.ptr(), N, O);
                       if (tp.requires_grad(x))
                         MatMap(tp.grad_buffer(x).ptr(), N, F).noalias() +=
                             gm * ConstMatMap(tp.value(w).ptr(), O, F);
                       if (tp.requires_grad(w))
                         MatMap(tp.grad_buffer(w).ptr(), O, F).noalias() +=
                             gm.transpose() * ConstMatMap(tp.value(x).ptr(), N, F);
                       if (tp.requires_grad(b)) {
                         Tensor& db = tp.grad_buffer(b);
                         for (std::size_t n = 0; n < N; ++n)
                           for (std::size_t o = 0; o < O; ++o) db[o] += gm(n, o);
                       }
                     });
}

Var sum(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  const double s = std::accumulate(xv.data().begin(), xv.data().end(), 0.0);
  return tape.record(Primitive::kSum, Tensor::scalar(s), {x}, [x](Tape& tp, const Tensor& g) {
    Tensor& dx = tp.grad_buffer(x);
    for (double& v : dx.data()) v += g[0];
  });
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 2, "softmax", "logits");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  Tensor p(logits.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const double* l = logits.ptr() + n * K;
    const double mx = *std::max_element(l, l + K);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(l[k] - mx);
    for (std::size_t k = 0; k < K; ++k) p[n * K + k] = std::exp(l[k] - mx) / z;
  }
  return p;
}

Var softmax_cross_entropy(Tape& tape, Var logits, std::span<const int> labels) {
  const Tensor& lv = tape.value(logits);
  require_rank(lv, 2, "softmax_cross_entropy", "logits");
  const std::size_t N = lv.dim(0), K = lv.dim(1);
  require(labels.size() == N, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                  " labels for " + std::to_string(N) + " rows");
  for (int y : labels)
    require(y >= 0 && static_cast<std::size_t>(y) < K,
            "softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                std::to_string(K) + ")");
  Tensor p = softmax(lv);
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const double* l = lv.ptr() + n * K;
    const double mx = *std::max_element(l, l + K);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(l[k] - mx);
    loss -= l[labels[n]] - mx - std::log(z);
  }
  loss /= static_cast<double>(N);
  std::vector<int> ys(labels.begin(), labels.end());
  return tape.record(Primitive::kSoftmaxCrossEntropy, Tensor::scalar(loss), {logits},
                     [logits, p = std::move(p), ys = std::move(ys), N, K](Tape& tp,
                                                                          const Tensor& g) {
                       Tensor& dl = tp.grad_buffer(logits);
                       const double s = g[0] / static_cast<double>(N);
                       for (std::size_t n = 0; n < N; ++n)
                         for (std::size_t k = 0; k < K; ++k) {
                           const double onehot = static_cast<int>(k) == ys[n] ? 1.0 : 0.0;
                           dl[n * K + k] += s * (p[n * K + k] - onehot);
                         }
                     });
}

}  // namespace toolgcn::ops

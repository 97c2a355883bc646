#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vscreen/rng.hpp"
#include "vscreen/tape.hpp"
#include "vscreen/tensor.hpp"

namespace vscreen {

// Per-channel affine parameters plus running statistics for batch
// normalization. gamma/beta are the learnable tensors of record; callers
// snapshot them onto the tape per batch and write optimizer updates back
// here. Running stats are updated in place during training forwards:
// r <- momentum * r + (1 - momentum) * batch_stat. The very first training
// batch seeds the running stats directly — activation variances sit orders
// of magnitude away from the (0, 1) placeholders, and decaying from the
// placeholder would leave inference miscalibrated for dozens of batches.
template <typename T>
struct BatchNormState {
  Tensor<T> gamma;
  Tensor<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  double momentum = 0.9;
  double eps = 1e-5;
  bool stats_seeded = false;

  static BatchNormState identity(std::size_t channels) {
    BatchNormState s;
    s.gamma = Tensor<T>({channels}, std::vector<T>(channels, T(1)));
    s.beta = Tensor<T>({channels});
    s.running_mean.assign(channels, T(0));
    s.running_var.assign(channels, T(1));
    return s;
  }

  std::size_t channels() const { return gamma.numel(); }
};

namespace detail {

using i64 = std::int64_t;

// Dot product with lane-structured partial sums: lane j accumulates indices
// congruent to j mod 8 and the lanes combine in a fixed tree, so the result
// is identical on every run while still vectorizing without reassociation.
template <typename A, typename B>
inline double lane_dot(const A* __restrict a, const B* __restrict b, i64 n) {
  double lanes[8] = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  i64 x = 0;
  for (; x + 8 <= n; x += 8)
    for (int j = 0; j < 8; ++j)
      lanes[j] += static_cast<double>(a[x + j]) * static_cast<double>(b[x + j]);
  double tail = 0.0;
  for (; x < n; ++x) tail += static_cast<double>(a[x]) * static_cast<double>(b[x]);
  return (((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
          ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))) +
         tail;
}

// acc[x] += w0*row[x-1] + w1*row[x] + w2*row[x+1], zero beyond the ends.
// Accumulation order per element is fixed, so threading over rows never
// changes results.
template <typename T>
inline void row_tap3(double* acc, const T* row, i64 w, double w0, double w1, double w2) {
  if (w == 1) {
    acc[0] += w1 * static_cast<double>(row[0]);
    return;
  }
  acc[0] += w1 * static_cast<double>(row[0]) + w2 * static_cast<double>(row[1]);
  for (i64 x = 1; x < w - 1; ++x)
    acc[x] += w0 * static_cast<double>(row[x - 1]) + w1 * static_cast<double>(row[x]) +
              w2 * static_cast<double>(row[x + 1]);
  acc[w - 1] += w0 * static_cast<double>(row[w - 2]) + w1 * static_cast<double>(row[w - 1]);
}

// Same-padded 3x3x3 cross-correlation. out[n,co] = sum_ci in[n,ci] (*) k[co,ci] + b[co].
// Works one output row at a time so the double accumulator row stays in L1
// across all 9*Ci tap passes; per-element accumulation order is
// ci -> kd -> kh -> (w0,w1,w2), fixed regardless of threading.
template <typename T>
void conv3d_forward(const T* in, const T* k, const T* b, T* out, i64 n_batch, i64 ci_n,
                    i64 co_n, i64 d, i64 h, i64 w) {
  const i64 s = d * h * w;
#pragma omp parallel for schedule(static)
  for (i64 n = 0; n < n_batch; ++n) {
    // One widening pass per sample; every output channel reuses it.
    std::vector<double> inw(static_cast<std::size_t>(ci_n * s));
    const T* src = in + n * ci_n * s;
    for (i64 i = 0; i < ci_n * s; ++i) inw[static_cast<std::size_t>(i)] = src[i];
    std::vector<double> acc(static_cast<std::size_t>(w));
    for (i64 co = 0; co < co_n; ++co) {
      const T* kbase = k + co * ci_n * 27;
      const double bias = static_cast<double>(b[co]);
      for (i64 z = 0; z < d; ++z) {
        const i64 kdlo = z > 0 ? 0 : 1, kdhi = z < d - 1 ? 3 : 2;
        for (i64 y = 0; y < h; ++y) {
          const i64 khlo = y > 0 ? 0 : 1, khhi = y < h - 1 ? 3 : 2;
          std::fill(acc.begin(), acc.end(), 0.0);
          for (i64 ci = 0; ci < ci_n; ++ci) {
            const double* inp = inw.data() + ci * s;
            const T* kk = kbase + ci * 27;
            for (i64 kd = kdlo; kd < kdhi; ++kd)
              for (i64 kh = khlo; kh < khhi; ++kh) {
                const T* kw = kk + (kd * 3 + kh) * 3;
                row_tap3(acc.data(), inp + ((z + kd - 1) * h + (y + kh - 1)) * w, w,
                         static_cast<double>(kw[0]), static_cast<double>(kw[1]),
                         static_cast<double>(kw[2]));
              }
          }
          T* op = out + (n * co_n + co) * s + (z * h + y) * w;
          for (i64 x = 0; x < w; ++x) op[x] = static_cast<T>(acc[x] + bias);
        }
      }
    }
  }
}

// gin[n,ci] += sum_co gout[n,co] (*) flip(k[co,ci]); the flip makes it the
// same row-tap structure as the forward pass.
template <typename T>
void conv3d_backward_input(const T* gout, const T* k, T* gin, i64 n_batch, i64 ci_n, i64 co_n,
                           i64 d, i64 h, i64 w) {
  const i64 s = d * h * w;
#pragma omp parallel for schedule(static)
  for (i64 n = 0; n < n_batch; ++n) {
    std::vector<double> gw_wide(static_cast<std::size_t>(co_n * s));
    const T* src = gout + n * co_n * s;
    for (i64 i = 0; i < co_n * s; ++i) gw_wide[static_cast<std::size_t>(i)] = src[i];
    std::vector<double> acc(static_cast<std::size_t>(w));
    for (i64 ci = 0; ci < ci_n; ++ci) {
      for (i64 z = 0; z < d; ++z) {
        const i64 adlo = z > 0 ? 0 : 1, adhi = z < d - 1 ? 3 : 2;
        for (i64 y = 0; y < h; ++y) {
          const i64 ahlo = y > 0 ? 0 : 1, ahhi = y < h - 1 ? 3 : 2;
          std::fill(acc.begin(), acc.end(), 0.0);
          for (i64 co = 0; co < co_n; ++co) {
            const double* gp = gw_wide.data() + co * s;
            const T* kk = k + (co * ci_n + ci) * 27;
            for (i64 ad = adlo; ad < adhi; ++ad)
              for (i64 ah = ahlo; ah < ahhi; ++ah) {
                const T* kw = kk + ((2 - ad) * 3 + (2 - ah)) * 3;
                row_tap3(acc.data(), gp + ((z + ad - 1) * h + (y + ah - 1)) * w, w,
                         static_cast<double>(kw[2]), static_cast<double>(kw[1]),
                         static_cast<double>(kw[0]));
              }
          }
          T* ip = gin + (n * ci_n + ci) * s + (z * h + y) * w;
          for (i64 x = 0; x < w; ++x) ip[x] += static_cast<T>(acc[x]);
        }
      }
    }
  }
}

template <typename T>
void conv3d_backward_kernel(const T* gout, const T* in, T* gk, i64 n_batch, i64 ci_n, i64 co_n,
                            i64 d, i64 h, i64 w) {
  const i64 s = d * h * w;
#pragma omp parallel for schedule(static)
  for (i64 cc = 0; cc < co_n * ci_n; ++cc) {
    const i64 co = cc / ci_n, ci = cc % ci_n;
    double acc[27] = {0.0};
    for (i64 n = 0; n < n_batch; ++n) {
      const T* gp = gout + (n * co_n + co) * s;
      const T* ip = in + (n * ci_n + ci) * s;
      for (i64 kd = 0; kd < 3; ++kd) {
        const i64 zlo = std::max<i64>(0, 1 - kd), zhi = d - std::max<i64>(0, kd - 1);
        for (i64 kh = 0; kh < 3; ++kh) {
          const i64 ylo = std::max<i64>(0, 1 - kh), yhi = h - std::max<i64>(0, kh - 1);
          double s0 = 0.0, s1 = 0.0, s2 = 0.0;
          for (i64 z = zlo; z < zhi; ++z) {
            for (i64 y = ylo; y < yhi; ++y) {
              const T* grow = gp + (z * h + y) * w;
              const T* irow = ip + ((z + kd - 1) * h + (y + kh - 1)) * w;
              s1 += lane_dot(grow, irow, w);
              if (w > 1) {
                s0 += lane_dot(grow + 1, irow, w - 1);
                s2 += lane_dot(grow, irow + 1, w - 1);
              }
            }
          }
          acc[(kd * 3 + kh) * 3 + 0] += s0;
          acc[(kd * 3 + kh) * 3 + 1] += s1;
          acc[(kd * 3 + kh) * 3 + 2] += s2;
        }
      }
    }
    T* kp = gk + cc * 27;
    for (int j = 0; j < 27; ++j) kp[j] += static_cast<T>(acc[j]);
  }
}

inline std::size_t spatial_numel(const std::vector<std::size_t>& shape, std::size_t from) {
  std::size_t s = 1;
  for (std::size_t i = from; i < shape.size(); ++i) s *= shape[i];
  return s;
}

}  // namespace detail

// Same-padded, stride-1 3x3x3 cross-correlation. input [N,Ci,D,H,W],
// kernel [Co,Ci,3,3,3], bias [Co] -> [N,Co,D,H,W]. Reductions accumulate in
// double regardless of T.
template <typename T>
Var<T> conv3d(Tape<T>& tape, Var<T> input, Var<T> kernel, Var<T> bias) {
  const Tensor<T>& in = tape.value(input);
  const Tensor<T>& k = tape.value(kernel);
  const Tensor<T>& b = tape.value(bias);
  if (in.rank() != 5)
    throw ShapeError("conv3d: input must be [N,C,D,H,W], got " + Tensor<T>::shape_str(in.shape));
  if (k.rank() != 5 || k.dim(2) != 3 || k.dim(3) != 3 || k.dim(4) != 3)
    throw ShapeError("conv3d: kernel must be [Co,Ci,3,3,3], got " +
                     Tensor<T>::shape_str(k.shape));
  if (k.dim(1) != in.dim(1))
    throw ShapeError("conv3d: kernel expects " + std::to_string(k.dim(1)) +
                     " input channels, input has " + std::to_string(in.dim(1)));
  if (b.rank() != 1 || b.dim(0) != k.dim(0))
    throw ShapeError("conv3d: bias must be [Co]");

  const auto n = static_cast<detail::i64>(in.dim(0));
  const auto ci = static_cast<detail::i64>(in.dim(1));
  const auto co = static_cast<detail::i64>(k.dim(0));
  const auto d = static_cast<detail::i64>(in.dim(2));
  const auto h = static_cast<detail::i64>(in.dim(3));
  const auto w = static_cast<detail::i64>(in.dim(4));

  Tensor<T> out({in.dim(0), k.dim(0), in.dim(2), in.dim(3), in.dim(4)});
  detail::conv3d_forward(in.data(), k.data(), b.data(), out.data(), n, ci, co, d, h, w);

  return tape.make_node(std::move(out), {input, kernel, bias},
                        [=](Tape<T>& t, std::uint32_t self) {
                          const std::vector<T>& g = t.grad_buffer(self);
                          if (t.requires_grad(input))
                            detail::conv3d_backward_input(g.data(), t.value(kernel).data(),
                                                          t.grad_buffer(input.idx).data(), n, ci,
                                                          co, d, h, w);
                          if (t.requires_grad(kernel))
                            detail::conv3d_backward_kernel(g.data(), t.value(input).data(),
                                                           t.grad_buffer(kernel.idx).data(), n,
                                                           ci, co, d, h, w);
                          if (t.requires_grad(bias)) {
                            std::vector<T>& gb = t.grad_buffer(bias.idx);
                            const detail::i64 s = d * h * w;
                            for (detail::i64 c = 0; c < co; ++c) {
                              double acc = 0.0;
                              for (detail::i64 nn = 0; nn < n; ++nn) {
                                const T* gp = g.data() + (nn * co + c) * s;
                                for (detail::i64 i = 0; i < s; ++i)
                                  acc += static_cast<double>(gp[i]);
                              }
                              gb[static_cast<std::size_t>(c)] += static_cast<T>(acc);
                            }
                          }
                        });
}

// Non-overlapping 2x2x2 max pool, floor semantics (trailing odd slices are
// dropped). Gradient routes to the argmax voxel; ties go to the lowest
// linear index.
template <typename T>
Var<T> maxpool3d(Tape<T>& tape, Var<T> input) {
  const Tensor<T>& in = tape.value(input);
  if (in.rank() != 5)
    throw ShapeError("maxpool3d: input must be [N,C,D,H,W], got " +
                     Tensor<T>::shape_str(in.shape));
  const std::size_t n = in.dim(0), c = in.dim(1), d = in.dim(2), h = in.dim(3), w = in.dim(4);
  if (d < 2 || h < 2 || w < 2)
    throw ShapeError("maxpool3d: every spatial dim must be >= 2, got " +
                     Tensor<T>::shape_str(in.shape));
  const std::size_t od = d / 2, oh = h / 2, ow = w / 2;
  const std::size_t s_in = d * h * w, s_out = od * oh * ow;

  Tensor<T> out({n, c, od, oh, ow});
  auto arg = std::make_shared<std::vector<std::uint32_t>>(n * c * s_out);

  using detail::i64;
#pragma omp parallel for schedule(static)
  for (i64 nc = 0; nc < static_cast<i64>(n * c); ++nc) {
    const T* ip = in.data() + nc * s_in;
    T* op = out.data() + nc * s_out;
    std::uint32_t* ap = arg->data() + nc * s_out;
    std::size_t o = 0;
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x, ++o) {
          T best = ip[(2 * z * h + 2 * y) * w + 2 * x];
          std::uint32_t besti = static_cast<std::uint32_t>((2 * z * h + 2 * y) * w + 2 * x);
          for (std::size_t dz = 0; dz < 2; ++dz)
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t idx = ((2 * z + dz) * h + 2 * y + dy) * w + 2 * x + dx;
                if (ip[idx] > best) {
                  best = ip[idx];
                  besti = static_cast<std::uint32_t>(idx);
                }
              }
          op[o] = best;
          ap[o] = besti;
        }
  }

  return tape.make_node(
      std::move(out), {input}, [=, n_c = n * c](Tape<T>& t, std::uint32_t self) {
        if (!t.requires_grad(input)) return;
        const std::vector<T>& g = t.grad_buffer(self);
        std::vector<T>& gi = t.grad_buffer(input.idx);
#pragma omp parallel for schedule(static)
        for (i64 nc = 0; nc < static_cast<i64>(n_c); ++nc) {
          const T* gp = g.data() + nc * s_out;
          T* gip = gi.data() + nc * s_in;
          const std::uint32_t* ap = arg->data() + nc * s_out;
          for (std::size_t o = 0; o < s_out; ++o) gip[ap[o]] += gp[o];
        }
      });
}

// Elementwise max(0, x). Gradient passes where x > 0.
template <typename T>
Var<T> relu(Tape<T>& tape, Var<T> input) {
  const Tensor<T>& in = tape.value(input);
  Tensor<T> out(in.shape);
  const std::size_t m = in.numel();
  using detail::i64;
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < static_cast<i64>(m); ++i)
    out.values[i] = in.values[i] > T(0) ? in.values[i] : T(0);

  return tape.make_node(std::move(out), {input}, [=](Tape<T>& t, std::uint32_t self) {
    if (!t.requires_grad(input)) return;
    const std::vector<T>& g = t.grad_buffer(self);
    std::vector<T>& gi = t.grad_buffer(input.idx);
    const std::vector<T>& x = t.value(input).values;
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < static_cast<i64>(m); ++i)
      if (x[i] > T(0)) gi[i] += g[i];
  });
}

// Batch normalization over (batch, spatial) per channel of an [N,C,...]
// tensor. gamma/beta ride the tape so their gradients flow; `state` supplies
// eps/momentum and the running statistics (updated in place when training).
template <typename T>
Var<T> batchnorm(Tape<T>& tape, Var<T> input, Var<T> gamma, Var<T> beta,
                 BatchNormState<T>& state, bool training) {
  const Tensor<T>& in = tape.value(input);
  if (in.rank() < 2) throw ShapeError("batchnorm: input must be [N,C,...]");
  const std::size_t n = in.dim(0), c = in.dim(1);
  const std::size_t sp = detail::spatial_numel(in.shape, 2);
  if (tape.value(gamma).numel() != c || tape.value(beta).numel() != c ||
      state.channels() != c || state.running_mean.size() != c)
    throw ShapeError("batchnorm: parameter length must equal channel count " +
                     std::to_string(c));
  if (training && n < 2)
    throw ValueError("batchnorm: training mode requires batch size >= 2, got " +
                     std::to_string(n));

  const std::size_t stride_n = c * sp;
  const double m_count = static_cast<double>(n * sp);
  auto mean = std::make_shared<std::vector<double>>(c, 0.0);
  auto inv_sd = std::make_shared<std::vector<double>>(c, 0.0);
  const std::vector<T>& gv = tape.value(gamma).values;
  const std::vector<T>& bv = tape.value(beta).values;
  const bool seed_stats = training && !state.stats_seeded;
  if (training) state.stats_seeded = true;

  Tensor<T> out(in.shape);
  using detail::i64;
#pragma omp parallel for schedule(static)
  for (i64 ch = 0; ch < static_cast<i64>(c); ++ch) {
    double mu, inv;
    if (training) {
      double sum = 0.0;
      for (std::size_t nn = 0; nn < n; ++nn) {
        const T* p = in.data() + nn * stride_n + ch * sp;
        for (std::size_t i = 0; i < sp; ++i) sum += static_cast<double>(p[i]);
      }
      mu = sum / m_count;
      double ss = 0.0;
      for (std::size_t nn = 0; nn < n; ++nn) {
        const T* p = in.data() + nn * stride_n + ch * sp;
        for (std::size_t i = 0; i < sp; ++i) {
          const double dvi = static_cast<double>(p[i]) - mu;
          ss += dvi * dvi;
        }
      }
      const double var = ss / m_count;
      inv = 1.0 / std::sqrt(var + state.eps);
      const double keep = seed_stats ? 0.0 : state.momentum;
      state.running_mean[ch] = static_cast<T>(
          keep * static_cast<double>(state.running_mean[ch]) + (1.0 - keep) * mu);
      state.running_var[ch] = static_cast<T>(
          keep * static_cast<double>(state.running_var[ch]) + (1.0 - keep) * var);
    } else {
      mu = static_cast<double>(state.running_mean[ch]);
      inv = 1.0 / std::sqrt(static_cast<double>(state.running_var[ch]) + state.eps);
    }
    (*mean)[ch] = mu;
    (*inv_sd)[ch] = inv;
    const double gg = static_cast<double>(gv[ch]), bb = static_cast<double>(bv[ch]);
    for (std::size_t nn = 0; nn < n; ++nn) {
      const T* p = in.data() + nn * stride_n + ch * sp;
      T* q = out.data() + nn * stride_n + ch * sp;
      for (std::size_t i = 0; i < sp; ++i)
        q[i] = static_cast<T>(gg * ((static_cast<double>(p[i]) - mu) * inv) + bb);
    }
  }

  return tape.make_node(
      std::move(out), {input, gamma, beta}, [=](Tape<T>& t, std::uint32_t self) {
        const std::vector<T>& g = t.grad_buffer(self);
        const Tensor<T>& x = t.value(input);
        const std::vector<T>& gam = t.value(gamma).values;
        const bool need_in = t.requires_grad(input);
        const bool need_g = t.requires_grad(gamma);
        const bool need_b = t.requires_grad(beta);
        std::vector<T>* gi = need_in ? &t.grad_buffer(input.idx) : nullptr;
        std::vector<T>* gga = need_g ? &t.grad_buffer(gamma.idx) : nullptr;
        std::vector<T>* gbe = need_b ? &t.grad_buffer(beta.idx) : nullptr;
#pragma omp parallel for schedule(static)
        for (i64 ch = 0; ch < static_cast<i64>(c); ++ch) {
          const double mu = (*mean)[ch], inv = (*inv_sd)[ch];
          double sum_dy = 0.0, sum_dyxh = 0.0;
          for (std::size_t nn = 0; nn < n; ++nn) {
            const T* xp = x.data() + nn * stride_n + ch * sp;
            const T* gp = g.data() + nn * stride_n + ch * sp;
            for (std::size_t i = 0; i < sp; ++i) {
              const double dy = static_cast<double>(gp[i]);
              sum_dy += dy;
              sum_dyxh += dy * ((static_cast<double>(xp[i]) - mu) * inv);
            }
          }
          if (need_g) (*gga)[ch] += static_cast<T>(sum_dyxh);
          if (need_b) (*gbe)[ch] += static_cast<T>(sum_dy);
          if (need_in) {
            const double gg = static_cast<double>(gam[ch]);
            if (training) {
              const double k1 = sum_dy / m_count, k2 = sum_dyxh / m_count;
              for (std::size_t nn = 0; nn < n; ++nn) {
                const T* xp = x.data() + nn * stride_n + ch * sp;
                const T* gp = g.data() + nn * stride_n + ch * sp;
                T* ip = gi->data() + nn * stride_n + ch * sp;
                for (std::size_t i = 0; i < sp; ++i) {
                  const double xh = (static_cast<double>(xp[i]) - mu) * inv;
                  ip[i] += static_cast<T>(gg * inv *
                                          (static_cast<double>(gp[i]) - k1 - xh * k2));
                }
              }
            } else {
              for (std::size_t nn = 0; nn < n; ++nn) {
                const T* gp = g.data() + nn * stride_n + ch * sp;
                T* ip = gi->data() + nn * stride_n + ch * sp;
                for (std::size_t i = 0; i < sp; ++i)
                  ip[i] += static_cast<T>(gg * inv * static_cast<double>(gp[i]));
              }
            }
          }
        }
      });
}

// Affine map: input [N,F] x weight [F,U] + bias [U] -> [N,U].
template <typename T>
Var<T> linear(Tape<T>& tape, Var<T> input, Var<T> weight, Var<T> bias) {
  const Tensor<T>& in = tape.value(input);
  const Tensor<T>& wt = tape.value(weight);
  const Tensor<T>& b = tape.value(bias);
  if (in.rank() != 2 || wt.rank() != 2)
    throw ShapeError("linear: input must be [N,F] and weight [F,U]");
  if (in.dim(1) != wt.dim(0))
    throw ShapeError("linear: input features " + std::to_string(in.dim(1)) +
                     " do not match weight rows " + std::to_string(wt.dim(0)));
  if (b.rank() != 1 || b.dim(0) != wt.dim(1)) throw ShapeError("linear: bias must be [U]");

  const std::size_t n = in.dim(0), f = in.dim(1), u = wt.dim(1);
  Tensor<T> out({n, u});
  using detail::i64;
#pragma omp parallel for schedule(static)
  for (i64 nn = 0; nn < static_cast<i64>(n); ++nn) {
    std::vector<double> acc(u, 0.0);
    const T* ip = in.data() + nn * f;
    for (std::size_t ff = 0; ff < f; ++ff) {
      const double a = static_cast<double>(ip[ff]);
      const T* wrow = wt.data() + ff * u;
      for (std::size_t uu = 0; uu < u; ++uu) acc[uu] += a * static_cast<double>(wrow[uu]);
    }
    T* op = out.data() + nn * u;
    for (std::size_t uu = 0; uu < u; ++uu)
      op[uu] = static_cast<T>(acc[uu] + static_cast<double>(b.values[uu]));
  }

  return tape.make_node(
      std::move(out), {input, weight, bias}, [=](Tape<T>& t, std::uint32_t self) {
        const std::vector<T>& g = t.grad_buffer(self);
        if (t.requires_grad(input)) {
          std::vector<T>& gi = t.grad_buffer(input.idx);
          const Tensor<T>& w = t.value(weight);
#pragma omp parallel for schedule(static)
          for (i64 nn = 0; nn < static_cast<i64>(n); ++nn) {
            const T* gp = g.data() + nn * u;
            T* ip = gi.data() + nn * f;
            for (std::size_t ff = 0; ff < f; ++ff) {
              const T* wrow = w.data() + ff * u;
              double acc = 0.0;
              for (std::size_t uu = 0; uu < u; ++uu)
                acc += static_cast<double>(gp[uu]) * static_cast<double>(wrow[uu]);
              ip[ff] += static_cast<T>(acc);
            }
          }
        }
        if (t.requires_grad(weight)) {
          std::vector<T>& gw = t.grad_buffer(weight.idx);
          const Tensor<T>& x = t.value(input);
#pragma omp parallel for schedule(static)
          for (i64 ff = 0; ff < static_cast<i64>(f); ++ff) {
            std::vector<double> acc(u, 0.0);
            for (std::size_t nn = 0; nn < n; ++nn) {
              const double a = static_cast<double>(x.values[nn * f + ff]);
              const T* gp = g.data() + nn * u;
              for (std::size_t uu = 0; uu < u; ++uu)
                acc[uu] += a * static_cast<double>(gp[uu]);
            }
            T* wp = gw.data() + ff * u;
            for (std::size_t uu = 0; uu < u; ++uu) wp[uu] += static_cast<T>(acc[uu]);
          }
        }
        if (t.requires_grad(bias)) {
          std::vector<T>& gb = t.grad_buffer(bias.idx);
          for (std::size_t uu = 0; uu < u; ++uu) {
            double acc = 0.0;
            for (std::size_t nn = 0; nn < n; ++nn)
              acc += static_cast<double>(g[nn * u + uu]);
            gb[uu] += static_cast<T>(acc);
          }
        }
      });
}

// Inverted dropout: zero with probability 1-keep_rate and scale survivors by
// 1/keep_rate while training; identity at inference. The mask comes from the
// caller's stream, one draw per element in index order.
template <typename T>
Var<T> dropout(Tape<T>& tape, Var<T> input, double keep_rate, bool training, Rng& stream) {
  if (!(keep_rate > 0.0) || keep_rate > 1.0)
    throw ValueError("dropout: keep_rate must be in (0, 1], got " + std::to_string(keep_rate));
  const Tensor<T>& in = tape.value(input);
  const std::size_t m = in.numel();

  if (!training || keep_rate == 1.0) {
    Tensor<T> out = in;
    return tape.make_node(std::move(out), {input}, [=](Tape<T>& t, std::uint32_t self) {
      if (!t.requires_grad(input)) return;
      const std::vector<T>& g = t.grad_buffer(self);
      std::vector<T>& gi = t.grad_buffer(input.idx);
      for (std::size_t i = 0; i < m; ++i) gi[i] += g[i];
    });
  }

  auto mask = std::make_shared<std::vector<std::uint8_t>>(m);
  for (std::size_t i = 0; i < m; ++i) (*mask)[i] = stream.real64() < keep_rate ? 1 : 0;
  const T scale = static_cast<T>(1.0 / keep_rate);

  Tensor<T> out(in.shape);
  for (std::size_t i = 0; i < m; ++i)
    out.values[i] = (*mask)[i] ? in.values[i] * scale : T(0);

  return tape.make_node(std::move(out), {input}, [=](Tape<T>& t, std::uint32_t self) {
    if (!t.requires_grad(input)) return;
    const std::vector<T>& g = t.grad_buffer(self);
    std::vector<T>& gi = t.grad_buffer(input.idx);
    for (std::size_t i = 0; i < m; ++i)
      if ((*mask)[i]) gi[i] += g[i] * scale;
  });
}

// Row softmax probabilities of a [N,K] logits tensor (max-subtracted).
template <typename T>
std::vector<double> softmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax_rows: logits must be [N,K]");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> p(n * k);
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = logits.data() + r * k;
    double mx = static_cast<double>(row[0]);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[r * k + j] = std::exp(static_cast<double>(row[j]) - mx);
      z += p[r * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) p[r * k + j] /= z;
  }
  return p;
}

// Mean categorical cross-entropy of [N,K] logits against integer labels.
// Gradient w.r.t. logits is (softmax - onehot)/N.
template <typename T>
Var<T> softmax_cross_entropy(Tape<T>& tape, Var<T> logits, const std::vector<int>& labels) {
  const Tensor<T>& lg = tape.value(logits);
  if (lg.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be [N,K]");
  const std::size_t n = lg.dim(0), k = lg.dim(1);
  if (labels.size() != n)
    throw ValueError("softmax_cross_entropy: got " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(n));
  for (int lab : labels)
    if (lab < 0 || static_cast<std::size_t>(lab) >= k)
      throw ValueError("softmax_cross_entropy: label " + std::to_string(lab) +
                       " out of range [0," + std::to_string(k) + ")");

  auto probs = std::make_shared<std::vector<double>>(softmax_rows(lg));
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r)
    loss -= std::log(std::max((*probs)[r * k + static_cast<std::size_t>(labels[r])],
                              1e-300));
  loss /= static_cast<double>(n);

  Tensor<T> out({1}, {static_cast<T>(loss)});
  auto labs = std::make_shared<std::vector<int>>(labels);
  return tape.make_node(std::move(out), {logits}, [=](Tape<T>& t, std::uint32_t self) {
    if (!t.requires_grad(logits)) return;
    const double seed = static_cast<double>(t.grad_buffer(self)[0]);
    std::vector<T>& gl = t.grad_buffer(logits.idx);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < k; ++j) {
        const double onehot = (static_cast<std::size_t>((*labs)[r]) == j) ? 1.0 : 0.0;
        gl[r * k + j] += static_cast<T>(seed * ((*probs)[r * k + j] - onehot) * inv_n);
      }
  });
}

// lambda * sum of squared entries over the given weight tensors; contributes
// 2*lambda*w to each weight gradient.
template <typename T>
Var<T> l2_penalty(Tape<T>& tape, const std::vector<Var<T>>& weights, double lambda) {
  if (lambda < 0.0) throw ValueError("l2_penalty: lambda must be >= 0");
  double acc = 0.0;
  for (Var<T> wv : weights) {
    const std::vector<T>& w = tape.value(wv).values;
    for (T x : w) acc += static_cast<double>(x) * static_cast<double>(x);
  }
  Tensor<T> out({1}, {static_cast<T>(lambda * acc)});
  auto ws = std::make_shared<std::vector<Var<T>>>(weights);
  return tape.make_node(std::move(out), weights, [=](Tape<T>& t, std::uint32_t self) {
    const double seed = static_cast<double>(t.grad_buffer(self)[0]);
    for (Var<T> wv : *ws) {
      if (!t.requires_grad(wv)) continue;
      const std::vector<T>& w = t.value(wv).values;
      std::vector<T>& gw = t.grad_buffer(wv.idx);
      for (std::size_t i = 0; i < w.size(); ++i)
        gw[i] += static_cast<T>(seed * 2.0 * lambda * static_cast<double>(w[i]));
    }
  });
}

// Elementwise sum of two same-shape nodes (used to combine loss terms).
template <typename T>
Var<T> add(Tape<T>& tape, Var<T> a, Var<T> b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (!same_shape(av, bv)) throw ShapeError("add: shape mismatch");
  Tensor<T> out(av.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.values[i] = av.values[i] + bv.values[i];
  return tape.make_node(std::move(out), {a, b}, [=](Tape<T>& t, std::uint32_t self) {
    const std::vector<T>& g = t.grad_buffer(self);
    if (t.requires_grad(a)) {
      std::vector<T>& ga = t.grad_buffer(a.idx);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      std::vector<T>& gb = t.grad_buffer(b.idx);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

// View with a new shape (same element count); gradient passes through.
template <typename T>
Var<T> reshape(Tape<T>& tape, Var<T> input, std::vector<std::size_t> shape) {
  const Tensor<T>& in = tape.value(input);
  if (Tensor<T>::numel_of(shape) != in.numel())
    throw ShapeError("reshape: element count mismatch for " + Tensor<T>::shape_str(shape));
  Tensor<T> out(std::move(shape), in.values);
  return tape.make_node(std::move(out), {input}, [=](Tape<T>& t, std::uint32_t self) {
    if (!t.requires_grad(input)) return;
    const std::vector<T>& g = t.grad_buffer(self);
    std::vector<T>& gi = t.grad_buffer(input.idx);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
  });
}

}  // namespace vscreen

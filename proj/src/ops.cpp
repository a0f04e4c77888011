#include "al2/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

namespace al2 {

namespace {

thread_local KinkTrace* g_kink_trace = nullptr;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

bool wants_grad(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// ---- conv2d kernels, stride 1 / padding 0 ----
//
// One (sample, out-channel) plane at a time. A block of RB output rows lives
// in a WO-wide local tile for the whole (C_in x k x k) weight walk; RB is
// sized per width so the tile stays within the vector register file.

template <int WO, int RB>
void conv_plane_s1p0(const real* in, int64_t cin, int64_t h, int64_t w,
                     const real* wgt, int64_t k, real* out, int64_t ho, real bias) {
  int64_t oi = 0;
  for (; oi + RB <= ho; oi += RB) {
    real a[RB][WO];
    for (int r = 0; r < RB; ++r)
      for (int j = 0; j < WO; ++j) a[r][j] = bias;
    const real* wp = wgt;
    for (int64_t ci = 0; ci < cin; ++ci) {
      const real* plane = in + ci * h * w;
      for (int64_t ki = 0; ki < k; ++ki) {
        const real* rbase = plane + (oi + ki) * w;
        for (int64_t kj = 0; kj < k; ++kj) {
          const real wv = *wp++;
          const real* rr = rbase + kj;
          for (int r = 0; r < RB; ++r) {
            const real* row = rr + r * w;
            for (int j = 0; j < WO; ++j) a[r][j] += wv * row[j];
          }
        }
      }
    }
    real* o = out + oi * WO;
    for (int r = 0; r < RB; ++r)
      for (int j = 0; j < WO; ++j) o[r * WO + j] = a[r][j];
  }
  for (; oi < ho; ++oi) {
    real a[WO];
    for (int j = 0; j < WO; ++j) a[j] = bias;
    const real* wp = wgt;
    for (int64_t ci = 0; ci < cin; ++ci) {
      const real* plane = in + ci * h * w;
      for (int64_t ki = 0; ki < k; ++ki) {
        const real* rbase = plane + (oi + ki) * w;
        for (int64_t kj = 0; kj < k; ++kj) {
          const real wv = *wp++;
          const real* r = rbase + kj;
          for (int j = 0; j < WO; ++j) a[j] += wv * r[j];
        }
      }
    }
    real* o = out + oi * WO;
    for (int j = 0; j < WO; ++j) o[j] = a[j];
  }
}

void conv_plane_s1p0_any(const real* in, int64_t cin, int64_t h, int64_t w,
                         const real* wgt, int64_t k, real* out, int64_t ho, int64_t wo,
                         real bias) {
  for (int64_t oi = 0; oi < ho; ++oi) {
    real* o = out + oi * wo;
    for (int64_t j = 0; j < wo; ++j) o[j] = bias;
    const real* wp = wgt;
    for (int64_t ci = 0; ci < cin; ++ci) {
      const real* plane = in + ci * h * w;
      for (int64_t ki = 0; ki < k; ++ki) {
        const real* rbase = plane + (oi + ki) * w;
        for (int64_t kj = 0; kj < k; ++kj) {
          const real wv = *wp++;
          const real* r = rbase + kj;
          for (int64_t j = 0; j < wo; ++j) o[j] += wv * r[j];
        }
      }
    }
  }
}

void conv_fwd_s1p0(const real* in, int64_t n, int64_t cin, int64_t h, int64_t w,
                   const real* wgt, int64_t cout, int64_t k, const real* bias,
                   real* out, int64_t ho, int64_t wo) {
  for (int64_t s = 0; s < n; ++s) {
    const real* in_s = in + s * cin * h * w;
    for (int64_t co = 0; co < cout; ++co) {
      const real* w_co = wgt + co * cin * k * k;
      real* o = out + (s * cout + co) * ho * wo;
      switch (wo) {
        case 8: conv_plane_s1p0<8, 8>(in_s, cin, h, w, w_co, k, o, ho, bias[co]); break;
        case 10: conv_plane_s1p0<10, 5>(in_s, cin, h, w, w_co, k, o, ho, bias[co]); break;
        case 12: conv_plane_s1p0<12, 4>(in_s, cin, h, w, w_co, k, o, ho, bias[co]); break;
        case 14: conv_plane_s1p0<14, 4>(in_s, cin, h, w, w_co, k, o, ho, bias[co]); break;
        case 24: conv_plane_s1p0<24, 4>(in_s, cin, h, w, w_co, k, o, ho, bias[co]); break;
        case 28: conv_plane_s1p0<28, 4>(in_s, cin, h, w, w_co, k, o, ho, bias[co]); break;
        default: conv_plane_s1p0_any(in_s, cin, h, w, w_co, k, o, ho, wo, bias[co]); break;
      }
    }
  }
}

// Weight gradient with the out-channel axis innermost: gout is transposed per
// sample into [ho*wo][cop] panels (cop = cout rounded up to 8, zero lanes in
// the pad) so every FMA runs over contiguous out-channel lanes. Accumulation
// happens in a [cin*k*k][cop] scratch that is folded into gw once at the end.
void conv_wgrad_s1p0(const real* in, const real* gout, real* gw,
                     int64_t n, int64_t cin, int64_t h, int64_t w,
                     int64_t cout, int64_t k, int64_t ho, int64_t wo) {
  const int64_t cop = (cout + 7) & ~int64_t(7);
  std::vector<real> gwp(cin * k * k * cop, 0.0);
  std::vector<real> goT(ho * wo * cop);
  for (int64_t s = 0; s < n; ++s) {
    const real* go_s = gout + s * cout * ho * wo;
    for (int64_t p = 0; p < ho * wo; ++p) {
      real* d = goT.data() + p * cop;
      for (int64_t co = 0; co < cout; ++co) d[co] = go_s[co * ho * wo + p];
      for (int64_t co = cout; co < cop; ++co) d[co] = 0;
    }
    const real* in_s = in + s * cin * h * w;
    for (int64_t ci = 0; ci < cin; ++ci) {
      const real* plane = in_s + ci * h * w;
      for (int64_t ki = 0; ki < k; ++ki) {
        for (int64_t kj = 0; kj < k; ++kj) {
          real* __restrict__ acc = gwp.data() + ((ci * k + ki) * k + kj) * cop;
          for (int64_t oi = 0; oi < ho; ++oi) {
            const real* irow = plane + (oi + ki) * w + kj;
            const real* gp = goT.data() + oi * wo * cop;
            for (int64_t oj = 0; oj < wo; ++oj) {
              const real iv = irow[oj];
              const real* __restrict__ g = gp + oj * cop;
              for (int64_t c = 0; c < cop; ++c) acc[c] += iv * g[c];
            }
          }
        }
      }
    }
  }
  for (int64_t co = 0; co < cout; ++co) {
    real* gw_co = gw + co * cin * k * k;
    for (int64_t q = 0; q < cin * k * k; ++q) gw_co[q] += gwp[q * cop + co];
  }
}

// Input gradient accumulated into per-channel local tiles, two input channels
// per pass so each gout row is loaded once for two weight broadcasts.
void conv_ingrad_s1p0(const real* wgt, const real* gout, real* gin,
                      int64_t n, int64_t cin, int64_t h, int64_t w,
                      int64_t cout, int64_t k, int64_t ho, int64_t wo) {
  std::vector<real> tile0(h * w), tile1(h * w);
  for (int64_t s = 0; s < n; ++s) {
    real* gin_s = gin + s * cin * h * w;
    const real* go_s = gout + s * cout * ho * wo;
    int64_t ci = 0;
    for (; ci + 2 <= cin; ci += 2) {
      std::fill(tile0.begin(), tile0.end(), 0.0);
      std::fill(tile1.begin(), tile1.end(), 0.0);
      real* __restrict__ t0 = tile0.data();
      real* __restrict__ t1 = tile1.data();
      for (int64_t co = 0; co < cout; ++co) {
        const real* go = go_s + co * ho * wo;
        const real* w0 = wgt + (co * cin + ci) * k * k;
        const real* w1 = w0 + k * k;
        for (int64_t ki = 0; ki < k; ++ki) {
          for (int64_t kj = 0; kj < k; ++kj) {
            const real wv0 = w0[ki * k + kj];
            const real wv1 = w1[ki * k + kj];
            for (int64_t oi = 0; oi < ho; ++oi) {
              real* tr0 = t0 + (oi + ki) * w + kj;
              real* tr1 = t1 + (oi + ki) * w + kj;
              const real* gor = go + oi * wo;
              for (int64_t j = 0; j < wo; ++j) {
                tr0[j] += wv0 * gor[j];
                tr1[j] += wv1 * gor[j];
              }
            }
          }
        }
      }
      real* g0 = gin_s + ci * h * w;
      real* g1 = g0 + h * w;
      for (int64_t i = 0; i < h * w; ++i) g0[i] += t0[i];
      for (int64_t i = 0; i < h * w; ++i) g1[i] += t1[i];
    }
    for (; ci < cin; ++ci) {
      std::fill(tile0.begin(), tile0.end(), 0.0);
      real* __restrict__ t = tile0.data();
      for (int64_t co = 0; co < cout; ++co) {
        const real* go = go_s + co * ho * wo;
        const real* w_ci = wgt + (co * cin + ci) * k * k;
        for (int64_t ki = 0; ki < k; ++ki) {
          for (int64_t kj = 0; kj < k; ++kj) {
            const real wv = w_ci[ki * k + kj];
            for (int64_t oi = 0; oi < ho; ++oi) {
              real* tr = t + (oi + ki) * w + kj;
              const real* gor = go + oi * wo;
              for (int64_t j = 0; j < wo; ++j) tr[j] += wv * gor[j];
            }
          }
        }
      }
      real* gplane = gin_s + ci * h * w;
      for (int64_t i = 0; i < h * w; ++i) gplane[i] += t[i];
    }
  }
}

// Generic stride/padding path; used by the non-default geometries only.
void conv_fwd_generic(const real* in, int64_t n, int64_t cin, int64_t h, int64_t w,
                      const real* wgt, int64_t cout, int64_t k, const real* bias,
                      real* out, int64_t ho, int64_t wo, int64_t stride, int64_t pad) {
  for (int64_t s = 0; s < n; ++s) {
    for (int64_t co = 0; co < cout; ++co) {
      real* o = out + (s * cout + co) * ho * wo;
      for (int64_t oi = 0; oi < ho; ++oi) {
        for (int64_t oj = 0; oj < wo; ++oj) {
          real acc = bias[co];
          for (int64_t ci = 0; ci < cin; ++ci) {
            for (int64_t ki = 0; ki < k; ++ki) {
              const int64_t ii = oi * stride - pad + ki;
              if (ii < 0 || ii >= h) continue;
              for (int64_t kj = 0; kj < k; ++kj) {
                const int64_t jj = oj * stride - pad + kj;
                if (jj < 0 || jj >= w) continue;
                acc += wgt[((co * cin + ci) * k + ki) * k + kj] *
                       in[((s * cin + ci) * h + ii) * w + jj];
              }
            }
          }
          o[oi * wo + oj] = acc;
        }
      }
    }
  }
}

void conv_bwd_generic(const real* in, const real* wgt, const real* gout,
                      real* gin, real* gw, real* gb,
                      int64_t n, int64_t cin, int64_t h, int64_t w,
                      int64_t cout, int64_t k, int64_t ho, int64_t wo,
                      int64_t stride, int64_t pad) {
  for (int64_t s = 0; s < n; ++s) {
    for (int64_t co = 0; co < cout; ++co) {
      for (int64_t oi = 0; oi < ho; ++oi) {
        for (int64_t oj = 0; oj < wo; ++oj) {
          const real g = gout[((s * cout + co) * ho + oi) * wo + oj];
          if (gb) gb[co] += g;
          for (int64_t ci = 0; ci < cin; ++ci) {
            for (int64_t ki = 0; ki < k; ++ki) {
              const int64_t ii = oi * stride - pad + ki;
              if (ii < 0 || ii >= h) continue;
              for (int64_t kj = 0; kj < k; ++kj) {
                const int64_t jj = oj * stride - pad + kj;
                if (jj < 0 || jj >= w) continue;
                const int64_t widx = ((co * cin + ci) * k + ki) * k + kj;
                const int64_t iidx = ((s * cin + ci) * h + ii) * w + jj;
                if (gw) gw[widx] += g * in[iidx];
                if (gin) gin[iidx] += g * wgt[widx];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

KinkTrace* active_kink_trace() { return g_kink_trace; }

KinkTraceScope::KinkTraceScope(KinkTrace* trace) : prev_(g_kink_trace) {
  g_kink_trace = trace;
}

KinkTraceScope::~KinkTraceScope() { g_kink_trace = prev_; }

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding, Tape* tape) {
  require(input.defined() && input.ndim() == 4,
          "conv2d input must be 4-d [N,C,H,W]");
  require(weight.defined() && weight.ndim() == 4,
          "conv2d weight must be 4-d [C_out,C_in,k,k]");
  require(weight.dim(2) == weight.dim(3),
          "conv2d kernel must be square, got " + std::to_string(weight.dim(2)) + "x" +
              std::to_string(weight.dim(3)));
  require(input.dim(1) == weight.dim(1),
          "conv2d input channel dimension " + std::to_string(input.dim(1)) +
              " does not match weight channel dimension " + std::to_string(weight.dim(1)));
  require(bias.defined() && bias.ndim() == 1 && bias.dim(0) == weight.dim(0),
          "conv2d bias dimension must equal out-channel dimension " +
              std::to_string(weight.dim(0)));
  require(stride >= 1, "conv2d stride must be >= 1, got " + std::to_string(stride));
  require(padding >= 0, "conv2d padding must be >= 0, got " + std::to_string(padding));

  const int64_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t cout = weight.dim(0), k = weight.dim(2);
  require(k <= h + 2 * padding,
          "conv2d kernel size " + std::to_string(k) + " exceeds padded input height " +
              std::to_string(h + 2 * padding));
  require(k <= w + 2 * padding,
          "conv2d kernel size " + std::to_string(k) + " exceeds padded input width " +
              std::to_string(w + 2 * padding));
  const int64_t ho = (h + 2 * padding - k) / stride + 1;
  const int64_t wo = (w + 2 * padding - k) / stride + 1;

  Tensor out = Tensor::zeros({n, cout, ho, wo},
                             wants_grad(tape, {&input, &weight, &bias}));
  if (stride == 1 && padding == 0) {
    conv_fwd_s1p0(input.data(), n, cin, h, w, weight.data(), cout, k, bias.data(),
                  out.data(), ho, wo);
  } else {
    conv_fwd_generic(input.data(), n, cin, h, w, weight.data(), cout, k, bias.data(),
                     out.data(), ho, wo, stride, padding);
  }
  check_finite(out, "conv2d");

  if (out.requires_grad()) {
    tape->record([input, weight, bias, out, n, cin, h, w, cout, k, ho, wo, stride,
                  padding]() mutable {
      if (!out.has_grad()) return;
      const real* go = out.grad_values().data();
      if (bias.requires_grad()) {
        real* gb = bias.grad();
        for (int64_t s = 0; s < n; ++s) {
          for (int64_t co = 0; co < cout; ++co) {
            const real* row = go + (s * cout + co) * ho * wo;
            real acc = 0;
            for (int64_t i = 0; i < ho * wo; ++i) acc += row[i];
            gb[co] += acc;
          }
        }
      }
      if (stride == 1 && padding == 0) {
        if (weight.requires_grad()) {
          conv_wgrad_s1p0(input.data(), go, weight.grad(), n, cin, h, w, cout, k, ho, wo);
        }
        if (input.requires_grad()) {
          conv_ingrad_s1p0(weight.data(), go, input.grad(), n, cin, h, w, cout, k, ho, wo);
        }
      } else {
        conv_bwd_generic(input.data(), weight.data(), go,
                         input.requires_grad() ? input.grad() : nullptr,
                         weight.requires_grad() ? weight.grad() : nullptr, nullptr,
                         n, cin, h, w, cout, k, ho, wo, stride, padding);
      }
    });
  }
  return out;
}

Tensor maxpool2(const Tensor& input, Tape* tape) {
  require(input.defined() && input.ndim() == 4, "maxpool2 input must be 4-d [N,C,H,W]");
  const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(h % 2 == 0 && w % 2 == 0,
          "maxpool2 requires even spatial dimensions, got " + std::to_string(h) + "x" +
              std::to_string(w));
  const int64_t ho = h / 2, wo = w / 2;

  Tensor out = Tensor::zeros({n, c, ho, wo}, wants_grad(tape, {&input}));
  KinkTrace* trace = g_kink_trace;
  const bool taped = out.requires_grad();
  std::vector<uint8_t> argmax;
  if (taped) argmax.resize(static_cast<size_t>(n * c * ho * wo));

  const real* x = input.data();
  real* o = out.data();
  int64_t oidx = 0;
  for (int64_t p = 0; p < n * c; ++p) {
    const real* plane = x + p * h * w;
    for (int64_t oi = 0; oi < ho; ++oi) {
      const real* r0 = plane + 2 * oi * w;
      const real* r1 = r0 + w;
      for (int64_t oj = 0; oj < wo; ++oj, ++oidx) {
        const real v[4] = {r0[2 * oj], r0[2 * oj + 1], r1[2 * oj], r1[2 * oj + 1]};
        uint8_t best = 0;
        // strict > keeps the first cell in scan order on ties
        for (uint8_t i = 1; i < 4; ++i) {
          if (v[i] > v[best]) best = i;
        }
        o[oidx] = v[best];
        if (taped) argmax[static_cast<size_t>(oidx)] = best;
        if (trace) trace->push(best);
      }
    }
  }
  check_finite(out, "maxpool2");

  if (taped) {
    tape->record([input, out, argmax = std::move(argmax), n, c, h, w, ho, wo]() mutable {
      if (!out.has_grad()) return;
      const real* go = out.grad_values().data();
      real* gi = input.grad();
      int64_t oidx = 0;
      for (int64_t p = 0; p < n * c; ++p) {
        real* gplane = gi + p * h * w;
        for (int64_t oi = 0; oi < ho; ++oi) {
          for (int64_t oj = 0; oj < wo; ++oj, ++oidx) {
            const uint8_t a = argmax[static_cast<size_t>(oidx)];
            const int64_t ii = 2 * oi + (a >> 1);
            const int64_t jj = 2 * oj + (a & 1);
            gplane[ii * w + jj] += go[oidx];
          }
        }
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& input, Tape* tape) {
  require(input.defined(), "relu input is undefined");
  Tensor out = Tensor::zeros(input.shape(), wants_grad(tape, {&input}));
  const real* x = input.data();
  real* o = out.data();
  const int64_t m = input.size();
  KinkTrace* trace = g_kink_trace;
  if (trace) {
    for (int64_t i = 0; i < m; ++i) {
      const bool pos = x[i] > 0;
      o[i] = pos ? x[i] : real(0);
      trace->push(pos ? 1 : 0);
    }
  } else {
    for (int64_t i = 0; i < m; ++i) o[i] = x[i] > 0 ? x[i] : real(0);
  }
  check_finite(out, "relu");

  if (out.requires_grad()) {
    tape->record([input, out, m]() mutable {
      if (!out.has_grad()) return;
      const real* go = out.grad_values().data();
      const real* x = input.data();
      real* gi = input.grad();
      for (int64_t i = 0; i < m; ++i) {
        if (x[i] > 0) gi[i] += go[i];
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias, Tape* tape) {
  require(input.defined() && input.ndim() == 2, "linear input must be 2-d [N,D]");
  require(weight.defined() && weight.ndim() == 2, "linear weight must be 2-d [D,M]");
  require(input.dim(1) == weight.dim(0),
          "linear input feature dimension " + std::to_string(input.dim(1)) +
              " does not match weight row dimension " + std::to_string(weight.dim(0)));
  require(bias.defined() && bias.ndim() == 1 && bias.dim(0) == weight.dim(1),
          "linear bias dimension must equal weight column dimension " +
              std::to_string(weight.dim(1)));
  const int64_t n = input.dim(0), d = input.dim(1), m = weight.dim(1);

  Tensor out = Tensor::zeros({n, m}, wants_grad(tape, {&input, &weight, &bias}));
  const real* x = input.data();
  const real* wt = weight.data();
  const real* b = bias.data();
  real* o = out.data();
  for (int64_t s = 0; s < n; ++s) {
    real* orow = o + s * m;
    std::memcpy(orow, b, sizeof(real) * static_cast<size_t>(m));
    const real* xrow = x + s * d;
    for (int64_t j = 0; j < d; ++j) {
      const real xv = xrow[j];
      const real* wrow = wt + j * m;
      for (int64_t t = 0; t < m; ++t) orow[t] += xv * wrow[t];
    }
  }
  check_finite(out, "linear");

  if (out.requires_grad()) {
    tape->record([input, weight, bias, out, n, d, m]() mutable {
      if (!out.has_grad()) return;
      const real* go = out.grad_values().data();
      if (bias.requires_grad()) {
        real* gb = bias.grad();
        for (int64_t s = 0; s < n; ++s) {
          const real* grow = go + s * m;
          for (int64_t t = 0; t < m; ++t) gb[t] += grow[t];
        }
      }
      if (weight.requires_grad()) {
        real* gw = weight.grad();
        const real* x = input.data();
        for (int64_t s = 0; s < n; ++s) {
          const real* grow = go + s * m;
          const real* xrow = x + s * d;
          for (int64_t j = 0; j < d; ++j) {
            const real xv = xrow[j];
            real* gwrow = gw + j * m;
            for (int64_t t = 0; t < m; ++t) gwrow[t] += xv * grow[t];
          }
        }
      }
      if (input.requires_grad()) {
        real* gi = input.grad();
        const real* wt = weight.data();
        for (int64_t s = 0; s < n; ++s) {
          const real* grow = go + s * m;
          real* girow = gi + s * d;
          for (int64_t j = 0; j < d; ++j) {
            const real* wrow = wt + j * m;
            real dot = 0;
            for (int64_t t = 0; t < m; ++t) dot += grow[t] * wrow[t];
            girow[j] += dot;
          }
        }
      }
    });
  }
  return out;
}

Tensor flatten(const Tensor& input, Tape* tape) {
  require(input.defined() && input.ndim() >= 2, "flatten input must have at least 2 dims");
  const int64_t n = input.dim(0);
  const int64_t d = numel(input.shape()) / n;
  Tensor out = Tensor::from({n, d}, input.values(), wants_grad(tape, {&input}));
  if (out.requires_grad()) {
    tape->record([input, out]() mutable {
      if (!out.has_grad()) return;
      const real* go = out.grad_values().data();
      real* gi = input.grad();
      const int64_t m = input.size();
      for (int64_t i = 0; i < m; ++i) gi[i] += go[i];
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tape* tape) {
  require(logits.defined() && logits.ndim() == 2, "softmax_cross_entropy logits must be 2-d [N,K]");
  const int64_t n = logits.dim(0), k = logits.dim(1);
  require(static_cast<int64_t>(labels.size()) == n,
          "softmax_cross_entropy got " + std::to_string(labels.size()) + " labels for " +
              std::to_string(n) + " rows");
  for (int64_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw ShapeError("label " + std::to_string(labels[i]) + " out of range [0," +
                       std::to_string(k) + ") at index " + std::to_string(i));
    }
  }

  std::vector<real> probs(static_cast<size_t>(n * k));
  const real* x = logits.data();
  double loss = 0;
  for (int64_t i = 0; i < n; ++i) {
    const real* row = x + i * k;
    real mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0;
    real* prow = probs.data() + i * k;
    for (int64_t j = 0; j < k; ++j) {
      prow[j] = std::exp(row[j] - mx);
      denom += prow[j];
    }
    const real inv = real(1.0 / denom);
    for (int64_t j = 0; j < k; ++j) prow[j] *= inv;
    loss -= static_cast<double>(row[labels[i]] - mx) - std::log(denom);
  }
  loss /= static_cast<double>(n);

  Tensor out = Tensor::from({1}, {real(loss)}, wants_grad(tape, {&logits}));
  check_finite(out, "softmax_cross_entropy");

  if (out.requires_grad()) {
    tape->record([logits, out, labels, probs = std::move(probs), n, k]() mutable {
      if (!out.has_grad()) return;
      const real g = out.grad_values()[0];
      real* gl = logits.grad();
      const real invn = real(1) / real(n);
      for (int64_t i = 0; i < n; ++i) {
        const real* prow = probs.data() + i * k;
        real* grow = gl + i * k;
        for (int64_t j = 0; j < k; ++j) {
          real delta = prow[j];
          if (j == labels[i]) delta -= real(1);
          grow[j] += g * delta * invn;
        }
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  require(a.defined() && b.defined() && a.shape() == b.shape(),
          "add requires identical shapes, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape(), wants_grad(tape, {&a, &b}));
  const int64_t m = a.size();
  for (int64_t i = 0; i < m; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  check_finite(out, "add");
  if (out.requires_grad()) {
    tape->record([a, b, out, m]() mutable {
      if (!out.has_grad()) return;
      const real* go = out.grad_values().data();
      if (a.requires_grad()) {
        real* ga = a.grad();
        for (int64_t i = 0; i < m; ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        real* gb = b.grad();
        for (int64_t i = 0; i < m; ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  require(a.defined() && b.defined() && a.shape() == b.shape(),
          "mul requires identical shapes, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape(), wants_grad(tape, {&a, &b}));
  const int64_t m = a.size();
  for (int64_t i = 0; i < m; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  check_finite(out, "mul");
  if (out.requires_grad()) {
    tape->record([a, b, out, m]() mutable {
      if (!out.has_grad()) return;
      const real* go = out.grad_values().data();
      if (a.requires_grad()) {
        real* ga = a.grad();
        for (int64_t i = 0; i < m; ++i) ga[i] += go[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        real* gb = b.grad();
        for (int64_t i = 0; i < m; ++i) gb[i] += go[i] * a.data()[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, real c, Tape* tape) {
  require(a.defined(), "scale input is undefined");
  Tensor out = Tensor::zeros(a.shape(), wants_grad(tape, {&a}));
  const int64_t m = a.size();
  for (int64_t i = 0; i < m; ++i) out.data()[i] = a.data()[i] * c;
  check_finite(out, "scale");
  if (out.requires_grad()) {
    tape->record([a, out, c, m]() mutable {
      if (!out.has_grad()) return;
      const real* go = out.grad_values().data();
      real* ga = a.grad();
      for (int64_t i = 0; i < m; ++i) ga[i] += go[i] * c;
    });
  }
  return out;
}

Tensor sum(const Tensor& a, Tape* tape) {
  require(a.defined(), "sum input is undefined");
  double acc = 0;
  for (real v : a.values()) acc += v;
  Tensor out = Tensor::from({1}, {real(acc)}, wants_grad(tape, {&a}));
  check_finite(out, "sum");
  if (out.requires_grad()) {
    tape->record([a, out]() mutable {
      if (!out.has_grad()) return;
      const real g = out.grad_values()[0];
      real* ga = a.grad();
      const int64_t m = a.size();
      for (int64_t i = 0; i < m; ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor sum_squares(const Tensor& a, Tape* tape) {
  require(a.defined(), "sum_squares input is undefined");
  double acc = 0;
  for (real v : a.values()) acc += static_cast<double>(v) * v;
  Tensor out = Tensor::from({1}, {real(acc)}, wants_grad(tape, {&a}));
  check_finite(out, "sum_squares");
  if (out.requires_grad()) {
    tape->record([a, out]() mutable {
      if (!out.has_grad()) return;
      const real g = out.grad_values()[0];
      real* ga = a.grad();
      const real* x = a.data();
      const int64_t m = a.size();
      for (int64_t i = 0; i < m; ++i) ga[i] += g * 2 * x[i];
    });
  }
  return out;
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   Tensor running_mean, Tensor running_var,
                   bool training, real momentum, real eps, Tape* tape) {
  require(input.defined() && input.ndim() == 4, "batchnorm2d input must be 4-d [N,C,H,W]");
  const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(gamma.defined() && gamma.ndim() == 1 && gamma.dim(0) == c,
          "batchnorm2d gamma dimension must equal channel dimension " + std::to_string(c));
  require(beta.defined() && beta.ndim() == 1 && beta.dim(0) == c,
          "batchnorm2d beta dimension must equal channel dimension " + std::to_string(c));
  require(running_mean.dim(0) == c && running_var.dim(0) == c,
          "batchnorm2d running buffers must have channel dimension " + std::to_string(c));
  if (training && n < 2) {
    throw ShapeError("batchnorm2d in training mode requires batch size >= 2, got " +
                     std::to_string(n));
  }

  const int64_t plane = h * w;
  const int64_t m = n * plane;
  Tensor out = Tensor::zeros(input.shape(), wants_grad(tape, {&input, &gamma, &beta}));
  std::vector<real> xhat(static_cast<size_t>(input.size()));
  std::vector<real> inv_std(static_cast<size_t>(c));

  const real* x = input.data();
  real* o = out.data();
  const real* g = gamma.data();
  const real* b = beta.data();

  for (int64_t ch = 0; ch < c; ++ch) {
    double mu, var;
    if (training) {
      double s = 0;
      for (int64_t s0 = 0; s0 < n; ++s0) {
        const real* p = x + (s0 * c + ch) * plane;
        for (int64_t i = 0; i < plane; ++i) s += p[i];
      }
      mu = s / static_cast<double>(m);
      double sq = 0;
      for (int64_t s0 = 0; s0 < n; ++s0) {
        const real* p = x + (s0 * c + ch) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(m);
      const double unbiased = sq / static_cast<double>(m - 1);
      running_mean.data()[ch] =
          real((1.0 - momentum) * running_mean.data()[ch] + momentum * mu);
      running_var.data()[ch] =
          real((1.0 - momentum) * running_var.data()[ch] + momentum * unbiased);
    } else {
      mu = running_mean.data()[ch];
      var = running_var.data()[ch];
    }
    const real inv = real(1.0 / std::sqrt(var + eps));
    inv_std[static_cast<size_t>(ch)] = inv;
    for (int64_t s0 = 0; s0 < n; ++s0) {
      const real* p = x + (s0 * c + ch) * plane;
      real* op = o + (s0 * c + ch) * plane;
      real* xp = xhat.data() + (s0 * c + ch) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        const real xh = (p[i] - real(mu)) * inv;
        xp[i] = xh;
        op[i] = g[ch] * xh + b[ch];
      }
    }
  }
  check_finite(out, "batchnorm2d");

  if (out.requires_grad()) {
    tape->record([input, gamma, beta, out, xhat = std::move(xhat),
                  inv_std = std::move(inv_std), training, n, c, plane]() mutable {
      if (!out.has_grad()) return;
      const real* go = out.grad_values().data();
      const int64_t m = n * plane;
      for (int64_t ch = 0; ch < c; ++ch) {
        double sum_go = 0, sum_goxh = 0;
        for (int64_t s0 = 0; s0 < n; ++s0) {
          const int64_t off = (s0 * c + ch) * plane;
          for (int64_t i = 0; i < plane; ++i) {
            sum_go += go[off + i];
            sum_goxh += static_cast<double>(go[off + i]) * xhat[static_cast<size_t>(off + i)];
          }
        }
        if (beta.requires_grad()) beta.grad()[ch] += real(sum_go);
        if (gamma.requires_grad()) gamma.grad()[ch] += real(sum_goxh);
        if (input.requires_grad()) {
          real* gi = input.grad();
          const real gmul = gamma.data()[ch] * inv_std[static_cast<size_t>(ch)];
          if (training) {
            const real mean_go = real(sum_go / static_cast<double>(m));
            const real mean_goxh = real(sum_goxh / static_cast<double>(m));
            for (int64_t s0 = 0; s0 < n; ++s0) {
              const int64_t off = (s0 * c + ch) * plane;
              for (int64_t i = 0; i < plane; ++i) {
                gi[off + i] += gmul * (go[off + i] - mean_go -
                                       xhat[static_cast<size_t>(off + i)] * mean_goxh);
              }
            }
          } else {
            for (int64_t s0 = 0; s0 < n; ++s0) {
              const int64_t off = (s0 * c + ch) * plane;
              for (int64_t i = 0; i < plane; ++i) gi[off + i] += gmul * go[off + i];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& input, real rate, Rng& rng, bool training, Tape* tape) {
  require(input.defined(), "dropout input is undefined");
  require(rate >= 0 && rate < 1,
          "dropout rate must be in [0,1), got " + std::to_string(rate));
  const int64_t m = input.size();
  if (!training) {
    Tensor out = Tensor::from(input.shape(), input.values(), wants_grad(tape, {&input}));
    if (out.requires_grad()) {
      tape->record([input, out, m]() mutable {
        if (!out.has_grad()) return;
        const real* go = out.grad_values().data();
        real* gi = input.grad();
        for (int64_t i = 0; i < m; ++i) gi[i] += go[i];
      });
    }
    return out;
  }

  const real keep_scale = real(1) / (real(1) - rate);
  std::vector<uint8_t> mask(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) mask[static_cast<size_t>(i)] = rng.uniform() >= rate;

  Tensor out = Tensor::zeros(input.shape(), wants_grad(tape, {&input}));
  const real* x = input.data();
  real* o = out.data();
  for (int64_t i = 0; i < m; ++i) {
    o[i] = mask[static_cast<size_t>(i)] ? x[i] * keep_scale : real(0);
  }
  check_finite(out, "dropout");

  if (out.requires_grad()) {
    tape->record([input, out, mask = std::move(mask), keep_scale, m]() mutable {
      if (!out.has_grad()) return;
      const real* go = out.grad_values().data();
      real* gi = input.grad();
      for (int64_t i = 0; i < m; ++i) {
        if (mask[static_cast<size_t>(i)]) gi[i] += go[i] * keep_scale;
      }
    });
  }
  return out;
}

}  // namespace al2

#include "ttlab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace ttlab::kernels {

// All three conv kernels walk the same (co, ci, ky, kx) nest with the output
// row as the innermost unit-stride loop, so the hot path is a contiguous
// fused-multiply-add sweep. ox bounds are precomputed per (ky, row) to keep
// padding checks out of the inner loop.

namespace {

inline void ox_range(int kx, int pad, int stride, int w, int ow, int& lo, int& hi) {
  // valid ox satisfy 0 <= ox*stride - pad + kx < w
  int num = pad - kx;
  lo = num <= 0 ? 0 : (num + stride - 1) / stride;
  hi = std::min(ow - 1, (w - 1 + pad - kx) / stride);
}

}  // namespace

void conv2d_forward(const float* in, const float* w, float* out, int cin, int h, int wd,
                    int cout, int kh, int kw, int stride, int pad, int oh, int ow) {
  for (int co = 0; co < cout; ++co) {
    float* out_c = out + static_cast<std::size_t>(co) * oh * ow;
    for (int ci = 0; ci < cin; ++ci) {
      const float* in_c = in + static_cast<std::size_t>(ci) * h * wd;
      const float* w_k = w + (static_cast<std::size_t>(co) * cin + ci) * kh * kw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          float wv = w_k[ky * kw + kx];
          if (wv == 0.f) continue;
          int lo, hi;
          ox_range(kx, pad, stride, wd, ow, lo, hi);
          int shift = kx - pad;
          for (int oy = 0; oy < oh; ++oy) {
            int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            const float* in_row = in_c + static_cast<std::size_t>(iy) * wd;
            float* out_row = out_c + static_cast<std::size_t>(oy) * ow;
            if (stride == 1) {
              for (int ox = lo; ox <= hi; ++ox) out_row[ox] += wv * in_row[ox + shift];
            } else {
              for (int ox = lo; ox <= hi; ++ox) out_row[ox] += wv * in_row[ox * stride + shift];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const float* w, const float* dout, float* din, int cin, int h,
                           int wd, int cout, int kh, int kw, int stride, int pad, int oh,
                           int ow) {
  for (int co = 0; co < cout; ++co) {
    const float* dout_c = dout + static_cast<std::size_t>(co) * oh * ow;
    for (int ci = 0; ci < cin; ++ci) {
      float* din_c = din + static_cast<std::size_t>(ci) * h * wd;
      const float* w_k = w + (static_cast<std::size_t>(co) * cin + ci) * kh * kw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          float wv = w_k[ky * kw + kx];
          if (wv == 0.f) continue;
          int lo, hi;
          ox_range(kx, pad, stride, wd, ow, lo, hi);
          int shift = kx - pad;
          for (int oy = 0; oy < oh; ++oy) {
            int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            float* din_row = din_c + static_cast<std::size_t>(iy) * wd;
            const float* dout_row = dout_c + static_cast<std::size_t>(oy) * ow;
            if (stride == 1) {
              for (int ox = lo; ox <= hi; ++ox) din_row[ox + shift] += wv * dout_row[ox];
            } else {
              for (int ox = lo; ox <= hi; ++ox) din_row[ox * stride + shift] += wv * dout_row[ox];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_weights(const float* in, const float* dout, float* dw, int cin, int h,
                             int wd, int cout, int kh, int kw, int stride, int pad, int oh,
                             int ow) {
  for (int co = 0; co < cout; ++co) {
    const float* dout_c = dout + static_cast<std::size_t>(co) * oh * ow;
    for (int ci = 0; ci < cin; ++ci) {
      const float* in_c = in + static_cast<std::size_t>(ci) * h * wd;
      float* dw_k = dw + (static_cast<std::size_t>(co) * cin + ci) * kh * kw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          int lo, hi;
          ox_range(kx, pad, stride, wd, ow, lo, hi);
          int shift = kx - pad;
          float acc = 0.f;
          for (int oy = 0; oy < oh; ++oy) {
            int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            const float* in_row = in_c + static_cast<std::size_t>(iy) * wd;
            const float* dout_row = dout_c + static_cast<std::size_t>(oy) * ow;
            if (stride == 1) {
              for (int ox = lo; ox <= hi; ++ox) acc += in_row[ox + shift] * dout_row[ox];
            } else {
              for (int ox = lo; ox <= hi; ++ox) acc += in_row[ox * stride + shift] * dout_row[ox];
            }
          }
          dw_k[ky * kw + kx] += acc;
        }
      }
    }
  }
}

namespace {

struct Tap {
  int lo;        // lower source index
  float w_hi;    // weight of the upper source (lo+1, clamped)
  bool clamped;  // upper repeats lower at the edge
};

// Half-pixel-center source taps for a 1-D resize from n to r.
inline Tap tap_for(int i, int n, int r) {
  float src = (static_cast<float>(i) + 0.5f) * static_cast<float>(n) / static_cast<float>(r) -
              0.5f;
  float fl = std::floor(src);
  Tap t;
  t.lo = static_cast<int>(fl);
  t.w_hi = src - fl;
  t.clamped = false;
  if (t.lo < 0) {
    t.lo = 0;
    t.w_hi = 0.f;
  } else if (t.lo >= n - 1) {
    t.lo = n - 1;
    t.w_hi = 0.f;
    t.clamped = true;
  }
  return t;
}

}  // namespace

void resize_pad_forward(const float* in, float* out, int c, int h, int w, int r, int oy,
                        int ox) {
  std::fill(out, out + static_cast<std::size_t>(c) * h * w, 0.f);
  std::vector<Tap> tx(static_cast<std::size_t>(r));
  for (int x = 0; x < r; ++x) tx[static_cast<std::size_t>(x)] = tap_for(x, w, r);
  for (int ch = 0; ch < c; ++ch) {
    const float* in_c = in + static_cast<std::size_t>(ch) * h * w;
    float* out_c = out + static_cast<std::size_t>(ch) * h * w;
    for (int y = 0; y < r; ++y) {
      Tap ty = tap_for(y, h, r);
      const float* row0 = in_c + static_cast<std::size_t>(ty.lo) * w;
      const float* row1 = row0 + (ty.lo + 1 < h ? w : 0);
      float* out_row = out_c + static_cast<std::size_t>(oy + y) * w + ox;
      for (int x = 0; x < r; ++x) {
        const Tap& t = tx[static_cast<std::size_t>(x)];
        int x1 = t.lo + 1 < w ? t.lo + 1 : t.lo;
        float top = row0[t.lo] + t.w_hi * (row0[x1] - row0[t.lo]);
        float bot = row1[t.lo] + t.w_hi * (row1[x1] - row1[t.lo]);
        out_row[x] = top + ty.w_hi * (bot - top);
      }
    }
  }
}

void resize_pad_adjoint(const float* dout, float* din, int c, int h, int w, int r, int oy,
                        int ox) {
  std::vector<Tap> tx(static_cast<std::size_t>(r));
  for (int x = 0; x < r; ++x) tx[static_cast<std::size_t>(x)] = tap_for(x, w, r);
  for (int ch = 0; ch < c; ++ch) {
    const float* dout_c = dout + static_cast<std::size_t>(ch) * h * w;
    float* din_c = din + static_cast<std::size_t>(ch) * h * w;
    for (int y = 0; y < r; ++y) {
      Tap ty = tap_for(y, h, r);
      float* row0 = din_c + static_cast<std::size_t>(ty.lo) * w;
      float* row1 = row0 + (ty.lo + 1 < h ? w : 0);
      const float* dout_row = dout_c + static_cast<std::size_t>(oy + y) * w + ox;
      for (int x = 0; x < r; ++x) {
        const Tap& t = tx[static_cast<std::size_t>(x)];
        int x1 = t.lo + 1 < w ? t.lo + 1 : t.lo;
        float g = dout_row[x];
        float g_bot = ty.w_hi * g;
        float g_top = g - g_bot;
        row0[t.lo] += (1.f - t.w_hi) * g_top;
        row0[x1] += t.w_hi * g_top;
        row1[t.lo] += (1.f - t.w_hi) * g_bot;
        row1[x1] += t.w_hi * g_bot;
      }
    }
  }
}

}  // namespace ttlab::kernels

#pragma once

// Raw float32 kernels behind the graph ops. Exposed separately because the
// attack engine reuses some of them outside any graph (TI gradient smoothing,
// DI transform probes).

namespace ttlab::kernels {

// Cross-correlation, channels-first. out must be zeroed by the caller.
// in: [Cin,H,W], w: [Cout,Cin,KH,KW], out: [Cout,OH,OW].
void conv2d_forward(const float* in, const float* w, float* out, int cin, int h, int wd,
                    int cout, int kh, int kw, int stride, int pad, int oh, int ow);

// Accumulates into din / dw (callers zero them once per backward pass).
void conv2d_backward_input(const float* w, const float* dout, float* din, int cin, int h,
                           int wd, int cout, int kh, int kw, int stride, int pad, int oh,
                           int ow);
void conv2d_backward_weights(const float* in, const float* dout, float* dw, int cin, int h,
                             int wd, int cout, int kh, int kw, int stride, int pad, int oh,
                             int ow);

// Bilinear resize of [C,H,W] to [C,r,r] placed at offset (oy,ox) inside a
// zeroed [C,H,W] output (half-pixel centers, clamped edges). r == H with zero
// offsets reproduces the input exactly.
void resize_pad_forward(const float* in, float* out, int c, int h, int w, int r, int oy,
                        int ox);
// Exact adjoint of the forward map; accumulates into din.
void resize_pad_adjoint(const float* dout, float* din, int c, int h, int w, int r, int oy,
                        int ox);

}  // namespace ttlab::kernels

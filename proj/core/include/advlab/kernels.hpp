#pragma once

namespace advlab::kernels {

/// C[m×n] = A[m×k] · B[k×n], or += when accumulate is set. Fixed i-k-j loop
/// order so results are bit-reproducible run to run.
void matmul_f32(const float* a, const float* b, float* out, int m, int k, int n,
                bool accumulate = false);

void transpose_f32(const float* a, float* out, int rows, int cols);

/// Patch matrix layout: col[(c*kh*kw + ki*kw + kj)*L + l] with L the number of
/// output positions, so conv forward is one matmul W[oc×(c·kh·kw)] · col.
void im2col_f32(const float* img, int c, int h, int w, int kh, int kw,
                int stride, int pad, float* col);

/// Adjoint of im2col: scatter-adds into img (caller zero-fills first).
void col2im_f32(const float* col, int c, int h, int w, int kh, int kw,
                int stride, int pad, float* img);

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace advlab::kernels

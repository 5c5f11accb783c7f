#include "advlab/kernels.hpp"

#include <cstring>

namespace advlab::kernels {

void matmul_f32(const float* a, const float* b, float* out, int m, int k, int n,
                bool accumulate) {
  if (!accumulate) std::memset(out, 0, sizeof(float) * static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<std::size_t>(i) * k;
    float* orow = out + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) continue;
      const float* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

void transpose_f32(const float* a, float* out, int rows, int cols) {
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out[static_cast<std::size_t>(c) * rows + r] = a[static_cast<std::size_t>(r) * cols + c];
}

void im2col_f32(const float* img, int c, int h, int w, int kh, int kw,
                int stride, int pad, float* col) {
  const int ho = conv_out_extent(h, kh, stride, pad);
  const int wo = conv_out_extent(w, kw, stride, pad);
  const int l = ho * wo;
  for (int ch = 0; ch < c; ++ch) {
    const float* plane = img + static_cast<std::size_t>(ch) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        float* row = col + (static_cast<std::size_t>(ch) * kh * kw + ki * kw + kj) * l;
        for (int oi = 0; oi < ho; ++oi) {
          const int ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= h) {
            std::memset(row + static_cast<std::size_t>(oi) * wo, 0, sizeof(float) * wo);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(ii) * w;
          float* dst = row + static_cast<std::size_t>(oi) * wo;
          for (int oj = 0; oj < wo; ++oj) {
            const int jj = oj * stride + kj - pad;
            dst[oj] = (jj < 0 || jj >= w) ? 0.0f : src[jj];
          }
        }
      }
    }
  }
}

void col2im_f32(const float* col, int c, int h, int w, int kh, int kw,
                int stride, int pad, float* img) {
  const int ho = conv_out_extent(h, kh, stride, pad);
  const int wo = conv_out_extent(w, kw, stride, pad);
  const int l = ho * wo;
  for (int ch = 0; ch < c; ++ch) {
    float* plane = img + static_cast<std::size_t>(ch) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const float* row = col + (static_cast<std::size_t>(ch) * kh * kw + ki * kw + kj) * l;
        for (int oi = 0; oi < ho; ++oi) {
          const int ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= h) continue;
          float* dst = plane + static_cast<std::size_t>(ii) * w;
          const float* src = row + static_cast<std::size_t>(oi) * wo;
          for (int oj = 0; oj < wo; ++oj) {
            const int jj = oj * stride + kj - pad;
            if (jj >= 0 && jj < w) dst[jj] += src[oj];
          }
        }
      }
    }
  }
}

}  // namespace advlab::kernels

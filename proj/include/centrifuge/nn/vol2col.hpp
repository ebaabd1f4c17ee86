#pragma once

#include <algorithm>
#include <array>
#include <cstring>
#include <stdexcept>
#include <string>

namespace centrifuge::nn {

/// Geometry of a 3D convolution over one sample: an image of `channels` x
/// (d, h, w) mapped to an output grid (od, oh, ow).
struct ConvGeometry {
  int channels = 0;
  std::array<int, 3> in{};      // d, h, w
  std::array<int, 3> kernel{};
  std::array<int, 3> stride{};
  std::array<int, 3> pad{};
  std::array<int, 3> out{};

  static int output_extent(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

  static ConvGeometry make(int channels, std::array<int, 3> in, std::array<int, 3> kernel, std::array<int, 3> stride,
                           std::array<int, 3> pad) {
    ConvGeometry g{channels, in, kernel, stride, pad, {}};
    for (int i = 0; i < 3; ++i) {
      g.out[i] = output_extent(in[i], kernel[i], stride[i], pad[i]);
      if (g.out[i] < 1) throw std::invalid_argument("ConvGeometry: input extent too small for kernel");
    }
    return g;
  }

  int kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
  int rows() const { return channels * kernel_volume(); }
  int cols() const { return out[0] * out[1] * out[2]; }
  int in_volume() const { return in[0] * in[1] * in[2]; }
};

/// Unfold patches into a rows() x cols() matrix (row-major).
inline void vol2col(const float* img, const ConvGeometry& g, float* col) {
  const int D = g.in[0], H = g.in[1], W = g.in[2];
  const int OD = g.out[0], OH = g.out[1], OW = g.out[2];
  const int KD = g.kernel[0], KH = g.kernel[1], KW = g.kernel[2];
  const int SD = g.stride[0], SH = g.stride[1], SW = g.stride[2];
  const int PD = g.pad[0], PH = g.pad[1], PW = g.pad[2];
  for (int c = 0; c < g.channels; ++c) {
    const float* src_c = img + static_cast<std::size_t>(c) * D * H * W;
    for (int a = 0; a < KD; ++a)
      for (int b = 0; b < KH; ++b)
        for (int e = 0; e < KW; ++e) {
          // valid ow range: 0 <= ow*SW - PW + e < W
          int ow_lo = 0;
          while (ow_lo < OW && ow_lo * SW - PW + e < 0) ++ow_lo;
          int ow_hi = OW;
          while (ow_hi > ow_lo && (ow_hi - 1) * SW - PW + e >= W) --ow_hi;
          for (int od = 0; od < OD; ++od) {
            const int id = od * SD - PD + a;
            for (int oh = 0; oh < OH; ++oh) {
              float* dst = col;
              col += OW;
              const int ih = oh * SH - PH + b;
              if (id < 0 || id >= D || ih < 0 || ih >= H) {
                std::memset(dst, 0, sizeof(float) * OW);
                continue;
              }
              const float* row = src_c + (static_cast<std::size_t>(id) * H + ih) * W;
              for (int ow = 0; ow < ow_lo; ++ow) dst[ow] = 0;
              if (SW == 1) {
                std::memcpy(dst + ow_lo, row + ow_lo - PW + e, sizeof(float) * (ow_hi - ow_lo));
              } else {
                for (int ow = ow_lo; ow < ow_hi; ++ow) dst[ow] = row[ow * SW - PW + e];
              }
              for (int ow = ow_hi; ow < OW; ++ow) dst[ow] = 0;
            }
          }
        }
  }
}

/// Adjoint of vol2col: scatter-add columns back into `img` (not cleared here).
inline void col2vol(const float* col, const ConvGeometry& g, float* img) {
  const int D = g.in[0], H = g.in[1], W = g.in[2];
  const int OD = g.out[0], OH = g.out[1], OW = g.out[2];
  const int KD = g.kernel[0], KH = g.kernel[1], KW = g.kernel[2];
  const int SD = g.stride[0], SH = g.stride[1], SW = g.stride[2];
  const int PD = g.pad[0], PH = g.pad[1], PW = g.pad[2];
  for (int c = 0; c < g.channels; ++c) {
    float* dst_c = img + static_cast<std::size_t>(c) * D * H * W;
    for (int a = 0; a < KD; ++a)
      for (int b = 0; b < KH; ++b)
        for (int e = 0; e < KW; ++e) {
          int ow_lo = 0;
          while (ow_lo < OW && ow_lo * SW - PW + e < 0) ++ow_lo;
          int ow_hi = OW;
          while (ow_hi > ow_lo && (ow_hi - 1) * SW - PW + e >= W) --ow_hi;
          for (int od = 0; od < OD; ++od) {
            const int id = od * SD - PD + a;
            for (int oh = 0; oh < OH; ++oh) {
              const float* src = col;
              col += OW;
              const int ih = oh * SH - PH + b;
              if (id < 0 || id >= D || ih < 0 || ih >= H) continue;
              float* row = dst_c + (static_cast<std::size_t>(id) * H + ih) * W;
              if (SW == 1) {
                float* r = row - PW + e;
                for (int ow = ow_lo; ow < ow_hi; ++ow) r[ow] += src[ow];
              } else {
                for (int ow = ow_lo; ow < ow_hi; ++ow) row[ow * SW - PW + e] += src[ow];
              }
            }
          }
        }
  }
}

}  // namespace centrifuge::nn

#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace gridnas {

// Channel-width adaptation used by cross-path fusion. Parameter-free and
// linear, so it has an exact adjoint (needed for reverse-mode gradients).
//
// Growing (c_out > c_in): tile the input channel list ceil(c_out/c_in)
// times and keep the first c_out entries, so out[j] = in[j % c_in].
// Shrinking (c_out < c_in): zero-pad the input up to
// ceil(c_in/c_out) * c_out channels and average each consecutive group of
// g = padded/c_out channels (padded zeros count toward the mean), so
// out[j] = mean(in[j*g .. j*g+g-1]).
// Equal widths: identity.
inline void channel_fuse(std::span<const double> in, std::span<double> out) {
  const std::size_t c_in = in.size();
  const std::size_t c_out = out.size();
  if (c_in == 0 || c_out == 0) throw std::invalid_argument("channel_fuse: empty span");
  if (c_out == c_in) {
    for (std::size_t j = 0; j < c_out; ++j) out[j] = in[j];
  } else if (c_out > c_in) {
    for (std::size_t j = 0; j < c_out; ++j) out[j] = in[j % c_in];
  } else {
    const std::size_t groups = (c_in + c_out - 1) / c_out;  // ceil
    const double inv = 1.0 / static_cast<double>(groups);
    for (std::size_t j = 0; j < c_out; ++j) {
      double acc = 0.0;
      for (std::size_t k = j * groups; k < (j + 1) * groups; ++k) {
        if (k < c_in) acc += in[k];
      }
      out[j] = acc * inv;
    }
  }
}

// Adjoint of channel_fuse: fills g_in with F^T g_out where F is the linear
// map channel_fuse applies for (|g_in|, |g_out|) widths.
inline void channel_fuse_adjoint(std::span<const double> g_out,
                                 std::span<double> g_in) {
  const std::size_t c_in = g_in.size();
  const std::size_t c_out = g_out.size();
  if (c_in == 0 || c_out == 0) {
    throw std::invalid_argument("channel_fuse_adjoint: empty span");
  }
  for (std::size_t i = 0; i < c_in; ++i) g_in[i] = 0.0;
  if (c_out == c_in) {
    for (std::size_t j = 0; j < c_out; ++j) g_in[j] = g_out[j];
  } else if (c_out > c_in) {
    for (std::size_t j = 0; j < c_out; ++j) g_in[j % c_in] += g_out[j];
  } else {
    const std::size_t groups = (c_in + c_out - 1) / c_out;
    const double inv = 1.0 / static_cast<double>(groups);
    for (std::size_t i = 0; i < c_in; ++i) g_in[i] = g_out[i / groups] * inv;
  }
}

// Dense feature block: `channels` planes of height x width values,
// channel-major layout.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, 0.0) {
    if (c <= 0 || h <= 0 || w <= 0) {
      throw std::invalid_argument("FeatureMap: non-positive dims");
    }
  }

  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

namespace detail {

// Nearest-neighbour resample by an integer factor. Downsampling keeps the
// top-left sample of each cell; upsampling replicates.
inline FeatureMap spatial_resample(const FeatureMap& f, int down, int up) {
  if (down == 1 && up == 1) return f;
  if (down > 1) {
    if (f.height % down != 0 || f.width % down != 0) {
      throw std::invalid_argument("spatial_resample: dims not divisible by factor");
    }
    FeatureMap out(f.channels, f.height / down, f.width / down);
    for (int c = 0; c < out.channels; ++c)
      for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
          out.at(c, y, x) = f.at(c, y * down, x * down);
    return out;
  }
  FeatureMap out(f.channels, f.height * up, f.width * up);
  for (int c = 0; c < out.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        out.at(c, y, x) = f.at(c, y / up, x / up);
  return out;
}

inline FeatureMap spatial_resample_adjoint(const FeatureMap& g, int down, int up,
                                           int src_h, int src_w) {
  if (down == 1 && up == 1) return g;
  FeatureMap out(g.channels, src_h, src_w);  // zero-initialised
  if (down > 1) {
    for (int c = 0; c < g.channels; ++c)
      for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x)
          out.at(c, y * down, x * down) = g.at(c, y, x);
    return out;
  }
  for (int c = 0; c < g.channels; ++c)
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x)
        out.at(c, y / up, x / up) += g.at(c, y, x);
  return out;
}

}  // namespace detail

// Full fusion transport between two resolution levels: spatial
// nearest-neighbour resample by the divisor ratio, then the channel map.
// Divisors must divide each other (grid levels are powers of two apart).
inline FeatureMap fuse_resample(const FeatureMap& f, int src_divisor,
                                int dst_divisor, int dst_channels) {
  if (src_divisor <= 0 || dst_divisor <= 0) {
    throw std::invalid_argument("fuse_resample: non-positive divisor");
  }
  int down = 1, up = 1;
  if (dst_divisor >= src_divisor) {
    if (dst_divisor % src_divisor != 0) {
      throw std::invalid_argument("fuse_resample: incompatible divisors");
    }
    down = dst_divisor / src_divisor;
  } else {
    if (src_divisor % dst_divisor != 0) {
      throw std::invalid_argument("fuse_resample: incompatible divisors");
    }
    up = src_divisor / dst_divisor;
  }
  FeatureMap spatial = detail::spatial_resample(f, down, up);
  FeatureMap out(dst_channels, spatial.height, spatial.width);
  std::vector<double> col_in(static_cast<std::size_t>(spatial.channels));
  std::vector<double> col_out(static_cast<std::size_t>(dst_channels));
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < spatial.channels; ++c) col_in[c] = spatial.at(c, y, x);
      channel_fuse(col_in, col_out);
      for (int c = 0; c < dst_channels; ++c) out.at(c, y, x) = col_out[c];
    }
  }
  return out;
}

// Adjoint of fuse_resample for a source of (src_channels, src_h, src_w).
inline FeatureMap fuse_resample_adjoint(const FeatureMap& g, int src_divisor,
                                        int dst_divisor, int src_channels,
                                        int src_h, int src_w) {
  int down = 1, up = 1;
  if (dst_divisor >= src_divisor) {
    down = dst_divisor / src_divisor;
  } else {
    up = src_divisor / dst_divisor;
  }
  FeatureMap mid(src_channels, g.height, g.width);
  std::vector<double> col_out(static_cast<std::size_t>(g.channels));
  std::vector<double> col_in(static_cast<std::size_t>(src_channels));
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      for (int c = 0; c < g.channels; ++c) col_out[c] = g.at(c, y, x);
      channel_fuse_adjoint(col_out, col_in);
      for (int c = 0; c < src_channels; ++c) mid.at(c, y, x) = col_in[c];
    }
  }
  return detail::spatial_resample_adjoint(mid, down, up, src_h, src_w);
}

}  // namespace gridnas

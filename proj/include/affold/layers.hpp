#pragma once

#include "affold/errors.hpp"
#include "affold/linalg.hpp"

#include <cstddef>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

// Builders for the explicit transformation matrices of linear CNN layers.
//
// Flattening convention: channel-outermost, then row-major, so the pixel
// (ch, y, x) of a c x h x w image lives at index ch*h*w + y*w + x.
// Convolution is cross-correlation (no kernel flip).

namespace affold {

struct TensorShape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const { return channels * height * width; }
  std::size_t plane() const { return height * width; }
  std::size_t index(std::size_t ch, std::size_t y, std::size_t x) const { return (ch * height + y) * width + x; }

  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

inline std::string to_string(const TensorShape& s) {
  return "(" + std::to_string(s.channels) + "," + std::to_string(s.height) + "," + std::to_string(s.width) + ")";
}

inline void check_shape(const TensorShape& s) {
  if (s.channels == 0 || s.height == 0 || s.width == 0) throw ShapeError("empty tensor shape " + to_string(s));
}

/// A c x h x w image indexed [channel][row][column].
using Image = std::vector<std::vector<std::vector<double>>>;

inline Vector unravel(const Image& image) {
  Vector out;
  for (const auto& plane : image) {
    const std::size_t w = plane.empty() ? 0 : plane.front().size();
    for (const auto& row : plane) {
      if (row.size() != w) throw ShapeError("ragged image rows");
      out.insert(out.end(), row.begin(), row.end());
    }
  }
  return out;
}

inline Image ravel(std::span<const double> x, const TensorShape& shape) {
  if (x.size() != shape.size()) {
    throw DimensionError("ravel: vector length " + std::to_string(x.size()) + " does not match shape " + to_string(shape));
  }
  Image img(shape.channels, std::vector<std::vector<double>>(shape.height, std::vector<double>(shape.width)));
  for (std::size_t ch = 0; ch < shape.channels; ++ch) {
    for (std::size_t y = 0; y < shape.height; ++y) {
      for (std::size_t xx = 0; xx < shape.width; ++xx) img[ch][y][xx] = x[shape.index(ch, y, xx)];
    }
  }
  return img;
}

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::vector<double> weights; // [out][in][kh][kw]
  std::vector<double> bias;    // [out]

  std::size_t weight_count() const { return out_channels * in_channels * kernel_h * kernel_w; }
  std::size_t weight_index(std::size_t oc, std::size_t ic, std::size_t dy, std::size_t dx) const {
    return ((oc * in_channels + ic) * kernel_h + dy) * kernel_w + dx;
  }

  void check() const {
    if (in_channels == 0 || out_channels == 0) throw ShapeError("convolution needs at least one channel");
    if (kernel_h == 0 || kernel_w == 0) throw ShapeError("kernel dimensions must be >= 1");
    if (stride_h == 0 || stride_w == 0) throw ShapeError("strides must be >= 1");
    if (weights.size() != weight_count()) {
      throw DimensionError("kernel has " + std::to_string(weights.size()) + " weights, expected " +
                           std::to_string(weight_count()));
    }
    if (bias.size() != out_channels) throw DimensionError("bias length must equal out_channels");
  }

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

inline TensorShape conv_output_shape(const ConvSpec& spec, const TensorShape& in) {
  if (in.channels != spec.in_channels) {
    throw ShapeError("input has " + std::to_string(in.channels) + " channels, kernel expects " +
                     std::to_string(spec.in_channels));
  }
  if (in.height < spec.kernel_h || in.width < spec.kernel_w) {
    throw ShapeError("kernel " + std::to_string(spec.kernel_h) + "x" + std::to_string(spec.kernel_w) +
                     " larger than input " + to_string(in));
  }
  return {spec.out_channels, (in.height - spec.kernel_h) / spec.stride_h + 1,
          (in.width - spec.kernel_w) / spec.stride_w + 1};
}

struct ConvMatrix {
  SparseMatrix matrix;
  TensorShape out_shape;
};

/// Toeplitz-style matrix of a strided multi-channel cross-correlation. Row
/// (oc, y, x) holds weights[oc][ic][dy][dx] at input column (ic, y*sh+dy, x*sw+dx).
inline ConvMatrix conv_to_matrix(const ConvSpec& spec, const TensorShape& in_shape) {
  spec.check();
  check_shape(in_shape);
  const TensorShape out = conv_output_shape(spec, in_shape);
  std::vector<Triplet> trips;
  trips.reserve(out.size() * spec.in_channels * spec.kernel_h * spec.kernel_w);
  for (std::size_t oc = 0; oc < out.channels; ++oc) {
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width; ++x) {
        const std::size_t row = out.index(oc, y, x);
        for (std::size_t ic = 0; ic < spec.in_channels; ++ic) {
          for (std::size_t dy = 0; dy < spec.kernel_h; ++dy) {
            for (std::size_t dx = 0; dx < spec.kernel_w; ++dx) {
              const std::size_t col = in_shape.index(ic, y * spec.stride_h + dy, x * spec.stride_w + dx);
              trips.push_back({row, col, spec.weights[spec.weight_index(oc, ic, dy, dx)]});
            }
          }
        }
      }
    }
  }
  return {SparseMatrix::from_triplets(out.size(), in_shape.size(), std::move(trips)), out};
}

/// Per-channel bias broadcast over every spatial position of the output.
inline Vector conv_bias_vector(const ConvSpec& spec, const TensorShape& out_shape) {
  if (out_shape.channels != spec.out_channels || spec.bias.size() != spec.out_channels) {
    throw ShapeError("bias channels do not match output shape " + to_string(out_shape));
  }
  Vector b(out_shape.size());
  for (std::size_t oc = 0; oc < out_shape.channels; ++oc) {
    std::fill_n(b.begin() + static_cast<std::ptrdiff_t>(oc * out_shape.plane()), out_shape.plane(), spec.bias[oc]);
  }
  return b;
}

struct PadSpec {
  std::size_t top = 0;
  std::size_t bottom = 0;
  std::size_t left = 0;
  std::size_t right = 0;

  bool empty() const { return top == 0 && bottom == 0 && left == 0 && right == 0; }
  friend bool operator==(const PadSpec&, const PadSpec&) = default;
};

inline TensorShape padded_shape(const PadSpec& spec, const TensorShape& in) {
  return {in.channels, in.height + spec.top + spec.bottom, in.width + spec.left + spec.right};
}

struct PadMatrix {
  SparseMatrix matrix;
  TensorShape out_shape;
};

/// 0/1 embedding of an image into a zero-bordered frame.
inline PadMatrix pad_matrix(const PadSpec& spec, const TensorShape& in_shape) {
  check_shape(in_shape);
  const TensorShape out = padded_shape(spec, in_shape);
  std::vector<Triplet> trips;
  trips.reserve(in_shape.size());
  for (std::size_t ch = 0; ch < in_shape.channels; ++ch) {
    for (std::size_t y = 0; y < in_shape.height; ++y) {
      for (std::size_t x = 0; x < in_shape.width; ++x) {
        trips.push_back({out.index(ch, y + spec.top, x + spec.left), in_shape.index(ch, y, x), 1.0});
      }
    }
  }
  return {SparseMatrix::from_triplets(out.size(), in_shape.size(), std::move(trips)), out};
}

/// Total padding k-1 per axis, split floor (top/left) and ceil (bottom/right),
/// so a stride-1 convolution with a k1 x k2 kernel keeps the spatial size.
inline PadSpec same_pad_for_kernel(std::size_t k1, std::size_t k2) {
  if (k1 == 0 || k2 == 0) throw ShapeError("kernel dimensions must be >= 1");
  return {(k1 - 1) / 2, k1 / 2, (k2 - 1) / 2, k2 / 2};
}

enum class ResampleMethod { nearest };

struct ResampleSpec {
  TensorShape from;
  TensorShape to;
  ResampleMethod method = ResampleMethod::nearest;
};

/// Center-aligned nearest-neighbour source coordinate:
/// min(floor((dst + 0.5) * src_size / dst_size), src_size - 1), in exact integers.
inline std::size_t nearest_source_index(std::size_t dst, std::size_t src_size, std::size_t dst_size) {
  const std::size_t idx = ((2 * dst + 1) * src_size) / (2 * dst_size);
  return idx < src_size ? idx : src_size - 1;
}

inline SparseMatrix resample_matrix(const ResampleSpec& spec) {
  check_shape(spec.from);
  check_shape(spec.to);
  if (spec.from.channels != spec.to.channels) {
    throw ShapeError("resampling cannot change channel count " + to_string(spec.from) + " -> " + to_string(spec.to));
  }
  if (spec.from == spec.to) return SparseMatrix::identity(spec.from.size());
  std::vector<Triplet> trips;
  trips.reserve(spec.to.size());
  for (std::size_t ch = 0; ch < spec.to.channels; ++ch) {
    for (std::size_t y = 0; y < spec.to.height; ++y) {
      const std::size_t sy = nearest_source_index(y, spec.from.height, spec.to.height);
      for (std::size_t x = 0; x < spec.to.width; ++x) {
        const std::size_t sx = nearest_source_index(x, spec.from.width, spec.to.width);
        trips.push_back({spec.to.index(ch, y, x), spec.from.index(ch, sy, sx), 1.0});
      }
    }
  }
  return SparseMatrix::from_triplets(spec.to.size(), spec.from.size(), std::move(trips));
}

/// Writes `row col value` lines in row-major order.
inline void write_triplets(std::ostream& os, const SparseMatrix& m) {
  const auto old = os.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& t : m.triplets()) os << t.row << ' ' << t.col << ' ' << t.value << '\n';
  os.precision(old);
}

} // namespace affold

#pragma once

#include "affold/errors.hpp"
#include "affold/layers.hpp"
#include "affold/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

// A CNN with weighted skip connections. Layer i (1-based) receives the mixed input
//
//   m_i = sum_k t(k, i-1) * R(k, i-1) * x_k      over sources k < i,
//
// where x_0 is the network input and x_k is the output of layer k, and computes
// x_i = act(W_i * P_i * m_i + B_i). Every mixing row sums to one. The last
// layer is the fully-connected classifier.

namespace affold {

enum class LayerKind { conv, fully_connected };
enum class Activation { none, relu };

inline const char* to_string(LayerKind k) { return k == LayerKind::conv ? "conv" : "fully_connected"; }
inline const char* to_string(Activation a) { return a == Activation::none ? "none" : "relu"; }

struct LayerNode {
  LayerKind kind = LayerKind::conv;
  TensorShape in_shape;  // shape of the mixed input, before padding
  PadSpec pad;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  TensorShape out_shape;
  Activation activation = Activation::none;
  std::vector<double> weights; // conv: [out][in][kh][kw]; fully connected: row-major [out][in]
  std::vector<double> bias;    // conv: one per output channel; fully connected: one per output

  // Derived operators; refreshed by rebuild() whenever parameters change.
  SparseMatrix weight_matrix;
  SparseMatrix pad_matrix;
  Vector bias_vector;

  TensorShape padded_in_shape() const { return padded_shape(pad, in_shape); }
  std::size_t weight_count() const { return weights.size(); }
  std::size_t param_count() const { return weights.size() + bias.size(); }
  std::size_t fan_in() const {
    return kind == LayerKind::conv ? in_shape.channels * kernel_h * kernel_w : padded_in_shape().size();
  }

  ConvSpec conv_spec() const {
    return {in_shape.channels, out_shape.channels, kernel_h, kernel_w, stride_h, stride_w, weights, bias};
  }

  void rebuild() {
    const PadMatrix p = affold::pad_matrix(pad, in_shape);
    pad_matrix = p.matrix;
    if (kind == LayerKind::conv) {
      const ConvSpec spec = conv_spec();
      ConvMatrix c = conv_to_matrix(spec, p.out_shape);
      if (c.out_shape != out_shape) {
        throw ShapeError("conv output " + to_string(c.out_shape) + " differs from declared " + to_string(out_shape));
      }
      weight_matrix = std::move(c.matrix);
      bias_vector = conv_bias_vector(spec, out_shape);
    } else {
      const std::size_t in = p.out_shape.size();
      const std::size_t out = out_shape.size();
      if (weights.size() != in * out || bias.size() != out) {
        throw DimensionError("fully-connected parameters do not match " + std::to_string(out) + "x" + std::to_string(in));
      }
      weight_matrix = SparseMatrix::from_dense(DenseMatrix(out, in, weights));
      bias_vector = bias;
    }
  }
};

inline LayerNode make_conv_layer(const TensorShape& in_shape, std::size_t out_channels, std::size_t kernel,
                                 std::size_t stride, const PadSpec& pad, Activation act) {
  LayerNode n;
  n.kind = LayerKind::conv;
  n.in_shape = in_shape;
  n.pad = pad;
  n.kernel_h = n.kernel_w = kernel;
  n.stride_h = n.stride_w = stride;
  n.activation = act;
  ConvSpec probe{in_shape.channels, out_channels, kernel, kernel, stride, stride, {}, {}};
  n.out_shape = conv_output_shape(probe, padded_shape(pad, in_shape));
  n.weights.assign(probe.weight_count(), 0.0);
  n.bias.assign(out_channels, 0.0);
  return n;
}

inline LayerNode make_fc_layer(const TensorShape& in_shape, std::size_t outputs) {
  LayerNode n;
  n.kind = LayerKind::fully_connected;
  n.in_shape = in_shape;
  n.out_shape = {outputs, 1, 1};
  n.kernel_h = n.kernel_w = 0;
  n.stride_h = n.stride_w = 0;
  n.weights.assign(outputs * in_shape.size(), 0.0);
  n.bias.assign(outputs, 0.0);
  return n;
}

/// One summand of a mixing row: weight t(source, i-1) with its resampler.
struct SkipTerm {
  std::size_t source = 0;
  double weight = 1.0;
  SparseMatrix resample;
};

/// A declared skip connection: the output of layer `from` joins the input of layer `to`.
struct SkipPair {
  std::size_t from = 0;
  std::size_t to = 0;
  friend bool operator==(const SkipPair&, const SkipPair&) = default;
};

struct Network {
  TensorShape input_shape;
  std::size_t num_classes = 0;
  std::vector<LayerNode> layers;              // layers[i-1] is layer i
  std::vector<std::vector<SkipTerm>> mixing;  // mixing[i-1] feeds layer i, sorted by source
  std::vector<SkipPair> topology;

  std::size_t depth() const { return layers.size(); }
  const LayerNode& layer(std::size_t i) const { return layers.at(i - 1); }
  const std::vector<SkipTerm>& terms(std::size_t i) const { return mixing.at(i - 1); }

  /// Output shape of layer k; k = 0 is the input.
  const TensorShape& output_shape(std::size_t k) const { return k == 0 ? input_shape : layers.at(k - 1).out_shape; }

  /// t(k, i-1), zero when absent.
  double skip_weight(std::size_t k, std::size_t i) const {
    for (const auto& term : terms(i)) {
      if (term.source == k) return term.weight;
    }
    return 0.0;
  }

  bool is_linear() const {
    return std::all_of(layers.begin(), layers.end(), [](const LayerNode& l) { return l.activation == Activation::none; });
  }

  /// True when every off-diagonal mixing weight is zero.
  bool is_feed_forward() const {
    for (std::size_t i = 1; i <= depth(); ++i) {
      for (const auto& term : terms(i)) {
        if (term.source != i - 1 && term.weight != 0.0) return false;
      }
    }
    return true;
  }
};

enum class ViolationKind { row_sum, shape, dangling_source, output_size, structure };

struct Violation {
  ViolationKind kind;
  std::size_t layer;
  std::string message;
};

inline constexpr double kRowSumTolerance = 1e-9;

/// Structural checks; violations are returned, never thrown.
inline std::vector<Violation> validate(const Network& net) {
  std::vector<Violation> out;
  auto add = [&out](ViolationKind k, std::size_t i, std::string msg) { out.push_back({k, i, std::move(msg)}); };
  const std::size_t L = net.depth();
  if (L == 0) {
    add(ViolationKind::structure, 0, "network has no layers");
    return out;
  }
  if (net.mixing.size() != L) {
    add(ViolationKind::structure, 0, "mixing rows do not match layer count");
    return out;
  }
  for (std::size_t i = 1; i <= L; ++i) {
    const LayerNode& node = net.layer(i);
    const std::string at = "layer " + std::to_string(i) + ": ";
    if (node.in_shape != net.output_shape(i - 1)) {
      add(ViolationKind::shape, i, at + "input shape " + to_string(node.in_shape) + " differs from layer " +
                                       std::to_string(i - 1) + " output " + to_string(net.output_shape(i - 1)));
    }
    if (node.pad_matrix.cols() != node.in_shape.size() || node.weight_matrix.cols() != node.pad_matrix.rows() ||
        node.weight_matrix.rows() != node.bias_vector.size() || node.bias_vector.size() != node.out_shape.size()) {
      add(ViolationKind::shape, i, at + "W/P/B dimensions are inconsistent");
    }
    if (i < L && node.kind != LayerKind::conv) add(ViolationKind::structure, i, at + "only the last layer may be fully connected");
    if (i == L && node.kind != LayerKind::fully_connected) add(ViolationKind::structure, i, at + "last layer must be fully connected");
    if (i == L && node.activation != Activation::none) add(ViolationKind::structure, i, at + "classifier takes no activation");

    double sum = 0.0;
    for (const auto& term : net.terms(i)) {
      sum += term.weight;
      if (term.source >= i) {
        add(ViolationKind::dangling_source, i, at + "skip source " + std::to_string(term.source) + " is not an earlier layer");
        continue;
      }
      if (term.resample.rows() != node.in_shape.size() || term.resample.cols() != net.output_shape(term.source).size()) {
        add(ViolationKind::shape, i, at + "resampler from layer " + std::to_string(term.source) + " is " +
                                         std::to_string(term.resample.rows()) + "x" + std::to_string(term.resample.cols()));
      }
    }
    if (std::abs(sum - 1.0) > kRowSumTolerance) {
      add(ViolationKind::row_sum, i, at + "skip weights sum to " + std::to_string(sum));
    }
  }
  if (net.layers.back().out_shape.size() != net.num_classes) {
    add(ViolationKind::output_size, L, "classifier emits " + std::to_string(net.layers.back().out_shape.size()) +
                                           " values for " + std::to_string(net.num_classes) + " classes");
  }
  for (const auto& p : net.topology) {
    if (p.to > L || p.from + 1 >= p.to) {
      add(ViolationKind::dangling_source, p.to, "declared skip " + std::to_string(p.from) + "->" + std::to_string(p.to) + " is invalid");
    }
  }
  return out;
}

/// Nearest-neighbour resampler from layer k's output to layer i's mixed input.
inline SparseMatrix auto_resampler(const Network& net, std::size_t k, std::size_t i) {
  if (i == 0 || i > net.depth() || k >= i) {
    throw ShapeError("resampler needs 0 <= k < i <= L, got k=" + std::to_string(k) + " i=" + std::to_string(i));
  }
  const TensorShape& from = net.output_shape(k);
  const TensorShape& to = net.output_shape(i - 1);
  if (from.channels != to.channels) {
    throw ShapeError("skip from layer " + std::to_string(k) + " to layer " + std::to_string(i) +
                     " changes channel count; channel projection is not supported");
  }
  return resample_matrix({from, to, ResampleMethod::nearest});
}

/// Sets every declared skip to strength t: a layer with m declared skip sources
/// receives (1-t) * x_{i-1} + (t/m) * sum_j R x_j. Layers without skips take x_{i-1}.
inline Network set_uniform_skip(Network net, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw RangeError("skip strength t=" + std::to_string(t) + " outside [0,1]");
  const std::size_t L = net.depth();
  net.mixing.assign(L, {});
  for (std::size_t i = 1; i <= L; ++i) {
    std::vector<std::size_t> sources;
    for (const auto& p : net.topology) {
      if (p.to == i) {
        if (p.from + 1 >= i) throw ConfigError("skip " + std::to_string(p.from) + "->" + std::to_string(i) + " is not a skip");
        sources.push_back(p.from);
      }
    }
    std::sort(sources.begin(), sources.end());
    sources.erase(std::unique(sources.begin(), sources.end()), sources.end());
    auto& row = net.mixing[i - 1];
    if (sources.empty()) {
      row.push_back({i - 1, 1.0, SparseMatrix::identity(net.output_shape(i - 1).size())});
      continue;
    }
    // The diagonal takes whatever the shares leave, so the row sums to one exactly.
    const double share = t / static_cast<double>(sources.size());
    double used = 0.0;
    for (const std::size_t j : sources) {
      row.push_back({j, share, auto_resampler(net, j, i)});
      used += share;
    }
    row.push_back({i - 1, 1.0 - used, SparseMatrix::identity(net.output_shape(i - 1).size())});
  }
  return net;
}

inline std::size_t parameter_count(const Network& net) {
  std::size_t n = 0;
  for (const auto& l : net.layers) n += l.param_count();
  return n;
}

/// Flat parameter vector: per layer ascending, weights then bias.
inline std::vector<double> parameters(const Network& net) {
  std::vector<double> out;
  out.reserve(parameter_count(net));
  for (const auto& l : net.layers) {
    out.insert(out.end(), l.weights.begin(), l.weights.end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

inline Network with_parameters(Network net, std::span<const double> flat) {
  if (flat.size() != parameter_count(net)) {
    throw DimensionError("expected " + std::to_string(parameter_count(net)) + " parameters, got " + std::to_string(flat.size()));
  }
  std::size_t off = 0;
  for (auto& l : net.layers) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), l.weights.size(), l.weights.begin());
    off += l.weights.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), l.bias.size(), l.bias.begin());
    off += l.bias.size();
    l.rebuild();
  }
  return net;
}

/// Uniform double in [0, 1) from the top 53 bits, independent of the standard
/// library's distribution implementation.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Weights and biases drawn uniformly from +-1/sqrt(fan_in), seeded.
inline Network initialize_parameters(Network net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& l : net.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.fan_in()));
    for (double& w : l.weights) w = (2.0 * uniform01(rng) - 1.0) * bound;
    for (double& b : l.bias) b = (2.0 * uniform01(rng) - 1.0) * bound;
    l.rebuild();
  }
  return net;
}

struct ConvLayerConfig {
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  bool same_padding = false;
  Activation activation = Activation::none;
};

/// Stacks conv layers followed by a fully-connected classifier, declares the
/// given skips, sets them to strength t and draws seeded parameters.
inline Network build_network(const TensorShape& input, std::size_t num_classes, const std::vector<ConvLayerConfig>& convs,
                             std::vector<SkipPair> skips, double t, std::uint64_t seed) {
  Network net;
  net.input_shape = input;
  net.num_classes = num_classes;
  TensorShape shape = input;
  for (const auto& c : convs) {
    const PadSpec pad = c.same_padding ? same_pad_for_kernel(c.kernel, c.kernel) : PadSpec{};
    net.layers.push_back(make_conv_layer(shape, c.out_channels, c.kernel, c.stride, pad, c.activation));
    shape = net.layers.back().out_shape;
  }
  net.layers.push_back(make_fc_layer(shape, num_classes));
  net.topology = std::move(skips);
  net = initialize_parameters(std::move(net), seed);
  return set_uniform_skip(std::move(net), t);
}

inline constexpr TensorShape kMnistShape{1, 28, 28};
inline constexpr std::size_t kMnistClasses = 10;

/// Feature maps per conv layer of mnist_classifier. A single ReLU channel is
/// often dead from initialization on non-negative images.
inline constexpr std::size_t kMnistClassifierChannels = 4;

/// Named architectures, all for 1x28x28 inputs and 10 classes:
///  - basic3: three valid 3x3 convs and a classifier, one skip 1->3
///  - basic6: six valid 3x3 convs, skips between every non-consecutive pair
///  - deep_linear: depth-1 same-padded 3x3 convs plus classifier, a skip
///    around every two layers (0->3, 2->5, ...)
///  - mnist_classifier: basic3 with four channels per conv and ReLU after each
/// Skips start at the standard strength t = 0.5.
inline Network preset(const std::string& name, std::size_t depth = 34, std::uint64_t seed = 0) {
  const ConvLayerConfig plain{};
  if (name == "basic3" || name == "mnist_classifier") {
    ConvLayerConfig c = plain;
    if (name == "mnist_classifier") {
      c.activation = Activation::relu;
      c.out_channels = kMnistClassifierChannels;
    }
    return build_network(kMnistShape, kMnistClasses, {c, c, c}, {{1, 3}}, 0.5, seed);
  }
  if (name == "basic6") {
    std::vector<SkipPair> skips;
    for (std::size_t i = 3; i <= 6; ++i) {
      for (std::size_t j = 1; j + 2 <= i; ++j) skips.push_back({j, i});
    }
    return build_network(kMnistShape, kMnistClasses, std::vector<ConvLayerConfig>(6, plain), skips, 0.5, seed);
  }
  if (name == "deep_linear") {
    if (depth == 0) throw ConfigError("deep_linear needs at least one layer");
    ConvLayerConfig c = plain;
    c.same_padding = true;
    std::vector<SkipPair> skips;
    for (std::size_t j = 0; j + 3 <= depth; j += 2) skips.push_back({j, j + 3});
    return build_network(kMnistShape, kMnistClasses, std::vector<ConvLayerConfig>(depth - 1, c), skips, 0.5, seed);
  }
  throw ConfigError("unknown preset '" + name + "'");
}

} // namespace affold

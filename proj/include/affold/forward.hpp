#pragma once

#include "affold/errors.hpp"
#include "affold/linalg.hpp"
#include "affold/network.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace affold {

/// Intermediate values of one layered evaluation. Index i of each vector
/// refers to layer i; index 0 of `outputs` is the input and index 0 of the
/// other two is unused.
struct ForwardTrace {
  std::vector<Vector> outputs;         // x_i
  std::vector<Vector> pre_activations; // z_i = W_i P_i m_i + B_i
  std::vector<Vector> mixed;           // m_i
};

struct ForwardResult {
  Vector logits;
  std::optional<ForwardTrace> trace;
};

namespace detail {

/// A row that forwards x_{i-1} untouched: one term, weight exactly 1, identity resampler.
inline bool is_pass_through(const std::vector<SkipTerm>& row, std::size_t i) {
  return row.size() == 1 && row.front().source == i - 1 && row.front().weight == 1.0 && row.front().resample.is_identity();
}

inline Vector mix_row(const std::vector<SkipTerm>& row, const std::vector<Vector>& outputs, std::size_t length) {
  Vector acc(length, 0.0);
  for (const auto& term : row) {
    const Vector& src = outputs[term.source];
    if (term.resample.is_identity()) {
      axpy(term.weight, src, acc);
    } else {
      axpy(term.weight, spmv(term.resample, src), acc);
    }
  }
  return acc;
}

} // namespace detail

/// Layer-by-layer evaluation in index order. Logits are the raw classifier
/// outputs; softmax belongs to the loss.
inline ForwardResult forward_layered(const Network& net, std::span<const double> x, bool keep_trace = false) {
  if (x.size() != net.input_shape.size()) {
    throw DimensionError("input length " + std::to_string(x.size()) + " does not match network input " +
                         to_string(net.input_shape));
  }
  const std::size_t L = net.depth();
  std::vector<Vector> outputs(L + 1);
  outputs[0].assign(x.begin(), x.end());
  ForwardTrace trace;
  if (keep_trace) {
    trace.pre_activations.resize(L + 1);
    trace.mixed.resize(L + 1);
  }
  for (std::size_t i = 1; i <= L; ++i) {
    const LayerNode& node = net.layer(i);
    const auto& row = net.terms(i);
    Vector mixed;
    const Vector* input = nullptr;
    if (detail::is_pass_through(row, i)) {
      input = &outputs[i - 1];
    } else {
      mixed = detail::mix_row(row, outputs, node.in_shape.size());
      input = &mixed;
    }
    Vector z = node.pad_matrix.is_identity() ? spmv(node.weight_matrix, *input)
                                             : spmv(node.weight_matrix, spmv(node.pad_matrix, *input));
    for (std::size_t r = 0; r < z.size(); ++r) z[r] += node.bias_vector[r];
    Vector out = z;
    if (node.activation == Activation::relu) {
      for (double& v : out) v = v > 0.0 ? v : 0.0;
    }
    if (keep_trace) {
      trace.mixed[i] = input == &mixed ? std::move(mixed) : *input;
      trace.pre_activations[i] = std::move(z);
    }
    outputs[i] = std::move(out);
  }
  ForwardResult result;
  result.logits = outputs[L];
  if (keep_trace) {
    trace.outputs = std::move(outputs);
    result.trace = std::move(trace);
  }
  return result;
}

/// (1 - t) * x_seq + t * x_skip.
inline Vector homotopy_mix(std::span<const double> x_seq, std::span<const double> x_skip, double t) {
  if (x_seq.size() != x_skip.size()) throw DimensionError("homotopy_mix operands differ in length");
  if (!(t >= 0.0 && t <= 1.0)) throw RangeError("homotopy parameter outside [0,1]");
  Vector out(x_seq.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = (1.0 - t) * x_seq[k] + t * x_skip[k];
  return out;
}

inline Vector forward_collapsed(const AffineMap& map, std::span<const double> x) { return apply_affine(map, x); }

/// Argmax; the lowest index wins ties.
inline std::size_t predict_class(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.size(); ++k) {
    if (logits[k] > logits[best]) best = k;
  }
  return best;
}

} // namespace affold

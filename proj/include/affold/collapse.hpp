#pragma once

#include "affold/errors.hpp"
#include "affold/forward.hpp"
#include "affold/linalg.hpp"
#include "affold/network.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

// Reduction of linear networks to a single affine map x -> W x + B.
//
// Two independent routes:
//  - collapse_closed_form: strictly feed-forward nets, W = A_L ... A_1 with
//    A_i = W_i P_i, accumulated from the classifier side, and
//    B = sum_i (A_L ... A_{i+1}) B_i.
//  - collapse_theorem1: any skip topology. The homogeneous part propagates the
//    accumulated operator of each node, Acc_i = W_i P_i sum_k t(k,i-1) R(k,i-1) Acc_k
//    with Acc_0 = I, and the constant part is one layered pass on the zero vector.

namespace affold {

struct CollapseResult {
  AffineMap map;
  std::size_t source_layer_count = 0;
  std::size_t flop_count_layered = 0;
  std::size_t flop_count_collapsed = 0;
};

/// Multiply-adds of a dense affine application.
inline std::size_t flops(const AffineMap& map) { return map.out_dim() * map.in_dim() + map.out_dim(); }

/// Multiply-adds of one layered evaluation, following forward_layered exactly:
/// mixing (resampler nonzeros plus one scaled add per term) unless the row is a
/// pass-through, padding nonzeros unless padding is the identity, weight
/// nonzeros, and the bias add.
inline std::size_t flops(const Network& net) {
  std::size_t total = 0;
  for (std::size_t i = 1; i <= net.depth(); ++i) {
    const LayerNode& node = net.layer(i);
    const auto& row = net.terms(i);
    if (!detail::is_pass_through(row, i)) {
      for (const auto& term : row) total += (term.resample.is_identity() ? 0 : term.resample.nnz()) + node.in_shape.size();
    }
    if (!node.pad_matrix.is_identity()) total += node.pad_matrix.nnz();
    total += node.weight_matrix.nnz() + node.bias_vector.size();
  }
  return total;
}

namespace detail {

inline void require_linear(const Network& net) {
  for (std::size_t i = 1; i <= net.depth(); ++i) {
    if (net.layer(i).activation != Activation::none) {
      throw CannotCollapseNonlinear("layer " + std::to_string(i) + " applies " + to_string(net.layer(i).activation));
    }
  }
}

inline void require_valid(const Network& net) {
  const auto violations = validate(net);
  if (!violations.empty()) throw ValidationError(violations.front().message);
}

inline SparseMatrix layer_operator(const LayerNode& node) {
  return node.pad_matrix.is_identity() ? node.weight_matrix : spmm(node.weight_matrix, node.pad_matrix);
}

/// Accumulated operator of layer `upto` with respect to the network input.
/// Intermediate operators are released once no later row references them.
inline SparseMatrix propagate_operators(const Network& net, std::size_t upto) {
  std::vector<std::size_t> last_use(upto + 1, 0);
  for (std::size_t i = 1; i <= upto; ++i) {
    for (const auto& term : net.terms(i)) {
      if (term.weight != 0.0) last_use[term.source] = i;
    }
  }
  std::vector<std::optional<SparseMatrix>> acc(upto + 1);
  acc[0] = SparseMatrix::identity(net.input_shape.size());
  for (std::size_t i = 1; i <= upto; ++i) {
    const LayerNode& node = net.layer(i);
    std::optional<SparseMatrix> mixed;
    for (const auto& term : net.terms(i)) {
      if (term.weight == 0.0) continue;
      const SparseMatrix& source = *acc[term.source];
      SparseMatrix routed = term.resample.is_identity() ? source : spmm(term.resample, source);
      if (!mixed) {
        mixed = term.weight == 1.0 ? std::move(routed)
                                   : sparse_scale_add(term.weight, routed, 0.0, SparseMatrix(routed.rows(), routed.cols()));
      } else {
        mixed = sparse_scale_add(1.0, *mixed, term.weight, routed);
      }
    }
    if (!mixed) mixed = SparseMatrix(node.in_shape.size(), net.input_shape.size());
    if (!node.pad_matrix.is_identity()) mixed = spmm(node.pad_matrix, *mixed);
    acc[i] = spmm(node.weight_matrix, *mixed);
    for (std::size_t k = 0; k < i; ++k) {
      if (acc[k] && last_use[k] <= i) acc[k].reset();
    }
  }
  return std::move(*acc[upto]);
}

/// Output of layer `upto` when the network input is the zero vector.
inline Vector zero_response(const Network& net, std::size_t upto) {
  const Vector zero(net.input_shape.size(), 0.0);
  const ForwardResult r = forward_layered(net, zero, true);
  return r.trace->outputs[upto];
}

} // namespace detail

inline AffineMap collapse_closed_form(const Network& net) {
  detail::require_linear(net);
  if (!net.is_feed_forward()) throw NotFeedForward("network has nonzero skip weights");
  detail::require_valid(net);
  const std::size_t L = net.depth();
  SparseMatrix suffix = SparseMatrix::identity(net.layer(L).out_shape.size());
  Vector bias(suffix.rows(), 0.0);
  for (std::size_t i = L; i >= 1; --i) {
    const LayerNode& node = net.layer(i);
    axpy(1.0, spmv(suffix, node.bias_vector), bias);
    SparseMatrix step = detail::layer_operator(node);
    const double diag = net.skip_weight(i - 1, i);
    if (diag != 1.0) step = sparse_scale_add(diag, step, 0.0, SparseMatrix(step.rows(), step.cols()));
    suffix = spmm(suffix, step);
  }
  return AffineMap(suffix.to_dense(), std::move(bias));
}

inline CollapseResult collapse_theorem1(const Network& net) {
  detail::require_linear(net);
  detail::require_valid(net);
  const std::size_t L = net.depth();
  CollapseResult result;
  result.map = AffineMap(detail::propagate_operators(net, L).to_dense(), detail::zero_response(net, L));
  result.source_layer_count = L;
  result.flop_count_layered = flops(net);
  result.flop_count_collapsed = flops(result.map);
  return result;
}

/// Affine map of the network with its classifier removed.
inline AffineMap collapse_latent(const Network& net) {
  detail::require_linear(net);
  detail::require_valid(net);
  const std::size_t L = net.depth();
  if (L < 2) throw ShapeError("latent map needs at least two layers");
  return AffineMap(detail::propagate_operators(net, L - 1).to_dense(), detail::zero_response(net, L - 1));
}

} // namespace affold

#pragma once

#include "affold/collapse.hpp"
#include "affold/data_io.hpp"
#include "affold/errors.hpp"
#include "affold/forward.hpp"
#include "affold/linalg.hpp"
#include "affold/network.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace affold {

struct SGDConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 64;
  std::size_t epochs = 1;
  std::uint64_t rng_seed = 0;

  void check() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be finite and >= 0");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
  }
};

using TSchedule = std::vector<double>;

/// Skip strength per epoch, decaying from 0.9 to exactly 0 over ten epochs.
inline TSchedule decaying_schedule() { return {0.9, 0.7, 0.5, 0.3, 0.2, 0.1, 0.05, 0.025, 0.01, 0.0}; }

/// Ten-epoch schedule that starts from the standard residual strength 0.5.
inline TSchedule decaying_schedule_from_half() { return {0.5, 0.4, 0.3, 0.2, 0.1, 0.05, 0.025, 0.01, 0.05, 0.0}; }

inline TSchedule constant_schedule(double t, std::size_t epochs) { return TSchedule(epochs, t); }

struct EpochRecord {
  std::size_t epoch = 0;
  double t = 0.0;
  double mean_train_loss = 0.0;
  double val_accuracy = 0.0;
  double wall_ms = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;

struct LossResult {
  double loss = 0.0;
  Vector dlogits;
};

/// Softmax cross-entropy with max-subtraction: loss = logsumexp(z) - z[label],
/// gradient = softmax(z) - onehot(label).
inline LossResult loss_softmax_ce(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw LabelError("label " + std::to_string(label) + " for " + std::to_string(logits.size()) + " classes");
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  LossResult r;
  r.dlogits.resize(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    r.dlogits[k] = std::exp(logits[k] - peak);
    sum += r.dlogits[k];
  }
  r.loss = std::log(sum) + peak - logits[label];
  for (double& g : r.dlogits) g /= sum;
  r.dlogits[label] -= 1.0;
  return r;
}

/// Reverse-mode gradient of a scalar loss with respect to every parameter,
/// laid out like parameters(net). Skip weights and resamplers are constants.
inline std::vector<double> backward(const Network& net, const ForwardResult& forward, std::span<const double> dlogits) {
  if (!forward.trace) throw TraceError("backward needs a forward pass run with keep_trace");
  const ForwardTrace& tr = *forward.trace;
  const std::size_t L = net.depth();
  if (tr.outputs.size() != L + 1 || tr.mixed.size() != L + 1 || tr.pre_activations.size() != L + 1) {
    throw TraceError("trace does not match a " + std::to_string(L) + "-layer network");
  }
  if (dlogits.size() != net.layer(L).out_shape.size()) throw DimensionError("dlogits length does not match classifier");

  std::vector<std::size_t> offset(L + 1, 0);
  for (std::size_t i = 1; i < L; ++i) offset[i + 1] = offset[i] + net.layer(i).param_count();
  std::vector<double> grad(parameter_count(net), 0.0);

  std::vector<Vector> dx(L + 1);
  dx[L].assign(dlogits.begin(), dlogits.end());
  for (std::size_t i = L; i >= 1; --i) {
    const LayerNode& node = net.layer(i);
    if (dx[i].empty()) continue; // nothing downstream depends on this layer
    Vector dz = std::move(dx[i]);
    if (node.activation == Activation::relu) {
      const Vector& z = tr.pre_activations[i];
      for (std::size_t r = 0; r < dz.size(); ++r) {
        if (!(z[r] > 0.0)) dz[r] = 0.0;
      }
    }
    const Vector& m = tr.mixed[i];
    const Vector padded = node.pad_matrix.is_identity() ? m : spmv(node.pad_matrix, m);
    double* gw = grad.data() + offset[i];
    double* gb = gw + node.weights.size();

    if (node.kind == LayerKind::conv) {
      const TensorShape in = node.padded_in_shape();
      const TensorShape& out = node.out_shape;
      for (std::size_t oc = 0; oc < out.channels; ++oc) {
        for (std::size_t y = 0; y < out.height; ++y) {
          for (std::size_t x = 0; x < out.width; ++x) {
            const double g = dz[out.index(oc, y, x)];
            if (g == 0.0) continue;
            gb[oc] += g;
            for (std::size_t ic = 0; ic < in.channels; ++ic) {
              for (std::size_t ky = 0; ky < node.kernel_h; ++ky) {
                const double* row = padded.data() + in.index(ic, y * node.stride_h + ky, x * node.stride_w);
                double* wrow = gw + ((oc * in.channels + ic) * node.kernel_h + ky) * node.kernel_w;
                for (std::size_t kx = 0; kx < node.kernel_w; ++kx) wrow[kx] += g * row[kx];
              }
            }
          }
        }
      }
    } else {
      const std::size_t cols = padded.size();
      for (std::size_t r = 0; r < dz.size(); ++r) {
        gb[r] += dz[r];
        for (std::size_t c = 0; c < cols; ++c) gw[r * cols + c] += dz[r] * padded[c];
      }
    }

    // Route the input gradient back through padding and every mixing branch.
    bool needed = false;
    for (const auto& term : net.terms(i)) needed = needed || (term.source > 0 && term.weight != 0.0);
    if (!needed) continue;
    Vector dm = spmv_transposed(node.weight_matrix, dz);
    if (!node.pad_matrix.is_identity()) dm = spmv_transposed(node.pad_matrix, dm);
    for (const auto& term : net.terms(i)) {
      if (term.source == 0 || term.weight == 0.0) continue;
      Vector& target = dx[term.source];
      if (target.empty()) target.assign(net.output_shape(term.source).size(), 0.0);
      if (term.resample.is_identity()) {
        axpy(term.weight, dm, target);
      } else {
        axpy(term.weight, spmv_transposed(term.resample, dm), target);
      }
    }
  }
  return grad;
}

/// Loss and gradient of one labelled sample.
inline LossResult sample_loss(const Network& net, std::span<const double> x, std::size_t label) {
  return loss_softmax_ce(forward_layered(net, x).logits, label);
}

namespace detail {

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t k = n; k > 1; --k) {
    const std::size_t j = static_cast<std::size_t>(rng() % k);
    std::swap(order[k - 1], order[j]);
  }
  return order;
}

} // namespace detail

struct EpochResult {
  Network net;
  double mean_loss = 0.0;
};

/// One pass of minibatch SGD at skip strength t. The visiting order depends
/// only on (config.rng_seed, epoch); the trailing partial batch is kept and
/// averaged over its own size.
inline EpochResult sgd_epoch(Network net, const Dataset& data, const SGDConfig& config, double t, std::size_t epoch = 0) {
  config.check();
  if (data.size() == 0) throw ConfigError("cannot train on an empty dataset");
  net = set_uniform_skip(std::move(net), t);
  std::vector<double> params = parameters(net);
  std::vector<double> batch_grad(params.size());
  const auto order = detail::epoch_order(data.size(), config.rng_seed, epoch);
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::size_t stop = std::min(order.size(), start + config.batch_size);
    std::fill(batch_grad.begin(), batch_grad.end(), 0.0);
    for (std::size_t k = start; k < stop; ++k) {
      const std::size_t s = order[k];
      const ForwardResult fwd = forward_layered(net, data.images[s], true);
      const LossResult loss = loss_softmax_ce(fwd.logits, data.labels[s]);
      loss_sum += loss.loss;
      const auto g = backward(net, fwd, loss.dlogits);
      for (std::size_t p = 0; p < g.size(); ++p) batch_grad[p] += g[p];
    }
    const double scale = config.learning_rate / static_cast<double>(stop - start);
    for (std::size_t p = 0; p < params.size(); ++p) params[p] -= scale * batch_grad[p];
    net = with_parameters(std::move(net), params);
  }
  return {std::move(net), loss_sum / static_cast<double>(data.size())};
}

inline double accuracy(const Network& net, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    hits += predict_class(forward_layered(net, data.images[s]).logits) == data.labels[s] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

inline double accuracy(const AffineMap& map, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    hits += predict_class(forward_collapsed(map, data.images[s])) == data.labels[s] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

struct TrainResult {
  Network net;
  TrainHistory history;
};

/// Trains config.epochs epochs, using schedule[e] as the skip strength of epoch e.
inline TrainResult train_scheduled(Network net, const Dataset& train, const Dataset& val, const SGDConfig& config,
                                   const TSchedule& schedule) {
  if (schedule.size() != config.epochs) {
    throw ConfigError("schedule has " + std::to_string(schedule.size()) + " values for " + std::to_string(config.epochs) +
                      " epochs");
  }
  for (const double t : schedule) {
    if (!(t >= 0.0 && t <= 1.0)) throw RangeError("schedule value " + std::to_string(t) + " outside [0,1]");
  }
  TrainHistory history;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const auto start = std::chrono::steady_clock::now();
    EpochResult r = sgd_epoch(std::move(net), train, config, schedule[e], e);
    net = std::move(r.net);
    const double acc = accuracy(net, val);
    const auto stop = std::chrono::steady_clock::now();
    history.push_back({e, schedule[e], r.mean_loss, acc, std::chrono::duration<double, std::milli>(stop - start).count()});
  }
  return {std::move(net), std::move(history)};
}

/// Removes all skip bookkeeping from a network whose off-diagonal skip weights are zero.
inline Network excise_skips(Network net) {
  for (std::size_t i = 1; i <= net.depth(); ++i) {
    for (const auto& term : net.terms(i)) {
      if (term.source != i - 1 && term.weight != 0.0) {
        throw CannotExcise("layer " + std::to_string(i) + " still draws " + std::to_string(term.weight) + " from layer " +
                           std::to_string(term.source));
      }
    }
  }
  for (std::size_t i = 1; i <= net.depth(); ++i) {
    auto& row = net.mixing[i - 1];
    const double diagonal = net.skip_weight(i - 1, i);
    row.clear();
    row.push_back({i - 1, diagonal, SparseMatrix::identity(net.output_shape(i - 1).size())});
  }
  net.topology.clear();
  return net;
}

struct SweepRow {
  double t = 0.0;
  double mean_val_accuracy = 0.0;
  std::size_t trials = 0;
};

/// For every t, trains `trials` fresh initializations (seeds rng_seed, rng_seed+1, ...)
/// at constant t and averages the final validation accuracy.
inline std::vector<SweepRow> sweep_t(const Network& net_template, const Dataset& train, const Dataset& val,
                                     const SGDConfig& config, const std::vector<double>& t_values, std::size_t trials) {
  for (const double t : t_values) {
    if (!(t >= 0.0 && t <= 1.0)) throw RangeError("t=" + std::to_string(t) + " outside [0,1]");
  }
  if (trials == 0) throw ConfigError("sweep needs at least one trial");
  std::vector<SweepRow> rows;
  for (const double t : t_values) {
    double sum = 0.0;
    for (std::size_t r = 0; r < trials; ++r) {
      SGDConfig cfg = config;
      cfg.rng_seed = config.rng_seed + r;
      Network net = initialize_parameters(net_template, cfg.rng_seed);
      const TrainResult res = train_scheduled(std::move(net), train, val, cfg, constant_schedule(t, cfg.epochs));
      sum += res.history.empty() ? accuracy(net_template, val) : res.history.back().val_accuracy;
    }
    rows.push_back({t, sum / static_cast<double>(trials), trials});
  }
  return rows;
}

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_parameter = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  std::size_t kink_skips = 0; // parameters whose +-h step flipped a ReLU
};

/// Relative error floor: gradients smaller than this are compared absolutely.
inline constexpr double kGradCheckFloor = 1e-6;

/// Compares `analytic` with central differences of the sample loss, step h.
/// Only the perturbed layer is rebuilt for each evaluation. A central
/// difference is meaningless when either step moves a ReLU pre-activation
/// across zero; such parameters are counted in kink_skips and left out.
inline GradCheckReport gradient_check(const Network& net, std::span<const double> x, std::size_t label,
                                      std::span<const double> analytic, double h = 1e-5) {
  if (analytic.size() != parameter_count(net)) throw DimensionError("gradient length does not match parameter count");
  const bool linear = net.is_linear();
  std::vector<std::vector<bool>> pattern;
  auto relu_pattern = [&](const ForwardResult& r) {
    std::vector<std::vector<bool>> p(net.depth() + 1);
    for (std::size_t i = 1; i <= net.depth(); ++i) {
      if (net.layer(i).activation != Activation::relu) continue;
      for (double z : r.trace->pre_activations[i]) p[i].push_back(z > 0.0);
    }
    return p;
  };
  if (!linear) pattern = relu_pattern(forward_layered(net, x, true));
  // Loss at the current probe, and whether its ReLU pattern matches the unperturbed one.
  auto evaluate = [&](const Network& probe) -> std::pair<double, bool> {
    if (linear) return {sample_loss(probe, x, label).loss, true};
    const ForwardResult r = forward_layered(probe, x, true);
    return {loss_softmax_ce(r.logits, label).loss, relu_pattern(r) == pattern};
  };

  GradCheckReport report;
  Network probe = net;
  std::size_t flat = 0;
  for (std::size_t li = 0; li < probe.layers.size(); ++li) {
    LayerNode& node = probe.layers[li];
    for (int part = 0; part < 2; ++part) {
      std::vector<double>& values = part == 0 ? node.weights : node.bias;
      for (std::size_t k = 0; k < values.size(); ++k, ++flat) {
        const double orig = values[k];
        values[k] = orig + h;
        node.rebuild();
        const auto [up, up_same] = evaluate(probe);
        values[k] = orig - h;
        node.rebuild();
        const auto [down, down_same] = evaluate(probe);
        values[k] = orig;
        if (!up_same || !down_same) {
          ++report.kink_skips;
          continue;
        }
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic[flat];
        const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
        if (err > report.max_relative_error || report.checked == 0) {
          report.max_relative_error = err;
          report.worst_parameter = flat;
          report.analytic = a;
          report.numeric = numeric;
        }
        ++report.checked;
      }
      node.rebuild();
    }
  }
  return report;
}

inline void write_history_csv(std::ostream& os, const TrainHistory& history) {
  const auto old = os.precision(17);
  os << "epoch,t,train_loss,val_accuracy,wall_ms\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << r.t << ',' << r.mean_train_loss << ',' << r.val_accuracy << ',' << r.wall_ms << '\n';
  }
  os.precision(old);
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  const auto old = os.precision(17);
  os << "t,mean_val_accuracy,trials\n";
  for (const auto& r : rows) os << r.t << ',' << r.mean_val_accuracy << ',' << r.trials << '\n';
  os.precision(old);
}

} // namespace affold

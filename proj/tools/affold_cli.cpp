#include "affold/affold.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#ifndef AFFOLD_DEFAULT_DATA_DIR
#define AFFOLD_DEFAULT_DATA_DIR "data/mnist"
#endif

namespace fs = std::filesystem;
using namespace affold;

namespace {

std::string default_data_dir() {
  if (const char* env = std::getenv("AFFINE_FOLD_DATA"); env && *env) return env;
  return AFFOLD_DEFAULT_DATA_DIR;
}

std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError(std::string("cannot parse ") + what + " value '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError(std::string(what) + " is empty");
  return out;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  return os;
}

void write_sweep_svg(const fs::path& path, const std::vector<SweepRow>& rows) {
  const double w = 480, h = 320, m = 40;
  double lo = 1.0, hi = 0.0;
  for (const auto& r : rows) {
    lo = std::min(lo, r.mean_val_accuracy);
    hi = std::max(hi, r.mean_val_accuracy);
  }
  if (hi - lo < 1e-3) {
    lo -= 0.01;
    hi += 0.01;
  }
  auto px = [&](double t) { return m + t * (w - 2 * m); };
  auto py = [&](double a) { return h - m - (a - lo) / (hi - lo) * (h - 2 * m); };
  std::ofstream os(path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << m << "\" y1=\"" << h - m << "\" x2=\"" << w - m << "\" y2=\"" << h - m << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << m << "\" y1=\"" << m << "\" x2=\"" << m << "\" y2=\"" << h - m << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"" << h - 8 << "\" text-anchor=\"middle\" font-size=\"12\">t</text>\n";
  os << "<text x=\"4\" y=\"" << m - 10 << "\" font-size=\"12\">val accuracy " << lo << " .. " << hi << "</text>\n";
  os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (const auto& r : rows) os << px(r.t) << ',' << py(r.mean_val_accuracy) << ' ';
  os << "\"/>\n</svg>\n";
}

struct DataFlags {
  std::string data_dir = default_data_dir();
  std::size_t train_count = 10000;
  std::size_t val_count = 2000;
  std::uint64_t data_seed = 0;

  void add(CLI::App* cmd) {
    cmd->add_option("--data-dir", data_dir, "directory with the MNIST IDX files (default $AFFINE_FOLD_DATA)");
    cmd->add_option("--subset", train_count, "training samples drawn from the train split");
    cmd->add_option("--val-subset", val_count, "validation samples drawn from the t10k split");
    cmd->add_option("--data-seed", data_seed, "seed of the subset draws");
  }

  std::pair<Dataset, Dataset> load() const {
    const Dataset train = load_mnist(data_dir, "train");
    const Dataset val = load_mnist(data_dir, "t10k");
    return {subset(train, std::min(train_count, train.size()), data_seed),
            subset(val, std::min(val_count, val.size()), data_seed + 1)};
  }
};

int run(int argc, char** argv) {
  CLI::App app{"affold: collapse linear CNNs with weighted skips into affine maps"};
  app.require_subcommand(1);

  // build
  std::string preset_name;
  std::size_t layers = 34;
  std::uint64_t seed = 0;
  std::string out;
  double build_t = 0.5;
  auto* build = app.add_subcommand("build", "write a preset network");
  build->add_option("--preset", preset_name, "basic3 | basic6 | deep_linear | mnist_classifier")->required();
  build->add_option("--layers", layers, "depth of deep_linear");
  build->add_option("--seed", seed, "initialization seed");
  build->add_option("--t", build_t, "skip strength");
  build->add_option("--out", out, "model stem")->required();

  // train
  std::string model;
  std::size_t epochs = 10;
  std::string schedule;
  SGDConfig sgd;
  sgd.learning_rate = 0.05;
  std::string history;
  DataFlags data;
  auto* train = app.add_subcommand("train", "train under a skip-strength schedule");
  train->add_option("--model", model, "network stem")->required();
  data.add(train);
  train->add_option("--epochs", epochs, "epochs");
  train->add_option("--schedule", schedule, "comma-separated t per epoch (default 0.9,0.7,...,0)");
  train->add_option("--lr", sgd.learning_rate, "learning rate");
  train->add_option("--batch-size", sgd.batch_size, "minibatch size");
  train->add_option("--seed", sgd.rng_seed, "shuffle seed");
  train->add_option("--out", out, "trained model stem")->required();
  train->add_option("--history", history, "history CSV path (default <out>.history.csv)");

  // collapse
  auto* collapse = app.add_subcommand("collapse", "fold a linear network into one affine map");
  collapse->add_option("--model", model, "network stem")->required();
  collapse->add_option("--out", out, "affine model stem")->required();

  // excise
  auto* excise = app.add_subcommand("excise", "drop skip bookkeeping from a network whose skips are zero");
  excise->add_option("--model", model, "network stem")->required();
  excise->add_option("--out", out, "model stem")->required();

  // bench-predict
  std::vector<std::string> models;
  BenchOptions bench_opt;
  auto* bench = app.add_subcommand("bench-predict", "time single predictions; the first model is the baseline");
  bench->add_option("--model", models, "model stems")->required();
  bench->add_option("--reps", bench_opt.reps, "timed repetitions");
  bench->add_option("--warmup", bench_opt.warmup, "untimed warmup evaluations");
  bench->add_option("--seed", bench_opt.seed, "input seed");
  bench->add_option("--batch", bench_opt.batch, "predictions per timed sample");
  bench->add_option("--out", out, "CSV path (default stdout)");

  // sweep-t
  std::string grid = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1";
  std::size_t trials = 5;
  std::string svg;
  auto* sweep = app.add_subcommand("sweep-t", "validation accuracy against constant skip strength");
  sweep->add_option("--model", model, "network stem; parameters are redrawn per trial")->required();
  data.add(sweep);
  sweep->add_option("--grid", grid, "comma-separated t values");
  sweep->add_option("--trials", trials, "initializations per t");
  sweep->add_option("--epochs", epochs, "epochs per trial");
  sweep->add_option("--lr", sgd.learning_rate, "learning rate");
  sweep->add_option("--seed", sgd.rng_seed, "base seed");
  sweep->add_option("--out", out, "CSV path (default stdout)");
  sweep->add_option("--svg", svg, "optional line chart");

  // gradcheck
  std::size_t samples = 1;
  bool corrupt = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "compare backward against finite differences");
  gradcheck->add_option("--model", model, "network stem")->required();
  gradcheck->add_option("--seed", seed, "input seed");
  gradcheck->add_option("--samples", samples, "random inputs to check");
  gradcheck->add_flag("--corrupt-gradient", corrupt)->group("");

  // predict
  std::size_t limit = 0;
  auto* predict = app.add_subcommand("predict", "accuracy of a network or affine map on the t10k split");
  predict->add_option("--model", model, "model stem")->required();
  predict->add_option("--data-dir", data.data_dir, "MNIST directory");
  predict->add_option("--limit", limit, "first n samples only");

  // export-matrix
  std::size_t layer_index = 1;
  auto* export_matrix = app.add_subcommand("export-matrix", "write a layer's W*P operator as row col value triplets");
  export_matrix->add_option("--model", model, "network stem")->required();
  export_matrix->add_option("--layer", layer_index, "layer index, 1-based");
  export_matrix->add_option("--out", out, "output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*build) {
    Network net = preset(preset_name, layers, seed);
    net = set_uniform_skip(std::move(net), build_t);
    save_model(out, net);
    std::cout << "wrote " << out << ": " << net.depth() << " layers, " << parameter_count(net) << " parameters, "
              << net.topology.size() << " skips\n";
  } else if (*train) {
    const TSchedule sched = schedule.empty() ? decaying_schedule() : parse_list(schedule, "schedule");
    sgd.epochs = epochs;
    if (sched.size() != epochs) {
      throw ConfigError("schedule has " + std::to_string(sched.size()) + " values for " + std::to_string(epochs) + " epochs");
    }
    const auto [tr, val] = data.load();
    const TrainResult r = train_scheduled(load_network(model), tr, val, sgd, sched);
    save_model(out, r.net);
    const std::string hist = history.empty() ? out + ".history.csv" : history;
    auto os = open_out(hist);
    write_history_csv(os, r.history);
    for (const auto& e : r.history) {
      std::cout << "epoch " << e.epoch << " t=" << e.t << " loss=" << e.mean_train_loss << " val=" << e.val_accuracy << '\n';
    }
  } else if (*collapse) {
    const CollapseResult r = collapse_theorem1(load_network(model));
    save_model(out, r.map);
    std::cout << "collapsed " << r.source_layer_count << " layers into " << r.map.out_dim() << "x" << r.map.in_dim()
              << " affine map\nflops layered " << r.flop_count_layered << " collapsed " << r.flop_count_collapsed << '\n';
  } else if (*excise) {
    const Network net = load_network(model);
    const Network cut = excise_skips(net);
    save_model(out, cut);
    std::cout << "flops " << flops(net) << " -> " << flops(cut) << '\n';
  } else if (*bench) {
    std::vector<std::pair<std::string, Model>> loaded;
    for (const auto& m : models) loaded.emplace_back(fs::path(m).filename().string(), load_model(m));
    pin_to_single_core();
    const auto reports = bench_predict(loaded, bench_opt);
    if (out.empty()) {
      write_bench_csv(std::cout, reports);
    } else {
      auto os = open_out(out);
      write_bench_csv(os, reports);
    }
  } else if (*sweep) {
    const auto t_values = parse_list(grid, "grid");
    for (double t : t_values) {
      if (!(t >= 0.0 && t <= 1.0)) throw RangeError("grid value " + std::to_string(t) + " outside [0,1]");
    }
    sgd.epochs = epochs;
    const auto [tr, val] = data.load();
    const auto rows = sweep_t(load_network(model), tr, val, sgd, t_values, trials);
    if (out.empty()) {
      write_sweep_csv(std::cout, rows);
    } else {
      auto os = open_out(out);
      write_sweep_csv(os, rows);
    }
    if (!svg.empty()) {
      try {
        write_sweep_svg(svg, rows);
      } catch (const std::exception& e) {
        std::cerr << "warning: svg not written: " << e.what() << '\n';
      }
    }
  } else if (*gradcheck) {
    const Network net = load_network(model);
    const auto inputs = bench_inputs(net.input_shape.size(), samples, seed);
    double worst = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
      const std::size_t label = (seed + s) % net.num_classes;
      const ForwardResult fwd = forward_layered(net, inputs[s], true);
      auto g = backward(net, fwd, loss_softmax_ce(fwd.logits, label).dlogits);
      if (corrupt) g[0] += 1.0;
      const GradCheckReport rep = gradient_check(net, inputs[s], label, g);
      std::cout << "sample " << s << ": max relative error " << rep.max_relative_error << " at parameter "
                << rep.worst_parameter << " (analytic " << rep.analytic << ", numeric " << rep.numeric << "), "
                << rep.checked << " checked, " << rep.kink_skips << " skipped at ReLU kinks\n";
      worst = std::max(worst, rep.max_relative_error);
    }
    const bool ok = worst <= 1e-4;
    std::cout << (ok ? "PASS" : "FAIL") << " max relative error " << worst << '\n';
    return ok ? 0 : 1;
  } else if (*predict) {
    Dataset ds = load_mnist(data.data_dir, "t10k");
    if (limit > 0 && limit < ds.size()) {
      ds.images.resize(limit);
      ds.labels.resize(limit);
    }
    const Model m = load_model(model);
    const double acc = std::holds_alternative<Network>(m) ? accuracy(std::get<Network>(m), ds)
                                                          : accuracy(std::get<AffineMap>(m), ds);
    std::cout << "accuracy " << acc << " on " << ds.size() << " samples\n";
  } else if (*export_matrix) {
    const Network net = load_network(model);
    if (layer_index == 0 || layer_index > net.depth()) throw RangeError("layer index out of range");
    const SparseMatrix op = detail::layer_operator(net.layer(layer_index));
    if (out.empty()) {
      write_triplets(std::cout, op);
    } else {
      auto os = open_out(out);
      write_triplets(os, op);
    }
  }
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

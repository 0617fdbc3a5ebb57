#pragma once

#include "affold/errors.hpp"
#include "affold/forward.hpp"
#include "affold/linalg.hpp"
#include "affold/network.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace affold {

// ---------------------------------------------------------------------------
// IDX files (big-endian header: magic, item count, then dimension sizes)
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  if (offset + 4 > bytes.size()) throw TruncationError("IDX header ends after " + std::to_string(bytes.size()) + " bytes");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

} // namespace detail

struct IdxImages {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Vector> images; // row-major, pixel byte v -> v / 255
};

inline IdxImages load_idx_images(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = detail::read_be32(bytes, 0);
  if (magic != kIdxImagesMagic) throw FormatError("not an IDX image file (magic " + std::to_string(magic) + ")");
  const std::size_t count = detail::read_be32(bytes, 4);
  IdxImages out;
  out.rows = detail::read_be32(bytes, 8);
  out.cols = detail::read_be32(bytes, 12);
  const std::size_t pixels = out.rows * out.cols;
  if (bytes.size() - 16 < count * pixels) {
    throw TruncationError("IDX image payload has " + std::to_string(bytes.size() - 16) + " bytes, need " +
                          std::to_string(count * pixels));
  }
  out.images.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    Vector img(pixels);
    const std::uint8_t* src = bytes.data() + 16 + n * pixels;
    for (std::size_t p = 0; p < pixels; ++p) img[p] = static_cast<double>(src[p]) / 255.0;
    out.images.push_back(std::move(img));
  }
  return out;
}

inline std::vector<std::size_t> load_idx_labels(std::span<const std::uint8_t> bytes, std::size_t num_classes = 10) {
  const std::uint32_t magic = detail::read_be32(bytes, 0);
  if (magic != kIdxLabelsMagic) throw FormatError("not an IDX label file (magic " + std::to_string(magic) + ")");
  const std::size_t count = detail::read_be32(bytes, 4);
  if (bytes.size() - 8 < count) {
    throw TruncationError("IDX label payload has " + std::to_string(bytes.size() - 8) + " bytes, need " + std::to_string(count));
  }
  std::vector<std::size_t> labels(count);
  for (std::size_t n = 0; n < count; ++n) {
    labels[n] = bytes[8 + n];
    if (labels[n] >= num_classes) throw LabelError("label " + std::to_string(labels[n]) + " at item " + std::to_string(n));
  }
  return labels;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct Dataset {
  std::string name;
  std::vector<Vector> images;
  std::vector<std::size_t> labels;

  std::size_t size() const { return images.size(); }
};

/// Loads `<split>-images-idx3-ubyte` and `<split>-labels-idx1-ubyte` from `dir`;
/// split is "train" or "t10k".
inline Dataset load_mnist(const std::filesystem::path& dir, const std::string& split) {
  IdxImages imgs = load_idx_images(read_file_bytes(dir / (split + "-images-idx3-ubyte")));
  std::vector<std::size_t> labels = load_idx_labels(read_file_bytes(dir / (split + "-labels-idx1-ubyte")));
  if (imgs.images.size() != labels.size()) {
    throw FormatError("MNIST " + split + " has " + std::to_string(imgs.images.size()) + " images but " +
                      std::to_string(labels.size()) + " labels");
  }
  return {"mnist-" + split, std::move(imgs.images), std::move(labels)};
}

/// Seeded sample without replacement, in draw order.
inline Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  if (n > ds.size()) {
    throw RangeError("subset of " + std::to_string(n) + " from a dataset of " + std::to_string(ds.size()));
  }
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  Dataset out{ds.name + "-subset", {}, {}};
  out.images.reserve(n);
  out.labels.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t pick = k + static_cast<std::size_t>(rng() % (ds.size() - k));
    std::swap(idx[k], idx[pick]);
    out.images.push_back(ds.images[idx[k]]);
    out.labels.push_back(ds.labels[idx[k]]);
  }
  return out;
}

/// Inputs uniform in [0,1]^d, labelled by the argmax of map(x) plus Gaussian noise.
inline Dataset synthetic_affine_dataset(const AffineMap& map, std::size_t n, double noise_sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_sd > 0.0 ? noise_sd : 1.0);
  Dataset out{"synthetic-affine", {}, {}};
  out.images.reserve(n);
  out.labels.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    Vector x(map.in_dim());
    for (double& v : x) v = uniform01(rng);
    Vector y = apply_affine(map, x);
    if (noise_sd > 0.0) {
      for (double& v : y) v += noise(rng);
    }
    out.labels.push_back(predict_class(y));
    out.images.push_back(std::move(x));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model files: <stem>.manifest (JSON) + <stem>.blob (little-endian float64)
// ---------------------------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

using Model = std::variant<Network, AffineMap>;

namespace detail {

using nlohmann::json;

inline json shape_json(const TensorShape& s) { return json::array({s.channels, s.height, s.width}); }

inline TensorShape shape_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw FormatError("tensor shape must be [c,h,w]");
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>()};
}

inline std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

inline void write_blob(const std::filesystem::path& path, std::span<const double> values) {
  std::vector<std::uint8_t> bytes(values.size() * 8);
  for (std::size_t k = 0; k < values.size(); ++k) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(values[k]);
    for (int b = 0; b < 8; ++b) bytes[k * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<double> read_blob(const std::filesystem::path& path, std::size_t expected) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() != expected * 8) {
    throw FormatError("weight blob has " + std::to_string(bytes.size()) + " bytes, manifest declares " +
                      std::to_string(expected) + " float64 values");
  }
  std::vector<double> values(expected);
  for (std::size_t k = 0; k < expected; ++k) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{bytes[k * 8 + b]} << (8 * b);
    values[k] = std::bit_cast<double>(bits);
  }
  return values;
}

inline json network_manifest(const Network& net) {
  json layers = json::array();
  for (const auto& l : net.layers) {
    layers.push_back({{"kind", to_string(l.kind)},
                      {"in_shape", shape_json(l.in_shape)},
                      {"out_shape", shape_json(l.out_shape)},
                      {"kernel", {l.kernel_h, l.kernel_w}},
                      {"stride", {l.stride_h, l.stride_w}},
                      {"pad", {l.pad.top, l.pad.bottom, l.pad.left, l.pad.right}},
                      {"activation", to_string(l.activation)},
                      {"weight_count", l.weights.size()},
                      {"bias_count", l.bias.size()}});
  }
  json skips = json::array();
  for (std::size_t i = 1; i <= net.depth(); ++i) {
    for (const auto& term : net.terms(i)) skips.push_back({{"from", term.source}, {"to", i}, {"t", term.weight}});
  }
  json topology = json::array();
  for (const auto& p : net.topology) topology.push_back({{"from", p.from}, {"to", p.to}});
  return {{"format_version", kModelFormatVersion},
          {"kind", "network"},
          {"input_shape", shape_json(net.input_shape)},
          {"num_classes", net.num_classes},
          {"layers", layers},
          {"skips", skips},
          {"topology", topology},
          {"resample", "nearest"},
          {"weight_blob", {{"dtype", "float64-le"},
                           {"count", parameter_count(net)},
                           {"order", "layers ascending; conv [out][in][kh][kw] then bias; fully_connected row-major then bias"}}}};
}

inline Network network_from(const json& m, std::span<const double> blob) {
  Network net;
  net.input_shape = shape_from(m.at("input_shape"));
  net.num_classes = m.at("num_classes").get<std::size_t>();
  for (const auto& jl : m.at("layers")) {
    LayerNode l;
    const auto kind = jl.at("kind").get<std::string>();
    if (kind == "conv") l.kind = LayerKind::conv;
    else if (kind == "fully_connected") l.kind = LayerKind::fully_connected;
    else throw VersionError("unknown layer kind '" + kind + "'");
    const auto act = jl.at("activation").get<std::string>();
    if (act == "none") l.activation = Activation::none;
    else if (act == "relu") l.activation = Activation::relu;
    else throw VersionError("unknown activation '" + act + "'");
    l.in_shape = shape_from(jl.at("in_shape"));
    l.out_shape = shape_from(jl.at("out_shape"));
    l.kernel_h = jl.at("kernel")[0].get<std::size_t>();
    l.kernel_w = jl.at("kernel")[1].get<std::size_t>();
    l.stride_h = jl.at("stride")[0].get<std::size_t>();
    l.stride_w = jl.at("stride")[1].get<std::size_t>();
    const auto& p = jl.at("pad");
    l.pad = {p[0].get<std::size_t>(), p[1].get<std::size_t>(), p[2].get<std::size_t>(), p[3].get<std::size_t>()};
    l.weights.assign(jl.at("weight_count").get<std::size_t>(), 0.0);
    l.bias.assign(jl.at("bias_count").get<std::size_t>(), 0.0);
    net.layers.push_back(std::move(l));
  }
  for (const auto& jp : m.at("topology")) net.topology.push_back({jp.at("from").get<std::size_t>(), jp.at("to").get<std::size_t>()});
  net.mixing.assign(net.depth(), {});
  for (const auto& js : m.at("skips")) {
    const auto from = js.at("from").get<std::size_t>();
    const auto to = js.at("to").get<std::size_t>();
    if (to == 0 || to > net.depth() || from >= to) throw FormatError("skip entry out of range");
    net.mixing[to - 1].push_back({from, js.at("t").get<double>(), SparseMatrix{}});
  }
  for (std::size_t i = 1; i <= net.depth(); ++i) {
    auto& row = net.mixing[i - 1];
    std::sort(row.begin(), row.end(), [](const SkipTerm& a, const SkipTerm& b) { return a.source < b.source; });
    for (auto& term : row) term.resample = auto_resampler(net, term.source, i);
  }
  net = with_parameters(std::move(net), blob);
  const auto violations = validate(net);
  if (!violations.empty()) throw FormatError("loaded network is invalid: " + violations.front().message);
  return net;
}

} // namespace detail

/// Writes `<stem>.manifest` and `<stem>.blob`.
inline void save_model(const std::filesystem::path& stem, const Model& model) {
  nlohmann::json manifest;
  std::vector<double> blob;
  if (const auto* net = std::get_if<Network>(&model)) {
    manifest = detail::network_manifest(*net);
    blob = parameters(*net);
  } else {
    const auto& map = std::get<AffineMap>(model);
    manifest = {{"format_version", kModelFormatVersion},
                {"kind", "affine"},
                {"rows", map.out_dim()},
                {"cols", map.in_dim()},
                {"weight_blob", {{"dtype", "float64-le"}, {"count", map.out_dim() * map.in_dim() + map.out_dim()},
                                 {"order", "weight row-major then bias"}}}};
    blob.assign(map.weight.data().begin(), map.weight.data().end());
    blob.insert(blob.end(), map.bias.begin(), map.bias.end());
  }
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  std::ofstream out(detail::with_suffix(stem, ".manifest"));
  if (!out) throw IoError("cannot write " + detail::with_suffix(stem, ".manifest").string());
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("failed writing manifest for " + stem.string());
  detail::write_blob(detail::with_suffix(stem, ".blob"), blob);
}

inline Model load_model(const std::filesystem::path& stem) {
  const auto path = detail::with_suffix(stem, ".manifest");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  try {
    if (!m.contains("format_version") || m.at("format_version").get<int>() != kModelFormatVersion) {
      throw VersionError("unsupported model format version in " + path.string());
    }
    const auto kind = m.at("kind").get<std::string>();
    const std::size_t count = m.at("weight_blob").at("count").get<std::size_t>();
    const auto blob = detail::read_blob(detail::with_suffix(stem, ".blob"), count);
    if (kind == "network") return detail::network_from(m, blob);
    if (kind == "affine") {
      const auto rows = m.at("rows").get<std::size_t>();
      const auto cols = m.at("cols").get<std::size_t>();
      if (count != rows * cols + rows) throw FormatError("affine blob count does not match rows/cols");
      std::vector<double> w(blob.begin(), blob.begin() + static_cast<std::ptrdiff_t>(rows * cols));
      Vector b(blob.begin() + static_cast<std::ptrdiff_t>(rows * cols), blob.end());
      return AffineMap(DenseMatrix(rows, cols, std::move(w)), std::move(b));
    }
    throw VersionError("unknown model kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline Network load_network(const std::filesystem::path& stem) {
  Model m = load_model(stem);
  if (auto* net = std::get_if<Network>(&m)) return std::move(*net);
  throw FormatError(stem.string() + " holds an affine map, not a network");
}

inline AffineMap load_affine(const std::filesystem::path& stem) {
  Model m = load_model(stem);
  if (auto* map = std::get_if<AffineMap>(&m)) return std::move(*map);
  throw FormatError(stem.string() + " holds a network, not an affine map");
}

} // namespace affold

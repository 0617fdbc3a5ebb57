#include "affold/collapse.hpp"
#include "affold/data_io.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace affold;
using namespace affold::testing;

namespace fs = std::filesystem;

namespace {

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::vector<std::uint8_t> idx_images(std::uint32_t count, std::uint32_t rows, std::uint32_t cols,
                                     const std::vector<std::uint8_t>& pixels) {
  std::vector<std::uint8_t> out;
  put_be32(out, kIdxImagesMagic);
  put_be32(out, count);
  put_be32(out, rows);
  put_be32(out, cols);
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

std::vector<std::uint8_t> idx_labels(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> out;
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

class TempDir : public ::testing::Test {
protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("affold_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

Dataset labelled(std::size_t n, std::size_t classes) {
  Dataset ds{"toy", {}, {}};
  for (std::size_t k = 0; k < n; ++k) {
    ds.images.push_back({static_cast<double>(k)});
    ds.labels.push_back(k % classes);
  }
  return ds;
}

} // namespace

TEST(Idx, DecodesImagesAndLabels) {
  const auto img = load_idx_images(idx_images(2, 2, 3, {0, 255, 51, 1, 2, 3, 10, 20, 30, 40, 50, 60}));
  EXPECT_EQ(img.rows, 2u);
  EXPECT_EQ(img.cols, 3u);
  ASSERT_EQ(img.images.size(), 2u);
  EXPECT_EQ(img.images[0], (Vector{0.0, 1.0, 0.2, 1.0 / 255, 2.0 / 255, 3.0 / 255}));
  EXPECT_EQ(img.images[1][5], 60.0 / 255);
  EXPECT_EQ(load_idx_labels(idx_labels({3, 0, 9})), (std::vector<std::size_t>{3, 0, 9}));
}

TEST(Idx, EmptyFilesAreValid) {
  EXPECT_TRUE(load_idx_images(idx_images(0, 28, 28, {})).images.empty());
  EXPECT_TRUE(load_idx_labels(idx_labels({})).empty());
}

TEST(Idx, RejectsMalformedInput) {
  auto bad_magic = idx_images(1, 1, 1, {7});
  bad_magic[3] = 0x01;
  EXPECT_THROW(load_idx_images(bad_magic), FormatError);
  EXPECT_THROW(load_idx_labels(idx_images(1, 1, 1, {7})), FormatError);
  EXPECT_THROW(load_idx_images(idx_images(2, 2, 2, {1, 2, 3, 4, 5})), TruncationError);
  EXPECT_THROW(load_idx_images(std::vector<std::uint8_t>{0, 0, 8}), TruncationError);
  auto short_labels = idx_labels({1, 2, 3});
  short_labels.pop_back();
  EXPECT_THROW(load_idx_labels(short_labels), TruncationError);
  EXPECT_THROW(load_idx_labels(idx_labels({1, 10})), LabelError);
}

TEST_F(TempDir, LoadsMnistLayoutFromDisk) {
  auto write = [&](const std::string& name, const std::vector<std::uint8_t>& bytes) {
    std::ofstream(dir_ / name, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                       static_cast<std::streamsize>(bytes.size()));
  };
  write("t10k-images-idx3-ubyte", idx_images(2, 1, 2, {0, 255, 255, 0}));
  write("t10k-labels-idx1-ubyte", idx_labels({4, 2}));
  const Dataset ds = load_mnist(dir_, "t10k");
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.labels, (std::vector<std::size_t>{4, 2}));
  EXPECT_EQ(ds.images[0], (Vector{0.0, 1.0}));
  write("t10k-labels-idx1-ubyte", idx_labels({4}));
  EXPECT_THROW(load_mnist(dir_, "t10k"), FormatError);
  EXPECT_THROW(load_mnist(dir_, "train"), IoError);
}

TEST(Subset, DeterministicWithoutReplacement) {
  const Dataset ds = labelled(1000, 10);
  const Dataset a = subset(ds, 200, 5);
  const Dataset b = subset(ds, 200, 5);
  EXPECT_EQ(a.images, b.images);
  EXPECT_NE(subset(ds, 200, 6).images, a.images);
  std::set<double> seen;
  for (const auto& img : a.images) seen.insert(img[0]);
  EXPECT_EQ(seen.size(), 200u);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a.labels[k], static_cast<std::size_t>(a.images[k][0]) % 10);
  EXPECT_EQ(subset(ds, 0, 1).size(), 0u);
  EXPECT_THROW(subset(ds, 1001, 1), RangeError);
}

TEST(SubsetProperties, ClassHistogramFollowsSource) {
  const Dataset ds = labelled(10000, 10);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Dataset s = subset(ds, 2000, seed);
    std::vector<std::size_t> counts(10, 0);
    for (auto l : s.labels) ++counts[l];
    for (std::size_t c = 0; c < 10; ++c) {
      ASSERT_GE(counts[c], 160u) << "seed " << seed << " class " << c;
      ASSERT_LE(counts[c], 240u) << "seed " << seed << " class " << c;
    }
  }
}

TEST(Synthetic, LabelsAreArgmaxOfMap) {
  const AffineMap map(DenseMatrix(3, 2, {1, 0, 0, 1, -1, -1}), Vector{0, 0, 1.5});
  const Dataset ds = synthetic_affine_dataset(map, 200, 0.0, 3);
  ASSERT_EQ(ds.size(), 200u);
  for (std::size_t k = 0; k < ds.size(); ++k) {
    const auto& x = ds.images[k];
    for (double v : x) {
      ASSERT_GE(v, 0.0);
      ASSERT_LT(v, 1.0);
    }
    const double s[3] = {x[0], x[1], 1.5 - x[0] - x[1]};
    const std::size_t best = s[1] > s[0] ? (s[2] > s[1] ? 2 : 1) : (s[2] > s[0] ? 2 : 0);
    ASSERT_EQ(ds.labels[k], best);
  }
  EXPECT_EQ(synthetic_affine_dataset(map, 20, 0.3, 1).labels, synthetic_affine_dataset(map, 20, 0.3, 1).labels);
}

TEST_F(TempDir, NetworkRoundTripIsBitExact) {
  std::vector<Network> nets{preset("basic3", 0, 1), preset("basic6", 0, 2), preset("mnist_classifier", 0, 3),
                            set_uniform_skip(preset("deep_linear", 8, 4), 0.37)};
  for (std::size_t k = 0; k < nets.size(); ++k) {
    const fs::path stem = dir_ / ("net" + std::to_string(k));
    save_model(stem, nets[k]);
    EXPECT_TRUE(fs::exists(dir_ / ("net" + std::to_string(k) + ".manifest")));
    const Network back = load_network(stem);
    EXPECT_EQ(parameters(back), parameters(nets[k]));
    EXPECT_EQ(back.topology, nets[k].topology);
    for (std::size_t i = 1; i <= back.depth(); ++i) {
      ASSERT_EQ(back.terms(i).size(), nets[k].terms(i).size());
      for (std::size_t j = 0; j < back.terms(i).size(); ++j) {
        EXPECT_EQ(back.terms(i)[j].weight, nets[k].terms(i)[j].weight);
        EXPECT_EQ(back.terms(i)[j].source, nets[k].terms(i)[j].source);
      }
      EXPECT_EQ(back.layer(i).activation, nets[k].layer(i).activation);
      EXPECT_EQ(back.layer(i).weight_matrix, nets[k].layer(i).weight_matrix);
    }
    const auto x = random_vector(784, k, 0.0, 1.0);
    EXPECT_EQ(forward_layered(back, x).logits, forward_layered(nets[k], x).logits);
  }
}

TEST_F(TempDir, AffineRoundTripIsBitExact) {
  const AffineMap map = collapse_theorem1(preset("basic3", 0, 5)).map;
  save_model(dir_ / "sub" / "map", map);
  EXPECT_EQ(load_affine(dir_ / "sub" / "map"), map);
  EXPECT_THROW(load_network(dir_ / "sub" / "map"), FormatError);
  EXPECT_EQ(fs::file_size(dir_ / "sub" / "map.blob"), (7840u + 10u) * 8u);
}

TEST_F(TempDir, RejectsUnknownKindVersionAndBadBlob) {
  const fs::path stem = dir_ / "m";
  save_model(stem, AffineMap(DenseMatrix(2, 2, {1, 2, 3, 4}), Vector{5, 6}));
  const fs::path manifest = dir_ / "m.manifest";
  std::string text;
  {
    std::ifstream in(manifest);
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto rewrite = [&](const std::string& from, const std::string& to) {
    std::string t = text;
    t.replace(t.find(from), from.size(), to);
    std::ofstream(manifest) << t;
  };
  rewrite("\"affine\"", "\"quantized\"");
  EXPECT_THROW(load_model(stem), VersionError);
  rewrite("\"format_version\": 1", "\"format_version\": 2");
  EXPECT_THROW(load_model(stem), VersionError);
  std::ofstream(manifest) << text;
  fs::resize_file(dir_ / "m.blob", 40);
  EXPECT_THROW(load_model(stem), FormatError);
  std::ofstream(manifest) << "{ not json";
  EXPECT_THROW(load_model(stem), FormatError);
  EXPECT_THROW(load_model(dir_ / "missing"), IoError);
}

#include "affold/collapse.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace affold;
using namespace affold::testing;

namespace {

Dense dense_of(const DenseMatrix& m) {
  Dense d(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) d[r][c] = m(r, c);
  }
  return d;
}

/// Two fully-connected layers 4 -> 3 -> 2 on a 1x2x2 input with explicit parameters.
Network two_fc(const std::vector<double>& w1, const std::vector<double>& b1, const std::vector<double>& w2,
               const std::vector<double>& b2) {
  Network net;
  net.input_shape = {1, 2, 2};
  net.num_classes = 2;
  // The first layer is a 2x2 conv with 3 output channels: an FC map in conv form.
  net.layers.push_back(make_conv_layer(net.input_shape, 3, 2, 1, {}, Activation::none));
  net.layers[0].weights = w1;
  net.layers[0].bias = b1;
  net.layers.push_back(make_fc_layer(net.layers[0].out_shape, 2));
  net.layers[1].weights = w2;
  net.layers[1].bias = b2;
  for (auto& l : net.layers) l.rebuild();
  return set_uniform_skip(std::move(net), 0.0);
}

double max_abs(const DenseMatrix& m) { return affold::max_abs(m.data()); }

} // namespace

TEST(Collapse, SingleIdentityLayer) {
  Network net;
  net.input_shape = {1, 2, 2};
  net.num_classes = 4;
  net.layers.push_back(make_fc_layer(net.input_shape, 4));
  net.layers[0].weights = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  net.layers[0].rebuild();
  net = set_uniform_skip(std::move(net), 0.0);
  const CollapseResult r = collapse_theorem1(net);
  EXPECT_EQ(r.map.weight, DenseMatrix::identity(4));
  EXPECT_EQ(r.map.bias, Vector(4, 0.0));
  EXPECT_EQ(r.source_layer_count, 1u);
  EXPECT_EQ(collapse_closed_form(net).weight, DenseMatrix::identity(4));
}

TEST(Collapse, TwoLayersComposeAsProductAndBias) {
  const std::vector<double> w1{1, 2, 0, -1, 0, 1, 1, 0, 2, 0, 0, 3};
  const std::vector<double> b1{1, -2, 0.5};
  const std::vector<double> w2{1, 0, 2, -1, 1, 0};
  const std::vector<double> b2{0.25, -4};
  const Network net = two_fc(w1, b1, w2, b2);
  // Expected W = W2 W1 and B = W2 B1 + B2, computed by hand.
  const Dense W1{{1, 2, 0, -1}, {0, 1, 1, 0}, {2, 0, 0, 3}};
  const Dense W2{{1, 0, 2}, {-1, 1, 0}};
  const Dense W = naive_matmul(W2, W1);
  Vector B = naive_matvec(W2, b1);
  B[0] += b2[0];
  B[1] += b2[1];
  EXPECT_EQ(dense_of(collapse_theorem1(net).map.weight), W);
  EXPECT_EQ(collapse_theorem1(net).map.bias, B);
  EXPECT_EQ(dense_of(collapse_closed_form(net).weight), W);
  EXPECT_EQ(collapse_closed_form(net).bias, B);
}

TEST(Collapse, DeepLinearMatchesLayeredEvaluation) {
  const Network net = preset("deep_linear", 5, 3);
  const AffineMap map = collapse_theorem1(net).map;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = random_vector(784, seed, 0.0, 1.0);
    const auto layered = forward_layered(net, x).logits;
    ASSERT_LE(rel_inf_error(layered, forward_collapsed(map, x)), 1e-9) << "seed " << seed;
  }
}

TEST(Collapse, ClosedFormAgreesWithTheorem1WhenFeedForward) {
  for (const char* name : {"basic3", "basic6"}) {
    const Network net = set_uniform_skip(preset(name, 0, 4), 0.0);
    const AffineMap a = collapse_closed_form(net);
    const AffineMap b = collapse_theorem1(net).map;
    double diff = 0.0;
    for (std::size_t k = 0; k < a.weight.data().size(); ++k) diff = std::max(diff, std::abs(a.weight.data()[k] - b.weight.data()[k]));
    EXPECT_LE(diff, 1e-12 * max_abs(b.weight)) << name;
    EXPECT_LE(rel_inf_error(b.bias, a.bias), 1e-12) << name;
  }
}

TEST(Collapse, SkipsAtFullStrengthBypassLayers) {
  // At t = 1 layer 3 of basic3 reads only layer 1, so layer 2 drops out of the map.
  const Network net = set_uniform_skip(preset("basic3", 0, 5), 1.0);
  const AffineMap map = collapse_theorem1(net).map;
  Network perturbed = net;
  for (double& w : perturbed.layers[1].weights) w *= -3.0;
  perturbed.layers[1].rebuild();
  EXPECT_EQ(collapse_theorem1(perturbed).map, map);
}

TEST(Collapse, LatentMapDropsClassifier) {
  const Network net = preset("basic3", 0, 6);
  const AffineMap latent = collapse_latent(net);
  EXPECT_EQ(latent.out_dim(), 484u);
  EXPECT_EQ(latent.in_dim(), 784u);
  const auto x = random_vector(784, 1, 0.0, 1.0);
  const ForwardResult r = forward_layered(net, x, true);
  EXPECT_LE(rel_inf_error(r.trace->outputs[3], apply_affine(latent, x)), 1e-12);
  const Network one = build_network({1, 2, 2}, 2, {}, {}, 0.0, 0);
  EXPECT_THROW(collapse_latent(one), ShapeError);
}

TEST(Collapse, RejectsNonlinearInvalidAndSkippedInputs) {
  EXPECT_THROW(collapse_theorem1(preset("mnist_classifier")), CannotCollapseNonlinear);
  EXPECT_THROW(collapse_closed_form(preset("mnist_classifier")), CannotCollapseNonlinear);
  EXPECT_THROW(collapse_closed_form(preset("basic3")), NotFeedForward);
  Network bad = preset("basic3");
  bad.mixing[2][0].weight = 0.7;
  EXPECT_THROW(collapse_theorem1(bad), ValidationError);
}

TEST(Flops, WorkedExamples) {
  EXPECT_EQ(flops(AffineMap(DenseMatrix(10, 784), Vector(10))), 7850u);
  Network id;
  id.input_shape = {1, 2, 2};
  id.num_classes = 4;
  id.layers.push_back(make_fc_layer(id.input_shape, 4));
  id.layers[0].weights = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  id.layers[0].rebuild();
  id = set_uniform_skip(std::move(id), 0.0);
  EXPECT_EQ(flops(id), 8u); // four weight nonzeros and four bias adds

  const Network deep = preset("deep_linear", 10, 1);
  const CollapseResult r = collapse_theorem1(deep);
  EXPECT_EQ(r.flop_count_layered, flops(deep));
  EXPECT_EQ(r.flop_count_collapsed, 7850u);
  EXPECT_GT(r.flop_count_layered, r.flop_count_collapsed);
}

TEST(Flops, CountsMixingOnlyWhereItHappens) {
  // basic3 at t = 0.5: layers 1, 2 and 4 pass through; layer 3 mixes a
  // resampled 26x26 map into its 24x24 input.
  const Network net = preset("basic3");
  std::size_t expected = 0;
  const std::size_t conv_nnz[] = {26 * 26 * 9, 24 * 24 * 9, 22 * 22 * 9};
  const std::size_t conv_out[] = {26 * 26, 24 * 24, 22 * 22};
  for (int k = 0; k < 3; ++k) expected += conv_nnz[k] + conv_out[k];
  expected += 576 + 576 + 576; // resampler nonzeros plus two scaled adds
  expected += 4840 + 10;
  EXPECT_EQ(flops(net), expected);
}

TEST(CollapseProperties, EquivalenceAcrossSkipStrengths) {
  for (const char* name : {"basic3", "basic6"}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const double t = 0.2 * static_cast<double>(seed) + 0.1;
      const Network net = set_uniform_skip(preset(name, 0, seed), t);
      const AffineMap map = collapse_theorem1(net).map;
      for (std::uint64_t k = 0; k < 5; ++k) {
        const auto x = random_vector(784, 50 + k, 0.0, 1.0);
        const auto layered = forward_layered(net, x).logits;
        ASSERT_LE(rel_inf_error(layered, forward_collapsed(map, x)), 1e-9) << name << " t=" << t;
      }
    }
  }
}

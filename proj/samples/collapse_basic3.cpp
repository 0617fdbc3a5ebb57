// Builds the basic3 preset, folds it into one affine map and compares the two
// evaluations on a random input.

#include "affold/affold.hpp"

#include <iostream>
#include <random>

int main() {
  using namespace affold;

  const Network net = preset("basic3", 0, 1);
  const CollapseResult folded = collapse_theorem1(net);

  std::mt19937_64 rng(7);
  Vector x(net.input_shape.size());
  for (double& v : x) v = uniform01(rng);

  const Vector layered = forward_layered(net, x).logits;
  const Vector collapsed = forward_collapsed(folded.map, x);

  double diff = 0.0;
  for (std::size_t k = 0; k < layered.size(); ++k) diff = std::max(diff, std::abs(layered[k] - collapsed[k]));

  std::cout << "layers: " << folded.source_layer_count << "\n"
            << "flops layered: " << folded.flop_count_layered << ", collapsed: " << folded.flop_count_collapsed << "\n"
            << "class layered: " << predict_class(layered) << ", collapsed: " << predict_class(collapsed) << "\n"
            << "max |difference|: " << diff << "\n";
}

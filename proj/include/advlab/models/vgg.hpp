#pragma once

#include <string>

#include "advlab/models/init.hpp"
#include "advlab/models/resnet.hpp"

namespace advlab::vgg {

// Blocks of (conv3x3-relu) x convs_per_block followed by 2x2 max pooling,
// then flatten -> dense -> relu -> dense.

template <typename T>
void init(const ClassifierSpec& s, std::uint64_t seed, ParameterSet<T>& p) {
  std::size_t in = s.channels;
  for (std::size_t b = 0; b < s.widths.size(); ++b) {
    for (std::size_t c = 0; c < s.convs_per_block; ++c) {
      resnet::add_conv(p, seed, "features." + std::to_string(b) + "." + std::to_string(c), in, s.widths[b], 3);
      in = s.widths[b];
    }
  }
  const std::size_t side = s.resolution >> s.widths.size();
  const std::size_t flat = in * side * side;
  p.add("fc1.weight", init::truncated_normal<T>({flat, s.dense_width}, seed, "fc1.weight"));
  p.add("fc1.bias", init::constant<T>({s.dense_width}, T(0)));
  p.add("fc2.weight", init::truncated_normal<T>({s.dense_width, s.classes}, seed, "fc2.weight"));
  p.add("fc2.bias", init::constant<T>({s.classes}, T(0)));
}

template <typename T>
Tensor<T> forward(const ClassifierSpec& s, const ParameterSet<T>& p, const Tensor<T>& x) {
  auto h = x;
  for (std::size_t b = 0; b < s.widths.size(); ++b) {
    for (std::size_t c = 0; c < s.convs_per_block; ++c)
      h = relu(resnet::conv(p, "features." + std::to_string(b) + "." + std::to_string(c), h, 1, 1));
    h = max_pool2d(h, 2, 2);
  }
  const std::size_t n = h.dim(0);
  h = reshape(h, Shape{n, h.size() / n});
  h = relu(linear(h, p("fc1.weight"), p("fc1.bias")));
  return linear(h, p("fc2.weight"), p("fc2.bias"));
}

}  // namespace advlab::vgg

#pragma once

#include <string>

#include "advlab/models/init.hpp"
#include "advlab/models/parameters.hpp"
#include "advlab/models/spec.hpp"
#include "advlab/tensor/ops.hpp"

namespace advlab::resnet {

// Stem conv, then stages of basic residual blocks (conv3x3-relu-conv3x3 plus
// identity or 1x1 projection shortcut). The first block of every stage after
// the first downsamples by 2. Global average pool, linear head. No batch norm.

inline std::size_t stride_for(std::size_t stage, std::size_t block) { return (stage > 0 && block == 0) ? 2 : 1; }

template <typename T>
void add_conv(ParameterSet<T>& p, std::uint64_t seed, const std::string& name, std::size_t in, std::size_t out,
              std::size_t k) {
  const std::size_t fan_in = in * k * k;
  p.add(name + ".weight", init::kaiming_uniform<T>({out, in, k, k}, seed, name + ".weight", fan_in));
  p.add(name + ".bias", init::kaiming_uniform<T>({out}, seed, name + ".bias", fan_in));
}

template <typename T>
Tensor<T> conv(const ParameterSet<T>& p, const std::string& name, const Tensor<T>& x, std::size_t stride,
               std::size_t pad) {
  return add_channel_bias(conv2d(x, p(name + ".weight"), stride, pad), p(name + ".bias"));
}

template <typename T>
void init(const ClassifierSpec& s, std::uint64_t seed, ParameterSet<T>& p) {
  add_conv(p, seed, "stem", s.channels, s.widths[0], 3);
  std::size_t in = s.widths[0];
  for (std::size_t st = 0; st < s.widths.size(); ++st) {
    const std::size_t w = s.widths[st];
    for (std::size_t b = 0; b < s.blocks_per_stage; ++b) {
      const std::string pre = "stages." + std::to_string(st) + "." + std::to_string(b) + ".";
      add_conv(p, seed, pre + "conv1", in, w, 3);
      add_conv(p, seed, pre + "conv2", w, w, 3);
      if (stride_for(st, b) != 1 || in != w) add_conv(p, seed, pre + "shortcut", in, w, 1);
      in = w;
    }
  }
  p.add("fc.weight", init::truncated_normal<T>({in, s.classes}, seed, "fc.weight"));
  p.add("fc.bias", init::constant<T>({s.classes}, T(0)));
}

template <typename T>
Tensor<T> forward(const ClassifierSpec& s, const ParameterSet<T>& p, const Tensor<T>& x) {
  auto h = relu(conv(p, "stem", x, 1, 1));
  for (std::size_t st = 0; st < s.widths.size(); ++st) {
    for (std::size_t b = 0; b < s.blocks_per_stage; ++b) {
      const std::string pre = "stages." + std::to_string(st) + "." + std::to_string(b) + ".";
      const std::size_t stride = stride_for(st, b);
      auto r = relu(conv(p, pre + "conv1", h, stride, 1));
      r = conv(p, pre + "conv2", r, 1, 1);
      auto shortcut = p.contains(pre + "shortcut.weight") ? conv(p, pre + "shortcut", h, stride, 0) : h;
      h = relu(add(r, shortcut));
    }
  }
  auto pooled = mean(mean(h, 3), 2);
  return linear(pooled, p("fc.weight"), p("fc.bias"));
}

}  // namespace advlab::resnet

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "advlab/models/init.hpp"
#include "advlab/models/parameters.hpp"
#include "advlab/models/spec.hpp"
#include "advlab/tensor/ops.hpp"

namespace advlab::vit {

template <typename T>
void init(const ClassifierSpec& s, std::uint64_t seed, ParameterSet<T>& p) {
  const std::size_t d = s.embed_dim, patch_dim = s.channels * s.patch_size * s.patch_size;
  const std::size_t hidden = d * s.mlp_ratio;
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    p.add(name + ".weight", init::truncated_normal<T>({in, out}, seed, name + ".weight"));
    p.add(name + ".bias", init::constant<T>({out}, T(0)));
  };
  auto norm = [&](const std::string& name) {
    p.add(name + ".gain", init::constant<T>({d}, T(1)));
    p.add(name + ".bias", init::constant<T>({d}, T(0)));
  };
  linear("patch_embed", patch_dim, d);
  p.add("cls_token", init::truncated_normal<T>({1, d}, seed, "cls_token"));
  p.add("pos_embed", init::truncated_normal<T>({s.sequence_length(), d}, seed, "pos_embed"));
  for (std::size_t b = 0; b < s.depth; ++b) {
    const std::string pre = "blocks." + std::to_string(b) + ".";
    norm(pre + "ln1");
    linear(pre + "attn.qkv", d, 3 * d);
    linear(pre + "attn.proj", d, d);
    norm(pre + "ln2");
    linear(pre + "mlp.fc1", d, hidden);
    linear(pre + "mlp.fc2", hidden, d);
  }
  norm("norm");
  linear("head", d, s.classes);
}

/// Images [N x C x H x W] -> patch rows [N x (H/P)(W/P) x C*P*P], patches in
/// raster order, each flattened channel-major.
template <typename T>
Tensor<T> patchify(const Tensor<T>& x, std::size_t patch) {
  const std::size_t n = x.dim(0), c = x.dim(1), gh = x.dim(2) / patch, gw = x.dim(3) / patch;
  auto y = reshape(x, Shape{n, c, gh, patch, gw, patch});
  y = permute(y, {0, 2, 4, 1, 3, 5});
  return reshape(y, Shape{n, gh * gw, c * patch * patch});
}

/// Multi-head self-attention over x [N x T x D] with fused qkv projection
/// (weight [D x 3D], columns ordered q | k | v, heads contiguous in each).
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const Tensor<T>& qkv_w, const Tensor<T>& qkv_b,
                               const Tensor<T>& proj_w, const Tensor<T>& proj_b, std::size_t heads) {
  const std::size_t n = x.dim(0), t = x.dim(1), d = x.dim(2), dh = d / heads;
  auto qkv = linear(x, qkv_w, qkv_b);
  qkv = permute(reshape(qkv, Shape{n, t, 3, heads, dh}), {2, 0, 3, 1, 4});
  auto q = reshape(select(qkv, 0, 0), Shape{n * heads, t, dh});
  auto k = reshape(select(qkv, 0, 1), Shape{n * heads, t, dh});
  auto v = reshape(select(qkv, 0, 2), Shape{n * heads, t, dh});
  auto scores = scale(bmm(q, transpose(k, 1, 2)), T(1) / std::sqrt(static_cast<T>(dh)));
  auto out = bmm(softmax(scores, -1), v);
  out = reshape(permute(reshape(out, Shape{n, heads, t, dh}), {0, 2, 1, 3}), Shape{n, t, d});
  return linear(out, proj_w, proj_b);
}

/// Normalized images -> logits. Pre-norm transformer blocks; the class
/// token's final state feeds the head.
template <typename T>
Tensor<T> forward(const ClassifierSpec& s, const ParameterSet<T>& p, const Tensor<T>& x) {
  const std::size_t n = x.dim(0), d = s.embed_dim;
  auto h = linear(patchify(x, s.patch_size), p("patch_embed.weight"), p("patch_embed.bias"));
  const std::vector<std::size_t> zeros(n, 0);
  auto cls = reshape(embedding_lookup(p("cls_token"), std::span<const std::size_t>(zeros)), Shape{n, 1, d});
  h = add(concat<T>({cls, h}, 1), p("pos_embed"));
  for (std::size_t b = 0; b < s.depth; ++b) {
    const std::string pre = "blocks." + std::to_string(b) + ".";
    auto a = layer_norm(h, p(pre + "ln1.gain"), p(pre + "ln1.bias"));
    a = multi_head_attention(a, p(pre + "attn.qkv.weight"), p(pre + "attn.qkv.bias"), p(pre + "attn.proj.weight"),
                             p(pre + "attn.proj.bias"), s.heads);
    h = add(h, a);
    auto m = layer_norm(h, p(pre + "ln2.gain"), p(pre + "ln2.bias"));
    m = linear(gelu(linear(m, p(pre + "mlp.fc1.weight"), p(pre + "mlp.fc1.bias"))), p(pre + "mlp.fc2.weight"),
               p(pre + "mlp.fc2.bias"));
    h = add(h, m);
  }
  h = layer_norm(h, p("norm.gain"), p("norm.bias"));
  return linear(select(h, 1, 0), p("head.weight"), p("head.bias"));
}

}  // namespace advlab::vit

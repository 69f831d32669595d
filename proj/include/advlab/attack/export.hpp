#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advlab/attack/pgd.hpp"
#include "advlab/data/image_io.hpp"

namespace advlab {

namespace detail {

inline nlohmann::ordered_json finite_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

}  // namespace detail

/// The 8-bit image a PNG export would hold, mapped back to [0,1].
inline Tensor<float> quantized(const Tensor<float>& images) {
  std::vector<float> out(images.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(quantize_pixel(images[i])) / 255.0f;
  return Tensor<float>::from(images.shape(), std::move(out));
}

/// Writes adversarial image i as `dir/<ids[i]>.png` and a `dir/metrics.json`
/// sidecar holding per-sample norms before and after 8-bit quantization.
/// PSNR of identical images is written as the string "inf".
inline void export_adversarial(const std::filesystem::path& dir, const Tensor<float>& clean,
                               const AttackResult<float>& result, const std::vector<std::string>& ids,
                               const AttackConfig& cfg) {
  const std::size_t n = result.size();
  if (ids.size() != n) throw DimensionError("export_adversarial: " + std::to_string(ids.size()) + " ids for " +
                                            std::to_string(n) + " samples");
  std::filesystem::create_directories(dir);
  const Shape one{clean.dim(1), clean.dim(2), clean.dim(3)};
  const std::size_t per = numel(one);
  const auto pre = perturbation_metrics(clean, result.adversarial);
  const auto post = perturbation_metrics(clean, quantized(result.adversarial));

  nlohmann::ordered_json samples = nlohmann::ordered_json::array();
  for (std::size_t s = 0; s < n; ++s) {
    std::string file = ids[s];
    for (char& c : file)
      if (c == '/' || c == '\\') c = '_';
    file += ".png";
    std::vector<float> img(result.adversarial.values().begin() + static_cast<long>(s * per),
                           result.adversarial.values().begin() + static_cast<long>((s + 1) * per));
    write_png(dir / file, Tensor<float>::from(one, std::move(img)));
    samples.push_back({{"id", ids[s]},
                       {"file", file},
                       {"clean_prediction", result.clean_prediction[s]},
                       {"adversarial_prediction", result.adversarial_prediction[s]},
                       {"success", static_cast<bool>(result.success[s])},
                       {"pre_quantization", {{"linf", pre.linf[s]}, {"l2", pre.l2[s]}, {"psnr", detail::finite_or_inf(pre.psnr[s])}}},
                       {"post_quantization", {{"linf", post.linf[s]}, {"l2", post.l2[s]}, {"psnr", detail::finite_or_inf(post.psnr[s])}}}});
  }
  nlohmann::ordered_json doc = {{"attack", cfg}, {"quantization", "8-bit, round half to even"}, {"samples", samples}};
  std::ofstream(dir / "metrics.json") << doc.dump(2) << '\n';
}

}  // namespace advlab

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "advlab/core/error.hpp"
#include "json.hpp"

namespace advlab {

enum class Architecture { vit, resnet, vgg };

inline std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::vit: return "vit";
    case Architecture::resnet: return "resnet";
    case Architecture::vgg: return "vgg";
  }
  return "?";
}

inline Architecture parse_architecture(const std::string& tag) {
  if (tag == "vit") return Architecture::vit;
  if (tag == "resnet") return Architecture::resnet;
  if (tag == "vgg") return Architecture::vgg;
  throw SpecError("unknown architecture '" + tag + "' (expected vit, resnet or vgg)");
}

/// Architecture tag plus every shape hyperparameter. Fields that do not
/// apply to the chosen architecture are ignored but still serialized, so a
/// spec round-trips unchanged.
struct ClassifierSpec {
  Architecture arch = Architecture::vit;
  std::size_t resolution = 32;
  std::size_t channels = 3;
  std::size_t classes = 5;

  // TinyViT
  std::size_t patch_size = 4;
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t depth = 4;
  std::size_t mlp_ratio = 2;

  // SmallResNet / SmallVGG
  std::vector<std::size_t> widths{16, 32, 64};
  std::size_t blocks_per_stage = 2;  // residual blocks per ResNet stage
  std::size_t convs_per_block = 2;   // conv layers per VGG block
  std::size_t dense_width = 128;     // hidden dense layer of VGG

  std::size_t sequence_length() const {
    const std::size_t g = resolution / patch_size;
    return g * g + 1;
  }

  void validate() const {
    if (classes < 2) throw SpecError("class count must be at least 2");
    if (resolution == 0 || channels == 0) throw SpecError("resolution and channels must be positive");
    switch (arch) {
      case Architecture::vit:
        if (patch_size == 0 || resolution % patch_size != 0) {
          throw SpecError("resolution " + std::to_string(resolution) + " is not divisible by patch size " +
                          std::to_string(patch_size));
        }
        if (heads == 0 || embed_dim == 0 || embed_dim % heads != 0) {
          throw SpecError("embed dim " + std::to_string(embed_dim) + " is not divisible by " +
                          std::to_string(heads) + " heads");
        }
        if (depth == 0 || mlp_ratio == 0) throw SpecError("depth and mlp ratio must be positive");
        break;
      case Architecture::resnet:
      case Architecture::vgg: {
        if (widths.empty()) throw SpecError("at least one stage width is required");
        for (std::size_t w : widths)
          if (w == 0) throw SpecError("stage widths must be positive");
        if (arch == Architecture::resnet && blocks_per_stage == 0) throw SpecError("blocks per stage must be positive");
        if (arch == Architecture::vgg) {
          if (convs_per_block == 0 || dense_width == 0) throw SpecError("VGG conv and dense sizes must be positive");
          const std::size_t shrink = std::size_t{1} << widths.size();
          if (resolution % shrink != 0) {
            throw SpecError("resolution " + std::to_string(resolution) + " must be divisible by " +
                            std::to_string(shrink) + " for " + std::to_string(widths.size()) + " pooling stages");
          }
        }
        break;
      }
    }
  }

  // Same input geometry and label space; the condition for sharing data or
  // adversarial sets between two models.
  bool compatible_with(const ClassifierSpec& o) const {
    return resolution == o.resolution && channels == o.channels && classes == o.classes;
  }

  friend bool operator==(const ClassifierSpec&, const ClassifierSpec&) = default;
};

inline void to_json(nlohmann::ordered_json& j, const ClassifierSpec& s) {
  j = nlohmann::ordered_json{{"arch", to_string(s.arch)},
                             {"resolution", s.resolution},
                             {"channels", s.channels},
                             {"classes", s.classes},
                             {"patch_size", s.patch_size},
                             {"embed_dim", s.embed_dim},
                             {"heads", s.heads},
                             {"depth", s.depth},
                             {"mlp_ratio", s.mlp_ratio},
                             {"widths", s.widths},
                             {"blocks_per_stage", s.blocks_per_stage},
                             {"convs_per_block", s.convs_per_block},
                             {"dense_width", s.dense_width}};
}

inline void from_json(const nlohmann::ordered_json& j, ClassifierSpec& s) {
  s.arch = parse_architecture(j.at("arch").get<std::string>());
  s.resolution = j.at("resolution").get<std::size_t>();
  s.channels = j.at("channels").get<std::size_t>();
  s.classes = j.at("classes").get<std::size_t>();
  s.patch_size = j.at("patch_size").get<std::size_t>();
  s.embed_dim = j.at("embed_dim").get<std::size_t>();
  s.heads = j.at("heads").get<std::size_t>();
  s.depth = j.at("depth").get<std::size_t>();
  s.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
  s.widths = j.at("widths").get<std::vector<std::size_t>>();
  s.blocks_per_stage = j.at("blocks_per_stage").get<std::size_t>();
  s.convs_per_block = j.at("convs_per_block").get<std::size_t>();
  s.dense_width = j.at("dense_width").get<std::size_t>();
}

}  // namespace advlab

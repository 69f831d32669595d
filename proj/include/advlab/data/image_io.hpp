#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advlab/data/dataset.hpp"

namespace advlab {

namespace fs = std::filesystem;

/// Decodes a PNG into a C x H x W tensor scaled to [0,1]. Gray, gray+alpha,
/// RGB and RGBA inputs are converted to the requested channel count (1 or 3);
/// alpha is dropped.
inline Tensor<float> read_png(const fs::path& path, std::size_t channels = 3) {
  if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw IngestionError("cannot decode '" + path.string() + "': " + image.message);
  }
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IngestionError("cannot decode '" + path.string() + "': " + msg);
  }
  const std::size_t h = image.height, w = image.width;
  std::vector<float> out(channels * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        out[(c * h + y) * w + x] = static_cast<float>(buf[(y * w + x) * channels + c]) / 255.0f;
  return Tensor<float>::from({channels, h, w}, std::move(out));
}

/// Maps [0,1] to 0..255 with round-half-to-even.
inline std::uint8_t quantize_pixel(float v) {
  const double scaled = std::nearbyint(static_cast<double>(std::clamp(v, 0.0f, 1.0f)) * 255.0);
  return static_cast<std::uint8_t>(scaled);
}

/// Writes a 1- or 3-channel C x H x W image as an 8-bit PNG.
inline void write_png(const fs::path& path, const Tensor<float>& img) {
  if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3)) {
    throw DimensionError("write_png expects a 1 or 3 channel C x H x W image, got " + to_string(img.shape()));
  }
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  std::vector<std::uint8_t> buf(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) buf[(y * w + x) * c + ch] = quantize_pixel(img[(ch * h + y) * w + x]);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    throw IngestionError("cannot write '" + path.string() + "': " + image.message);
  }
}

/// Bilinear resize with half-pixel centers and edge clamping.
inline Tensor<float> resize_bilinear(const Tensor<float>& img, std::size_t out_h, std::size_t out_w) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (h == out_h && w == out_w) return img;
  auto source = [](std::size_t dst, std::size_t in, std::size_t out, std::size_t& lo, std::size_t& hi, double& frac) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    lo = static_cast<std::size_t>(std::floor(s));
    hi = std::min(lo + 1, in - 1);
    frac = s - static_cast<double>(lo);
  };
  std::vector<float> out(c * out_h * out_w);
  const auto& v = img.values();
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    source(y, h, out_h, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double fx;
      source(x, w, out_w, x0, x1, fx);
      for (std::size_t ch = 0; ch < c; ++ch) {
        auto at = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(v[(ch * h + yy) * w + xx]); };
        const double top = at(y0, x0) * (1 - fx) + at(y0, x1) * fx;
        const double bottom = at(y1, x0) * (1 - fx) + at(y1, x1) * fx;
        out[(ch * out_h + y) * out_w + x] = static_cast<float>(std::clamp(top * (1 - fy) + bottom * fy, 0.0, 1.0));
      }
    }
  }
  return Tensor<float>::from({c, out_h, out_w}, std::move(out));
}

/// Reads root/<class>/*.png. Classes are indexed by lexicographic directory
/// name; files within a class are read in lexicographic order and get the id
/// "<class>/<stem>".
inline DatasetSplit load_image_directory(const fs::path& root, std::size_t resolution, std::size_t channels = 3,
                                         SplitTag tag = SplitTag::train) {
  if (resolution == 0) throw ConfigError("resolution must be positive");
  if (!fs::is_directory(root)) throw DatasetError("dataset root '" + root.string() + "' is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  if (class_dirs.empty()) throw DatasetError("dataset root '" + root.string() + "' has no class directories");

  DatasetSplit split;
  split.tag = tag;
  for (std::size_t k = 0; k < class_dirs.size(); ++k) {
    const std::string name = class_dirs[k].filename().string();
    split.class_names.push_back(name);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[k])) {
      std::string ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
      if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
    }
    if (files.empty()) throw DatasetError("class directory '" + class_dirs[k].string() + "' contains no PNG images");
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      split.samples.emplace_back(resize_bilinear(read_png(f, channels), resolution, resolution), k,
                                 name + "/" + f.stem().string());
    }
  }
  split.validate();
  return split;
}

/// Writes each sample to root/<class>/<id>.png, with '/' in ids replaced by '_'.
inline void export_image_directory(const DatasetSplit& split, const fs::path& root) {
  for (const auto& s : split.samples) {
    std::string file = s.id();
    std::replace(file.begin(), file.end(), '/', '_');
    write_png(root / split.class_names.at(s.label()) / (file + ".png"), s.image());
  }
}

}  // namespace advlab

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "opticam/metrics.hpp"
#include "opticam/network.hpp"
#include "opticam/tensor.hpp"

namespace opticam::harness {

enum class Split { Train, Val, Test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct Sample {
  std::size_t id = 0;
  Tensor image;  // [3,H,W], values k/255
  std::size_t label = 0;
  std::vector<metrics::BBox> boxes;
  Split split = Split::Train;
};

struct SyntheticDataset {
  std::uint64_t seed = 0;
  std::size_t image_size = 0;
  std::size_t class_count = 0;
  std::vector<Sample> samples;

  std::vector<const Sample*> split(Split which) const;
  nn::LabeledImages labeled(Split which) const;
};

/// Shape names by class: disc, square, cross, triangle.
std::string_view shape_name(std::size_t label);

inline constexpr std::size_t kMinImageSize = 16;
inline constexpr std::size_t kMaxClasses = 4;

/// Noise background plus one class-determined shape per image. Image i has
/// label i % classes and draws from its own RNG stream (seed, i). Per class,
/// the first 70% are train, the next 10% val, the rest test.
SyntheticDataset generate_synthetic_dataset(std::uint64_t seed, std::size_t n_per_class, std::size_t image_size,
                                            std::size_t class_count);

/// Directory with index.json and one binary PPM (P6, maxval 255) per image.
void save_dataset(const SyntheticDataset& data, const std::filesystem::path& dir);
SyntheticDataset load_dataset(const std::filesystem::path& dir);

std::string encode_ppm(const Tensor& image);
Tensor decode_ppm(std::string_view bytes);

}  // namespace opticam::harness

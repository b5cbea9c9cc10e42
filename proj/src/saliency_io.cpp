#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "opticam/experiment.hpp"

namespace opticam::harness {

namespace {

constexpr std::string_view kSalvMagic = "SALV1";

void check_map(const Tensor& adapted) {
  if (adapted.rank() != 2) throw std::invalid_argument("saliency file: expected a 2-D map, got " + opticam::to_string(adapted.shape()));
}

}  // namespace

std::string encode_salv(const Tensor& adapted) {
  check_map(adapted);
  std::string out = std::string(kSalvMagic) + " " + std::to_string(adapted.dim(0)) + " " +
                    std::to_string(adapted.dim(1)) + "\n";
  for (double v : adapted.data()) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
  }
  return out;
}

Tensor decode_salv(std::string_view bytes) {
  const std::size_t newline = bytes.find('\n');
  if (newline == std::string_view::npos || bytes.substr(0, kSalvMagic.size() + 1) != "SALV1 ") {
    throw std::runtime_error("saliency file: bad header (expected SALV1)");
  }
  const std::string header(bytes.substr(kSalvMagic.size() + 1, newline - kSalvMagic.size() - 1));
  std::size_t height = 0, width = 0;
  std::size_t used = 0;
  try {
    height = std::stoul(header, &used);
    width = std::stoul(header.substr(used));
  } catch (const std::exception&) {
    throw std::runtime_error("saliency file: malformed dimensions");
  }
  if (height == 0 || width == 0) throw std::runtime_error("saliency file: empty map");
  const std::size_t count = height * width;
  const std::string_view body = bytes.substr(newline + 1);
  if (body.size() != 8 * count) {
    throw std::runtime_error("saliency file: expected " + std::to_string(8 * count) + " payload bytes, got " +
                             std::to_string(body.size()));
  }
  Tensor out(Shape{height, width});
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(body[8 * i + b])) << (8 * b);
    }
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

std::string encode_pgm(const Tensor& adapted) {
  check_map(adapted);
  std::string out = "P5\n" + std::to_string(adapted.dim(1)) + " " + std::to_string(adapted.dim(0)) + "\n255\n";
  for (double v : adapted.data()) {
    const double clamped = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * clamped))));
  }
  return out;
}

void export_saliency(const saliency::SaliencyMap& map, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_atomic(path, encode_salv(map.adapted));
  std::filesystem::path preview = path;
  preview.replace_extension(".pgm");
  if (preview != path) write_atomic(preview, encode_pgm(map.adapted));
}

Tensor import_saliency(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("saliency file: cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_salv(bytes);
}

}  // namespace opticam::harness

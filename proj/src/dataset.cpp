#include "opticam/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "opticam/rng.hpp"

namespace opticam::harness {

namespace {

using json = nlohmann::json;

constexpr std::string_view kShapeNames[kMaxClasses] = {"disc", "square", "cross", "triangle"};

bool inside_shape(std::size_t label, double x, double y, double extent) {
  // (x, y) relative to the shape's top-left corner, extent = side length.
  const double c = (extent - 1.0) / 2.0;
  switch (label) {
    case 0: {
      const double r = extent / 2.0;
      return (x - c) * (x - c) + (y - c) * (y - c) <= r * r;
    }
    case 1: return true;
    case 2: {
      const double half = std::max(1.0, std::floor(extent / 3.0)) / 2.0;
      return std::fabs(x - c) < half + 0.5 || std::fabs(y - c) < half + 0.5;
    }
    default: {
      const double half_width = (y + 1.0) / 2.0;
      return std::fabs(x - c) <= half_width;
    }
  }
}

Sample make_sample(std::uint64_t seed, std::size_t index, std::size_t size, std::size_t classes) {
  Rng rng(seed, index);
  Sample s;
  s.id = index;
  s.label = index % classes;
  s.image = Tensor(Shape{3, size, size});
  const std::size_t plane = size * size;
  for (auto& v : s.image.data()) v = rng.uniform(0.0, 0.2);

  const auto min_extent = static_cast<std::int64_t>(size / 4);
  const auto max_extent = static_cast<std::int64_t>(size / 2);
  const auto extent = static_cast<std::size_t>(rng.integer(min_extent, max_extent));
  const auto x0 = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(size - extent)));
  const auto y0 = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(size - extent)));
  double color[3];
  for (double& c : color) c = rng.uniform(0.5, 1.0);

  metrics::BBox box{size, size, 0, 0, s.label};
  for (std::size_t dy = 0; dy < extent; ++dy) {
    for (std::size_t dx = 0; dx < extent; ++dx) {
      if (!inside_shape(s.label, static_cast<double>(dx), static_cast<double>(dy), static_cast<double>(extent))) {
        continue;
      }
      const std::size_t x = x0 + dx, y = y0 + dy;
      for (std::size_t c = 0; c < 3; ++c) s.image[c * plane + y * size + x] = color[c];
      box.x0 = std::min(box.x0, x);
      box.y0 = std::min(box.y0, y);
      box.x1 = std::max(box.x1, x);
      box.y1 = std::max(box.y1, y);
    }
  }
  for (auto& v : s.image.data()) v = std::round(v * 255.0) / 255.0;
  s.boxes.push_back(box);
  return s;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("dataset: cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("dataset: cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("dataset: write failed for " + path.string());
}

std::string image_file(std::size_t id) {
  std::ostringstream name;
  name << "img_";
  name.width(5);
  name.fill('0');
  name << id << ".ppm";
  return name.str();
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "unknown";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw std::invalid_argument("dataset: unknown split '" + std::string(text) + "'");
}

std::string_view shape_name(std::size_t label) {
  if (label >= kMaxClasses) throw std::invalid_argument("dataset: no shape for class " + std::to_string(label));
  return kShapeNames[label];
}

std::vector<const Sample*> SyntheticDataset::split(Split which) const {
  std::vector<const Sample*> out;
  for (const auto& s : samples) {
    if (s.split == which) out.push_back(&s);
  }
  return out;
}

nn::LabeledImages SyntheticDataset::labeled(Split which) const {
  nn::LabeledImages out;
  for (const auto* s : split(which)) {
    out.images.push_back(s->image);
    out.labels.push_back(s->label);
  }
  return out;
}

SyntheticDataset generate_synthetic_dataset(std::uint64_t seed, std::size_t n_per_class, std::size_t image_size,
                                            std::size_t class_count) {
  if (image_size < kMinImageSize) {
    throw std::invalid_argument("gen-data: image size " + std::to_string(image_size) + " below minimum " +
                                std::to_string(kMinImageSize));
  }
  if (image_size % 4 != 0) throw std::invalid_argument("gen-data: image size must be a multiple of 4");
  if (class_count < 2 || class_count > kMaxClasses) {
    throw std::invalid_argument("gen-data: class count must be in [2, " + std::to_string(kMaxClasses) + "]");
  }
  if (n_per_class == 0) throw std::invalid_argument("gen-data: n_per_class must be positive");

  SyntheticDataset data;
  data.seed = seed;
  data.image_size = image_size;
  data.class_count = class_count;
  const std::size_t train_end = n_per_class * 7 / 10;
  const std::size_t val_end = n_per_class * 8 / 10;
  for (std::size_t i = 0; i < n_per_class * class_count; ++i) {
    Sample s = make_sample(seed, i, image_size, class_count);
    const std::size_t rank = i / class_count;
    s.split = rank < train_end ? Split::Train : rank < val_end ? Split::Val : Split::Test;
    data.samples.push_back(std::move(s));
  }
  return data;
}

std::string encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw std::invalid_argument("ppm: expected [3,H,W] image");
  const std::size_t height = image.dim(1), width = image.dim(2), plane = height * width;
  std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.reserve(out.size() + 3 * plane);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(image[c * plane + p], 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  return out;
}

Tensor decode_ppm(std::string_view bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return std::string(bytes.substr(start, pos - start));
  };
  if (token() != "P6") throw std::runtime_error("ppm: bad magic (expected P6)");
  std::size_t width = 0, height = 0, maxval = 0;
  try {
    width = std::stoul(token());
    height = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw std::runtime_error("ppm: malformed header");
  }
  if (maxval != 255 || width == 0 || height == 0) throw std::runtime_error("ppm: unsupported header");
  ++pos;  // single whitespace byte before the raster
  const std::size_t plane = width * height;
  if (bytes.size() < pos + 3 * plane) throw std::runtime_error("ppm: truncated raster");
  Tensor image(Shape{3, height, width});
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      image[c * plane + p] = static_cast<double>(static_cast<unsigned char>(bytes[pos + 3 * p + c])) / 255.0;
    }
  }
  return image;
}

void save_dataset(const SyntheticDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json index;
  index["seed"] = data.seed;
  index["image_size"] = data.image_size;
  index["class_count"] = data.class_count;
  json classes = json::array();
  for (std::size_t c = 0; c < data.class_count; ++c) classes.push_back(shape_name(c));
  index["class_names"] = classes;
  json images = json::array();
  for (const auto& s : data.samples) {
    const std::string file = image_file(s.id);
    write_file(dir / file, encode_ppm(s.image));
    json boxes = json::array();
    for (const auto& b : s.boxes) boxes.push_back({b.x0, b.y0, b.x1, b.y1});
    images.push_back({{"id", s.id},
                      {"file", file},
                      {"label", s.label},
                      {"split", std::string(to_string(s.split))},
                      {"boxes", boxes}});
  }
  index["images"] = images;
  write_file(dir / "index.json", index.dump(1));
}

SyntheticDataset load_dataset(const std::filesystem::path& dir) {
  json index;
  try {
    index = json::parse(read_file(dir / "index.json"));
  } catch (const json::exception& e) {
    throw std::runtime_error("dataset: malformed index.json: " + std::string(e.what()));
  }
  SyntheticDataset data;
  try {
    data.seed = index.at("seed").get<std::uint64_t>();
    data.image_size = index.at("image_size").get<std::size_t>();
    data.class_count = index.at("class_count").get<std::size_t>();
    for (const auto& entry : index.at("images")) {
      Sample s;
      s.id = entry.at("id").get<std::size_t>();
      s.label = entry.at("label").get<std::size_t>();
      s.split = parse_split(entry.at("split").get<std::string>());
      for (const auto& b : entry.at("boxes")) {
        s.boxes.push_back(metrics::BBox{b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>(),
                                        b.at(2).get<std::size_t>(), b.at(3).get<std::size_t>(), s.label});
      }
      s.image = decode_ppm(read_file(dir / entry.at("file").get<std::string>()));
      if (s.image.dim(1) != data.image_size || s.image.dim(2) != data.image_size) {
        throw std::runtime_error("dataset: image " + std::to_string(s.id) + " has the wrong size");
      }
      if (s.label >= data.class_count) throw std::runtime_error("dataset: label out of range");
      if (s.boxes.empty()) throw std::runtime_error("dataset: image " + std::to_string(s.id) + " has no box");
      data.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("dataset: malformed index.json: " + std::string(e.what()));
  }
  return data;
}

}  // namespace opticam::harness

#include "opticam/weights_io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <stdexcept>

namespace opticam::nn {

namespace {

constexpr std::string_view kMagic = "OCW1";
constexpr std::string_view kInputShapeName = "meta.input_shape";

const char* param_suffix(LayerKind kind, std::size_t index) {
  if (kind == LayerKind::InputNormalize) return index == 0 ? "mean" : "std";
  return index == 0 ? "weight" : "bias";
}

template <typename T>
void put(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

void put_tensor(std::string& out, const std::string& name, const Tensor& t) {
  if (name.size() > 0xffff) throw std::invalid_argument("weights: tensor name too long");
  put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out += name;
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (auto extent : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(extent));
  for (double v : t.data()) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i));
    }
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw std::runtime_error("weights: truncated file");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::map<std::string, Tensor> parse(std::string_view bytes) {
  Reader in(bytes);
  if (bytes.size() < kMagic.size() || in.take(kMagic.size()) != kMagic) {
    throw std::runtime_error("weights: bad magic (expected OCW1)");
  }
  const auto count = in.get<std::uint32_t>();
  std::map<std::string, Tensor> tensors;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = in.get<std::uint16_t>();
    std::string name(in.take(name_len));
    const auto rank = in.get<std::uint8_t>();
    Shape shape;
    for (std::uint8_t r = 0; r < rank; ++r) shape.push_back(in.get<std::uint32_t>());
    std::size_t n = shape_size(shape);
    if (n > (1u << 28)) throw std::runtime_error("weights: tensor '" + name + "' is implausibly large");
    std::vector<double> values(n);
    for (auto& v : values) v = std::bit_cast<double>(in.get<std::uint64_t>());
    if (!tensors.emplace(name, Tensor(std::move(shape), std::move(values))).second) {
      throw std::runtime_error("weights: duplicate tensor '" + name + "'");
    }
  }
  if (!in.done()) throw std::runtime_error("weights: trailing bytes after last tensor");
  return tensors;
}

Network fill(std::map<std::string, Tensor> tensors, Network net) {
  std::size_t used = tensors.count(std::string(kInputShapeName));
  for (auto& layer : net.mutable_layers()) {
    for (std::size_t p = 0; p < layer.params.size(); ++p) {
      const std::string name = layer.name + "." + param_suffix(layer.kind, p);
      auto it = tensors.find(name);
      if (it == tensors.end()) throw std::runtime_error("weights: missing tensor '" + name + "'");
      if (it->second.shape() != layer.params[p].shape()) {
        throw std::runtime_error("weights: tensor '" + name + "' has shape " + to_string(it->second.shape()) +
                                 ", architecture expects " + to_string(layer.params[p].shape()));
      }
      layer.params[p] = std::move(it->second);
      ++used;
    }
  }
  if (used != tensors.size()) throw std::runtime_error("weights: file holds tensors unknown to the architecture");
  return net;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("weights: cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

std::string serialize_weights(const Network& net) {
  std::string out(kMagic);
  std::uint32_t count = 1;
  for (const auto& layer : net.layers()) count += static_cast<std::uint32_t>(layer.params.size());
  put<std::uint32_t>(out, count);
  const auto& in = net.input_shape();
  put_tensor(out, std::string(kInputShapeName),
             Tensor::vector({static_cast<double>(in.channels), static_cast<double>(in.height),
                             static_cast<double>(in.width)}));
  for (const auto& layer : net.layers()) {
    for (std::size_t p = 0; p < layer.params.size(); ++p) {
      put_tensor(out, layer.name + "." + param_suffix(layer.kind, p), layer.params[p]);
    }
  }
  return out;
}

Network deserialize_weights(std::string_view bytes) {
  auto tensors = parse(bytes);
  auto shape_it = tensors.find(std::string(kInputShapeName));
  auto fc_it = tensors.find("fc.weight");
  if (shape_it == tensors.end() || shape_it->second.size() != 3) {
    throw std::runtime_error("weights: missing meta.input_shape");
  }
  if (fc_it == tensors.end() || fc_it->second.rank() != 2) throw std::runtime_error("weights: missing fc.weight");
  const auto& s = shape_it->second;
  InputShape input{static_cast<std::size_t>(s[0]), static_cast<std::size_t>(s[1]), static_cast<std::size_t>(s[2])};
  Network arch = build_toy_cnn(fc_it->second.dim(0), input, 0);
  return fill(std::move(tensors), std::move(arch));
}

Network deserialize_weights(std::string_view bytes, const Network& architecture) {
  auto tensors = parse(bytes);
  auto shape_it = tensors.find(std::string(kInputShapeName));
  if (shape_it != tensors.end()) {
    const auto& in = architecture.input_shape();
    const Tensor expected = Tensor::vector(
        {static_cast<double>(in.channels), static_cast<double>(in.height), static_cast<double>(in.width)});
    if (shape_it->second != expected) throw std::runtime_error("weights: input shape differs from architecture");
  }
  return fill(std::move(tensors), architecture);
}

void save_weights(const Network& net, const std::filesystem::path& path) {
  const std::string bytes = serialize_weights(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("weights: cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("weights: write failed for " + path.string());
}

Network load_weights(const std::filesystem::path& path) { return deserialize_weights(read_file(path)); }

Network load_weights(const std::filesystem::path& path, const Network& architecture) {
  return deserialize_weights(read_file(path), architecture);
}

}  // namespace opticam::nn

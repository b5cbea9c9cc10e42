#include "opticam/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace opticam::ad {

namespace {

[[noreturn]] void shape_error(OpKind kind, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op_name(kind)) + ": incompatible shapes " + to_string(a) + " and " +
                              to_string(b));
}

[[noreturn]] void shape_error(OpKind kind, const Shape& a, const std::string& what) {
  throw std::invalid_argument(std::string(op_name(kind)) + ": " + what + ", got " + to_string(a));
}

void same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("autodiff: operands live on different tapes");
}

std::size_t first_argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::size_t first_argmin(std::span<const double> v) {
  return static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin());
}

Var unary(Var a, OpKind kind, Tensor out, BackwardFn fn) {
  return a.tape().record(kind, {a.id()}, std::move(out), std::move(fn));
}

Var binary(Var a, Var b, OpKind kind, Tensor out, BackwardFn fn) {
  same_tape(a, b);
  return a.tape().record(kind, {a.id(), b.id()}, std::move(out), std::move(fn));
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::MulScalar: return "mul_scalar";
    case OpKind::RSubScalar: return "rsub_scalar";
    case OpKind::MatMul: return "matmul";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Relu: return "relu";
    case OpKind::MaxPool2d: return "max_pool2d";
    case OpKind::GlobalAvgPool: return "global_average_pool";
    case OpKind::Linear: return "linear";
    case OpKind::Softmax: return "softmax";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Abs: return "abs";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::BilinearUpsample: return "bilinear_upsample";
    case OpKind::RangeNormalize: return "range_normalize";
    case OpKind::MaxNormalize: return "max_normalize";
    case OpKind::Concat: return "concat";
    case OpKind::Reshape: return "reshape";
    case OpKind::CrossEntropy: return "cross_entropy";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape_->value(*this); }

// ---------------------------------------------------------------------------
// Tape

Var Tape::variable(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
  Node node;
  node.kind = kind;
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw std::logic_error("autodiff: input node does not precede its consumer");
    node.requires_grad = node.requires_grad || nodes_[id].requires_grad;
  }
  node.inputs = std::move(inputs);
  node.value = std::move(value);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var root) {
  if (&root.tape() != this) throw std::invalid_argument("backward: root belongs to another tape");
  const std::size_t root_id = root.id();
  const Tensor& root_value = nodes_.at(root_id).value;
  if (root_value.size() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got shape " + to_string(root_value.shape()));
  }
  for (auto& node : nodes_) node.grad = Tensor();
  if (!nodes_[root_id].requires_grad) return;
  nodes_[root_id].grad = Tensor(root_value.shape(), 1.0);

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t i = root_id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad) continue;
    if (node.grad.empty()) {
      node.grad = Tensor(node.value.shape(), 0.0);
      continue;
    }
    if (!node.backward) continue;
    in_values.clear();
    in_grads.clear();
    for (auto id : node.inputs) {
      Node& input = nodes_[id];
      in_values.push_back(&input.value);
      if (input.requires_grad) {
        if (input.grad.empty()) input.grad = Tensor(input.value.shape(), 0.0);
        in_grads.push_back(&input.grad);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    node.backward(BackwardContext{node.value, node.grad, in_values, in_grads});
  }
}

const Tensor& Tape::grad(Var v) const {
  const Node& node = nodes_.at(v.id());
  if (!node.requires_grad) throw std::logic_error("grad: node does not track gradients");
  if (node.grad.empty()) throw std::logic_error("grad: no backward pass has reached this node");
  return node.grad;
}

// ---------------------------------------------------------------------------
// Element-wise

Var add(Var a, Var b) {
  if (a.shape() != b.shape()) shape_error(OpKind::Add, a.shape(), b.shape());
  Tensor out = a.value();
  auto bv = b.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i];
  return binary(a, b, OpKind::Add, std::move(out), [](const BackwardContext& ctx) {
    auto g = ctx.output_grad.data();
    for (auto* target : ctx.input_grads) {
      if (!target) continue;
      auto t = target->data();
      for (std::size_t i = 0; i < g.size(); ++i) t[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  if (a.shape() != b.shape()) shape_error(OpKind::Sub, a.shape(), b.shape());
  Tensor out = a.value();
  auto bv = b.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] -= bv[i];
  return binary(a, b, OpKind::Sub, std::move(out), [](const BackwardContext& ctx) {
    auto g = ctx.output_grad.data();
    if (auto* ga = ctx.input_grads[0]) {
      auto t = ga->data();
      for (std::size_t i = 0; i < g.size(); ++i) t[i] += g[i];
    }
    if (auto* gb = ctx.input_grads[1]) {
      auto t = gb->data();
      for (std::size_t i = 0; i < g.size(); ++i) t[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  if (a.shape() != b.shape()) shape_error(OpKind::Mul, a.shape(), b.shape());
  Tensor out = a.value();
  auto bv = b.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] *= bv[i];
  return binary(a, b, OpKind::Mul, std::move(out), [](const BackwardContext& ctx) {
    auto g = ctx.output_grad.data();
    auto av = ctx.inputs[0]->data();
    auto bv = ctx.inputs[1]->data();
    if (auto* ga = ctx.input_grads[0]) {
      auto t = ga->data();
      for (std::size_t i = 0; i < g.size(); ++i) t[i] += g[i] * bv[i];
    }
    if (auto* gb = ctx.input_grads[1]) {
      auto t = gb->data();
      for (std::size_t i = 0; i < g.size(); ++i) t[i] += g[i] * av[i];
    }
  });
}

Var add_scalar(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v += s;
  return unary(a, OpKind::AddScalar, std::move(out), [](const BackwardContext& ctx) {
    auto g = ctx.output_grad.data();
    auto t = ctx.input_grads[0]->data();
    for (std::size_t i = 0; i < g.size(); ++i) t[i] += g[i];
  });
}

Var mul_scalar(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return unary(a, OpKind::MulScalar, std::move(out), [s](const BackwardContext& ctx) {
    auto g = ctx.output_grad.data();
    auto t = ctx.input_grads[0]->data();
    for (std::size_t i = 0; i < g.size(); ++i) t[i] += s * g[i];
  });
}

Var rsub_scalar(double s, Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = s - v;
  return unary(a, OpKind::RSubScalar, std::move(out), [](const BackwardContext& ctx) {
    auto g = ctx.output_grad.data();
    auto t = ctx.input_grads[0]->data();
    for (std::size_t i = 0; i < g.size(); ++i) t[i] -= g[i];
  });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return unary(a, OpKind::Relu, std::move(out), [](const BackwardContext& ctx) {
    auto g = ctx.output_grad.data();
    auto x = ctx.inputs[0]->data();
    auto t = ctx.input_grads[0]->data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) t[i] += g[i];
    }
  });
}

Var sigmoid(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = 1.0 / (1.0 + std::exp(-v));
  return unary(a, OpKind::Sigmoid, std::move(out), [](const BackwardContext& ctx) {
    auto g = ctx.output_grad.data();
    auto y = ctx.output.data();
    auto t = ctx.input_grads[0]->data();
    for (std::size_t i = 0; i < g.size(); ++i) t[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var abs(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::fabs(v);
  return unary(a, OpKind::Abs, std::move(out), [](const BackwardContext& ctx) {
    auto g = ctx.output_grad.data();
    auto x = ctx.inputs[0]->data();
    auto t = ctx.input_grads[0]->data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) {
        t[i] += g[i];
      } else if (x[i] < 0.0) {
        t[i] -= g[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return unary(a, OpKind::Sum, Tensor::scalar(total), [](const BackwardContext& ctx) {
    const double g = ctx.output_grad[0];
    for (auto& t : ctx.input_grads[0]->data()) t += g;
  });
}

Var mean(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const double n = static_cast<double>(a.value().size());
  return unary(a, OpKind::Mean, Tensor::scalar(total / n), [n](const BackwardContext& ctx) {
    const double g = ctx.output_grad[0] / n;
    for (auto& t : ctx.input_grads[0]->data()) t += g;
  });
}

Var global_average_pool(Var x) {
  const Shape& s = x.shape();
  if (s.size() != 3) shape_error(OpKind::GlobalAvgPool, s, "expected [C,H,W]");
  const std::size_t channels = s[0];
  const std::size_t plane = s[1] * s[2];
  Tensor out(Shape{channels});
  auto xv = x.value().data();
  for (std::size_t c = 0; c < channels; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < plane; ++i) total += xv[c * plane + i];
    out[c] = total / static_cast<double>(plane);
  }
  return unary(x, OpKind::GlobalAvgPool, std::move(out), [plane](const BackwardContext& ctx) {
    auto t = ctx.input_grads[0]->data();
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t c = 0; c < ctx.output_grad.size(); ++c) {
      const double g = ctx.output_grad[c] * inv;
      for (std::size_t i = 0; i < plane; ++i) t[c * plane + i] += g;
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) shape_error(OpKind::MatMul, sa, sb);
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  Tensor out(Shape{m, n});
  auto av = a.value().data();
  auto bv = b.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv.data() + p * n;
      double* orow = ov.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return binary(a, b, OpKind::MatMul, std::move(out), [m, k, n](const BackwardContext& ctx) {
    auto g = ctx.output_grad.data();
    auto av = ctx.inputs[0]->data();
    auto bv = ctx.inputs[1]->data();
    if (auto* ga = ctx.input_grads[0]) {
      auto t = ga->data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          t[i * k + p] += acc;
        }
      }
    }
    if (auto* gb = ctx.input_grads[1]) {
      auto t = gb->data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) t[p * n + j] += aip * g[i * n + j];
        }
      }
    }
  });
}

Var linear(Var x, Var weight, Var bias) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  const Shape& sb = bias.shape();
  if (sx.size() != 1 || sw.size() != 2 || sw[1] != sx[0]) shape_error(OpKind::Linear, sx, sw);
  if (sb.size() != 1 || sb[0] != sw[0]) shape_error(OpKind::Linear, sw, sb);
  same_tape(x, weight);
  same_tape(x, bias);
  const std::size_t outputs = sw[0], inputs = sw[1];
  Tensor out = bias.value();
  auto xv = x.value().data();
  auto wv = weight.value().data();
  for (std::size_t o = 0; o < outputs; ++o) {
    double acc = 0.0;
    for (std::size_t i = 0; i < inputs; ++i) acc += wv[o * inputs + i] * xv[i];
    out[o] += acc;
  }
  return x.tape().record(
      OpKind::Linear, {x.id(), weight.id(), bias.id()}, std::move(out),
      [outputs, inputs](const BackwardContext& ctx) {
        auto g = ctx.output_grad.data();
        auto xv = ctx.inputs[0]->data();
        auto wv = ctx.inputs[1]->data();
        if (auto* gx = ctx.input_grads[0]) {
          auto t = gx->data();
          for (std::size_t o = 0; o < outputs; ++o) {
            for (std::size_t i = 0; i < inputs; ++i) t[i] += g[o] * wv[o * inputs + i];
          }
        }
        if (auto* gw = ctx.input_grads[1]) {
          auto t = gw->data();
          for (std::size_t o = 0; o < outputs; ++o) {
            for (std::size_t i = 0; i < inputs; ++i) t[o * inputs + i] += g[o] * xv[i];
          }
        }
        if (auto* gb = ctx.input_grads[2]) {
          auto t = gb->data();
          for (std::size_t o = 0; o < outputs; ++o) t[o] += g[o];
        }
      });
}

Var conv2d(Var x, Var weight, Var bias) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  const Shape& sb = bias.shape();
  if (sx.size() != 3) shape_error(OpKind::Conv2d, sx, "expected input [Cin,H,W]");
  if (sw.size() != 4 || sw[1] != sx[0]) shape_error(OpKind::Conv2d, sx, sw);
  if (sw[2] % 2 == 0 || sw[3] % 2 == 0) shape_error(OpKind::Conv2d, sw, "kernel extents must be odd");
  if (sb.size() != 1 || sb[0] != sw[0]) shape_error(OpKind::Conv2d, sw, sb);
  same_tape(x, weight);
  same_tape(x, bias);

  struct Geometry {
    std::size_t cin, cout, height, width, kh, kw;
  };
  const Geometry geo{sx[0], sw[0], sx[1], sx[2], sw[2], sw[3]};

  // Calls fn(weight_index, out_offset, in_offset, count) for every contiguous
  // row segment where kernel tap (ky,kx) of (co,ci) lands inside the input.
  auto for_each_segment = [](const Geometry& g, auto&& fn) {
    const auto h = static_cast<std::ptrdiff_t>(g.height);
    const auto w = static_cast<std::ptrdiff_t>(g.width);
    const auto ph = static_cast<std::ptrdiff_t>(g.kh / 2);
    const auto pw = static_cast<std::ptrdiff_t>(g.kw / 2);
    for (std::size_t co = 0; co < g.cout; ++co) {
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - ph;
          const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
          const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(h, h - dy);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
            const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
            const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(w, w - dx);
            if (x1 <= x0) continue;
            const std::size_t widx = ((co * g.cin + ci) * g.kh + ky) * g.kw + kx;
            for (std::ptrdiff_t y = y0; y < y1; ++y) {
              const std::size_t out_off = co * g.height * g.width + static_cast<std::size_t>(y * w + x0);
              const std::size_t in_off =
                  ci * g.height * g.width + static_cast<std::size_t>((y + dy) * w + x0 + dx);
              fn(widx, out_off, in_off, static_cast<std::size_t>(x1 - x0));
            }
          }
        }
      }
    }
  };

  Tensor out(Shape{geo.cout, geo.height, geo.width});
  {
    auto ov = out.data();
    auto bv = bias.value().data();
    const std::size_t plane = geo.height * geo.width;
    for (std::size_t co = 0; co < geo.cout; ++co) {
      std::fill(ov.begin() + static_cast<std::ptrdiff_t>(co * plane),
                ov.begin() + static_cast<std::ptrdiff_t>((co + 1) * plane), bv[co]);
    }
    const double* xv = x.value().data().data();
    const double* wv = weight.value().data().data();
    double* o = ov.data();
    for_each_segment(geo, [&](std::size_t widx, std::size_t out_off, std::size_t in_off, std::size_t count) {
      const double wgt = wv[widx];
      double* dst = o + out_off;
      const double* src = xv + in_off;
      for (std::size_t i = 0; i < count; ++i) dst[i] += wgt * src[i];
    });
  }

  return x.tape().record(
      OpKind::Conv2d, {x.id(), weight.id(), bias.id()}, std::move(out),
      [geo, for_each_segment](const BackwardContext& ctx) {
        const double* g = ctx.output_grad.data().data();
        const double* xv = ctx.inputs[0]->data().data();
        const double* wv = ctx.inputs[1]->data().data();
        Tensor* gx = ctx.input_grads[0];
        Tensor* gw = ctx.input_grads[1];
        if (gx || gw) {
          double* tx = gx ? gx->data().data() : nullptr;
          double* tw = gw ? gw->data().data() : nullptr;
          for_each_segment(geo, [&](std::size_t widx, std::size_t out_off, std::size_t in_off, std::size_t count) {
            const double* go = g + out_off;
            if (tx) {
              const double wgt = wv[widx];
              double* dst = tx + in_off;
              for (std::size_t i = 0; i < count; ++i) dst[i] += wgt * go[i];
            }
            if (tw) {
              const double* src = xv + in_off;
              double acc = 0.0;
              for (std::size_t i = 0; i < count; ++i) acc += go[i] * src[i];
              tw[widx] += acc;
            }
          });
        }
        if (auto* gb = ctx.input_grads[2]) {
          const std::size_t plane = geo.height * geo.width;
          for (std::size_t co = 0; co < geo.cout; ++co) {
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += g[co * plane + i];
            (*gb)[co] += acc;
          }
        }
      });
}

Var max_pool2d(Var x) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0) {
    shape_error(OpKind::MaxPool2d, s, "expected [C,H,W] with even H and W");
  }
  const std::size_t channels = s[0], height = s[1], width = s[2];
  const std::size_t oh = height / 2, ow = width / 2;
  Tensor out(Shape{channels, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  auto xv = x.value().data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t base = (c * height + 2 * i) * width + 2 * j;
        const std::size_t candidates[4] = {base, base + 1, base + width, base + width + 1};
        std::size_t best = candidates[0];
        for (std::size_t q = 1; q < 4; ++q) {
          if (xv[candidates[q]] > xv[best]) best = candidates[q];
        }
        const std::size_t o = (c * oh + i) * ow + j;
        out[o] = xv[best];
        argmax[o] = best;
      }
    }
  }
  return unary(x, OpKind::MaxPool2d, std::move(out), [argmax = std::move(argmax)](const BackwardContext& ctx) {
    auto g = ctx.output_grad.data();
    auto t = ctx.input_grads[0]->data();
    for (std::size_t o = 0; o < g.size(); ++o) t[argmax[o]] += g[o];
  });
}

// ---------------------------------------------------------------------------
// Normalizations

Var softmax(Var a) {
  const Shape& s = a.shape();
  if (s.empty()) shape_error(OpKind::Softmax, s, "expected rank >= 1");
  const std::size_t last = s.back();
  const std::size_t rows = a.value().size() / last;
  Tensor out = a.value();
  auto ov = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = ov.data() + r * last;
    const double peak = *std::max_element(row, row + last);
    double total = 0.0;
    for (std::size_t i = 0; i < last; ++i) {
      row[i] = std::exp(row[i] - peak);
      total += row[i];
    }
    for (std::size_t i = 0; i < last; ++i) row[i] /= total;
  }
  return unary(a, OpKind::Softmax, std::move(out), [rows, last](const BackwardContext& ctx) {
    auto g = ctx.output_grad.data();
    auto y = ctx.output.data();
    auto t = ctx.input_grads[0]->data();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t off = r * last;
      double dot = 0.0;
      for (std::size_t i = 0; i < last; ++i) dot += g[off + i] * y[off + i];
      for (std::size_t i = 0; i < last; ++i) t[off + i] += y[off + i] * (g[off + i] - dot);
    }
  });
}

Var cross_entropy(Var logits, std::size_t label) {
  const Shape& s = logits.shape();
  if (s.size() != 1) shape_error(OpKind::CrossEntropy, s, "expected a logit vector");
  if (label >= s[0]) {
    throw std::invalid_argument("cross_entropy: label " + std::to_string(label) + " out of range for " +
                                to_string(s));
  }
  auto y = logits.value().data();
  const double peak = *std::max_element(y.begin(), y.end());
  double total = 0.0;
  for (double v : y) total += std::exp(v - peak);
  const double log_norm = peak + std::log(total);
  return unary(logits, OpKind::CrossEntropy, Tensor::scalar(log_norm - y[label]),
               [label, log_norm](const BackwardContext& ctx) {
                 const double g = ctx.output_grad[0];
                 auto yv = ctx.inputs[0]->data();
                 auto t = ctx.input_grads[0]->data();
                 for (std::size_t i = 0; i < yv.size(); ++i) {
                   const double p = std::exp(yv[i] - log_norm);
                   t[i] += g * (p - (i == label ? 1.0 : 0.0));
                 }
               });
}

Var range_normalize(Var a) {
  auto av = a.value().data();
  if (av.empty()) shape_error(OpKind::RangeNormalize, a.shape(), "expected a non-empty tensor");
  const std::size_t lo = first_argmin(av);
  const std::size_t hi = first_argmax(av);
  const double span_value = av[hi] - av[lo];
  Tensor out(a.shape(), 0.0);
  if (span_value > 0.0) {
    auto ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = (av[i] - av[lo]) / span_value;
  }
  return unary(a, OpKind::RangeNormalize, std::move(out), [lo, hi, span_value](const BackwardContext& ctx) {
    if (!(span_value > 0.0)) return;
    auto g = ctx.output_grad.data();
    auto y = ctx.output.data();
    auto t = ctx.input_grads[0]->data();
    double to_min = 0.0;
    double to_max = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      t[i] += g[i] / span_value;
      to_min += g[i] * (y[i] - 1.0);
      to_max -= g[i] * y[i];
    }
    t[lo] += to_min / span_value;
    t[hi] += to_max / span_value;
  });
}

Var max_normalize(Var a) {
  auto av = a.value().data();
  if (av.empty()) shape_error(OpKind::MaxNormalize, a.shape(), "expected a non-empty tensor");
  const std::size_t hi = first_argmax(av);
  const double peak = av[hi];
  Tensor out(a.shape(), 0.0);
  if (peak != 0.0) {
    auto ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] / peak;
  }
  return unary(a, OpKind::MaxNormalize, std::move(out), [hi, peak](const BackwardContext& ctx) {
    if (peak == 0.0) return;
    auto g = ctx.output_grad.data();
    auto y = ctx.output.data();
    auto t = ctx.input_grads[0]->data();
    double to_max = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      t[i] += g[i] / peak;
      to_max -= g[i] * y[i];
    }
    t[hi] += to_max / peak;
  });
}

// ---------------------------------------------------------------------------
// Resampling and layout

Var bilinear_upsample(Var a, std::size_t height, std::size_t width) {
  const Shape& s = a.shape();
  if (s.size() != 2) shape_error(OpKind::BilinearUpsample, s, "expected [h,w]");
  if (height < s[0] || width < s[1] || height == 0 || width == 0) {
    shape_error(OpKind::BilinearUpsample, s, Shape{height, width});
  }
  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t src, std::size_t dst) {
    std::vector<Tap> out(dst);
    for (std::size_t i = 0; i < dst; ++i) {
      const double pos = dst == 1 ? 0.0 : static_cast<double>(i * (src - 1)) / static_cast<double>(dst - 1);
      std::size_t lo = static_cast<std::size_t>(std::floor(pos));
      if (lo > src - 1) lo = src - 1;
      const std::size_t hi = std::min(lo + 1, src - 1);
      out[i] = Tap{lo, hi, pos - static_cast<double>(lo)};
    }
    return out;
  };
  const std::size_t src_w = s[1];
  auto rows = taps(s[0], height);
  auto cols = taps(s[1], width);
  Tensor out(Shape{height, width});
  auto av = a.value().data();
  for (std::size_t i = 0; i < height; ++i) {
    const Tap& r = rows[i];
    for (std::size_t j = 0; j < width; ++j) {
      const Tap& c = cols[j];
      const double top = av[r.lo * src_w + c.lo] * (1.0 - c.frac) + av[r.lo * src_w + c.hi] * c.frac;
      const double bottom = av[r.hi * src_w + c.lo] * (1.0 - c.frac) + av[r.hi * src_w + c.hi] * c.frac;
      out.at(i, j) = top * (1.0 - r.frac) + bottom * r.frac;
    }
  }
  return unary(a, OpKind::BilinearUpsample, std::move(out),
               [rows = std::move(rows), cols = std::move(cols), src_w](const BackwardContext& ctx) {
                 auto t = ctx.input_grads[0]->data();
                 const std::size_t width = cols.size();
                 for (std::size_t i = 0; i < rows.size(); ++i) {
                   const Tap& r = rows[i];
                   for (std::size_t j = 0; j < width; ++j) {
                     const Tap& c = cols[j];
                     const double g = ctx.output_grad[i * width + j];
                     t[r.lo * src_w + c.lo] += g * (1.0 - r.frac) * (1.0 - c.frac);
                     t[r.lo * src_w + c.hi] += g * (1.0 - r.frac) * c.frac;
                     t[r.hi * src_w + c.lo] += g * r.frac * (1.0 - c.frac);
                     t[r.hi * src_w + c.hi] += g * r.frac * c.frac;
                   }
                 }
               });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (first.empty()) shape_error(OpKind::Concat, first, "expected rank >= 1");
  Shape out_shape = first;
  out_shape[0] = 0;
  std::vector<std::size_t> ids;
  std::vector<double> data;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
      shape_error(OpKind::Concat, first, s);
    }
    out_shape[0] += s[0];
    ids.push_back(p.id());
    auto v = p.value().data();
    data.insert(data.end(), v.begin(), v.end());
  }
  return parts[0].tape().record(OpKind::Concat, std::move(ids), Tensor(std::move(out_shape), std::move(data)),
                                [](const BackwardContext& ctx) {
                                  std::size_t offset = 0;
                                  for (std::size_t k = 0; k < ctx.inputs.size(); ++k) {
                                    const std::size_t n = ctx.inputs[k]->size();
                                    if (auto* target = ctx.input_grads[k]) {
                                      auto t = target->data();
                                      for (std::size_t i = 0; i < n; ++i) t[i] += ctx.output_grad[offset + i];
                                    }
                                    offset += n;
                                  }
                                });
}

Var reshape(Var a, Shape shape) {
  if (shape_size(shape) != a.value().size()) shape_error(OpKind::Reshape, a.shape(), shape);
  return unary(a, OpKind::Reshape, a.value().reshaped(std::move(shape)), [](const BackwardContext& ctx) {
    auto g = ctx.output_grad.data();
    auto t = ctx.input_grads[0]->data();
    for (std::size_t i = 0; i < g.size(); ++i) t[i] += g[i];
  });
}

}  // namespace opticam::ad

#pragma once

// Reverse-mode automatic differentiation over whole tensors.
//
// A Tape records every operation of one forward pass in execution order, so
// the node list is always topologically sorted. Tapes are single-owner: build
// one per worker and never share it.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "opticam/tensor.hpp"

namespace opticam::ad {

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  AddScalar,
  MulScalar,
  RSubScalar,
  MatMul,
  Conv2d,
  Relu,
  MaxPool2d,
  GlobalAvgPool,
  Linear,
  Softmax,
  Sigmoid,
  Abs,
  Sum,
  Mean,
  BilinearUpsample,
  RangeNormalize,
  MaxNormalize,
  Concat,
  Reshape,
  CrossEntropy,
};

std::string_view op_name(OpKind kind);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// What a backward rule sees: the node's output and upstream gradient, its
/// input values, and (possibly null) input gradient accumulators.
struct BackwardContext {
  const Tensor& output;
  const Tensor& output_grad;
  std::span<const Tensor* const> inputs;
  std::span<Tensor* const> input_grads;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives a gradient during backward.
  Var variable(Tensor value);
  /// Leaf treated as a constant; no gradient flows into it.
  Var constant(Tensor value);

  Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward);

  /// Propagates d(root)/d(node) to every node that tracks gradients and is
  /// reachable from the root. Root must hold exactly one element.
  void backward(Var root);

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  OpKind kind(Var v) const { return nodes_.at(v.id()).kind; }
  const std::vector<std::size_t>& inputs(Var v) const { return nodes_.at(v.id()).inputs; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;  // deque keeps value references valid as the tape grows
};

// Element-wise ops require identical shapes; there is no broadcasting.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_scalar(Var a, double s);
Var mul_scalar(Var a, double s);
/// s - a
Var rsub_scalar(double s, Var a);

/// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);
/// x [Cin,H,W], weight [Cout,Cin,kh,kw] (odd kernel), bias [Cout]. Stride 1,
/// zero "same" padding.
Var conv2d(Var x, Var weight, Var bias);
Var relu(Var a);
/// 2x2 window, stride 2 over [C,H,W] with even H and W.
Var max_pool2d(Var x);
/// [C,H,W] -> [C]
Var global_average_pool(Var x);
/// x [K], weight [C,K], bias [C] -> [C]
Var linear(Var x, Var weight, Var bias);
/// Along the last axis.
Var softmax(Var a);
Var sigmoid(Var a);
Var abs(Var a);
Var sum(Var a);
Var mean(Var a);
/// Corner-aligned bilinear interpolation of [h,w] to [H,W], H >= h, W >= w.
Var bilinear_upsample(Var a, std::size_t height, std::size_t width);
/// (a - min a) / (max a - min a); all zeros when max == min.
Var range_normalize(Var a);
/// a / max a; all zeros when max == 0.
Var max_normalize(Var a);
/// Concatenates along axis 0; trailing extents must agree.
Var concat(std::span<const Var> parts);
Var reshape(Var a, Shape shape);
/// Fused log-softmax + negative log likelihood of `label` for a logit vector.
Var cross_entropy(Var logits, std::size_t label);

}  // namespace opticam::ad

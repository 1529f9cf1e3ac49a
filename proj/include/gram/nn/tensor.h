// Copyright 2026 The GRAM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef GRAM_NN_TENSOR_H_
#define GRAM_NN_TENSOR_H_

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gram/common.h"

namespace gram::nn {

using Shape = std::vector<int>;

size_t NumElements(const Shape& shape);
std::string ShapeToString(const Shape& shape);

struct Node;
using BackwardFn = std::function<void(Node& self)>;

// Graph node. `grad` is allocated on first accumulation.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  std::vector<double>& MutableGrad();
};

// Reference-counted handle to a dense row-major double array. Copies share
// storage; use Clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor Zeros(const Shape& shape, bool requires_grad = false);
  static Tensor Full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor FromData(const Shape& shape, std::vector<double> data,
                         bool requires_grad = false);
  static Tensor Scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  // Negative axes count from the end.
  int dim(int axis) const;
  size_t numel() const { return node_->value.size(); }

  std::vector<double>& data() { return node_->value; }
  const std::vector<double>& data() const { return node_->value; }
  std::vector<double>& grad() { return node_->MutableGrad(); }
  const std::vector<double>& grad_or_empty() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void ZeroGrad();

  Tensor Clone() const;
  // Leaf copy that shares no graph history.
  Tensor Detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Populates gradients of every requires_grad leaf reachable from `loss`.
// Leaf gradients accumulate across calls. Unless `retain_graph`, the graph's
// backward closures are released afterwards.
// Throws kShapeMismatch for non-scalar loss and kNonFinite for NaN/Inf.
void Backward(const Tensor& loss, bool retain_graph = false);

// While alive on this thread, ops record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool GradEnabled();

// Builds an op result. The backward closure is attached only when some
// input requires a gradient and grad mode is on.
Tensor MakeResult(Shape shape, std::vector<double> value,
                  std::vector<Tensor> inputs, BackwardFn backward);

}  // namespace gram::nn

#endif  // GRAM_NN_TENSOR_H_

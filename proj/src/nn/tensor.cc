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

#include "gram/nn/tensor.h"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace gram::nn {
namespace {

thread_local bool g_grad_enabled = true;

}  // namespace

size_t NumElements(const Shape& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

std::string ShapeToString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& Node::MutableGrad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::Zeros(const Shape& shape, bool requires_grad) {
  return Full(shape, 0.0, requires_grad);
}

Tensor Tensor::Full(const Shape& shape, double value, bool requires_grad) {
  return FromData(shape, std::vector<double>(NumElements(shape), value),
                  requires_grad);
}

Tensor Tensor::FromData(const Shape& shape, std::vector<double> data,
                        bool requires_grad) {
  Require(NumElements(shape) == data.size(), ErrorCode::kShapeMismatch,
          "data length " + std::to_string(data.size()) + " does not match shape " +
              ShapeToString(shape));
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::Scalar(double value, bool requires_grad) {
  return FromData({}, {value}, requires_grad);
}

int Tensor::dim(int axis) const {
  const int n = ndim();
  if (axis < 0) axis += n;
  Require(axis >= 0 && axis < n, ErrorCode::kShapeMismatch,
          "axis out of range for shape " + ShapeToString(shape()));
  return node_->shape[axis];
}

double Tensor::item() const {
  Require(numel() == 1, ErrorCode::kShapeMismatch,
          "item() on tensor of shape " + ShapeToString(shape()));
  return node_->value[0];
}

void Tensor::ZeroGrad() { node_->grad.clear(); }

Tensor Tensor::Clone() const {
  Tensor t = FromData(shape(), data(), requires_grad());
  t.node()->grad = node_->grad;
  return t;
}

Tensor Tensor::Detach() const { return FromData(shape(), data(), false); }

bool GradEnabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor MakeResult(Shape shape, std::vector<double> value,
                  std::vector<Tensor> inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void Backward(const Tensor& loss, bool retain_graph) {
  Require(loss.numel() == 1, ErrorCode::kShapeMismatch,
          "backward needs a scalar loss, got shape " + ShapeToString(loss.shape()));
  Require(std::isfinite(loss.item()), ErrorCode::kNonFinite,
          "loss is not finite");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->MutableGrad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  if (!retain_graph) {
    for (Node* node : order) {
      if (node->backward) {
        node->backward = nullptr;
        node->inputs.clear();
        node->grad.clear();
        node->grad.shrink_to_fit();
      }
    }
  }
}

}  // namespace gram::nn

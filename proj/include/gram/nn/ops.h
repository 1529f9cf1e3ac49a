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

#ifndef GRAM_NN_OPS_H_
#define GRAM_NN_OPS_H_

#include <vector>

#include "gram/nn/tensor.h"

namespace gram::nn {

// Elementwise arithmetic with numpy-style broadcasting.
Tensor Add(const Tensor& a, const Tensor& b);
Tensor Sub(const Tensor& a, const Tensor& b);
Tensor Mul(const Tensor& a, const Tensor& b);
Tensor Scale(const Tensor& x, double factor);
Tensor AddScalar(const Tensor& x, double value);

// a[..., K] x b[K, N] -> [..., N]; or batched a[G..., M, K] x b[G..., K, N]
// with identical leading dims. `transpose_b` reads b as [..., N, K].
Tensor MatMul(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor Reshape(const Tensor& x, const Shape& shape);
Tensor Permute(const Tensor& x, const std::vector<int>& perm);
// Swaps the last two axes.
Tensor Transpose(const Tensor& x);

Tensor Softmax(const Tensor& x);  // last axis
// Normalizes the last axis to zero mean / unit variance (no affine).
Tensor LayerNorm(const Tensor& x, double eps = 1e-5);
// LayerNorm followed by gamma * y + beta over the last axis.
Tensor LayerNorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = 1e-5);

Tensor Gelu(const Tensor& x);  // exact erf form
Tensor Silu(const Tensor& x);
Tensor Sigmoid(const Tensor& x);
Tensor Exp(const Tensor& x);
Tensor Softplus(const Tensor& x);
Tensor Square(const Tensor& x);

Tensor Sum(const Tensor& x);   // -> scalar
Tensor Mean(const Tensor& x);  // -> scalar
Tensor SumAxis(const Tensor& x, int axis);   // drops the axis
Tensor MeanAxis(const Tensor& x, int axis);  // drops the axis

// Rows along axis 0.
Tensor GatherRows(const Tensor& x, const std::vector<int>& rows);
// Places row i of x at row rows[i] of a zero tensor with `num_rows` rows.
Tensor ScatterRows(const Tensor& x, const std::vector<int>& rows, int num_rows);

Tensor Concat(const std::vector<Tensor>& parts, int axis);
Tensor Slice(const Tensor& x, int axis, int start, int length);

// Mean cross-entropy of logits [B, K] against class indices.
Tensor CrossEntropy(const Tensor& logits, const std::vector<int>& labels);
// Divides each row of the last axis by its L2 norm (plus eps).
Tensor NormalizeRows(const Tensor& x, double eps = 1e-12);

// Causal depthwise convolution over the sequence axis of x [B, L, D] with
// weights [K, D]: y[t] = bias + sum_k w[k] * x[t - (K - 1) + k].
Tensor CausalDepthwiseConv1d(const Tensor& x, const Tensor& weight,
                             const Tensor& bias);

// Scaled dot-product attention on q, k, v [B, L, D] split into `heads` heads
// of D / heads channels (head h owns channels [h * D / heads, ...)). With
// window > 0 each query attends only inside its contiguous group of
// `window` tokens; window = 0 attends over the whole sequence. Returns the
// concatenated heads [B, L, D].
Tensor MultiHeadAttention(const Tensor& q, const Tensor& k, const Tensor& v,
                          int heads, int window = 0);

enum class ScanAlgorithm { kSequential, kChunked };

struct ScanOptions {
  // Input matrix discretization: false uses B_bar = delta * B; true uses
  // the exact zero-order hold (exp(delta A) - 1) / A * B.
  bool exact_zoh = false;
  ScanAlgorithm algorithm = ScanAlgorithm::kSequential;
  int chunk_size = 16;
};

// Diagonal selective state-space scan. u, delta: [B, L, E]; a: [E, N]
// (negative); b, c: [B, L, N]. With A_bar = exp(delta * a):
//   h_t = A_bar_t * h_{t-1} + B_bar_t * u_t,  y_t = sum_n c_t[n] h_t[., n].
// Returns y [B, L, E].
Tensor SelectiveScan(const Tensor& u, const Tensor& delta, const Tensor& a,
                     const Tensor& b, const Tensor& c,
                     const ScanOptions& options = {});

}  // namespace gram::nn

#endif  // GRAM_NN_OPS_H_

// Copyright 2026 The QSV Authors. All Rights Reserved.
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

// Dense float32 tensors with reverse-mode automatic differentiation.
//
// Tensors are cheap shared handles; forward ops never mutate their inputs.
// Gradients are recorded on an explicit Tape and released by backward().
// Reductions accumulate in double with a fixed left-to-right order and
// round to float32, so forward results are deterministic for a given input.

#ifndef QSV_TENSOR_HPP
#define QSV_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace qsv {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, bool requires_grad = false);

  static Tensor from(std::vector<float> values, std::vector<int> shape,
                     bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);
  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, float value,
                     bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const;
  int dim(int i) const { return shape().at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(shape().size()); }
  int64_t numel() const;

  std::span<float> values();
  std::span<const float> values() const;
  float& at(int64_t i);
  float at(int64_t i) const;
  // Scalar accessor; throws if numel() != 1.
  float item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  // Gradient buffer, allocated zero-filled on first access.
  std::span<float> grad();
  std::span<const float> grad() const;
  bool has_grad() const;
  void zero_grad();

  // Identity of the underlying storage, for aliasing checks.
  const void* node_id() const { return node_.get(); }

 private:
  struct Node {
    std::vector<int> shape;
    std::vector<float> data;
    std::vector<float> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;
};

// Records one backward closure per forward op, in execution order.
// backward() replays them in reverse exactly once; a second call on the
// same tape is a usage error so gradients can never double-accumulate.
class Tape {
 public:
  void record(std::function<void()> backward_fn);
  void backward(const Tensor& loss);
  size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }
  void reset();

 private:
  std::vector<std::function<void()>> records_;
  bool consumed_ = false;
};

// Throws std::runtime_error if any value is NaN/Inf; `op` names the culprit.
void check_finite(const Tensor& t, const char* op);

// ---- differentiable primitives ----------------------------------------
// Every op takes the tape first; pass nullptr for inference-only forwards.

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
// x: [T, c1], w: [k, c1, c2]; output [T_out, c2] with
// T_out = floor((T + 2*pad - ((k-1)*dilation + 1)) / stride) + 1.
Tensor conv1d(Tape* tape, const Tensor& x, const Tensor& w, int stride = 1,
              int pad = 0, int dilation = 1);
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
// x: [T, c], bias: [c]; adds bias to every row.
Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& bias);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& x, double c);
Tensor relu(Tape* tape, const Tensor& x);
Tensor sum(Tape* tape, const Tensor& x);
Tensor mean(Tape* tape, const Tensor& x);
// Population variance over all elements.
Tensor variance(Tape* tape, const Tensor& x);
// x: [T, c], gamma/beta: [c]; per-channel normalization over rows.
Tensor batchnorm(Tape* tape, const Tensor& x, const Tensor& gamma,
                 const Tensor& beta, double eps = 1e-5);
// logits: [n] or [1, n]; returns scalar -log softmax(logits)[target].
Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits, int target);
// Cosine of the angle between two equal-length vectors.
Tensor cos_angle(Tape* tape, const Tensor& a, const Tensor& b);
// x: [T, c] -> [2c]: per-channel mean over rows, then per-channel std.
Tensor stats_pool(Tape* tape, const Tensor& x, double eps = 1e-5);

}  // namespace qsv

#endif  // QSV_TENSOR_HPP

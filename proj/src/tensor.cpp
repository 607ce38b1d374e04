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

#include "qsv/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace qsv {

namespace {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw std::invalid_argument("tensor extents must be positive");
    n *= e;
  }
  return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

Tensor::Tensor(std::vector<int> shape, bool requires_grad) {
  node_ = std::make_shared<Node>();
  node_->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::from(std::vector<float> values, std::vector<int> shape,
                    bool requires_grad) {
  if (static_cast<int64_t>(values.size()) != shape_numel(shape))
    throw std::invalid_argument("tensor data length does not match shape");
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = std::move(shape);
  t.node_->data = std::move(values);
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from({value}, {1}, requires_grad);
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  for (float& v : t.values()) v = value;
  return t;
}

const std::vector<int>& Tensor::shape() const {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return node_->shape;
}

int64_t Tensor::numel() const {
  return static_cast<int64_t>(node_ ? node_->data.size() : 0);
}

std::span<float> Tensor::values() {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return node_->data;
}

std::span<const float> Tensor::values() const {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return node_->data;
}

float& Tensor::at(int64_t i) { return values()[static_cast<size_t>(i)]; }
float Tensor::at(int64_t i) const { return values()[static_cast<size_t>(i)]; }

float Tensor::item() const {
  if (numel() != 1) throw std::logic_error("item() requires a scalar tensor");
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_) throw std::logic_error("use of undefined tensor");
  node_->requires_grad = flag;
}

std::span<float> Tensor::grad() {
  if (!node_) throw std::logic_error("use of undefined tensor");
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0f);
  return node_->grad;
}

std::span<const float> Tensor::grad() const {
  return const_cast<Tensor*>(this)->grad();
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty())
    node_->grad.assign(node_->data.size(), 0.0f);
}

void Tape::record(std::function<void()> backward_fn) {
  if (consumed_)
    throw std::logic_error("recording on a consumed tape; reset it first");
  records_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
  if (consumed_)
    throw std::logic_error("backward called twice on the same tape");
  if (loss.numel() != 1)
    throw std::logic_error("backward requires a scalar loss");
  if (records_.empty()) throw std::logic_error("backward on an empty tape");
  consumed_ = true;
  Tensor seed = loss;
  seed.grad()[0] = 1.0f;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
  records_.clear();
}

void Tape::reset() {
  records_.clear();
  consumed_ = false;
}

void check_finite(const Tensor& t, const char* op) {
  for (float v : t.values())
    if (!std::isfinite(v))
      throw std::runtime_error(std::string(op) +
                               ": non-finite value in forward result");
}

namespace {

bool track(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: inner dimensions disagree");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  std::vector<double> acc(static_cast<size_t>(n));
  for (int i = 0; i < m; ++i) {
    acc.assign(acc.size(), 0.0);
    for (int l = 0; l < k; ++l) {
      const double x = av[i * k + l];
      const float* brow = &bv[static_cast<size_t>(l) * n];
      for (int j = 0; j < n; ++j) acc[j] += x * brow[j];
    }
    for (int j = 0; j < n; ++j) ov[i * n + j] = static_cast<float>(acc[j]);
  }
  check_finite(out, "matmul");
  if (track(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc, m, k, n]() mutable {
      auto go = oc.grad();
      auto ga = ac.grad();
      auto gb = bc.grad();
      auto av2 = ac.values();
      auto bv2 = bc.values();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const float g = go[i * n + j];
          if (g == 0.0f) continue;
          for (int l = 0; l < k; ++l) {
            ga[i * k + l] += g * bv2[l * n + j];
            gb[l * n + j] += g * av2[i * k + l];
          }
        }
    });
  }
  return out;
}

Tensor conv1d(Tape* tape, const Tensor& x, const Tensor& w, int stride,
              int pad, int dilation) {
  if (x.rank() != 2 || w.rank() != 3)
    throw std::invalid_argument("conv1d: expects x [T,c1], w [k,c1,c2]");
  if (x.dim(1) != w.dim(1))
    throw std::invalid_argument("conv1d: channel mismatch");
  if (stride < 1 || pad < 0 || dilation < 1)
    throw std::invalid_argument("conv1d: invalid stride/pad/dilation");
  const int T = x.dim(0), c1 = x.dim(1);
  const int k = w.dim(0), c2 = w.dim(2);
  const int keff = (k - 1) * dilation + 1;
  if (keff > T + 2 * pad)
    throw std::invalid_argument("conv1d: kernel wider than padded input");
  const int tout = (T + 2 * pad - keff) / stride + 1;
  Tensor out({tout, c2});
  auto xv = x.values();
  auto wv = w.values();
  auto ov = out.values();
  std::vector<double> acc(static_cast<size_t>(c2));
  for (int t = 0; t < tout; ++t) {
    acc.assign(acc.size(), 0.0);
    for (int j = 0; j < k; ++j) {
      const int u = t * stride + j * dilation - pad;
      if (u < 0 || u >= T) continue;
      for (int i = 0; i < c1; ++i) {
        const double xu = xv[u * c1 + i];
        const float* wrow = &wv[(static_cast<size_t>(j) * c1 + i) * c2];
        for (int o = 0; o < c2; ++o) acc[o] += xu * wrow[o];
      }
    }
    for (int o = 0; o < c2; ++o) ov[t * c2 + o] = static_cast<float>(acc[o]);
  }
  check_finite(out, "conv1d");
  if (track(tape, {&x, &w})) {
    out.set_requires_grad(true);
    Tensor xc = x, wc = w, oc = out;
    tape->record([xc, wc, oc, stride, pad, dilation, T, c1, k, c2,
                  tout]() mutable {
      auto go = oc.grad();
      auto gx = xc.grad();
      auto gw = wc.grad();
      auto xv2 = xc.values();
      auto wv2 = wc.values();
      for (int t = 0; t < tout; ++t)
        for (int j = 0; j < k; ++j) {
          const int u = t * stride + j * dilation - pad;
          if (u < 0 || u >= T) continue;
          for (int i = 0; i < c1; ++i) {
            const float xu = xv2[u * c1 + i];
            const size_t wbase = (static_cast<size_t>(j) * c1 + i) * c2;
            float gxu = 0.0f;
            for (int o = 0; o < c2; ++o) {
              const float g = go[t * c2 + o];
              gxu += g * wv2[wbase + o];
              gw[wbase + o] += g * xu;
            }
            gx[u * c1 + i] += gxu;
          }
        }
    });
  }
  return out;
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  check_finite(out, "add");
  if (track(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc]() mutable {
      auto go = oc.grad();
      auto ga = ac.grad();
      auto gb = bc.grad();
      for (size_t i = 0; i < go.size(); ++i) {
        ga[i] += go[i];
        gb[i] += go[i];
      }
    });
  }
  return out;
}

Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1))
    throw std::invalid_argument("add_bias: expects x [T,c], bias [c]");
  const int T = x.dim(0), c = x.dim(1);
  Tensor out({T, c});
  auto xv = x.values();
  auto bv = bias.values();
  auto ov = out.values();
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < c; ++i) ov[t * c + i] = xv[t * c + i] + bv[i];
  check_finite(out, "add_bias");
  if (track(tape, {&x, &bias})) {
    out.set_requires_grad(true);
    Tensor xc = x, bc = bias, oc = out;
    tape->record([xc, bc, oc, T, c]() mutable {
      auto go = oc.grad();
      auto gx = xc.grad();
      auto gb = bc.grad();
      for (int t = 0; t < T; ++t)
        for (int i = 0; i < c; ++i) {
          gx[t * c + i] += go[t * c + i];
          gb[i] += go[t * c + i];
        }
    });
  }
  return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  check_finite(out, "mul");
  if (track(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc]() mutable {
      auto go = oc.grad();
      auto ga = ac.grad();
      auto gb = bc.grad();
      auto av2 = ac.values();
      auto bv2 = bc.values();
      for (size_t i = 0; i < go.size(); ++i) {
        ga[i] += go[i] * bv2[i];
        gb[i] += go[i] * av2[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape* tape, const Tensor& x, double c) {
  Tensor out(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i)
    ov[i] = static_cast<float>(xv[i] * c);
  check_finite(out, "scale");
  if (track(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc, c]() mutable {
      auto go = oc.grad();
      auto gx = xc.grad();
      for (size_t i = 0; i < go.size(); ++i)
        gx[i] += static_cast<float>(go[i] * c);
    });
  }
  return out;
}

Tensor relu(Tape* tape, const Tensor& x) {
  Tensor out(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
  check_finite(out, "relu");
  if (track(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      auto go = oc.grad();
      auto gx = xc.grad();
      auto xv2 = xc.values();
      for (size_t i = 0; i < go.size(); ++i)
        if (xv2[i] > 0.0f) gx[i] += go[i];
    });
  }
  return out;
}

Tensor sum(Tape* tape, const Tensor& x) {
  double acc = 0.0;
  for (float v : x.values()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  check_finite(out, "sum");
  if (track(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      const float g = oc.grad()[0];
      auto gx = xc.grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor mean(Tape* tape, const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  double acc = 0.0;
  for (float v : x.values()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc / n));
  check_finite(out, "mean");
  if (track(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc, n]() mutable {
      const float g = static_cast<float>(oc.grad()[0] / n);
      auto gx = xc.grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor variance(Tape* tape, const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  double m = 0.0;
  for (float v : x.values()) m += v;
  m /= n;
  double acc = 0.0;
  for (float v : x.values()) acc += (v - m) * (v - m);
  Tensor out = Tensor::scalar(static_cast<float>(acc / n));
  check_finite(out, "variance");
  if (track(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc, m, n]() mutable {
      const double g = oc.grad()[0];
      auto gx = xc.grad();
      auto xv2 = xc.values();
      for (size_t i = 0; i < gx.size(); ++i)
        gx[i] += static_cast<float>(g * 2.0 * (xv2[i] - m) / n);
    });
  }
  return out;
}

Tensor batchnorm(Tape* tape, const Tensor& x, const Tensor& gamma,
                 const Tensor& beta, double eps) {
  if (x.rank() != 2 || gamma.rank() != 1 || beta.rank() != 1 ||
      gamma.dim(0) != x.dim(1) || beta.dim(0) != x.dim(1))
    throw std::invalid_argument("batchnorm: expects x [T,c], gamma/beta [c]");
  const int T = x.dim(0), c = x.dim(1);
  Tensor out({T, c});
  std::vector<double> mu(static_cast<size_t>(c), 0.0);
  std::vector<double> inv_sd(static_cast<size_t>(c), 0.0);
  auto xv = x.values();
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < c; ++i) mu[i] += xv[t * c + i];
  for (int i = 0; i < c; ++i) mu[i] /= T;
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < c; ++i) {
      const double d = xv[t * c + i] - mu[i];
      inv_sd[i] += d * d;
    }
  for (int i = 0; i < c; ++i) inv_sd[i] = 1.0 / std::sqrt(inv_sd[i] / T + eps);
  auto gv = gamma.values();
  auto bv = beta.values();
  auto ov = out.values();
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < c; ++i)
      ov[t * c + i] = static_cast<float>(
          gv[i] * (xv[t * c + i] - mu[i]) * inv_sd[i] + bv[i]);
  check_finite(out, "batchnorm");
  if (track(tape, {&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    Tensor xc = x, gc = gamma, bc = beta, oc = out;
    tape->record([xc, gc, bc, oc, mu, inv_sd, T, c]() mutable {
      auto go = oc.grad();
      auto gx = xc.grad();
      auto gg = gc.grad();
      auto gb = bc.grad();
      auto xv2 = xc.values();
      auto gv2 = gc.values();
      for (int i = 0; i < c; ++i) {
        double sum_g = 0.0, sum_gxhat = 0.0;
        for (int t = 0; t < T; ++t) {
          const double xhat = (xv2[t * c + i] - mu[i]) * inv_sd[i];
          sum_g += go[t * c + i];
          sum_gxhat += go[t * c + i] * xhat;
        }
        gg[i] += static_cast<float>(sum_gxhat);
        gb[i] += static_cast<float>(sum_g);
        for (int t = 0; t < T; ++t) {
          const double xhat = (xv2[t * c + i] - mu[i]) * inv_sd[i];
          gx[t * c + i] += static_cast<float>(
              gv2[i] * inv_sd[i] *
              (go[t * c + i] - sum_g / T - xhat * sum_gxhat / T));
        }
      }
    });
  }
  return out;
}

Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits, int target) {
  const int64_t n = logits.numel();
  if (logits.rank() > 2 || (logits.rank() == 2 && logits.dim(0) != 1))
    throw std::invalid_argument("softmax_cross_entropy: expects a vector");
  if (target < 0 || target >= n)
    throw std::invalid_argument("softmax_cross_entropy: target out of range");
  auto lv = logits.values();
  double mx = lv[0];
  for (float v : lv) mx = std::max(mx, static_cast<double>(v));
  double z = 0.0;
  for (float v : lv) z += std::exp(v - mx);
  const double logz = std::log(z) + mx;
  Tensor out = Tensor::scalar(static_cast<float>(logz - lv[target]));
  check_finite(out, "softmax_cross_entropy");
  if (track(tape, {&logits})) {
    out.set_requires_grad(true);
    Tensor lc = logits, oc = out;
    tape->record([lc, oc, target, logz]() mutable {
      const float g = oc.grad()[0];
      auto gl = lc.grad();
      auto lv2 = lc.values();
      for (size_t i = 0; i < gl.size(); ++i) {
        const double p = std::exp(lv2[i] - logz);
        gl[i] += static_cast<float>(
            g * (p - (static_cast<int>(i) == target ? 1.0 : 0.0)));
      }
    });
  }
  return out;
}

Tensor cos_angle(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel())
    throw std::invalid_argument("cos_angle: length mismatch");
  auto av = a.values();
  auto bv = b.values();
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < av.size(); ++i) {
    dot += static_cast<double>(av[i]) * bv[i];
    na += static_cast<double>(av[i]) * av[i];
    nb += static_cast<double>(bv[i]) * bv[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na == 0.0 || nb == 0.0)
    throw std::runtime_error("cos_angle: zero-norm input");
  const double c = dot / (na * nb);
  Tensor out = Tensor::scalar(static_cast<float>(c));
  check_finite(out, "cos_angle");
  if (track(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc, c, na, nb]() mutable {
      const double g = oc.grad()[0];
      auto ga = ac.grad();
      auto gb = bc.grad();
      auto av2 = ac.values();
      auto bv2 = bc.values();
      for (size_t i = 0; i < ga.size(); ++i) {
        ga[i] += static_cast<float>(
            g * (bv2[i] / (na * nb) - c * av2[i] / (na * na)));
        gb[i] += static_cast<float>(
            g * (av2[i] / (na * nb) - c * bv2[i] / (nb * nb)));
      }
    });
  }
  return out;
}

Tensor stats_pool(Tape* tape, const Tensor& x, double eps) {
  if (x.rank() != 2) throw std::invalid_argument("stats_pool: expects [T,c]");
  const int T = x.dim(0), c = x.dim(1);
  std::vector<double> mu(static_cast<size_t>(c), 0.0);
  std::vector<double> sd(static_cast<size_t>(c), 0.0);
  auto xv = x.values();
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < c; ++i) mu[i] += xv[t * c + i];
  for (int i = 0; i < c; ++i) mu[i] /= T;
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < c; ++i) {
      const double d = xv[t * c + i] - mu[i];
      sd[i] += d * d;
    }
  for (int i = 0; i < c; ++i) sd[i] = std::sqrt(sd[i] / T + eps);
  Tensor out({2 * c});
  auto ov = out.values();
  for (int i = 0; i < c; ++i) {
    ov[i] = static_cast<float>(mu[i]);
    ov[c + i] = static_cast<float>(sd[i]);
  }
  check_finite(out, "stats_pool");
  if (track(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc, mu, sd, T, c]() mutable {
      auto go = oc.grad();
      auto gx = xc.grad();
      auto xv2 = xc.values();
      for (int i = 0; i < c; ++i) {
        const double gmu = go[i];
        const double gsd = go[c + i];
        for (int t = 0; t < T; ++t)
          gx[t * c + i] += static_cast<float>(
              gmu / T + gsd * (xv2[t * c + i] - mu[i]) / (T * sd[i]));
      }
    });
  }
  return out;
}

}  // namespace qsv

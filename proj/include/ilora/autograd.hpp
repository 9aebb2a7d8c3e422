// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// Minimal reverse-mode autodiff over Eigen float matrices.
//
// Feature maps are stored channels x (batch * height * width), pixels in
// row-major order within each batch item. Token sequences use the same layout
// with height = tokens and width = 1. Weights are plain matrices.

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

namespace ilora::ag {

using Matrix = Eigen::MatrixXf;

struct Geom {
  int batch = 1;
  int height = 1;
  int width = 1;

  int pixels() const { return height * width; }
  int cols() const { return batch * height * width; }
  bool operator==(const Geom&) const = default;
};

struct Node;

class Tensor {
 public:
  Tensor() = default;

  /// Leaf without gradient tracking.
  static Tensor constant(Matrix value, Geom geom = {});
  /// Leaf that accumulates gradients.
  static Tensor leaf(Matrix value, bool requires_grad = true, Geom geom = {});

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const;
  /// Direct write access; invalidates nothing, use only on leaves.
  Matrix& mutable_value();
  const Matrix& grad() const;
  bool has_grad() const;
  Geom geom() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
  void set_requires_grad(bool on);

  /// Back-propagates from a 1x1 tensor. Returns the bytes held by the graph's
  /// values and gradients at the end of the pass.
  std::size_t backward();
  void zero_grad();

  /// Same value, cut from the graph.
  Tensor detach() const;

  std::shared_ptr<Node> node() const { return node_; }

 private:
  friend Tensor make_op(Matrix value, Geom geom, std::vector<Tensor> inputs,
                        std::function<void(Node&)> backward);
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;
};

struct Node {
  Matrix value;
  Matrix grad;
  Geom geom;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g);
  Matrix& grad_buffer();  // zero-initialised on first use
};

/// Builds an op result; records the graph only when grad mode is on and some
/// input requires gradients.
Tensor make_op(Matrix value, Geom geom, std::vector<Tensor> inputs, std::function<void(Node&)> backward);

bool grad_enabled();

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// --- elementwise -----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);
Tensor square(const Tensor& a);
Tensor pow(const Tensor& a, float exponent);
Tensor silu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, float slope = 0.2f);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor softplus(const Tensor& a);

// --- broadcasting ----------------------------------------------------------
/// x (C x N) + b (C x 1)
Tensor add_bias(const Tensor& x, const Tensor& b);
/// x (C x N) * g (C x 1)
Tensor mul_channel(const Tensor& x, const Tensor& g);
/// x (C x B*P) + e (C x B)
Tensor add_per_batch(const Tensor& x, const Tensor& e);
/// x (C x B*P) * s (C x B)
Tensor mul_per_batch(const Tensor& x, const Tensor& s);

// --- linear algebra --------------------------------------------------------
/// a (m x k) * b (k x n); result takes b's geometry.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, int begin, int count);
/// Repeats a C x T sequence for each of `batch` items: C x (batch*T).
Tensor repeat_batch(const Tensor& x, int batch);

// --- spatial ---------------------------------------------------------------
/// Same-padded stride-1 convolution. w is Cout x (k*k*Cin), rows of the patch
/// ordered (ky, kx, cin).
Tensor conv2d(const Tensor& x, const Tensor& w, int kernel);
/// Sums w^2 over kernel taps: (Cout x k*k*Cin) -> Cout x Cin.
Tensor kernel_energy(const Tensor& w, int kernel);
Tensor avg_pool2(const Tensor& x);
Tensor upsample2(const Tensor& x);
/// Nearest-neighbour upsampling by an integer factor.
Tensor upsample(const Tensor& x, int factor);
Tensor group_norm(const Tensor& x, int groups, float eps = 1e-5f);
/// Mean over pixels per batch item: C x B*P -> C x B.
Tensor spatial_mean(const Tensor& x);

// --- attention -------------------------------------------------------------
/// Single-head scaled dot-product attention per batch item.
/// q: d x (B*N), k and v: d x (B*M). Output d x (B*N) with q's geometry.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int kv_tokens);

// --- reductions & losses -----------------------------------------------------
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x);
/// Mean squared error against a constant target over all entries.
Tensor mse(const Tensor& pred, const Matrix& target);

// --- vector quantization ---------------------------------------------------
struct Quantized {
  Tensor straight_through;   // value = nearest code, gradient passes to z
  Tensor codes;              // value = nearest code, gradient flows into codebook
  std::vector<int> indices;  // per column of z
};
/// z: D x N, codebook: D x K (one code per column).
Quantized quantize(const Tensor& z, const Tensor& codebook);
/// Looks up codebook columns: D x N with the given geometry.
Tensor gather_codes(const Tensor& codebook, const std::vector<int>& indices, Geom geom);

// --- optimization ----------------------------------------------------------
struct AdamOptions {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);
  void step();
  void zero_grad();
  const std::vector<Tensor>& params() const { return params_; }
  std::size_t state_bytes() const;

 private:
  std::vector<Tensor> params_;
  std::vector<Matrix> m_, v_;
  AdamOptions opt_;
  long t_ = 0;
};

}  // namespace ilora::ag

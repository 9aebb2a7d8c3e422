// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include "ilora/common.hpp"

namespace ilora::ag {

namespace {

thread_local bool g_grad_enabled = true;

void require(bool cond, const char* what) {
  if (!cond) throw ConfigError(what);
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace

// --- Node / Tensor -----------------------------------------------------------

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Matrix& Node::grad_buffer() {
  if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
  return grad;
}

Tensor Tensor::constant(Matrix value, Geom geom) {
  auto n = std::make_shared<Node>();
  if (geom.cols() != value.cols()) geom = Geom{1, 1, static_cast<int>(value.cols())};
  n->value = std::move(value);
  n->geom = geom;
  return Tensor(std::move(n));
}

Tensor Tensor::leaf(Matrix value, bool requires_grad, Geom geom) {
  auto n = std::make_shared<Node>();
  n->geom = geom.cols() == value.cols() ? geom : Geom{1, 1, static_cast<int>(value.cols())};
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

const Matrix& Tensor::value() const { return node_->value; }
Matrix& Tensor::mutable_value() { return node_->value; }

const Matrix& Tensor::grad() const {
  if (node_->grad.size() == 0) node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols());
  return node_->grad;
}

bool Tensor::has_grad() const { return node_->grad.size() != 0; }
Geom Tensor::geom() const { return node_->geom; }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
void Tensor::zero_grad() { node_->grad.resize(0, 0); }

Tensor Tensor::detach() const { return Tensor::constant(node_->value, node_->geom); }

std::size_t Tensor::backward() {
  if (value().size() != 1) throw ConfigError("backward() needs a scalar tensor");
  if (!requires_grad()) return 0;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad = Matrix::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
  std::size_t bytes = 0;
  for (Node* n : order) bytes += static_cast<std::size_t>(n->value.size() + n->grad.size()) * sizeof(float);
  return bytes;
}

Tensor make_op(Matrix value, Geom geom, std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->geom = geom;
  if (g_grad_enabled) {
    for (const auto& t : inputs) {
      if (t.requires_grad()) {
        n->requires_grad = true;
        break;
      }
    }
    if (n->requires_grad) {
      n->parents.reserve(inputs.size());
      for (const auto& t : inputs) n->parents.push_back(t.node());
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// --- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return make_op(a.value() + b.value(), a.geom(), {a, b}, [](Node& s) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (parent(s, i).requires_grad) parent(s, i).accumulate(s.grad);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  return make_op(a.value() - b.value(), a.geom(), {a, b}, [](Node& s) {
    if (parent(s, 0).requires_grad) parent(s, 0).accumulate(s.grad);
    if (parent(s, 1).requires_grad) parent(s, 1).accumulate(-s.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  return make_op(a.value().cwiseProduct(b.value()), a.geom(), {a, b}, [](Node& s) {
    auto& pa = parent(s, 0);
    auto& pb = parent(s, 1);
    if (pa.requires_grad) pa.accumulate(s.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate(s.grad.cwiseProduct(pa.value));
  });
}

Tensor scale(const Tensor& a, float k) {
  return make_op(a.value() * k, a.geom(), {a}, [k](Node& s) { parent(s, 0).accumulate(s.grad * k); });
}

Tensor add_scalar(const Tensor& a, float k) {
  return make_op((a.value().array() + k).matrix(), a.geom(), {a},
                 [](Node& s) { parent(s, 0).accumulate(s.grad); });
}

Tensor square(const Tensor& a) {
  return make_op(a.value().cwiseAbs2(), a.geom(), {a}, [](Node& s) {
    auto& p = parent(s, 0);
    p.accumulate(2.0f * s.grad.cwiseProduct(p.value));
  });
}

Tensor pow(const Tensor& a, float e) {
  return make_op(a.value().array().pow(e).matrix(), a.geom(), {a}, [e](Node& s) {
    auto& p = parent(s, 0);
    p.accumulate((s.grad.array() * e * p.value.array().pow(e - 1.0f)).matrix());
  });
}

Tensor silu(const Tensor& a) {
  const Eigen::ArrayXXf sig = (1.0f + (-a.value().array()).exp()).inverse();
  Matrix out = (a.value().array() * sig).matrix();
  return make_op(std::move(out), a.geom(), {a}, [sig](Node& s) {
    auto& p = parent(s, 0);
    p.accumulate((s.grad.array() * (sig * (1.0f + p.value.array() * (1.0f - sig)))).matrix());
  });
}

Tensor leaky_relu(const Tensor& a, float slope) {
  Matrix out = a.value().unaryExpr([slope](float v) { return v > 0 ? v : slope * v; });
  return make_op(std::move(out), a.geom(), {a}, [slope](Node& s) {
    auto& p = parent(s, 0);
    p.accumulate(s.grad.binaryExpr(p.value, [slope](float g, float v) { return v > 0 ? g : slope * g; }));
  });
}

Tensor relu(const Tensor& a) { return leaky_relu(a, 0.0f); }

Tensor tanh(const Tensor& a) {
  Matrix out = a.value().array().tanh().matrix();
  return make_op(out, a.geom(), {a}, [out](Node& s) {
    parent(s, 0).accumulate((s.grad.array() * (1.0f - out.array().square())).matrix());
  });
}

Tensor softplus(const Tensor& a) {
  Matrix out = a.value().unaryExpr([](float v) { return std::max(v, 0.0f) + std::log1p(std::exp(-std::abs(v))); });
  return make_op(std::move(out), a.geom(), {a}, [](Node& s) {
    auto& p = parent(s, 0);
    p.accumulate(s.grad.binaryExpr(p.value, [](float g, float v) { return g / (1.0f + std::exp(-v)); }));
  });
}

// --- broadcasting ------------------------------------------------------------

Tensor add_bias(const Tensor& x, const Tensor& b) {
  require(b.cols() == 1 && b.rows() == x.rows(), "add_bias: bias must be C x 1");
  Matrix out = x.value().colwise() + b.value().col(0);
  return make_op(std::move(out), x.geom(), {x, b}, [](Node& s) {
    if (parent(s, 0).requires_grad) parent(s, 0).accumulate(s.grad);
    if (parent(s, 1).requires_grad) parent(s, 1).accumulate(s.grad.rowwise().sum());
  });
}

Tensor mul_channel(const Tensor& x, const Tensor& g) {
  require(g.cols() == 1 && g.rows() == x.rows(), "mul_channel: gain must be C x 1");
  Matrix out = g.value().col(0).asDiagonal() * x.value();
  return make_op(std::move(out), x.geom(), {x, g}, [](Node& s) {
    auto& px = parent(s, 0);
    auto& pg = parent(s, 1);
    if (px.requires_grad) px.accumulate(pg.value.col(0).asDiagonal() * s.grad);
    if (pg.requires_grad) pg.accumulate(s.grad.cwiseProduct(px.value).rowwise().sum());
  });
}

Tensor add_per_batch(const Tensor& x, const Tensor& e) {
  const Geom g = x.geom();
  require(e.rows() == x.rows() && e.cols() == g.batch, "add_per_batch: expected C x B");
  const int P = g.pixels();
  Matrix out = x.value();
  for (int b = 0; b < g.batch; ++b) out.middleCols(b * P, P).colwise() += e.value().col(b);
  return make_op(std::move(out), g, {x, e}, [P](Node& s) {
    if (parent(s, 0).requires_grad) parent(s, 0).accumulate(s.grad);
    auto& pe = parent(s, 1);
    if (pe.requires_grad) {
      Matrix& ge = pe.grad_buffer();
      for (int b = 0; b < s.geom.batch; ++b) ge.col(b) += s.grad.middleCols(b * P, P).rowwise().sum();
    }
  });
}

Tensor mul_per_batch(const Tensor& x, const Tensor& sc) {
  const Geom g = x.geom();
  require(sc.rows() == x.rows() && sc.cols() == g.batch, "mul_per_batch: expected C x B");
  const int P = g.pixels();
  Matrix out(x.rows(), x.cols());
  for (int b = 0; b < g.batch; ++b) {
    out.middleCols(b * P, P) = sc.value().col(b).asDiagonal() * x.value().middleCols(b * P, P);
  }
  return make_op(std::move(out), g, {x, sc}, [P](Node& s) {
    auto& px = parent(s, 0);
    auto& ps = parent(s, 1);
    if (px.requires_grad) {
      Matrix& gx = px.grad_buffer();
      for (int b = 0; b < s.geom.batch; ++b) {
        gx.middleCols(b * P, P) += ps.value.col(b).asDiagonal() * s.grad.middleCols(b * P, P);
      }
    }
    if (ps.requires_grad) {
      Matrix& gs = ps.grad_buffer();
      for (int b = 0; b < s.geom.batch; ++b) {
        gs.col(b) += s.grad.middleCols(b * P, P).cwiseProduct(px.value.middleCols(b * P, P)).rowwise().sum();
      }
    }
  });
}

// --- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Matrix out;
  out.noalias() = a.value() * b.value();
  return make_op(std::move(out), b.geom(), {a, b}, [](Node& s) {
    auto& pa = parent(s, 0);
    auto& pb = parent(s, 1);
    if (pa.requires_grad) pa.grad_buffer().noalias() += s.grad * pb.value.transpose();
    if (pb.requires_grad) pb.grad_buffer().noalias() += pa.value.transpose() * s.grad;
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.cols(), "concat_channels: column mismatch");
  Matrix out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.value();
  out.bottomRows(b.rows()) = b.value();
  const auto ra = a.rows();
  return make_op(std::move(out), a.geom(), {a, b}, [ra](Node& s) {
    if (parent(s, 0).requires_grad) parent(s, 0).accumulate(s.grad.topRows(ra));
    if (parent(s, 1).requires_grad) parent(s, 1).accumulate(s.grad.bottomRows(s.grad.rows() - ra));
  });
}

Tensor slice_channels(const Tensor& x, int begin, int count) {
  require(begin >= 0 && count > 0 && begin + count <= x.rows(), "slice_channels: out of range");
  return make_op(x.value().middleRows(begin, count), x.geom(), {x}, [begin, count](Node& s) {
    parent(s, 0).grad_buffer().middleRows(begin, count) += s.grad;
  });
}

Tensor repeat_batch(const Tensor& x, int batch) {
  const auto T = x.cols();
  Matrix out(x.rows(), T * batch);
  for (int b = 0; b < batch; ++b) out.middleCols(b * T, T) = x.value();
  return make_op(std::move(out), Geom{batch, static_cast<int>(T), 1}, {x}, [T, batch](Node& s) {
    Matrix& g = parent(s, 0).grad_buffer();
    for (int b = 0; b < batch; ++b) g += s.grad.middleCols(b * T, T);
  });
}

// --- spatial -----------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, int kernel) {
  const Geom g = x.geom();
  const int C = static_cast<int>(x.rows());
  require(w.cols() == kernel * kernel * C, "conv2d: weight does not match input channels");
  if (kernel == 1) return matmul(w, x);
  require(kernel % 2 == 1, "conv2d: kernel must be odd");

  const int H = g.height, W = g.width, B = g.batch, pad = kernel / 2;
  const int taps = kernel * kernel;
  Matrix cols = Matrix::Zero(taps * C, g.cols());
  const float* src = x.value().data();
  float* dst = cols.data();
  const std::size_t rows = static_cast<std::size_t>(taps) * C;
  for (int b = 0; b < B; ++b) {
    for (int y = 0; y < H; ++y) {
      for (int xx = 0; xx < W; ++xx) {
        const std::size_t col = static_cast<std::size_t>(b) * H * W + static_cast<std::size_t>(y) * W + xx;
        for (int ky = 0; ky < kernel; ++ky) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= H) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int sx = xx + kx - pad;
            if (sx < 0 || sx >= W) continue;
            const std::size_t scol = static_cast<std::size_t>(b) * H * W + static_cast<std::size_t>(sy) * W + sx;
            std::memcpy(dst + col * rows + static_cast<std::size_t>(ky * kernel + kx) * C, src + scol * C,
                        sizeof(float) * C);
          }
        }
      }
    }
  }
  Matrix out;
  out.noalias() = w.value() * cols;
  return make_op(std::move(out), g, {x, w}, [cols = std::move(cols), kernel, C, rows](Node& s) {
    auto& px = parent(s, 0);
    auto& pw = parent(s, 1);
    if (pw.requires_grad) pw.grad_buffer().noalias() += s.grad * cols.transpose();
    if (!px.requires_grad) return;
    Matrix dcols;
    dcols.noalias() = pw.value.transpose() * s.grad;
    Matrix& gx = px.grad_buffer();
    const Geom g = s.geom;
    const int H = g.height, W = g.width, pad = kernel / 2;
    const float* dc = dcols.data();
    float* gd = gx.data();
    for (int b = 0; b < g.batch; ++b) {
      for (int y = 0; y < H; ++y) {
        for (int xx = 0; xx < W; ++xx) {
          const std::size_t col = static_cast<std::size_t>(b) * H * W + static_cast<std::size_t>(y) * W + xx;
          for (int ky = 0; ky < kernel; ++ky) {
            const int sy = y + ky - pad;
            if (sy < 0 || sy >= H) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              const int sx = xx + kx - pad;
              if (sx < 0 || sx >= W) continue;
              const std::size_t scol = static_cast<std::size_t>(b) * H * W + static_cast<std::size_t>(sy) * W + sx;
              const float* from = dc + col * rows + static_cast<std::size_t>(ky * kernel + kx) * C;
              float* to = gd + scol * C;
              for (int c = 0; c < C; ++c) to[c] += from[c];
            }
          }
        }
      }
    }
  });
}

Tensor kernel_energy(const Tensor& w, int kernel) {
  const int taps = kernel * kernel;
  require(w.cols() % taps == 0, "kernel_energy: bad weight width");
  const int C = static_cast<int>(w.cols()) / taps;
  Matrix out = Matrix::Zero(w.rows(), C);
  for (int t = 0; t < taps; ++t) out += w.value().middleCols(t * C, C).cwiseAbs2();
  return make_op(std::move(out), Geom{1, 1, C}, {w}, [taps, C](Node& s) {
    auto& pw = parent(s, 0);
    Matrix& gw = pw.grad_buffer();
    for (int t = 0; t < taps; ++t) {
      gw.middleCols(t * C, C) += 2.0f * pw.value.middleCols(t * C, C).cwiseProduct(s.grad);
    }
  });
}

Tensor avg_pool2(const Tensor& x) {
  const Geom g = x.geom();
  require(g.height % 2 == 0 && g.width % 2 == 0, "avg_pool2: odd spatial size");
  const Geom og{g.batch, g.height / 2, g.width / 2};
  Matrix out = Matrix::Zero(x.rows(), og.cols());
  const auto& v = x.value();
  for (int b = 0; b < g.batch; ++b) {
    for (int y = 0; y < g.height; ++y) {
      for (int xx = 0; xx < g.width; ++xx) {
        out.col(b * og.pixels() + (y / 2) * og.width + xx / 2) += 0.25f * v.col(b * g.pixels() + y * g.width + xx);
      }
    }
  }
  return make_op(std::move(out), og, {x}, [g](Node& s) {
    Matrix& gx = parent(s, 0).grad_buffer();
    const Geom og = s.geom;
    for (int b = 0; b < g.batch; ++b) {
      for (int y = 0; y < g.height; ++y) {
        for (int xx = 0; xx < g.width; ++xx) {
          gx.col(b * g.pixels() + y * g.width + xx) += 0.25f * s.grad.col(b * og.pixels() + (y / 2) * og.width + xx / 2);
        }
      }
    }
  });
}

Tensor upsample(const Tensor& x, int f) {
  const Geom g = x.geom();
  const Geom og{g.batch, g.height * f, g.width * f};
  Matrix out(x.rows(), og.cols());
  const auto& v = x.value();
  for (int b = 0; b < g.batch; ++b) {
    for (int y = 0; y < og.height; ++y) {
      for (int xx = 0; xx < og.width; ++xx) {
        out.col(b * og.pixels() + y * og.width + xx) = v.col(b * g.pixels() + (y / f) * g.width + xx / f);
      }
    }
  }
  return make_op(std::move(out), og, {x}, [g, f](Node& s) {
    Matrix& gx = parent(s, 0).grad_buffer();
    const Geom og = s.geom;
    for (int b = 0; b < g.batch; ++b) {
      for (int y = 0; y < og.height; ++y) {
        for (int xx = 0; xx < og.width; ++xx) {
          gx.col(b * g.pixels() + (y / f) * g.width + xx / f) += s.grad.col(b * og.pixels() + y * og.width + xx);
        }
      }
    }
  });
}

Tensor upsample2(const Tensor& x) { return upsample(x, 2); }

Tensor group_norm(const Tensor& x, int groups, float eps) {
  const Geom g = x.geom();
  const int C = static_cast<int>(x.rows());
  require(C % groups == 0, "group_norm: channels not divisible by groups");
  const int cg = C / groups, P = g.pixels();
  const float n = static_cast<float>(cg * P);
  Matrix out(C, g.cols());
  Eigen::MatrixXf inv_std(groups, g.batch);
  for (int b = 0; b < g.batch; ++b) {
    for (int k = 0; k < groups; ++k) {
      const auto blk = x.value().block(k * cg, b * P, cg, P);
      const float mu = blk.sum() / n;
      const float var = (blk.array() - mu).square().sum() / n;
      const float is = 1.0f / std::sqrt(var + eps);
      inv_std(k, b) = is;
      out.block(k * cg, b * P, cg, P) = ((blk.array() - mu) * is).matrix();
    }
  }
  return make_op(out, g, {x}, [out, inv_std, groups, cg, P, n](Node& s) {
    Matrix& gx = parent(s, 0).grad_buffer();
    for (int b = 0; b < s.geom.batch; ++b) {
      for (int k = 0; k < groups; ++k) {
        const auto dy = s.grad.block(k * cg, b * P, cg, P).array();
        const auto xh = out.block(k * cg, b * P, cg, P).array();
        const float sum_dy = dy.sum();
        const float sum_dyx = (dy * xh).sum();
        gx.block(k * cg, b * P, cg, P).array() += (inv_std(k, b) / n) * (n * dy - sum_dy - xh * sum_dyx);
      }
    }
  });
}

Tensor spatial_mean(const Tensor& x) {
  const Geom g = x.geom();
  const int P = g.pixels();
  Matrix out(x.rows(), g.batch);
  for (int b = 0; b < g.batch; ++b) out.col(b) = x.value().middleCols(b * P, P).rowwise().mean();
  return make_op(std::move(out), Geom{1, 1, g.batch}, {x}, [g, P](Node& s) {
    Matrix& gx = parent(s, 0).grad_buffer();
    for (int b = 0; b < g.batch; ++b) gx.middleCols(b * P, P).colwise() += s.grad.col(b) / static_cast<float>(P);
  });
}

// --- attention -----------------------------------------------------------------

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int M) {
  const Geom g = q.geom();
  const int N = g.pixels(), B = g.batch;
  require(k.rows() == q.rows() && k.cols() == static_cast<Eigen::Index>(B) * M && v.cols() == k.cols(),
          "attention: shape mismatch");
  const float sc = 1.0f / std::sqrt(static_cast<float>(q.rows()));
  Matrix out(v.rows(), g.cols());
  std::vector<Matrix> probs(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    Matrix S;
    S.noalias() = q.value().middleCols(b * N, N).transpose() * k.value().middleCols(b * M, M);
    S *= sc;
    const Eigen::VectorXf mx = S.rowwise().maxCoeff();
    S.colwise() -= mx;
    S = S.array().exp().matrix();
    const Eigen::VectorXf z = S.rowwise().sum();
    S = z.cwiseInverse().asDiagonal() * S;
    out.middleCols(b * N, N).noalias() = v.value().middleCols(b * M, M) * S.transpose();
    probs[static_cast<std::size_t>(b)] = std::move(S);
  }
  return make_op(std::move(out), g, {q, k, v}, [probs = std::move(probs), N, M, sc](Node& s) {
    auto& pq = parent(s, 0);
    auto& pk = parent(s, 1);
    auto& pv = parent(s, 2);
    for (int b = 0; b < s.geom.batch; ++b) {
      const Matrix& P = probs[static_cast<std::size_t>(b)];
      const auto dO = s.grad.middleCols(b * N, N);
      if (pv.requires_grad) pv.grad_buffer().middleCols(b * M, M).noalias() += dO * P;
      if (!pq.requires_grad && !pk.requires_grad) continue;
      Matrix dP;
      dP.noalias() = dO.transpose() * pv.value.middleCols(b * M, M);
      const Eigen::VectorXf rs = dP.cwiseProduct(P).rowwise().sum();
      Matrix dS = P.cwiseProduct(dP.colwise() - rs) * sc;
      if (pq.requires_grad) pq.grad_buffer().middleCols(b * N, N).noalias() += pk.value.middleCols(b * M, M) * dS.transpose();
      if (pk.requires_grad) pk.grad_buffer().middleCols(b * M, M).noalias() += pq.value.middleCols(b * N, N) * dS;
    }
  });
}

// --- reductions ------------------------------------------------------------------

Tensor mean(const Tensor& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().mean();
  const float n = static_cast<float>(x.value().size());
  return make_op(std::move(out), Geom{}, {x}, [n](Node& s) {
    auto& p = parent(s, 0);
    p.grad_buffer().array() += s.grad(0, 0) / n;
  });
}

Tensor sum(const Tensor& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return make_op(std::move(out), Geom{}, {x}, [](Node& s) { parent(s, 0).grad_buffer().array() += s.grad(0, 0); });
}

Tensor mse(const Tensor& pred, const Matrix& target) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(), "mse: shape mismatch");
  Matrix diff = pred.value() - target;
  Matrix out(1, 1);
  out(0, 0) = static_cast<float>(diff.cast<double>().squaredNorm() / static_cast<double>(diff.size()));
  const float n = static_cast<float>(diff.size());
  return make_op(std::move(out), Geom{}, {pred}, [diff = std::move(diff), n](Node& s) {
    parent(s, 0).accumulate(diff * (2.0f * s.grad(0, 0) / n));
  });
}

// --- vector quantization ---------------------------------------------------------

Tensor gather_codes(const Tensor& codebook, const std::vector<int>& indices, Geom geom) {
  Matrix out(codebook.rows(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = codebook.value().col(indices[i]);
  return make_op(std::move(out), geom, {codebook}, [indices](Node& s) {
    Matrix& g = parent(s, 0).grad_buffer();
    for (std::size_t i = 0; i < indices.size(); ++i) g.col(indices[i]) += s.grad.col(static_cast<Eigen::Index>(i));
  });
}

Quantized quantize(const Tensor& z, const Tensor& codebook) {
  require(z.rows() == codebook.rows(), "quantize: code dimension mismatch");
  const auto& Z = z.value();
  const auto& E = codebook.value();
  const Eigen::RowVectorXf e2 = E.colwise().squaredNorm();
  Matrix dots;
  dots.noalias() = E.transpose() * Z;  // K x N
  Quantized q;
  q.indices.resize(static_cast<std::size_t>(Z.cols()));
  for (Eigen::Index n = 0; n < Z.cols(); ++n) {
    int best = 0;
    float best_d = std::numeric_limits<float>::infinity();
    for (Eigen::Index k = 0; k < E.cols(); ++k) {
      const float d = e2(k) - 2.0f * dots(k, n);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    q.indices[static_cast<std::size_t>(n)] = best;
  }
  Matrix snapped(Z.rows(), Z.cols());
  for (Eigen::Index n = 0; n < Z.cols(); ++n) snapped.col(n) = E.col(q.indices[static_cast<std::size_t>(n)]);
  q.straight_through = make_op(snapped, z.geom(), {z}, [](Node& s) { parent(s, 0).accumulate(s.grad); });
  q.codes = gather_codes(codebook, q.indices, z.geom());
  return q;
}

// --- Adam ------------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), opt_(options) {
  for (const auto& p : params_) {
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void Adam::step() {
  ++t_;
  const float bc1 = 1.0f - std::pow(opt_.beta1, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(opt_.beta2, static_cast<float>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    const Matrix& g = p.grad();
    m_[i] = opt_.beta1 * m_[i] + (1.0f - opt_.beta1) * g;
    v_[i] = opt_.beta2 * v_[i] + (1.0f - opt_.beta2) * g.cwiseAbs2();
    p.mutable_value().array() -=
        opt_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + opt_.eps);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::size_t Adam::state_bytes() const {
  std::size_t n = 0;
  for (const auto& m : m_) n += static_cast<std::size_t>(m.size()) * 2 * sizeof(float);
  return n;
}

}  // namespace ilora::ag

// Copyright 2026 the aesnet authors
// SPDX-License-Identifier: Apache-2.0

#include "aesnet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <mutex>
#include <stdexcept>

#include "aesnet/asymmetry.hpp"

#ifdef AESNET_HAVE_CBLAS
#include <cblas.h>
extern "C" void openblas_set_num_threads(int) __attribute__((weak));
#endif

namespace aesnet {

void matmul(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
            double alpha, const double* a, std::size_t lda, const double* b, std::size_t ldb,
            double beta, double* c, std::size_t ldc) {
#ifdef AESNET_HAVE_CBLAS
  // Single BLAS thread: the batch loop is already the unit of work, and the
  // results stay bit-identical regardless of the host's core count.
  static std::once_flag once;
  std::call_once(once, [] {
    if (openblas_set_num_threads) openblas_set_num_threads(1);
  });
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
              beta, c, static_cast<int>(ldc));
#else
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    if (beta == 0.0) {
      std::fill(crow, crow + n, 0.0);
    } else if (beta != 1.0) {
      for (std::size_t j = 0; j < n; ++j) crow[j] *= beta;
    }
    for (std::size_t l = 0; l < k; ++l) {
      const double av = alpha * (trans_a ? a[l * lda + i] : a[i * lda + l]);
      if (av == 0.0) continue;
      if (!trans_b) {
        const double* brow = b + l * ldb;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * ldb + l];
      }
    }
  }
#endif
}

namespace {

inline double stable_sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Transient workspace for conv input gradients; graphs are single-threaded.
thread_local std::vector<double> g_conv_workspace;

struct ConvDims {
  std::size_t ci, h, w, co, kh, kw, oh, ow;
  int stride, pad;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
                   int pad) {
  if (input.rank() != 3) {
    throw std::invalid_argument("conv2d: input rank " + std::to_string(input.rank()) +
                                " != 3 (CHW)");
  }
  if (kernel.rank() != 4) {
    throw std::invalid_argument("conv2d: kernel rank " + std::to_string(kernel.rank()) +
                                " != 4 (OCKhKw)");
  }
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
  if (pad < 0) throw std::invalid_argument("conv2d: padding must be nonnegative");
  ConvDims d{};
  d.ci = input.extent(0);
  d.h = input.extent(1);
  d.w = input.extent(2);
  d.co = kernel.extent(0);
  d.kh = kernel.extent(2);
  d.kw = kernel.extent(3);
  d.stride = stride;
  d.pad = pad;
  if (kernel.extent(1) != d.ci) {
    throw std::invalid_argument("conv2d: kernel channels (" + std::to_string(kernel.extent(1)) +
                                ") != input channels (" + std::to_string(d.ci) + ")");
  }
  if (bias.size() != d.co) {
    throw std::invalid_argument("conv2d: bias size (" + std::to_string(bias.size()) +
                                ") != output channels (" + std::to_string(d.co) + ")");
  }
  const std::ptrdiff_t eh = static_cast<std::ptrdiff_t>(d.h) + 2 * pad -
                            static_cast<std::ptrdiff_t>(d.kh);
  const std::ptrdiff_t ew = static_cast<std::ptrdiff_t>(d.w) + 2 * pad -
                            static_cast<std::ptrdiff_t>(d.kw);
  if (eh < 0) {
    throw std::invalid_argument("conv2d: kernel height (" + std::to_string(d.kh) +
                                ") exceeds padded input height");
  }
  if (ew < 0) {
    throw std::invalid_argument("conv2d: kernel width (" + std::to_string(d.kw) +
                                ") exceeds padded input width");
  }
  d.oh = static_cast<std::size_t>(eh) / stride + 1;
  d.ow = static_cast<std::size_t>(ew) / stride + 1;
  return d;
}

void im2col(const ConvDims& d, const double* in, double* cols) {
  const std::size_t out_px = d.oh * d.ow;
  for (std::size_t c = 0; c < d.ci; ++c) {
    const double* plane = in + c * d.h * d.w;
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      for (std::size_t kx = 0; kx < d.kw; ++kx) {
        double* row = cols + ((c * d.kh + ky) * d.kw + kx) * out_px;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * d.stride + ky) - d.pad;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(d.h)) {
            std::fill(row + oy * d.ow, row + (oy + 1) * d.ow, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(y) * d.w;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * d.stride + kx) - d.pad;
            row[oy * d.ow + ox] =
                (x < 0 || x >= static_cast<std::ptrdiff_t>(d.w)) ? 0.0 : src[x];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvDims& d, const double* cols, double* din) {
  const std::size_t out_px = d.oh * d.ow;
  for (std::size_t c = 0; c < d.ci; ++c) {
    double* plane = din + c * d.h * d.w;
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      for (std::size_t kx = 0; kx < d.kw; ++kx) {
        const double* row = cols + ((c * d.kh + ky) * d.kw + kx) * out_px;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * d.stride + ky) - d.pad;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(d.h)) continue;
          double* dst = plane + static_cast<std::size_t>(y) * d.w;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * d.stride + kx) - d.pad;
            if (x >= 0 && x < static_cast<std::ptrdiff_t>(d.w)) {
              dst[x] += row[oy * d.ow + ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

NodeId Graph::push(GraphNode n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::leaf(Tensor value) {
  GraphNode n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::param(ParamPtr p) {
  if (!p) throw std::invalid_argument("graph: null parameter");
  GraphNode n;
  n.kind = OpKind::kParam;
  n.param = std::move(p);
  return push(std::move(n));
}

const Tensor& Graph::in_value(const GraphNode& n, int slot) const {
  return value(n.in[static_cast<std::size_t>(slot)]);
}

const Tensor& Graph::value(NodeId id) const {
  const GraphNode& n = nodes_.at(id);
  return n.kind == OpKind::kParam ? n.param->value : n.value;
}

double Graph::scalar(NodeId id) const {
  const Tensor& v = value(id);
  if (v.size() != 1) {
    throw std::invalid_argument("graph: node value is not scalar, shape " + v.shape_string());
  }
  return v[0];
}

std::span<const double> Graph::grad(NodeId id) const {
  const GraphNode& n = nodes_.at(id);
  const Tensor& t = n.kind == OpKind::kParam ? n.param->value : n.value;
  return {t.grad(), t.has_grad() ? t.size() : 0};
}

void Graph::set_leaf(NodeId id, std::span<const double> data) {
  GraphNode& n = nodes_.at(id);
  if (n.kind != OpKind::kLeaf) throw std::invalid_argument("set_leaf: node is not a leaf");
  if (data.size() != n.value.size()) {
    throw std::invalid_argument("set_leaf: got " + std::to_string(data.size()) +
                                " values for shape " + n.value.shape_string());
  }
  std::copy(data.begin(), data.end(), n.value.data());
}

void Graph::set_bce(NodeId id, double label, double weight) {
  GraphNode& n = nodes_.at(id);
  if (n.kind != OpKind::kWeightedBce) {
    throw std::invalid_argument("set_bce: node is not a weighted BCE loss");
  }
  if (label != 0.0 && label != 1.0) {
    throw std::invalid_argument("weighted_bce_loss: label must be 0 or 1");
  }
  if (!(weight > 0.0)) throw std::invalid_argument("weighted_bce_loss: weight must be positive");
  n.label = label;
  n.weight = weight;
}

NodeId Graph::conv2d(NodeId input, NodeId kernel, NodeId bias, int stride, int padding) {
  const ConvDims d = conv_dims(value(input), value(kernel), value(bias), stride, padding);
  GraphNode n;
  n.kind = OpKind::kConv2d;
  n.in = {input, kernel, bias};
  n.arity = 3;
  n.stride = stride;
  n.pad = padding;
  n.value = Tensor({d.co, d.oh, d.ow});
  n.scratch.resize(d.ci * d.kh * d.kw * d.oh * d.ow);
  NodeId id = push(std::move(n));
  compute(nodes_.back());
  return id;
}

NodeId Graph::maxpool2(NodeId input) {
  const Tensor& in = value(input);
  if (in.rank() != 3) throw std::invalid_argument("maxpool2: input rank != 3 (CHW)");
  if (in.extent(1) % 2 != 0) {
    throw std::invalid_argument("maxpool2: odd height " + std::to_string(in.extent(1)));
  }
  if (in.extent(2) % 2 != 0) {
    throw std::invalid_argument("maxpool2: odd width " + std::to_string(in.extent(2)));
  }
  GraphNode n;
  n.kind = OpKind::kMaxPool2;
  n.in = {input, kNoNode, kNoNode};
  n.arity = 1;
  n.value = Tensor({in.extent(0), in.extent(1) / 2, in.extent(2) / 2});
  n.argmax.resize(n.value.size());
  NodeId id = push(std::move(n));
  compute(nodes_.back());
  return id;
}

NodeId Graph::dense(NodeId input, NodeId weight, NodeId bias) {
  const Tensor& in = value(input);
  const Tensor& w = value(weight);
  const Tensor& b = value(bias);
  if (w.rank() != 2) throw std::invalid_argument("dense: weight rank != 2");
  if (w.extent(1) != in.size()) {
    throw std::invalid_argument("dense: weight columns (" + std::to_string(w.extent(1)) +
                                ") != input size (" + std::to_string(in.size()) + ")");
  }
  if (b.size() != w.extent(0)) {
    throw std::invalid_argument("dense: bias size (" + std::to_string(b.size()) +
                                ") != weight rows (" + std::to_string(w.extent(0)) + ")");
  }
  GraphNode n;
  n.kind = OpKind::kDense;
  n.in = {input, weight, bias};
  n.arity = 3;
  n.value = Tensor({w.extent(0)});
  NodeId id = push(std::move(n));
  compute(nodes_.back());
  return id;
}

NodeId Graph::relu(NodeId input) {
  GraphNode n;
  n.kind = OpKind::kRelu;
  n.in = {input, kNoNode, kNoNode};
  n.arity = 1;
  n.value = Tensor(value(input).shape());
  NodeId id = push(std::move(n));
  compute(nodes_.back());
  return id;
}

NodeId Graph::sigmoid(NodeId input) {
  GraphNode n;
  n.kind = OpKind::kSigmoid;
  n.in = {input, kNoNode, kNoNode};
  n.arity = 1;
  n.value = Tensor(value(input).shape());
  NodeId id = push(std::move(n));
  compute(nodes_.back());
  return id;
}

NodeId Graph::clamp01(NodeId input) {
  GraphNode n;
  n.kind = OpKind::kClamp01;
  n.in = {input, kNoNode, kNoNode};
  n.arity = 1;
  n.value = Tensor(value(input).shape());
  NodeId id = push(std::move(n));
  compute(nodes_.back());
  return id;
}

NodeId Graph::asymmetry_features(NodeId keypoints) {
  if (value(keypoints).size() != KeypointSet::kCount) {
    throw std::invalid_argument("asymmetry_features: input size (" +
                                std::to_string(value(keypoints).size()) + ") != 8");
  }
  GraphNode n;
  n.kind = OpKind::kAsymFeatures;
  n.in = {keypoints, kNoNode, kNoNode};
  n.arity = 1;
  n.value = Tensor({AsymmetryFeatures::kCount});
  NodeId id = push(std::move(n));
  compute(nodes_.back());
  return id;
}

NodeId Graph::mse_loss(NodeId pred, NodeId target) {
  if (!value(pred).same_shape(value(target))) {
    throw std::invalid_argument("mse_loss: pred shape " + value(pred).shape_string() +
                                " != target shape " + value(target).shape_string());
  }
  GraphNode n;
  n.kind = OpKind::kMseLoss;
  n.in = {pred, target, kNoNode};
  n.arity = 2;
  n.value = Tensor({1});
  NodeId id = push(std::move(n));
  compute(nodes_.back());
  return id;
}

NodeId Graph::weighted_bce_loss(NodeId prob, double label, double weight) {
  if (value(prob).size() != 1) {
    throw std::invalid_argument("weighted_bce_loss: probability must be scalar");
  }
  GraphNode n;
  n.kind = OpKind::kWeightedBce;
  n.in = {prob, kNoNode, kNoNode};
  n.arity = 1;
  n.value = Tensor({1});
  NodeId id = push(std::move(n));
  set_bce(id, label, weight);
  compute(nodes_.back());
  return id;
}

NodeId Graph::add(NodeId a, NodeId b) {
  if (!value(a).same_shape(value(b))) {
    throw std::invalid_argument("add: shape " + value(a).shape_string() + " != " +
                                value(b).shape_string());
  }
  GraphNode n;
  n.kind = OpKind::kAdd;
  n.in = {a, b, kNoNode};
  n.arity = 2;
  n.value = Tensor(value(a).shape());
  NodeId id = push(std::move(n));
  compute(nodes_.back());
  return id;
}

NodeId Graph::scale(NodeId a, double factor) {
  GraphNode n;
  n.kind = OpKind::kScale;
  n.in = {a, kNoNode, kNoNode};
  n.arity = 1;
  n.factor = factor;
  n.value = Tensor(value(a).shape());
  NodeId id = push(std::move(n));
  compute(nodes_.back());
  return id;
}

void Graph::compute(GraphNode& n) {
  switch (n.kind) {
    case OpKind::kLeaf:
    case OpKind::kParam:
      return;
    case OpKind::kConv2d: {
      const Tensor& in = in_value(n, 0);
      const Tensor& k = in_value(n, 1);
      const Tensor& b = in_value(n, 2);
      const ConvDims d = conv_dims(in, k, b, n.stride, n.pad);
      const std::size_t out_px = d.oh * d.ow;
      const std::size_t ckk = d.ci * d.kh * d.kw;
      im2col(d, in.data(), n.scratch.data());
      matmul(false, false, d.co, out_px, ckk, 1.0, k.data(), ckk, n.scratch.data(), out_px, 0.0,
             n.value.data(), out_px);
      for (std::size_t o = 0; o < d.co; ++o) {
        double* row = n.value.data() + o * out_px;
        const double bo = b[o];
        for (std::size_t i = 0; i < out_px; ++i) row[i] += bo;
      }
      return;
    }
    case OpKind::kMaxPool2: {
      const Tensor& in = in_value(n, 0);
      const std::size_t c = in.extent(0), h = in.extent(1), w = in.extent(2);
      const std::size_t oh = h / 2, ow = w / 2;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* plane = in.data() + ch * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          for (std::size_t ox = 0; ox < ow; ++ox) {
            // Row-major window scan; strict > keeps the first index on ties.
            std::size_t best = (2 * oy) * w + 2 * ox;
            double bestv = plane[best];
            const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
            for (std::size_t idx : cand) {
              if (plane[idx] > bestv) {
                bestv = plane[idx];
                best = idx;
              }
            }
            const std::size_t out_idx = (ch * oh + oy) * ow + ox;
            n.value[out_idx] = bestv;
            n.argmax[out_idx] = static_cast<std::uint32_t>(ch * h * w + best);
          }
        }
      }
      return;
    }
    case OpKind::kDense: {
      const Tensor& in = in_value(n, 0);
      const Tensor& w = in_value(n, 1);
      const Tensor& b = in_value(n, 2);
      const std::size_t m = w.extent(0), k = w.extent(1);
      matmul(false, false, m, 1, k, 1.0, w.data(), k, in.data(), 1, 0.0, n.value.data(), 1);
      for (std::size_t i = 0; i < m; ++i) n.value[i] += b[i];
      return;
    }
    case OpKind::kRelu: {
      const Tensor& in = in_value(n, 0);
      for (std::size_t i = 0; i < in.size(); ++i) n.value[i] = in[i] > 0.0 ? in[i] : 0.0;
      return;
    }
    case OpKind::kSigmoid: {
      const Tensor& in = in_value(n, 0);
      for (std::size_t i = 0; i < in.size(); ++i) n.value[i] = stable_sigmoid(in[i]);
      return;
    }
    case OpKind::kClamp01: {
      const Tensor& in = in_value(n, 0);
      for (std::size_t i = 0; i < in.size(); ++i) n.value[i] = std::clamp(in[i], 0.0, 1.0);
      return;
    }
    case OpKind::kAsymFeatures: {
      features_from_flat(in_value(n, 0).data(), n.value.data());
      return;
    }
    case OpKind::kMseLoss: {
      const Tensor& p = in_value(n, 0);
      const Tensor& t = in_value(n, 1);
      double acc = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double diff = p[i] - t[i];
        acc += diff * diff;
      }
      n.value[0] = acc / static_cast<double>(p.size());
      return;
    }
    case OpKind::kWeightedBce: {
      const double p = std::clamp(in_value(n, 0)[0], kBceClamp, 1.0 - kBceClamp);
      n.value[0] = n.weight * (-n.label * std::log(p) - (1.0 - n.label) * std::log1p(-p));
      return;
    }
    case OpKind::kAdd: {
      const Tensor& a = in_value(n, 0);
      const Tensor& b = in_value(n, 1);
      for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] + b[i];
      return;
    }
    case OpKind::kScale: {
      const Tensor& a = in_value(n, 0);
      for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = n.factor * a[i];
      return;
    }
  }
  throw std::logic_error("graph: unknown op kind");
}

double* Graph::in_grad(GraphNode& n, int slot) {
  const NodeId id = n.in[static_cast<std::size_t>(slot)];
  GraphNode& src = nodes_.at(id);
  if (src.kind == OpKind::kParam) {
    return src.param->frozen ? nullptr : src.param->value.grad();
  }
  return src.requires_grad ? src.value.grad() : nullptr;
}

void Graph::backprop(GraphNode& n) {
  const double* gout = n.value.grad();
  switch (n.kind) {
    case OpKind::kLeaf:
    case OpKind::kParam:
      return;
    case OpKind::kConv2d: {
      const Tensor& in = in_value(n, 0);
      const Tensor& k = in_value(n, 1);
      const ConvDims d = conv_dims(in, k, in_value(n, 2), n.stride, n.pad);
      const std::size_t out_px = d.oh * d.ow;
      const std::size_t ckk = d.ci * d.kh * d.kw;
      if (double* gk = in_grad(n, 1)) {
        matmul(false, true, d.co, ckk, out_px, 1.0, gout, out_px, n.scratch.data(), out_px, 1.0,
               gk, ckk);
      }
      if (double* gb = in_grad(n, 2)) {
        for (std::size_t o = 0; o < d.co; ++o) {
          double acc = 0.0;
          const double* row = gout + o * out_px;
          for (std::size_t i = 0; i < out_px; ++i) acc += row[i];
          gb[o] += acc;
        }
      }
      if (double* gi = in_grad(n, 0)) {
        g_conv_workspace.resize(ckk * out_px);
        matmul(true, false, ckk, out_px, d.co, 1.0, k.data(), ckk, gout, out_px, 0.0,
               g_conv_workspace.data(), out_px);
        col2im_add(d, g_conv_workspace.data(), gi);
      }
      return;
    }
    case OpKind::kMaxPool2: {
      if (double* gi = in_grad(n, 0)) {
        for (std::size_t i = 0; i < n.value.size(); ++i) gi[n.argmax[i]] += gout[i];
      }
      return;
    }
    case OpKind::kDense: {
      const Tensor& in = in_value(n, 0);
      const Tensor& w = in_value(n, 1);
      const std::size_t m = w.extent(0), k = w.extent(1);
      if (double* gw = in_grad(n, 1)) {
        // Rank-1 update dW += gout * in^T.
        for (std::size_t i = 0; i < m; ++i) {
          const double gi = gout[i];
          if (gi == 0.0) continue;
          double* row = gw + i * k;
          const double* x = in.data();
          for (std::size_t j = 0; j < k; ++j) row[j] += gi * x[j];
        }
      }
      if (double* gb = in_grad(n, 2)) {
        for (std::size_t i = 0; i < m; ++i) gb[i] += gout[i];
      }
      if (double* gi = in_grad(n, 0)) {
        matmul(true, false, k, 1, m, 1.0, w.data(), k, gout, 1, 1.0, gi, 1);
      }
      return;
    }
    case OpKind::kRelu: {
      if (double* gi = in_grad(n, 0)) {
        const Tensor& in = in_value(n, 0);
        for (std::size_t i = 0; i < in.size(); ++i) {
          if (in[i] > 0.0) gi[i] += gout[i];
        }
      }
      return;
    }
    case OpKind::kSigmoid: {
      if (double* gi = in_grad(n, 0)) {
        for (std::size_t i = 0; i < n.value.size(); ++i) {
          const double y = n.value[i];
          gi[i] += gout[i] * y * (1.0 - y);
        }
      }
      return;
    }
    case OpKind::kClamp01: {
      if (double* gi = in_grad(n, 0)) {
        const Tensor& in = in_value(n, 0);
        for (std::size_t i = 0; i < in.size(); ++i) {
          if (in[i] >= 0.0 && in[i] <= 1.0) gi[i] += gout[i];
        }
      }
      return;
    }
    case OpKind::kAsymFeatures: {
      if (double* gi = in_grad(n, 0)) {
        double jac[AsymmetryFeatures::kCount * KeypointSet::kCount];
        features_jacobian(in_value(n, 0).data(), jac);
        for (std::size_t f = 0; f < AsymmetryFeatures::kCount; ++f) {
          const double gf = gout[f];
          if (gf == 0.0) continue;
          for (std::size_t j = 0; j < KeypointSet::kCount; ++j) {
            gi[j] += gf * jac[f * KeypointSet::kCount + j];
          }
        }
      }
      return;
    }
    case OpKind::kMseLoss: {
      const Tensor& p = in_value(n, 0);
      const Tensor& t = in_value(n, 1);
      const double s = 2.0 * gout[0] / static_cast<double>(p.size());
      if (double* gp = in_grad(n, 0)) {
        for (std::size_t i = 0; i < p.size(); ++i) gp[i] += s * (p[i] - t[i]);
      }
      if (double* gt = in_grad(n, 1)) {
        for (std::size_t i = 0; i < p.size(); ++i) gt[i] -= s * (p[i] - t[i]);
      }
      return;
    }
    case OpKind::kWeightedBce: {
      if (double* gp = in_grad(n, 0)) {
        const double raw = in_value(n, 0)[0];
        // Zero slope outside the clamp interval.
        if (raw >= kBceClamp && raw <= 1.0 - kBceClamp) {
          gp[0] += gout[0] * n.weight * (-n.label / raw + (1.0 - n.label) / (1.0 - raw));
        }
      }
      return;
    }
    case OpKind::kAdd: {
      if (double* ga = in_grad(n, 0)) {
        for (std::size_t i = 0; i < n.value.size(); ++i) ga[i] += gout[i];
      }
      if (double* gb = in_grad(n, 1)) {
        for (std::size_t i = 0; i < n.value.size(); ++i) gb[i] += gout[i];
      }
      return;
    }
    case OpKind::kScale: {
      if (double* gi = in_grad(n, 0)) {
        for (std::size_t i = 0; i < n.value.size(); ++i) gi[i] += n.factor * gout[i];
      }
      return;
    }
  }
  throw std::logic_error("graph: unknown op kind");
}

void Graph::refresh() {
  for (GraphNode& n : nodes_) compute(n);
}

void Graph::backward(NodeId output, double seed) {
  GraphNode& out = nodes_.at(output);
  if (out.kind == OpKind::kParam) {
    throw std::invalid_argument("backward: output must be a computed node");
  }
  if (out.value.size() != 1) {
    throw std::invalid_argument("backward: output must be scalar, shape " +
                                out.value.shape_string());
  }
  // Freeze flags may change between calls; recompute reachability.
  for (GraphNode& n : nodes_) {
    if (n.kind == OpKind::kParam) {
      n.requires_grad = !n.param->frozen;
    } else if (n.kind == OpKind::kLeaf) {
      n.requires_grad = false;
    } else {
      bool req = false;
      for (int i = 0; i < n.arity; ++i) req = req || nodes_[n.in[static_cast<std::size_t>(i)]].requires_grad;
      n.requires_grad = req;
    }
    if (n.kind != OpKind::kParam) {
      n.value.ensure_grad();
      n.value.zero_grad();
    }
  }
  out.value.grad()[0] = seed;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    GraphNode& n = nodes_[i];
    if (n.requires_grad) backprop(n);
  }
}

double Graph::min_kink_distance() const {
  double best = std::numeric_limits<double>::infinity();
  for (const GraphNode& n : nodes_) {
    switch (n.kind) {
      case OpKind::kRelu:
        for (std::size_t i = 0; i < value(n.in[0]).size(); ++i) {
          best = std::min(best, std::fabs(value(n.in[0])[i]));
        }
        break;
      case OpKind::kClamp01:
        for (std::size_t i = 0; i < value(n.in[0]).size(); ++i) {
          const double x = value(n.in[0])[i];
          best = std::min({best, std::fabs(x), std::fabs(x - 1.0)});
        }
        break;
      case OpKind::kMaxPool2: {
        // Distance of each window's winner to its runner-up.
        const Tensor& in = value(n.in[0]);
        const std::size_t h = in.extent(1), w = in.extent(2);
        const std::size_t oh = h / 2, ow = w / 2;
        for (std::size_t i = 0; i < n.value.size(); ++i) {
          const std::size_t plane = i / (oh * ow);
          const std::size_t oy = (i % (oh * ow)) / ow, ox = i % ow;
          const double* p = in.data() + plane * h * w;
          const std::size_t tl = (2 * oy) * w + 2 * ox;
          const std::size_t win_off = n.argmax[i] - plane * h * w;
          for (std::size_t c : {tl, tl + 1, tl + w, tl + w + 1}) {
            if (c != win_off) best = std::min(best, n.value[i] - p[c]);
          }
        }
        break;
      }
      case OpKind::kAsymFeatures: {
        const double* kp = value(n.in[0]).data();
        best = std::min(best, std::fabs(kp[6] - kp[7]));
        best = std::min(best, std::fabs(kp[1] - kp[3]));
        const double dl = std::sqrt((kp[4] - kp[0]) * (kp[4] - kp[0]) +
                                    (kp[5] - kp[6]) * (kp[5] - kp[6]));
        const double dr = std::sqrt((kp[4] - kp[2]) * (kp[4] - kp[2]) +
                                    (kp[5] - kp[7]) * (kp[5] - kp[7]));
        best = std::min({best, std::fabs(dl - dr), dl, dr});
        best = std::min({best, std::fabs(kp[0] - kp[4]), std::fabs(kp[2] - kp[4]),
                         std::fabs(kp[1] - kp[5]), std::fabs(kp[3] - kp[5])});
        double f[4];
        features_from_flat(kp, f);
        best = std::min(best, f[3]);  // bra kink at 0
        break;
      }
      default:
        break;
    }
  }
  return best;
}

std::size_t param_count(std::span<const ParamPtr> params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p->value.size();
  return n;
}

double finite_difference_check(Graph& g, NodeId output, Parameter& p, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_difference_check: h must be positive");
  if (p.frozen) throw std::invalid_argument("finite_difference_check: parameter is frozen");
  if (g.value(output).size() != 1) {
    throw std::invalid_argument("finite_difference_check: output must be scalar");
  }
  p.value.zero_grad();
  g.refresh();
  g.backward(output);
  std::vector<double> ad(p.value.grad(), p.value.grad() + p.value.size());

  double max_rel = 0.0;
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double orig = p.value[i];
    p.value[i] = orig + h;
    g.refresh();
    const double fp = g.scalar(output);
    p.value[i] = orig - h;
    g.refresh();
    const double fm = g.scalar(output);
    p.value[i] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::fabs(fd), std::fabs(ad[i]), 1e-6});
    max_rel = std::max(max_rel, std::fabs(fd - ad[i]) / denom);
  }
  g.refresh();
  return max_rel;
}

}  // namespace aesnet

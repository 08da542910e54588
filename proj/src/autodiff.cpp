#include "dccd/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace dccd::nn {

using linalg::Matrix;

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::input(Matrix value) {
  Node n;
  n.op = Op::kInput;
  n.out.grad = Matrix(value.rows(), value.cols());
  n.out.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::param(const Matrix* value, Matrix* grad_accum) {
  auto it = param_cache_.find(value);
  if (it != param_cache_.end()) return it->second;
  Node n;
  n.op = Op::kParam;
  n.out.value = *value;
  n.out.grad = Matrix(value->rows(), value->cols());
  n.ext_grad = grad_accum;
  NodeId id = push(std::move(n));
  param_cache_.emplace(value, id);
  return id;
}

NodeId Graph::linear(NodeId x, NodeId w, NodeId b) {
  const Matrix& xv = value(x);
  const Matrix& wv = value(w);
  const Matrix& bv = value(b);
  if (xv.cols() != wv.cols()) throw std::invalid_argument("linear: input width does not match weights");
  if (bv.rows() != 1 || bv.cols() != wv.rows()) throw std::invalid_argument("linear: bias shape mismatch");

  Node n;
  n.op = Op::kLinear;
  n.a = x;
  n.b = w;
  n.c = b;
  Matrix out(xv.rows(), wv.rows());
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t o = 0; o < wv.rows(); ++o) {
      double acc = bv.at(0, o);
      for (std::size_t k = 0; k < xv.cols(); ++k) acc += xv.at(i, k) * wv.at(o, k);
      out.at(i, o) = acc;
    }
  n.out.grad = Matrix(out.rows(), out.cols());
  n.out.value = std::move(out);
  return push(std::move(n));
}

NodeId Graph::tanh_activation(NodeId x) {
  Node n;
  n.op = Op::kTanh;
  n.a = x;
  Matrix out = value(x);
  for (double& v : out.data()) v = std::tanh(v);
  n.out.grad = Matrix(out.rows(), out.cols());
  n.out.value = std::move(out);
  return push(std::move(n));
}

NodeId Graph::row_normalize(NodeId x, double eps) {
  Node n;
  n.op = Op::kRowNormalize;
  n.a = x;
  n.factor = eps;
  Matrix out = value(x);
  n.aux = Matrix(out.rows(), 1);  // cached 1/norm per row
  for (std::size_t i = 0; i < out.rows(); ++i) {
    double sq = eps;
    for (std::size_t j = 0; j < out.cols(); ++j) sq += out.at(i, j) * out.at(i, j);
    const double inv = 1.0 / std::sqrt(sq);
    n.aux.at(i, 0) = inv;
    for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) *= inv;
  }
  n.out.grad = Matrix(out.rows(), out.cols());
  n.out.value = std::move(out);
  return push(std::move(n));
}

NodeId Graph::sample_affine(NodeId x, std::vector<AffineMap> maps, std::size_t channels,
                            std::size_t positions) {
  const Matrix& xv = value(x);
  if (xv.cols() != channels * positions)
    throw std::invalid_argument("sample_affine: row width is not channels*positions");
  if (maps.size() != xv.rows()) throw std::invalid_argument("sample_affine: one map per row required");

  Node n;
  n.op = Op::kSampleAffine;
  n.a = x;
  n.channels = channels;
  n.positions = positions;
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    const AffineMap& m = maps[i];
    for (std::size_t r = 0; r < channels; ++r)
      for (std::size_t s = 0; s < positions; ++s) {
        double acc = m.shift[r];
        for (std::size_t k = 0; k < channels; ++k) acc += m.a.at(r, k) * xv.at(i, k * positions + s);
        out.at(i, r * positions + s) = acc;
      }
  }
  n.maps = std::move(maps);
  n.out.grad = Matrix(out.rows(), out.cols());
  n.out.value = std::move(out);
  return push(std::move(n));
}

NodeId Graph::grad_reverse(NodeId x, double lambda) {
  Node n;
  n.op = Op::kGradReverse;
  n.a = x;
  n.factor = lambda;
  n.out.value = value(x);
  n.out.grad = Matrix(n.out.value.rows(), n.out.value.cols());
  return push(std::move(n));
}

NodeId Graph::cross_entropy(NodeId logits, std::vector<std::size_t> labels) {
  const Matrix& lv = value(logits);
  if (lv.rows() == 0) throw std::invalid_argument("cross_entropy: empty batch");
  if (labels.size() != lv.rows()) throw std::invalid_argument("cross_entropy: one label per row required");
  for (std::size_t y : labels)
    if (y >= lv.cols()) throw std::invalid_argument("cross_entropy: label out of range");

  Node n;
  n.op = Op::kCrossEntropy;
  n.a = logits;
  n.aux = Matrix(lv.rows(), lv.cols());  // softmax cache for backward
  double loss = 0.0;
  for (std::size_t i = 0; i < lv.rows(); ++i) {
    double mx = lv.at(i, 0);
    for (std::size_t j = 1; j < lv.cols(); ++j) mx = std::max(mx, lv.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < lv.cols(); ++j) z += std::exp(lv.at(i, j) - mx);
    for (std::size_t j = 0; j < lv.cols(); ++j) n.aux.at(i, j) = std::exp(lv.at(i, j) - mx) / z;
    loss += std::log(z) + mx - lv.at(i, labels[i]);
  }
  n.labels = std::move(labels);
  n.out.value = Matrix(1, 1);
  n.out.value.at(0, 0) = loss / static_cast<double>(lv.rows());
  n.out.grad = Matrix(1, 1);
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.out.value = linalg::add(value(a), value(b));
  n.out.grad = Matrix(n.out.value.rows(), n.out.value.cols());
  return push(std::move(n));
}

NodeId Graph::scale(NodeId x, double factor) {
  Node n;
  n.op = Op::kScale;
  n.a = x;
  n.factor = factor;
  n.out.value = linalg::scale(value(x), factor);
  n.out.grad = Matrix(n.out.value.rows(), n.out.value.cols());
  return push(std::move(n));
}

void Graph::backward(NodeId root) {
  if (nodes_.empty()) throw std::logic_error("backward: no tape recorded");
  if (root >= nodes_.size()) throw std::logic_error("backward: unknown root node");
  Tensor& r = nodes_[root].out;
  if (r.value.rows() != 1 || r.value.cols() != 1)
    throw std::logic_error("backward: root must be scalar");

  for (Node& n : nodes_)
    for (double& g : n.out.grad.data()) g = 0.0;
  r.grad.at(0, 0) = 1.0;

  for (std::size_t idx = nodes_.size(); idx-- > 0;) {
    Node& n = nodes_[idx];
    const Matrix& g = n.out.grad;
    switch (n.op) {
      case Op::kInput:
        break;
      case Op::kParam:
        if (n.ext_grad) {
          for (std::size_t i = 0; i < g.data().size(); ++i) n.ext_grad->data()[i] += g.data()[i];
        }
        break;
      case Op::kLinear: {
        Matrix& gx = nodes_[n.a].out.grad;
        Matrix& gw = nodes_[n.b].out.grad;
        Matrix& gb = nodes_[n.c].out.grad;
        const Matrix& xv = nodes_[n.a].out.value;
        const Matrix& wv = nodes_[n.b].out.value;
        for (std::size_t i = 0; i < xv.rows(); ++i)
          for (std::size_t o = 0; o < wv.rows(); ++o) {
            const double go = g.at(i, o);
            if (go == 0.0) continue;
            gb.at(0, o) += go;
            for (std::size_t k = 0; k < xv.cols(); ++k) {
              gx.at(i, k) += go * wv.at(o, k);
              gw.at(o, k) += go * xv.at(i, k);
            }
          }
        break;
      }
      case Op::kTanh: {
        Matrix& gx = nodes_[n.a].out.grad;
        const Matrix& yv = n.out.value;
        for (std::size_t i = 0; i < gx.data().size(); ++i)
          gx.data()[i] += g.data()[i] * (1.0 - yv.data()[i] * yv.data()[i]);
        break;
      }
      case Op::kRowNormalize: {
        Matrix& gx = nodes_[n.a].out.grad;
        const Matrix& yv = n.out.value;
        for (std::size_t i = 0; i < gx.rows(); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < gx.cols(); ++j) dot += g.at(i, j) * yv.at(i, j);
          const double inv = n.aux.at(i, 0);
          for (std::size_t j = 0; j < gx.cols(); ++j)
            gx.at(i, j) += (g.at(i, j) - yv.at(i, j) * dot) * inv;
        }
        break;
      }
      case Op::kSampleAffine: {
        Matrix& gx = nodes_[n.a].out.grad;
        for (std::size_t i = 0; i < g.rows(); ++i) {
          const AffineMap& m = n.maps[i];
          for (std::size_t k = 0; k < n.channels; ++k)
            for (std::size_t s = 0; s < n.positions; ++s) {
              double acc = 0.0;
              for (std::size_t r = 0; r < n.channels; ++r)
                acc += m.a.at(r, k) * g.at(i, r * n.positions + s);
              gx.at(i, k * n.positions + s) += acc;
            }
        }
        break;
      }
      case Op::kGradReverse: {
        Matrix& gx = nodes_[n.a].out.grad;
        for (std::size_t i = 0; i < gx.data().size(); ++i) gx.data()[i] -= n.factor * g.data()[i];
        break;
      }
      case Op::kCrossEntropy: {
        Matrix& gx = nodes_[n.a].out.grad;
        const double go = g.at(0, 0) / static_cast<double>(gx.rows());
        for (std::size_t i = 0; i < gx.rows(); ++i)
          for (std::size_t j = 0; j < gx.cols(); ++j) {
            const double indicator = (j == n.labels[i]) ? 1.0 : 0.0;
            gx.at(i, j) += go * (n.aux.at(i, j) - indicator);
          }
        break;
      }
      case Op::kAdd: {
        Matrix& ga = nodes_[n.a].out.grad;
        Matrix& gb = nodes_[n.b].out.grad;
        for (std::size_t i = 0; i < g.data().size(); ++i) {
          ga.data()[i] += g.data()[i];
          gb.data()[i] += g.data()[i];
        }
        break;
      }
      case Op::kScale: {
        Matrix& gx = nodes_[n.a].out.grad;
        for (std::size_t i = 0; i < g.data().size(); ++i) gx.data()[i] += n.factor * g.data()[i];
        break;
      }
    }
  }
}

}  // namespace dccd::nn

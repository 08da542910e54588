#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "dccd/linalg.hpp"

namespace dccd::nn {

using NodeId = std::uint32_t;

// Constant per-sample map y = a * x + shift (shift broadcast over columns).
// Used for the intervention transform, whose factors are frozen within a
// training step and do not receive gradients.
struct AffineMap {
  linalg::Matrix a;           // C x C
  std::vector<double> shift;  // C
};

// Value plus gradient of the episode root with respect to that value.
struct Tensor {
  linalg::Matrix value;
  linalg::Matrix grad;
};

// Reverse-mode tape over row-major matrices. Nodes are evaluated eagerly as
// the graph is built, so creation order is a topological order and backward
// is a single reverse sweep. One Graph instance is one episode; parameters
// are bound by pointer and receive accumulated gradients after backward().
class Graph {
 public:
  NodeId input(linalg::Matrix value);

  // Leaf bound to external storage. Repeated registration of the same value
  // pointer returns the existing node, so shared heads accumulate correctly.
  NodeId param(const linalg::Matrix* value, linalg::Matrix* grad_accum);

  // x:[B x in] * w:[out x in]^T + bias b:[1 x out] broadcast over rows
  NodeId linear(NodeId x, NodeId w, NodeId b);

  NodeId tanh_activation(NodeId x);

  // y = x / sqrt(|x|^2 + eps) per row; smooth projection toward the unit
  // sphere, exact to O(eps) for |x| around 1
  NodeId row_normalize(NodeId x, double eps = 1e-4);

  // applies maps[i] to row i viewed as a C x S map; backward multiplies by a^T
  NodeId sample_affine(NodeId x, std::vector<AffineMap> maps, std::size_t channels,
                       std::size_t positions);

  // identity forward; upstream gradient scaled by -lambda on the way down
  NodeId grad_reverse(NodeId x, double lambda);

  // mean negative log-softmax of the true-label logits, in nats -> [1 x 1]
  NodeId cross_entropy(NodeId logits, std::vector<std::size_t> labels);

  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId x, double factor);

  // Reverse sweep from a scalar root; fills node gradients and adds into the
  // bound parameter gradient buffers. Throws if no tape has been recorded or
  // the root is not a recorded scalar node.
  void backward(NodeId root);

  const linalg::Matrix& value(NodeId id) const { return nodes_.at(id).out.value; }
  const linalg::Matrix& grad(NodeId id) const { return nodes_.at(id).out.grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op : std::uint8_t {
    kInput,
    kParam,
    kLinear,
    kTanh,
    kRowNormalize,
    kSampleAffine,
    kGradReverse,
    kCrossEntropy,
    kAdd,
    kScale,
  };

  struct Node {
    Op op;
    NodeId a = 0, b = 0, c = 0;
    Tensor out;
    linalg::Matrix aux;                 // cached softmax probabilities
    std::vector<std::size_t> labels;
    std::vector<AffineMap> maps;
    std::size_t channels = 0, positions = 0;
    double factor = 0.0;                // grad_reverse lambda / scale factor
    linalg::Matrix* ext_grad = nullptr;
  };

  NodeId push(Node n);
  std::vector<Node> nodes_;
  std::map<const linalg::Matrix*, NodeId> param_cache_;
};

}  // namespace dccd::nn

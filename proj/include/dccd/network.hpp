#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dccd/autodiff.hpp"
#include "dccd/feature_map.hpp"
#include "dccd/linalg.hpp"

namespace dccd::nn {

struct LinearLayer {
  linalg::Matrix w;   // out x in
  linalg::Matrix b;   // 1 x out
  linalg::Matrix gw;  // gradient buffers, zeroed per step
  linalg::Matrix gb;
  bool tanh_after = false;

  std::size_t out_dim() const { return w.rows(); }
  std::size_t in_dim() const { return w.cols(); }
};

// norm floor of the embedding projection z = v / sqrt(|v|^2 + floor);
// embeddings are unit vectors once |v| clears the floor
inline constexpr double kEmbedNormFloor = 1e-2;

struct StackArch {
  std::size_t input_dim = 24;
  std::size_t encoder_hidden = 64;
  std::size_t encoder_depth = 2;  // linear+tanh layers before the C x S map
  std::size_t channels = 8;
  std::size_t positions = 16;
  std::size_t embed_dim = 16;
  std::size_t classes = 0;  // filled from the dataset
  std::size_t domains = 0;
};

// Encoder E (-> C x S feature maps), mapper M, classifier C and domain
// discriminator D, all on one tape. The mapper is a position-aware dense
// read of the map (C*S -> embed, tanh). Pooling positions before the read
// would erase the sample here: the style transform pins every intervened
// map's channel means to the bank entry, and a pooled read sees only those.
// The bounded (tanh) embedding keeps the adversarial payoff finite.
struct NetworkStack {
  StackArch arch;
  std::vector<LinearLayer> encoder;
  LinearLayer mapper;  // C*S -> embed_dim, tanh
  LinearLayer classifier;       // head for original embeddings
  LinearLayer classifier_star;  // head for intervened embeddings
  LinearLayer discriminator;

  void zero_grads();
  std::vector<LinearLayer*> layers();
  std::vector<const LinearLayer*> layers() const;
};

NetworkStack make_stack(const StackArch& arch, std::uint64_t seed);

// v <- momentum*v - lr*(g + weight_decay*theta); theta <- theta + v
struct OptimState {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<linalg::Matrix> vel_w, vel_b;  // aligned with stack.layers()
};

OptimState make_optimizer(const NetworkStack& stack, double lr, double momentum,
                          double weight_decay);
void sgd_step(NetworkStack& stack, OptimState& opt);

// --- graph builders (training path) ---

// x:[B x input_dim] -> flattened feature maps [B x channels*positions]
NodeId encoder_nodes(Graph& g, NetworkStack& stack, NodeId x);
// feature node -> embeddings [B x embed_dim]
NodeId mapper_nodes(Graph& g, NetworkStack& stack, NodeId features);
NodeId classifier_nodes(Graph& g, NetworkStack& stack, NodeId z);
NodeId classifier_star_nodes(Graph& g, NetworkStack& stack, NodeId z);
NodeId discriminator_nodes(Graph& g, NetworkStack& stack, NodeId z);

// --- value-level forwards (inference path) ---

// flattened maps [B x channels*positions]
linalg::Matrix encode_features(const NetworkStack& stack, const linalg::Matrix& x);
std::vector<core::FeatureMap> forward_encoder(const NetworkStack& stack, const linalg::Matrix& x);
std::vector<double> forward_mapper(const NetworkStack& stack, const core::FeatureMap& f);
// embeddings z = M(E(x)) for a whole batch, [B x embed_dim]
linalg::Matrix embed_batch(const NetworkStack& stack, const linalg::Matrix& x);
// row i of a flattened feature matrix as a FeatureMap
core::FeatureMap feature_row(const linalg::Matrix& features, std::size_t row,
                             std::size_t channels, std::size_t positions);

// Versioned binary checkpoint. Layout: magic "DCCD", u32 version, u32 network
// count (5: encoder, mapper, both classifier heads, discriminator), then per
// network a shape table (u32 layer count; per layer u32 out,
// u32 in, u8 activation tag), then u32 arch extras (channels, positions,
// embed_dim, classes, domains, input_dim, encoder_hidden, encoder_depth),
// then all weights and biases as little-endian f64 in table order.
void save_stack(const std::string& path, const NetworkStack& stack);
NetworkStack load_stack(const std::string& path);

}  // namespace dccd::nn

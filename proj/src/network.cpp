#include "dccd/network.hpp"

#include <cmath>
#include <stdexcept>

#include "dccd/io_util.hpp"
#include "dccd/rng.hpp"

namespace dccd::nn {

using linalg::Matrix;

namespace {

LinearLayer make_layer(Rng& rng, std::size_t out, std::size_t in, bool tanh_after) {
  LinearLayer l;
  l.w = Matrix(out, in);
  l.b = Matrix(1, out);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : l.w.data()) v = rng.uniform(-bound, bound);
  l.gw = Matrix(out, in);
  l.gb = Matrix(1, out);
  l.tanh_after = tanh_after;
  return l;
}

NodeId layer_nodes(Graph& g, LinearLayer& l, NodeId x) {
  NodeId w = g.param(&l.w, &l.gw);
  NodeId b = g.param(&l.b, &l.gb);
  NodeId y = g.linear(x, w, b);
  return l.tanh_after ? g.tanh_activation(y) : y;
}

}  // namespace

void NetworkStack::zero_grads() {
  for (LinearLayer* l : layers()) {
    for (double& v : l->gw.data()) v = 0.0;
    for (double& v : l->gb.data()) v = 0.0;
  }
}

std::vector<LinearLayer*> NetworkStack::layers() {
  std::vector<LinearLayer*> out;
  for (LinearLayer& l : encoder) out.push_back(&l);
  out.push_back(&mapper);
  out.push_back(&classifier);
  out.push_back(&classifier_star);
  out.push_back(&discriminator);
  return out;
}

std::vector<const LinearLayer*> NetworkStack::layers() const {
  std::vector<const LinearLayer*> out;
  for (const LinearLayer& l : encoder) out.push_back(&l);
  out.push_back(&mapper);
  out.push_back(&classifier);
  out.push_back(&classifier_star);
  out.push_back(&discriminator);
  return out;
}

NetworkStack make_stack(const StackArch& arch, std::uint64_t seed) {
  if (arch.encoder_depth == 0) throw std::invalid_argument("stack: encoder needs at least one layer");
  if (arch.classes == 0 || arch.domains == 0)
    throw std::invalid_argument("stack: classes and domains must be set");

  Rng rng(seed);
  NetworkStack s;
  s.arch = arch;
  const std::size_t map_width = arch.channels * arch.positions;
  std::size_t in = arch.input_dim;
  for (std::size_t d = 0; d < arch.encoder_depth; ++d) {
    const std::size_t out = (d + 1 == arch.encoder_depth) ? map_width : arch.encoder_hidden;
    s.encoder.push_back(make_layer(rng, out, in, true));
    in = out;
  }
  s.mapper = make_layer(rng, arch.embed_dim, map_width, false);
  s.classifier = make_layer(rng, arch.classes, arch.embed_dim, false);
  s.discriminator = make_layer(rng, arch.domains, arch.embed_dim, false);
  s.classifier_star = make_layer(rng, arch.classes, arch.embed_dim, false);
  return s;
}

OptimState make_optimizer(const NetworkStack& stack, double lr, double momentum,
                          double weight_decay) {
  if (!(lr > 0.0)) throw std::invalid_argument("optimizer: learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("optimizer: momentum must be in [0,1)");
  OptimState o;
  o.learning_rate = lr;
  o.momentum = momentum;
  o.weight_decay = weight_decay;
  for (const LinearLayer* l : stack.layers()) {
    o.vel_w.emplace_back(l->w.rows(), l->w.cols());
    o.vel_b.emplace_back(l->b.rows(), l->b.cols());
  }
  return o;
}

void sgd_step(NetworkStack& stack, OptimState& opt) {
  auto ls = stack.layers();
  if (ls.size() != opt.vel_w.size()) throw std::invalid_argument("sgd_step: optimizer does not match stack");
  auto update = [&](Matrix& theta, const Matrix& g, Matrix& vel) {
    for (std::size_t i = 0; i < theta.data().size(); ++i) {
      double v = opt.momentum * vel.data()[i] -
                 opt.learning_rate * (g.data()[i] + opt.weight_decay * theta.data()[i]);
      vel.data()[i] = v;
      theta.data()[i] += v;
    }
  };
  for (std::size_t i = 0; i < ls.size(); ++i) {
    update(ls[i]->w, ls[i]->gw, opt.vel_w[i]);
    update(ls[i]->b, ls[i]->gb, opt.vel_b[i]);
  }
}

NodeId encoder_nodes(Graph& g, NetworkStack& stack, NodeId x) {
  if (g.value(x).cols() != stack.arch.input_dim)
    throw std::invalid_argument("encoder: input width does not match arch");
  NodeId h = x;
  for (LinearLayer& l : stack.encoder) h = layer_nodes(g, l, h);
  return h;
}

NodeId mapper_nodes(Graph& g, NetworkStack& stack, NodeId features) {
  // unit-norm embedding: bounded adversarial payoff, scale-free diagnostics
  return g.row_normalize(layer_nodes(g, stack.mapper, features), kEmbedNormFloor);
}

NodeId classifier_nodes(Graph& g, NetworkStack& stack, NodeId z) {
  return layer_nodes(g, stack.classifier, z);
}

NodeId classifier_star_nodes(Graph& g, NetworkStack& stack, NodeId z) {
  return layer_nodes(g, stack.classifier_star, z);
}

NodeId discriminator_nodes(Graph& g, NetworkStack& stack, NodeId z) {
  return layer_nodes(g, stack.discriminator, z);
}

namespace {

// same accumulation order as Graph::linear (bias first, then ascending k),
// so tape and value paths agree bitwise
Matrix apply_layer(const LinearLayer& l, const Matrix& x) {
  Matrix out(x.rows(), l.out_dim());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t o = 0; o < l.out_dim(); ++o) {
      double acc = l.b.at(0, o);
      for (std::size_t k = 0; k < x.cols(); ++k) acc += x.at(i, k) * l.w.at(o, k);
      out.at(i, o) = l.tanh_after ? std::tanh(acc) : acc;
    }
  return out;
}

}  // namespace

Matrix encode_features(const NetworkStack& stack, const Matrix& x) {
  if (x.cols() != stack.arch.input_dim)
    throw std::invalid_argument("encoder: input width does not match arch");
  Matrix h = x;
  for (const LinearLayer& l : stack.encoder) h = apply_layer(l, h);
  return h;
}

core::FeatureMap feature_row(const Matrix& features, std::size_t row, std::size_t channels,
                             std::size_t positions) {
  Matrix m(channels, positions);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t s = 0; s < positions; ++s) m.at(c, s) = features.at(row, c * positions + s);
  return core::FeatureMap(std::move(m));
}

std::vector<core::FeatureMap> forward_encoder(const NetworkStack& stack, const Matrix& x) {
  Matrix feats = encode_features(stack, x);
  std::vector<core::FeatureMap> out;
  out.reserve(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    out.push_back(feature_row(feats, i, stack.arch.channels, stack.arch.positions));
  return out;
}

std::vector<double> forward_mapper(const NetworkStack& stack, const core::FeatureMap& f) {
  if (f.channels() != stack.arch.channels || f.positions() != stack.arch.positions)
    throw std::invalid_argument("mapper: feature map shape does not match arch");
  const std::size_t s_count = f.positions();
  std::vector<double> z(stack.arch.embed_dim, 0.0);
  for (std::size_t o = 0; o < stack.arch.embed_dim; ++o) {
    double acc = stack.mapper.b.at(0, o);
    for (std::size_t c = 0; c < f.channels(); ++c)
      for (std::size_t s = 0; s < s_count; ++s)
        acc += stack.mapper.w.at(o, c * s_count + s) * f.values.at(c, s);
    z[o] = stack.mapper.tanh_after ? std::tanh(acc) : acc;
  }
  double sq = kEmbedNormFloor;
  for (double v : z) sq += v * v;
  const double inv = 1.0 / std::sqrt(sq);
  for (double& v : z) v *= inv;
  return z;
}

Matrix embed_batch(const NetworkStack& stack, const Matrix& x) {
  Matrix feats = encode_features(stack, x);
  Matrix z(x.rows(), stack.arch.embed_dim);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    core::FeatureMap f = feature_row(feats, i, stack.arch.channels, stack.arch.positions);
    std::vector<double> zi = forward_mapper(stack, f);
    for (std::size_t e = 0; e < zi.size(); ++e) z.at(i, e) = zi[e];
  }
  return z;
}

void save_stack(const std::string& path, const NetworkStack& stack) {
  auto out = io::open_out(path);
  io::write_bytes(out, "DCCD", 4);
  io::write_u32(out, 1);
  auto ls = stack.layers();
  // shape tables: the encoder is one table; mapper, both classifier heads
  // and the discriminator are single-layer tables
  io::write_u32(out, 5);
  io::write_u32(out, static_cast<std::uint32_t>(stack.encoder.size()));
  for (const LinearLayer& l : stack.encoder) {
    io::write_u32(out, static_cast<std::uint32_t>(l.out_dim()));
    io::write_u32(out, static_cast<std::uint32_t>(l.in_dim()));
    io::write_u8(out, l.tanh_after ? 1 : 0);
  }
  for (const LinearLayer* l :
       {&stack.mapper, &stack.classifier, &stack.classifier_star, &stack.discriminator}) {
    io::write_u32(out, 1);
    io::write_u32(out, static_cast<std::uint32_t>(l->out_dim()));
    io::write_u32(out, static_cast<std::uint32_t>(l->in_dim()));
    io::write_u8(out, l->tanh_after ? 1 : 0);
  }
  for (std::uint32_t v : {stack.arch.channels, stack.arch.positions, stack.arch.embed_dim,
                          stack.arch.classes, stack.arch.domains, stack.arch.input_dim,
                          stack.arch.encoder_hidden, stack.arch.encoder_depth})
    io::write_u32(out, v);
  for (const LinearLayer* l : ls) {
    io::write_f64_block(out, l->w.data());
    io::write_f64_block(out, l->b.data());
  }
}

NetworkStack load_stack(const std::string& path) {
  auto in = io::open_in(path);
  io::expect_magic(in, "DCCD", "network checkpoint");
  const std::uint32_t version = io::read_u32(in);
  if (version != 1) throw std::runtime_error("network checkpoint: unsupported version");
  const std::uint32_t networks = io::read_u32(in);
  if (networks != 5) throw std::runtime_error("network checkpoint: unexpected network count");

  struct Shape {
    std::uint32_t out, in;
    bool tanh_after;
  };
  std::vector<std::vector<Shape>> tables(networks);
  for (auto& table : tables) {
    const std::uint32_t layer_count = io::read_u32(in);
    for (std::uint32_t i = 0; i < layer_count; ++i) {
      Shape s{};
      s.out = io::read_u32(in);
      s.in = io::read_u32(in);
      s.tanh_after = io::read_u8(in) != 0;
      table.push_back(s);
    }
  }

  NetworkStack stack;
  stack.arch.channels = io::read_u32(in);
  stack.arch.positions = io::read_u32(in);
  stack.arch.embed_dim = io::read_u32(in);
  stack.arch.classes = io::read_u32(in);
  stack.arch.domains = io::read_u32(in);
  stack.arch.input_dim = io::read_u32(in);
  stack.arch.encoder_hidden = io::read_u32(in);
  stack.arch.encoder_depth = io::read_u32(in);

  auto read_layer = [&](const Shape& s) {
    LinearLayer l;
    l.w = Matrix(s.out, s.in);
    l.b = Matrix(1, s.out);
    l.gw = Matrix(s.out, s.in);
    l.gb = Matrix(1, s.out);
    l.tanh_after = s.tanh_after;
    return l;
  };
  for (const Shape& s : tables[0]) stack.encoder.push_back(read_layer(s));
  for (std::size_t t = 1; t < 5; ++t)
    if (tables[t].size() != 1) throw std::runtime_error("network checkpoint: malformed head table");
  stack.mapper = read_layer(tables[1][0]);
  stack.classifier = read_layer(tables[2][0]);
  stack.classifier_star = read_layer(tables[3][0]);
  stack.discriminator = read_layer(tables[4][0]);

  for (LinearLayer* l : stack.layers()) {
    io::read_f64_block(in, l->w.data());
    io::read_f64_block(in, l->b.data());
  }
  return stack;
}

}  // namespace dccd::nn

#include "dccd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "dccd/rng.hpp"

namespace dccd::eval {

using linalg::Matrix;

RetrievalResult cmc_map(const Matrix& query_embeddings, const Matrix& gallery_embeddings,
                        const std::vector<std::size_t>& query_ids,
                        const std::vector<std::size_t>& gallery_ids) {
  const std::size_t q = query_embeddings.rows();
  const std::size_t g = gallery_embeddings.rows();
  if (q == 0 || g == 0) throw std::invalid_argument("cmc_map: empty query or gallery");
  if (query_embeddings.cols() != gallery_embeddings.cols())
    throw std::invalid_argument("cmc_map: embedding dimension mismatch");
  if (query_ids.size() != q || gallery_ids.size() != g)
    throw std::invalid_argument("cmc_map: id list does not match embeddings");
  for (std::size_t id : query_ids) {
    if (std::find(gallery_ids.begin(), gallery_ids.end(), id) == gallery_ids.end())
      throw std::invalid_argument("cmc_map: query id absent from gallery");
  }

  RetrievalResult res;
  res.cmc_curve.assign(g, 0.0);
  std::vector<std::size_t> order(g);
  std::vector<double> dist(g);

  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t j = 0; j < g; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < query_embeddings.cols(); ++k) {
        const double d = query_embeddings.at(i, k) - gallery_embeddings.at(j, k);
        acc += d * d;
      }
      dist[j] = acc;
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });

    double hits = 0.0, ap = 0.0;
    std::size_t first_hit = g;
    for (std::size_t rank = 0; rank < g; ++rank) {
      if (gallery_ids[order[rank]] == query_ids[i]) {
        if (first_hit == g) first_hit = rank;
        hits += 1.0;
        ap += hits / static_cast<double>(rank + 1);
      }
    }
    res.mean_ap += ap / hits;  // hits >= 1 by the precondition
    for (std::size_t k = first_hit; k < g; ++k) res.cmc_curve[k] += 1.0;
  }

  res.mean_ap /= static_cast<double>(q);
  for (double& v : res.cmc_curve) v /= static_cast<double>(q);
  return res;
}

void write_cmc_csv(const std::string& path, const RetrievalResult& r) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cmc csv: cannot open " + path);
  out << "k,accuracy\n";
  for (std::size_t k = 0; k < r.cmc_curve.size(); ++k) out << (k + 1) << "," << r.cmc_curve[k] << "\n";
}

void DiscreteJoint::validate() const {
  if (p.size() != nz * ny * nd) throw std::invalid_argument("joint: table size mismatch");
  double total = 0.0;
  for (double v : p) {
    if (v < 0.0 || !std::isfinite(v)) throw std::invalid_argument("joint: invalid entry");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("joint: probabilities must sum to 1");
}

DiscreteJoint make_joint(std::size_t nz, std::size_t ny, std::size_t nd) {
  if (nz == 0 || ny == 0 || nd == 0) throw std::invalid_argument("joint: empty support");
  DiscreteJoint j;
  j.nz = nz;
  j.ny = ny;
  j.nd = nd;
  j.p.assign(nz * ny * nd, 0.0);
  return j;
}

namespace {

// projected cell index for the selected variables, canonical z,y,d order
std::size_t project(const DiscreteJoint& j, unsigned vars, std::size_t z, std::size_t y,
                    std::size_t d) {
  std::size_t idx = 0;
  if (vars & kZ) idx = idx * j.nz + z;
  if (vars & kY) idx = idx * j.ny + y;
  if (vars & kD) idx = idx * j.nd + d;
  return idx;
}

std::size_t projected_size(const DiscreteJoint& j, unsigned vars) {
  std::size_t n = 1;
  if (vars & kZ) n *= j.nz;
  if (vars & kY) n *= j.ny;
  if (vars & kD) n *= j.nd;
  return n;
}

// Marginal table over the selected variables. Cells are accumulated in
// canonical iteration order so that structurally equal marginals are
// bitwise equal (adding interleaved exact zeros does not disturb sums).
std::vector<double> marginal(const DiscreteJoint& j, unsigned vars) {
  std::vector<double> m(projected_size(j, vars), 0.0);
  for (std::size_t z = 0; z < j.nz; ++z)
    for (std::size_t y = 0; y < j.ny; ++y)
      for (std::size_t d = 0; d < j.nd; ++d) m[project(j, vars, z, y, d)] += j.at(z, y, d);
  return m;
}

}  // namespace

double entropy_bits(const DiscreteJoint& joint, unsigned vars) {
  std::vector<double> m = marginal(joint, vars);
  double h = 0.0;
  for (double v : m)
    if (v > 0.0) h -= v * std::log2(v);
  return h;
}

double conditional_entropy(const DiscreteJoint& joint, unsigned target, unsigned given) {
  if ((target & given) != 0) throw std::invalid_argument("conditional_entropy: overlapping variable sets");
  if (target == 0) throw std::invalid_argument("conditional_entropy: empty target");
  const unsigned both = target | given;
  std::vector<double> m_both = marginal(joint, both);
  std::vector<double> m_given = given ? marginal(joint, given) : std::vector<double>{1.0};
  double h = 0.0;
  for (std::size_t z = 0; z < joint.nz; ++z)
    for (std::size_t y = 0; y < joint.ny; ++y)
      for (std::size_t d = 0; d < joint.nd; ++d) {
        const double p = joint.at(z, y, d);
        if (p <= 0.0) continue;  // 0 log 0 = 0
        const double pj = m_both[project(joint, both, z, y, d)];
        const double pg = given ? m_given[project(joint, given, z, y, d)] : 1.0;
        h -= p * std::log2(pj / pg);
      }
  return h;
}

Theorem1Report verify_theorem1(const DiscreteJoint& joint) {
  joint.validate();
  Theorem1Report r;
  r.h_d = entropy_bits(joint, kD);
  r.h_d_given_y = conditional_entropy(joint, kD, kY);
  r.h_d_given_z = conditional_entropy(joint, kD, kZ);
  r.h_y_given_z = conditional_entropy(joint, kY, kZ);
  r.applicable = r.h_d_given_y == 0.0;

  r.slack = r.h_y_given_z - (r.h_d_given_z - r.h_d_given_y);
  r.holds = r.slack >= -1e-10;

  r.premise_active = std::abs(r.h_d_given_z - r.h_d) <= 1e-9;
  if (r.premise_active) {
    r.premise_slack = r.h_y_given_z - r.h_d;
    r.holds = r.holds && r.premise_slack >= -1e-10;
  }
  return r;
}

DiscreteJoint random_disjoint_joint(std::uint64_t seed, bool force_invariant_z) {
  Rng rng(seed);
  const std::size_t nz = 2 + rng.index(5);
  const std::size_t ny = 2 + rng.index(7);
  const std::size_t nd = 2 + rng.index(3);
  DiscreteJoint j = make_joint(nz, ny, nd);

  // assign every class to exactly one domain
  std::vector<std::size_t> dom_of(ny);
  for (std::size_t y = 0; y < ny; ++y) dom_of[y] = rng.index(nd);

  std::vector<double> py(ny);
  double total = 0.0;
  for (double& v : py) {
    v = 0.05 + rng.uniform();
    total += v;
  }
  for (double& v : py) v /= total;

  std::vector<double> pz_shared(nz);
  if (force_invariant_z) {
    double t = 0.0;
    for (double& v : pz_shared) {
      v = 0.05 + rng.uniform();
      t += v;
    }
    for (double& v : pz_shared) v /= t;
  }

  for (std::size_t y = 0; y < ny; ++y) {
    std::vector<double> pz(nz);
    if (force_invariant_z) {
      pz = pz_shared;
    } else {
      double t = 0.0;
      for (double& v : pz) {
        v = 0.01 + rng.uniform();
        t += v;
      }
      for (double& v : pz) v /= t;
    }
    for (std::size_t z = 0; z < nz; ++z) j.at(z, y, dom_of[y]) = py[y] * pz[z];
  }

  // renormalize the tiny floating error so validate() passes exactly
  double s = 0.0;
  for (double v : j.p) s += v;
  for (double& v : j.p) v /= s;
  return j;
}

AteReport estimate_ate(const nn::NetworkStack& stack, const core::DomainStyleBank& bank,
                       const Matrix& probe_inputs, double epsilon) {
  if (probe_inputs.rows() == 0) throw std::invalid_argument("estimate_ate: empty probe set");
  if (!bank.all_ready()) {
    for (std::size_t d = 0; d < bank.domain_count; ++d)
      if (!bank.ready[d]) throw core::BankNotReadyError(d);
  }
  const std::size_t k = bank.domain_count;
  AteReport rep;
  rep.pair_means = Matrix(k, k);
  if (k < 2) return rep;  // no ordered pairs to compare

  std::vector<core::FeatureMap> maps = nn::forward_encoder(stack, probe_inputs);
  for (const core::FeatureMap& f : maps) {
    std::vector<std::vector<double>> z(k);
    for (std::size_t d = 0; d < k; ++d)
      z[d] = nn::forward_mapper(stack, core::dccd_transform(f, d, bank, epsilon));
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        if (i == j) continue;
        double acc = 0.0;
        for (std::size_t e = 0; e < z[i].size(); ++e)
          acc += (z[i][e] - z[j][e]) * (z[i][e] - z[j][e]);
        rep.pair_means.at(i, j) += std::sqrt(acc);
      }
  }
  const double inv_probes = 1.0 / static_cast<double>(probe_inputs.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      rep.pair_means.at(i, j) *= inv_probes;
      total += rep.pair_means.at(i, j);
    }
  rep.ate_norm = total / static_cast<double>(k * (k - 1));
  return rep;
}

double energy_distance(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("energy_distance: dimension mismatch");
  if (a.rows() < 2 || b.rows() < 2)
    throw std::invalid_argument("energy_distance: need at least 2 samples per set");
  auto mean_cross = [](const Matrix& u, const Matrix& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.rows(); ++i)
      for (std::size_t j = 0; j < v.rows(); ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < u.cols(); ++k) {
          const double d = u.at(i, k) - v.at(j, k);
          acc += d * d;
        }
        s += std::sqrt(acc);
      }
    return s / (static_cast<double>(u.rows()) * static_cast<double>(v.rows()));
  };
  return 2.0 * mean_cross(a, b) - mean_cross(a, a) - mean_cross(b, b);
}

double marginal_match(const std::vector<Matrix>& embeddings_by_domain) {
  if (embeddings_by_domain.size() < 2)
    throw std::invalid_argument("marginal_match: need at least 2 domains");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < embeddings_by_domain.size(); ++i)
    for (std::size_t j = i + 1; j < embeddings_by_domain.size(); ++j) {
      total += energy_distance(embeddings_by_domain[i], embeddings_by_domain[j]);
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

std::vector<Matrix> intervention_embeddings(const nn::NetworkStack& stack,
                                            const core::DomainStyleBank& bank,
                                            const Matrix& probe_inputs, double epsilon) {
  if (probe_inputs.rows() == 0) throw std::invalid_argument("intervention_embeddings: empty probes");
  std::vector<core::FeatureMap> maps = nn::forward_encoder(stack, probe_inputs);
  std::vector<Matrix> by_domain(bank.domain_count,
                                Matrix(probe_inputs.rows(), stack.arch.embed_dim));
  for (std::size_t i = 0; i < maps.size(); ++i) {
    for (std::size_t d = 0; d < bank.domain_count; ++d) {
      std::vector<double> z =
          nn::forward_mapper(stack, core::dccd_transform(maps[i], d, bank, epsilon));
      for (std::size_t e = 0; e < z.size(); ++e) by_domain[d].at(i, e) = z[e];
    }
  }
  return by_domain;
}

nn::LinearLayer refit_discriminator(const Matrix& embeddings,
                                    const std::vector<std::size_t>& domains,
                                    std::size_t domain_count, const RefitOptions& opt) {
  if (embeddings.rows() == 0 || embeddings.rows() != domains.size())
    throw std::invalid_argument("refit: embeddings and labels misaligned");
  nn::LinearLayer disc;
  disc.w = Matrix(domain_count, embeddings.cols());
  disc.b = Matrix(1, domain_count);
  disc.gw = Matrix(domain_count, embeddings.cols());
  disc.gb = Matrix(1, domain_count);

  // full-batch gradient descent on the convex softmax objective
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    for (double& v : disc.gw.data()) v = 0.0;
    for (double& v : disc.gb.data()) v = 0.0;
    nn::Graph g;
    nn::NodeId z = g.input(embeddings);
    nn::NodeId w = g.param(&disc.w, &disc.gw);
    nn::NodeId b = g.param(&disc.b, &disc.gb);
    nn::NodeId loss = g.cross_entropy(g.linear(z, w, b), domains);
    g.backward(loss);
    for (std::size_t i = 0; i < disc.w.data().size(); ++i)
      disc.w.data()[i] -= opt.lr * disc.gw.data()[i];
    for (std::size_t i = 0; i < disc.b.data().size(); ++i)
      disc.b.data()[i] -= opt.lr * disc.gb.data()[i];
  }
  return disc;
}

double entropy_proxy_bits(const nn::LinearLayer& disc, const Matrix& embeddings,
                          const std::vector<std::size_t>& domains) {
  if (embeddings.rows() == 0 || embeddings.rows() != domains.size())
    throw std::invalid_argument("entropy proxy: embeddings and labels misaligned");
  double total = 0.0;
  for (std::size_t i = 0; i < embeddings.rows(); ++i) {
    std::vector<double> logits(disc.out_dim());
    for (std::size_t o = 0; o < disc.out_dim(); ++o) {
      double acc = disc.b.at(0, o);
      for (std::size_t k = 0; k < embeddings.cols(); ++k) acc += disc.w.at(o, k) * embeddings.at(i, k);
      logits[o] = acc;
    }
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    const double log_q = logits[domains[i]] - mx - std::log(z);  // nats
    total -= log_q / std::log(2.0);
  }
  return total / static_cast<double>(embeddings.rows());
}

EntropyProxyReport entropy_proxy_from_discriminator(const nn::NetworkStack& stack,
                                                    const std::vector<synth::LabeledSample>& samples,
                                                    const RefitOptions& opt) {
  if (samples.empty()) throw std::invalid_argument("entropy proxy: no samples");
  Matrix x(samples.size(), stack.arch.input_dim);
  std::vector<std::size_t> d(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t k = 0; k < stack.arch.input_dim; ++k) x.at(i, k) = samples[i].x[k];
    d[i] = samples[i].d;
  }
  std::size_t domain_count = 0;
  for (std::size_t v : d) domain_count = std::max(domain_count, v + 1);

  Matrix z = nn::embed_batch(stack, x);
  nn::LinearLayer disc = refit_discriminator(z, d, domain_count, opt);

  EntropyProxyReport rep;
  rep.proxy_bits = entropy_proxy_bits(disc, z, d);
  std::vector<double> pd(domain_count, 0.0);
  for (std::size_t v : d) pd[v] += 1.0 / static_cast<double>(d.size());
  for (double v : pd)
    if (v > 0.0) rep.h_d_bits -= v * std::log2(v);
  return rep;
}

nlohmann::json retrieval_json(const RetrievalResult& r, const std::vector<std::size_t>& ks) {
  nlohmann::json cmc = nlohmann::json::object();
  for (std::size_t k : ks) cmc[std::to_string(k)] = r.cmc_at(k);
  return {{"map", r.mean_ap}, {"cmc", cmc}, {"rank1", r.cmc_at(1)}};
}

nlohmann::json ate_json(const AteReport& r) {
  nlohmann::json pairs = nlohmann::json::array();
  for (std::size_t i = 0; i < r.pair_means.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < r.pair_means.cols(); ++j) row.push_back(r.pair_means.at(i, j));
    pairs.push_back(row);
  }
  return {{"ate_norm", r.ate_norm}, {"pair_means", pairs}};
}

nlohmann::json theorem1_json(const Theorem1Report& r) {
  return {{"applicable", r.applicable},
          {"holds", r.holds},
          {"slack", r.slack},
          {"premise_active", r.premise_active},
          {"premise_slack", r.premise_slack},
          {"h_d", r.h_d},
          {"h_d_given_y", r.h_d_given_y},
          {"h_d_given_z", r.h_d_given_z},
          {"h_y_given_z", r.h_y_given_z}};
}

}  // namespace dccd::eval

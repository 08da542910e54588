#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dccd/dccd_core.hpp"
#include "dccd/linalg.hpp"
#include "dccd/network.hpp"
#include "dccd/synth_data.hpp"

namespace dccd::eval {

// --- retrieval ---

struct RetrievalResult {
  std::vector<double> cmc_curve;  // cmc_curve[k-1] = CMC@k
  double mean_ap = 0.0;

  double cmc_at(std::size_t k) const {
    if (cmc_curve.empty() || k == 0) return 0.0;
    return cmc_curve[std::min(k, cmc_curve.size()) - 1];
  }
};

// Euclidean ranking; CMC@k is the fraction of queries with a correct id in
// the top k, mAP the mean average precision. Ties break on gallery index.
RetrievalResult cmc_map(const linalg::Matrix& query_embeddings,
                        const linalg::Matrix& gallery_embeddings,
                        const std::vector<std::size_t>& query_ids,
                        const std::vector<std::size_t>& gallery_ids);

void write_cmc_csv(const std::string& path, const RetrievalResult& r);

// --- discrete entropy oracle ---

// variable-set bitmask for entropy queries over p(z, y, d)
enum VarMask : unsigned { kZ = 1u, kY = 2u, kD = 4u };

struct DiscreteJoint {
  std::size_t nz = 0, ny = 0, nd = 0;
  std::vector<double> p;  // flat [z][y][d]

  double& at(std::size_t z, std::size_t y, std::size_t d) { return p[(z * ny + y) * nd + d]; }
  double at(std::size_t z, std::size_t y, std::size_t d) const { return p[(z * ny + y) * nd + d]; }
  void validate() const;  // entries >= 0, total within 1e-12 of 1
};

DiscreteJoint make_joint(std::size_t nz, std::size_t ny, std::size_t nd);

// joint Shannon entropy in bits of the variables selected by the mask
double entropy_bits(const DiscreteJoint& joint, unsigned vars);
// H(target | given) in bits with 0 log 0 = 0
double conditional_entropy(const DiscreteJoint& joint, unsigned target, unsigned given);

struct Theorem1Report {
  bool applicable = false;    // H(d|y) == 0, the disjoint-label premise
  double h_d = 0.0;
  double h_d_given_y = 0.0;
  double h_d_given_z = 0.0;
  double h_y_given_z = 0.0;
  bool holds = false;
  double slack = 0.0;          // H(y|z) - (H(d|z) - H(d|y))
  bool premise_active = false; // H(d|z) reaches H(d) within tolerance
  double premise_slack = 0.0;  // H(y|z) - H(d) when the premise is active
};

// Checks the entropy bound: H(y|z) >= H(d|z) - H(d|y) always, and when the
// representation is fully domain-invariant (H(d|z) = H(d)) additionally
// H(y|z) >= H(d).
Theorem1Report verify_theorem1(const DiscreteJoint& joint);

// Random joint with disjoint (y,d) structure: every class belongs to one
// domain, so H(d|y) = 0 exactly. With force_invariant_z the z marginal is
// drawn independently of (y,d), which pins H(d|z) = H(d).
DiscreteJoint random_disjoint_joint(std::uint64_t seed, bool force_invariant_z = false);

// --- causal-effect and distribution diagnostics ---

struct AteReport {
  double ate_norm = 0.0;
  linalg::Matrix pair_means;  // K x K mean displacement norms, zero diagonal
};

// Mean over probes and ordered pairs i != j of
// || M(transform(E(x), i)) - M(transform(E(x), j)) ||_2.
AteReport estimate_ate(const nn::NetworkStack& stack, const core::DomainStyleBank& bank,
                       const linalg::Matrix& probe_inputs, double epsilon);

// Szekely energy distance between two point sets (V-statistic form, zero
// for identical samples).
double energy_distance(const linalg::Matrix& a, const linalg::Matrix& b);

// symmetric mean pairwise energy distance across per-domain embedding sets
double marginal_match(const std::vector<linalg::Matrix>& embeddings_by_domain);

// Embeddings of the probe set under each of the K interventions, grouped by
// intervened domain; feeding these to marginal_match measures how far the
// per-intervention marginals are from the adversarial optimum, where all of
// them coincide.
std::vector<linalg::Matrix> intervention_embeddings(const nn::NetworkStack& stack,
                                                    const core::DomainStyleBank& bank,
                                                    const linalg::Matrix& probe_inputs,
                                                    double epsilon);

// --- discriminator entropy proxy ---

struct RefitOptions {
  std::size_t iterations = 600;
  double lr = 0.5;
};

// fresh softmax-regression domain head fitted on frozen embeddings
nn::LinearLayer refit_discriminator(const linalg::Matrix& embeddings,
                                    const std::vector<std::size_t>& domains,
                                    std::size_t domain_count, const RefitOptions& opt = {});

// mean -log2 q(d|z) of a discriminator over labeled embeddings
double entropy_proxy_bits(const nn::LinearLayer& disc, const linalg::Matrix& embeddings,
                          const std::vector<std::size_t>& domains);

struct EntropyProxyReport {
  double proxy_bits = 0.0;  // upper-bound proxy for H(d|z)
  double h_d_bits = 0.0;    // plug-in H(d) for the invariance gap
};

// Embeds the samples with the frozen stack, refits an auxiliary
// discriminator and reports the cross-entropy proxy next to H(d).
EntropyProxyReport entropy_proxy_from_discriminator(const nn::NetworkStack& stack,
                                                    const std::vector<synth::LabeledSample>& samples,
                                                    const RefitOptions& opt = {});

// JSON report shapes (consumed by the experiment runner and written to disk)
nlohmann::json retrieval_json(const RetrievalResult& r, const std::vector<std::size_t>& ks);
nlohmann::json ate_json(const AteReport& r);
nlohmann::json theorem1_json(const Theorem1Report& r);

}  // namespace dccd::eval

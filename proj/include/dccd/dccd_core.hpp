#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dccd/feature_map.hpp"
#include "dccd/linalg.hpp"
#include "dccd/network.hpp"

namespace dccd::core {

// Running per-domain style statistics: covariance bank V (K of C x C) and
// mean bank U (K of C), updated with momentum. A domain is usable as a
// coloring target only after its first update.
struct DomainStyleBank {
  std::size_t domain_count = 0;
  std::size_t channels = 0;
  double momentum = 0.3;
  std::vector<linalg::Matrix> cov;
  std::vector<std::vector<double>> mean;
  std::vector<std::uint8_t> ready;

  bool all_ready() const {
    for (std::uint8_t r : ready)
      if (!r) return false;
    return domain_count > 0;
  }
};

DomainStyleBank make_bank(std::size_t domains, std::size_t channels, double momentum);

class BankNotReadyError : public std::runtime_error {
 public:
  explicit BankNotReadyError(std::size_t domain_index)
      : std::runtime_error("style bank: domain " + std::to_string(domain_index) +
                           " has no statistics yet"),
        domain(domain_index) {}
  std::size_t domain;
};

struct WhitenResult {
  FeatureMap white;                // f_hat = L^-1 (f - mean)
  std::vector<double> own_mean;    // per-channel mean of f
  linalg::SpdFactor own_factor;    // L with cov(f) + eps*I = L L^T
};

// Removes the sample's own style: centers channels, factors the regularized
// covariance and applies L^-1. cov(white) approaches I as eps -> 0.
WhitenResult whiten(const FeatureMap& f, double epsilon);

// Momentum update of the banks from a batch. Per domain present in the
// batch the target statistic is the batch average of per-sample covariance
// / channel mean; absent domains are untouched; the first update of a
// domain writes the batch statistic directly.
void update_bank(DomainStyleBank& bank, const std::vector<FeatureMap>& maps,
                 const std::vector<std::size_t>& domains);

// Imposes domain j's style on a whitened map: f* = L_j f_hat + U_j with
// V_j + eps*I = L_j L_j^T.
FeatureMap color(const FeatureMap& white, std::size_t target_domain,
                 const DomainStyleBank& bank, double epsilon);

// color(whiten(f)) — remove own style, transfer the target domain's.
FeatureMap dccd_transform(const FeatureMap& f, std::size_t target_domain,
                          const DomainStyleBank& bank, double epsilon);

// The same transform collapsed to a constant per-sample affine map
// y = A x + b with A = L_j L_own^-1, b = U_j - A*mean. Statistics are
// frozen: the training tape treats A and b as constants.
nn::AffineMap intervention_affine(const FeatureMap& f, std::size_t target_domain,
                                  const DomainStyleBank& bank, double epsilon);

// generated training tuple (z*, y, d*)
struct InterventionSample {
  std::vector<double> embedding;
  std::size_t class_label = 0;
  std::size_t intervened_domain = 0;
};

// one generated tuple: z* = M(dccd_transform(E(x), d*))
InterventionSample make_intervention_sample(const nn::NetworkStack& stack,
                                            const std::vector<double>& x, std::size_t y,
                                            std::size_t target_domain, const DomainStyleBank& bank,
                                            double epsilon);

// Intervention-averaged inference embedding: sum_i weights[i] *
// M(dccd_transform(E(x), i)). Weights default to uniform and must sum to 1.
std::vector<double> do_test_embed(const nn::NetworkStack& stack, const std::vector<double>& x,
                                  const DomainStyleBank& bank, double epsilon,
                                  const std::optional<std::vector<double>>& weights = std::nullopt);

// Bank checkpoint. Layout: magic "DCDB", u32 version, u32 K, u32 C, f64
// momentum, K readiness bytes, then U (K*C f64) and V (K*C*C f64), all
// little-endian.
void save_bank(const std::string& path, const DomainStyleBank& bank);
DomainStyleBank load_bank(const std::string& path);

}  // namespace dccd::core

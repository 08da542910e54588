#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dccd/linalg.hpp"

namespace dccd::synth {

// Per-domain affine style: x_styled = mix * x + shift. The default family
// drawn from the seed uses identity mixing and strong gaussian mean shifts;
// explicit styles can carry arbitrary nonsingular mixes.
struct StyleTransform {
  linalg::Matrix mix;
  std::vector<double> shift;
};

// World description for the confounded generator. The domain assignment
// process is the confounder: it selects both the label block and the style,
// which is what correlates y and d. Label spaces are disjoint by
// construction (global id = block offset + local id).
struct WorldSpec {
  std::size_t source_domains = 3;
  std::size_t target_domains = 2;
  // per-domain identity counts, sources then targets; empty means uniform
  std::vector<std::size_t> ids_per_domain;
  std::size_t ids_per_domain_default = 10;
  std::size_t samples_per_id = 30;
  std::size_t input_dim = 24;
  std::size_t class_signal_dim = 8;
  double noise_scale = 0.35;
  // explicit styles (sources then targets); drawn from the seed when empty
  std::vector<StyleTransform> styles;
  std::uint64_t seed = 5;
};

struct LabeledSample {
  std::vector<double> x;
  std::size_t y = 0;  // global class id, inside the domain's block
  std::size_t d = 0;  // domain id; target domains follow the sources
};

struct Dataset {
  WorldSpec spec;  // resolved: id list and styles materialized
  std::size_t source_classes = 0;
  std::size_t total_classes = 0;
  std::vector<std::size_t> class_offset;  // first global id per domain
  std::vector<LabeledSample> train;       // source domains only
  std::vector<LabeledSample> heldout;     // target domains, unseen styles
  linalg::Matrix prototypes;              // total_classes x input_dim
};

// x = mix_d * (prototype(y) + noise) + shift_d, deterministic given the
// seed. Prototypes live in a class_signal_dim subspace embedded by a fixed
// random isometry, so a domain-invariant signal exists by construction.
Dataset generate(const WorldSpec& spec);

// plug-in mutual information I(y; d) in bits of the empirical joint
double empirical_mutual_information_yd(const std::vector<LabeledSample>& samples);

// Sample interchange file. Layout: magic "DCDS", u32 version, u32 input_dim,
// u32 source_domains, u32 target_domains, u32 source_classes, u32
// total_classes, u64 seed, u64 n_train, u64 n_heldout, then per split the
// sample block (n * input_dim little-endian f64) followed by labels and
// domains (u32 each). Prototypes and styles are not stored; regenerate from
// the seed when they are needed.
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

}  // namespace dccd::synth

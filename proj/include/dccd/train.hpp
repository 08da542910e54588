#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dccd/dccd_core.hpp"
#include "dccd/network.hpp"
#include "dccd/synth_data.hpp"

namespace dccd::train {

struct LossToggles {
  bool use_ce = true;        // cross-entropy on original embeddings
  bool use_adv = false;      // adversarial term on original embeddings (baseline)
  bool use_ce_star = false;  // cross-entropy on intervened embeddings
  bool use_adv_star = false; // adversarial term on intervened embeddings
};

struct TrainConfig {
  double gamma = 0.25;  // weight of the starred loss group
  double beta = 0.3;    // bank momentum
  std::size_t epochs = 60;
  std::size_t batch_size = 30;  // split evenly across source domains
  double lr = 0.05;
  double lr_decay = 0.1;
  std::size_t lr_decay_interval = 40;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double epsilon_spd = 1e-2;
  double grl_lambda = 0.25;
  LossToggles toggles;
  std::uint64_t seed = 8;
  std::size_t eval_interval = 12;     // diagnostic checkpoint cadence (epochs)
  std::size_t probe_per_domain = 20;  // probe subset for the match diagnostic
  nn::StackArch arch;                 // input/classes/domains resolved per dataset
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double l_ce = 0.0;
  double l_adv = 0.0;
  double l_ce_star = 0.0;
  double l_adv_star = 0.0;
  double objective = 0.0;  // use_ce*ce - use_adv*adv + gamma*(ce* - adv*) per toggles
  double disc_star_acc = 0.0;
};

struct BankSnapshot {
  std::size_t epoch = 0;
  core::DomainStyleBank bank;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  // checkpointed distribution diagnostic: energy-distance match across the
  // K intervention images of a fixed probe set; epoch 0 is post-warmup
  std::vector<std::pair<std::size_t, double>> marginal_curve;
  std::vector<BankSnapshot> bank_snapshots;
  nn::NetworkStack initial_stack;     // parameters before any update
  core::DomainStyleBank warmup_bank;  // statistics-only warmup result (dccd)
  nn::NetworkStack final_stack;
  core::DomainStyleBank final_bank;
};

// Baseline domain adversarial training: one optimizer step per batch on
// use_ce*L_CE plus the reversed discriminator loss when use_adv is set.
TrainReport train_baseline_dal(const synth::Dataset& ds, const TrainConfig& cfg);

// Full pipeline: statistics-only warmup epoch, then per batch update the
// banks, draw one intervention target per sample, build the frozen affine
// transforms, and take one step on use_ce*L_CE + gamma*(L_CE* and reversed
// L_ADV* per toggles). The plain adversarial term is not part of this
// objective and use_adv is ignored here.
TrainReport train_dccd(const synth::Dataset& ds, const TrainConfig& cfg);

// --- episode plumbing, shared with the gradient checks ---

struct Batch {
  linalg::Matrix x;
  std::vector<std::size_t> y;
  std::vector<std::size_t> d;
};

struct InterventionPlan {
  std::vector<nn::AffineMap> maps;   // frozen per-sample transform constants
  std::vector<std::size_t> targets;  // d* per sample
};

// Freezes the intervention constants for a batch from the current encoder
// values and bank state. Gradients never flow through these factors.
InterventionPlan plan_interventions(const std::vector<core::FeatureMap>& features,
                                    const core::DomainStyleBank& bank,
                                    const std::vector<std::size_t>& targets, double epsilon);

struct EpisodeLosses {
  double l_ce = 0.0;
  double l_adv = 0.0;
  double l_ce_star = 0.0;
  double l_adv_star = 0.0;
  double disc_star_acc = 0.0;
};

double objective_value(const EpisodeLosses& l, const LossToggles& t, double gamma);

// Builds the toggled loss graph on one batch and optionally accumulates
// parameter gradients (caller zeroes them first). plan may be null iff no
// starred term is active.
EpisodeLosses run_episode(nn::NetworkStack& stack, const Batch& batch,
                          const InterventionPlan* plan, const LossToggles& toggles, double gamma,
                          double grl_lambda, bool backprop);

// one JSON object per epoch (losses, objective, diagnostics)
void write_train_log(const std::string& path, const TrainReport& report);

}  // namespace dccd::train

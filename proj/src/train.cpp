#include "dccd/train.hpp"

#include <cmath>
#include <fstream>
#include <optional>
#include <stdexcept>

#include <json.hpp>

#include "dccd/eval.hpp"
#include "dccd/rng.hpp"

namespace dccd::train {

using linalg::Matrix;

namespace {

// independent streams so that disabling one consumer (e.g. the starred
// branch at gamma = 0) cannot shift any other draw
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return seed * 0x9e3779b97f4a7c15ull + stream;
}

struct Pools {
  std::vector<std::vector<std::size_t>> by_domain;  // indices into ds.train
  std::size_t steps_per_epoch = 0;
  std::size_t per_domain = 0;
};

Pools make_pools(const synth::Dataset& ds, const TrainConfig& cfg) {
  const std::size_t k = ds.spec.source_domains;
  Pools p;
  p.by_domain.resize(k);
  for (std::size_t i = 0; i < ds.train.size(); ++i) p.by_domain[ds.train[i].d].push_back(i);
  p.per_domain = cfg.batch_size / k;
  std::size_t steps = SIZE_MAX;
  for (const auto& pool : p.by_domain) steps = std::min(steps, pool.size() / p.per_domain);
  if (steps == 0 || steps == SIZE_MAX)
    throw std::invalid_argument("train: batch size too large for the smallest domain");
  p.steps_per_epoch = steps;
  return p;
}

Batch gather(const synth::Dataset& ds, const Pools& p, std::size_t step) {
  const std::size_t k = p.by_domain.size();
  Batch b;
  b.x = Matrix(k * p.per_domain, ds.spec.input_dim);
  std::size_t row = 0;
  for (std::size_t d = 0; d < k; ++d) {
    for (std::size_t j = 0; j < p.per_domain; ++j) {
      const synth::LabeledSample& s = ds.train[p.by_domain[d][step * p.per_domain + j]];
      for (std::size_t c = 0; c < s.x.size(); ++c) b.x.at(row, c) = s.x[c];
      b.y.push_back(s.y);
      b.d.push_back(s.d);
      ++row;
    }
  }
  return b;
}

void validate(const synth::Dataset& ds, const TrainConfig& cfg, bool dccd_mode) {
  const std::size_t k = ds.spec.source_domains;
  if (cfg.gamma < 0.0) throw std::invalid_argument("train: gamma must be >= 0");
  if (!cfg.toggles.use_ce && !cfg.toggles.use_ce_star)
    throw std::invalid_argument("train: at least one classification loss must be active");
  if (cfg.epochs == 0) throw std::invalid_argument("train: epochs must be >= 1");
  if (cfg.batch_size < k || cfg.batch_size % k != 0)
    throw std::invalid_argument("train: batch_size must be a positive multiple of the domain count");
  if (cfg.toggles.use_adv && k < 2)
    throw std::invalid_argument("train: adversarial term needs at least 2 source domains");
  if (dccd_mode && cfg.toggles.use_adv_star && k < 2)
    throw std::invalid_argument("train: starred adversarial term needs at least 2 source domains");
  if (cfg.lr < 0.0) throw std::invalid_argument("train: learning rate must be >= 0");
  if (cfg.eval_interval == 0) throw std::invalid_argument("train: eval_interval must be >= 1");
  if (ds.train.empty()) throw std::invalid_argument("train: empty training split");
}

nn::StackArch resolve_arch(const synth::Dataset& ds, const TrainConfig& cfg) {
  nn::StackArch arch = cfg.arch;
  arch.input_dim = ds.spec.input_dim;
  arch.classes = ds.source_classes;
  arch.domains = ds.spec.source_domains;
  return arch;
}

// probe subset for the match diagnostic: leading samples of each domain pool
Matrix probe_matrix(const synth::Dataset& ds, const Pools& p, std::size_t per_domain) {
  std::size_t rows = 0;
  for (const auto& pool : p.by_domain) rows += std::min(per_domain, pool.size());
  Matrix x(rows, ds.spec.input_dim);
  std::size_t row = 0;
  for (const auto& pool : p.by_domain)
    for (std::size_t j = 0; j < std::min(per_domain, pool.size()); ++j) {
      const synth::LabeledSample& s = ds.train[pool[j]];
      for (std::size_t c = 0; c < s.x.size(); ++c) x.at(row, c) = s.x[c];
      ++row;
    }
  return x;
}

double epoch_lr(const TrainConfig& cfg, std::size_t epoch_index) {
  double lr = cfg.lr;
  if (cfg.lr_decay_interval > 0)
    lr *= std::pow(cfg.lr_decay, static_cast<double>(epoch_index / cfg.lr_decay_interval));
  return lr;
}

}  // namespace

InterventionPlan plan_interventions(const std::vector<core::FeatureMap>& features,
                                    const core::DomainStyleBank& bank,
                                    const std::vector<std::size_t>& targets, double epsilon) {
  if (features.size() != targets.size())
    throw std::invalid_argument("plan_interventions: one target per sample required");
  InterventionPlan plan;
  plan.targets = targets;
  plan.maps.reserve(features.size());
  for (std::size_t i = 0; i < features.size(); ++i)
    plan.maps.push_back(core::intervention_affine(features[i], targets[i], bank, epsilon));
  return plan;
}

double objective_value(const EpisodeLosses& l, const LossToggles& t, double gamma) {
  double v = 0.0;
  if (t.use_ce) v += l.l_ce;
  if (t.use_adv) v -= l.l_adv;
  if (t.use_ce_star) v += gamma * l.l_ce_star;
  if (t.use_adv_star) v -= gamma * l.l_adv_star;
  return v;
}

EpisodeLosses run_episode(nn::NetworkStack& stack, const Batch& batch,
                          const InterventionPlan* plan, const LossToggles& toggles, double gamma,
                          double grl_lambda, bool backprop) {
  const bool starred = (toggles.use_ce_star || toggles.use_adv_star) && gamma > 0.0;
  if (starred && plan == nullptr)
    throw std::invalid_argument("run_episode: starred losses need an intervention plan");

  nn::Graph g;
  nn::NodeId feats = nn::encoder_nodes(g, stack, g.input(batch.x));
  nn::NodeId z = nn::mapper_nodes(g, stack, feats);

  EpisodeLosses out;
  std::optional<nn::NodeId> total;
  auto accumulate = [&](nn::NodeId term, double weight) {
    nn::NodeId weighted = weight == 1.0 ? term : g.scale(term, weight);
    total = total ? g.add(*total, weighted) : weighted;
  };

  if (toggles.use_ce) {
    nn::NodeId ce = g.cross_entropy(nn::classifier_nodes(g, stack, z), batch.y);
    out.l_ce = g.value(ce).at(0, 0);
    accumulate(ce, 1.0);
  }
  if (toggles.use_adv) {
    nn::NodeId rev = g.grad_reverse(z, grl_lambda);
    nn::NodeId adv = g.cross_entropy(nn::discriminator_nodes(g, stack, rev), batch.d);
    out.l_adv = g.value(adv).at(0, 0);
    accumulate(adv, 1.0);
  }
  if (starred) {
    nn::NodeId fstar = g.sample_affine(feats, plan->maps, stack.arch.channels,
                                       stack.arch.positions);
    nn::NodeId zstar = nn::mapper_nodes(g, stack, fstar);
    if (toggles.use_ce_star) {
      nn::NodeId ce = g.cross_entropy(nn::classifier_star_nodes(g, stack, zstar), batch.y);
      out.l_ce_star = g.value(ce).at(0, 0);
      accumulate(ce, gamma);
    }
    if (toggles.use_adv_star) {
      nn::NodeId rev = g.grad_reverse(zstar, grl_lambda);
      nn::NodeId logits = nn::discriminator_nodes(g, stack, rev);
      nn::NodeId adv = g.cross_entropy(logits, plan->targets);
      out.l_adv_star = g.value(adv).at(0, 0);
      accumulate(adv, gamma);
      const Matrix& lv = g.value(logits);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < lv.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < lv.cols(); ++j)
          if (lv.at(i, j) > lv.at(i, best)) best = j;
        if (best == plan->targets[i]) ++correct;
      }
      out.disc_star_acc = static_cast<double>(correct) / static_cast<double>(lv.rows());
    }
  }

  if (!total) throw std::invalid_argument("run_episode: no loss term active");
  if (backprop) g.backward(*total);
  return out;
}

namespace {

TrainReport train_common(const synth::Dataset& ds, const TrainConfig& cfg, bool dccd_mode) {
  validate(ds, cfg, dccd_mode);
  const std::size_t k = ds.spec.source_domains;
  Pools pools = make_pools(ds, cfg);

  LossToggles toggles = cfg.toggles;
  if (dccd_mode) toggles.use_adv = false;  // no plain adversarial term in this objective
  const bool starred =
      dccd_mode && (toggles.use_ce_star || toggles.use_adv_star) && cfg.gamma > 0.0;

  TrainReport report;
  nn::NetworkStack stack = nn::make_stack(resolve_arch(ds, cfg), cfg.seed);
  report.initial_stack = stack;

  core::DomainStyleBank bank =
      dccd_mode ? core::make_bank(k, stack.arch.channels, cfg.beta) : core::DomainStyleBank{};

  // statistics-only warmup pass so every domain is colorable from step one
  if (dccd_mode) {
    for (std::size_t step = 0; step < pools.steps_per_epoch; ++step) {
      Batch b = gather(ds, pools, step);
      core::update_bank(bank, nn::forward_encoder(stack, b.x), b.d);
    }
    report.warmup_bank = bank;
  }

  Matrix probes = probe_matrix(ds, pools, cfg.probe_per_domain);
  auto log_diagnostics = [&](std::size_t epoch) {
    if (!dccd_mode || k < 2) return;
    std::vector<Matrix> groups = eval::intervention_embeddings(stack, bank, probes, cfg.epsilon_spd);
    report.marginal_curve.push_back({epoch, eval::marginal_match(groups)});
    report.bank_snapshots.push_back({epoch, bank});
  };
  log_diagnostics(0);

  std::optional<nn::OptimState> opt;
  if (cfg.lr > 0.0) opt = nn::make_optimizer(stack, cfg.lr, cfg.momentum, cfg.weight_decay);

  Rng shuffle_rng(mix_seed(cfg.seed, 1));
  Rng dstar_rng(mix_seed(cfg.seed, 2));

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = epoch_lr(cfg, epoch - 1);
    if (opt) opt->learning_rate = lr;
    for (auto& pool : pools.by_domain) shuffle_rng.shuffle(pool);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    for (std::size_t step = 0; step < pools.steps_per_epoch; ++step) {
      Batch b = gather(ds, pools, step);

      InterventionPlan plan;
      if (dccd_mode) {
        std::vector<core::FeatureMap> features = nn::forward_encoder(stack, b.x);
        core::update_bank(bank, features, b.d);
        if (starred) {
          std::vector<std::size_t> targets(features.size());
          for (std::size_t& t : targets) t = dstar_rng.index(k);
          plan = plan_interventions(features, bank, targets, cfg.epsilon_spd);
        }
      }

      stack.zero_grads();
      EpisodeLosses l = run_episode(stack, b, starred ? &plan : nullptr, toggles, cfg.gamma,
                                    cfg.grl_lambda, /*backprop=*/lr > 0.0);
      if (opt && lr > 0.0) nn::sgd_step(stack, *opt);

      rec.l_ce += l.l_ce;
      rec.l_adv += l.l_adv;
      rec.l_ce_star += l.l_ce_star;
      rec.l_adv_star += l.l_adv_star;
      rec.disc_star_acc += l.disc_star_acc;
    }
    const double inv = 1.0 / static_cast<double>(pools.steps_per_epoch);
    rec.l_ce *= inv;
    rec.l_adv *= inv;
    rec.l_ce_star *= inv;
    rec.l_adv_star *= inv;
    rec.disc_star_acc *= inv;
    EpisodeLosses avg{rec.l_ce, rec.l_adv, rec.l_ce_star, rec.l_adv_star, 0.0};
    rec.objective = objective_value(avg, toggles, cfg.gamma);
    report.epochs.push_back(rec);

    if (epoch % cfg.eval_interval == 0 || epoch == cfg.epochs) log_diagnostics(epoch);
  }

  report.final_stack = std::move(stack);
  report.final_bank = std::move(bank);
  return report;
}

}  // namespace

TrainReport train_baseline_dal(const synth::Dataset& ds, const TrainConfig& cfg) {
  TrainConfig c = cfg;
  c.toggles.use_ce_star = false;
  c.toggles.use_adv_star = false;
  return train_common(ds, c, /*dccd_mode=*/false);
}

TrainReport train_dccd(const synth::Dataset& ds, const TrainConfig& cfg) {
  return train_common(ds, cfg, /*dccd_mode=*/true);
}

void write_train_log(const std::string& path, const TrainReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("train log: cannot open " + path);
  for (const EpochRecord& r : report.epochs) {
    nlohmann::json j{{"epoch", r.epoch},
                     {"lr", r.lr},
                     {"l_ce", r.l_ce},
                     {"l_adv", r.l_adv},
                     {"l_ce_star", r.l_ce_star},
                     {"l_adv_star", r.l_adv_star},
                     {"objective", r.objective},
                     {"disc_star_acc", r.disc_star_acc}};
    for (const auto& [epoch, value] : report.marginal_curve)
      if (epoch == r.epoch) j["marginal_match"] = value;
    out << j.dump() << "\n";
  }
}

}  // namespace dccd::train

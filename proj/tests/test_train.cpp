#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "dccd/eval.hpp"
#include "dccd/train.hpp"

using namespace dccd;
using linalg::Matrix;

namespace {

const synth::Dataset& default_world() {
  static synth::Dataset ds = synth::generate(synth::WorldSpec{});
  return ds;
}

// small world for the fast structural tests
synth::Dataset small_world() {
  synth::WorldSpec w;
  w.source_domains = 3;
  w.target_domains = 1;
  w.ids_per_domain = {4, 4, 4, 4};
  w.samples_per_id = 6;
  w.input_dim = 12;
  w.class_signal_dim = 5;
  w.seed = 21;
  return synth::generate(w);
}

train::TrainConfig small_config() {
  train::TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 9;
  cfg.arch.encoder_hidden = 16;
  cfg.arch.channels = 4;
  cfg.arch.positions = 8;
  cfg.arch.embed_dim = 8;
  cfg.eval_interval = 3;
  cfg.probe_per_domain = 4;
  return cfg;
}

bool stacks_identical(const nn::NetworkStack& a, const nn::NetworkStack& b) {
  auto la = a.layers();
  auto lb = b.layers();
  if (la.size() != lb.size()) return false;
  for (std::size_t i = 0; i < la.size(); ++i) {
    if (linalg::max_abs_diff(la[i]->w, lb[i]->w) != 0.0) return false;
    if (linalg::max_abs_diff(la[i]->b, lb[i]->b) != 0.0) return false;
  }
  return true;
}

Matrix target_probes(const synth::Dataset& ds, std::size_t per_domain) {
  std::vector<const synth::LabeledSample*> chosen;
  for (std::size_t d = ds.spec.source_domains;
       d < ds.spec.source_domains + ds.spec.target_domains; ++d) {
    std::size_t got = 0;
    for (const auto& s : ds.heldout)
      if (s.d == d && got < per_domain) {
        chosen.push_back(&s);
        ++got;
      }
  }
  Matrix x(chosen.size(), ds.spec.input_dim);
  for (std::size_t i = 0; i < chosen.size(); ++i)
    for (std::size_t c = 0; c < ds.spec.input_dim; ++c) x.at(i, c) = chosen[i]->x[c];
  return x;
}

}  // namespace

TEST_CASE("baseline: plain classifier loss strictly decreases over the first epochs") {
  train::TrainConfig cfg;
  cfg.epochs = 5;
  cfg.toggles = {true, false, false, false};
  auto rep = train::train_baseline_dal(default_world(), cfg);
  REQUIRE(rep.epochs.size() == 5);
  for (std::size_t e = 1; e < 5; ++e) CHECK(rep.epochs[e].l_ce < rep.epochs[e - 1].l_ce);
}

TEST_CASE("baseline: objective at uniform init is ln M - ln K") {
  const synth::Dataset& ds = default_world();
  train::TrainConfig cfg;
  cfg.toggles = {true, true, false, false};
  nn::StackArch arch = cfg.arch;
  arch.input_dim = ds.spec.input_dim;
  arch.classes = ds.source_classes;
  arch.domains = ds.spec.source_domains;
  nn::NetworkStack stack = nn::make_stack(arch, 8);
  for (nn::LinearLayer* head : {&stack.classifier, &stack.discriminator}) {
    for (double& v : head->w.data()) v = 0.0;
    for (double& v : head->b.data()) v = 0.0;
  }
  train::Batch b;
  b.x = Matrix(6, ds.spec.input_dim);
  for (int i = 0; i < 6; ++i) {
    for (std::size_t c = 0; c < ds.spec.input_dim; ++c) b.x.at(i, c) = ds.train[i * 50].x[c];
    b.y.push_back(ds.train[i * 50].y);
    b.d.push_back(ds.train[i * 50].d);
  }
  stack.zero_grads();
  auto losses = train::run_episode(stack, b, nullptr, cfg.toggles, cfg.gamma, cfg.grl_lambda, false);
  CHECK(losses.l_ce == doctest::Approx(std::log(30.0)).epsilon(1e-12));
  CHECK(losses.l_adv == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  const double objective = train::objective_value(losses, cfg.toggles, cfg.gamma);
  CHECK(objective == doctest::Approx(std::log(30.0) - std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("baseline: zero learning rate leaves parameters unchanged end to end") {
  synth::Dataset ds = small_world();
  train::TrainConfig cfg = small_config();
  cfg.lr = 0.0;
  cfg.toggles = {true, true, false, false};
  auto rep = train::train_baseline_dal(ds, cfg);
  CHECK(stacks_identical(rep.initial_stack, rep.final_stack));
}

TEST_CASE("baseline: adversarial term requires at least two domains") {
  synth::WorldSpec w;
  w.source_domains = 1;
  w.target_domains = 0;
  w.ids_per_domain = {4};
  w.samples_per_id = 4;
  w.input_dim = 8;
  w.class_signal_dim = 4;
  synth::Dataset ds = synth::generate(w);
  train::TrainConfig cfg = small_config();
  cfg.batch_size = 4;
  cfg.toggles = {true, true, false, false};
  CHECK_THROWS_AS(train::train_baseline_dal(ds, cfg), std::invalid_argument);
  cfg.toggles = {true, false, false, false};
  CHECK_NOTHROW(train::train_baseline_dal(ds, cfg));
}

TEST_CASE("config validation: batch size, toggles, gamma") {
  synth::Dataset ds = small_world();
  train::TrainConfig cfg = small_config();
  cfg.batch_size = 10;  // not a multiple of 3 domains
  CHECK_THROWS_AS(train::train_dccd(ds, cfg), std::invalid_argument);
  cfg = small_config();
  cfg.toggles = {false, false, false, true};  // no classification loss
  CHECK_THROWS_AS(train::train_dccd(ds, cfg), std::invalid_argument);
  cfg = small_config();
  cfg.gamma = -0.1;
  CHECK_THROWS_AS(train::train_dccd(ds, cfg), std::invalid_argument);
}

TEST_CASE("dccd: gamma = 0 reproduces the plain-classifier trajectory bit for bit") {
  synth::Dataset ds = small_world();
  train::TrainConfig cfg = small_config();
  cfg.toggles = {true, false, true, true};
  cfg.gamma = 0.0;
  auto dccd = train::train_dccd(ds, cfg);

  train::TrainConfig base = cfg;
  base.toggles = {true, false, false, false};
  base.gamma = 0.25;
  auto plain_run = train::train_baseline_dal(ds, base);

  REQUIRE(dccd.epochs.size() == plain_run.epochs.size());
  for (std::size_t e = 0; e < dccd.epochs.size(); ++e)
    CHECK(dccd.epochs[e].l_ce == plain_run.epochs[e].l_ce);  // exact equality
  CHECK(stacks_identical(dccd.final_stack, plain_run.final_stack));
}

TEST_CASE("dccd: warmup initializes every bank before the first step") {
  synth::Dataset ds = small_world();
  train::TrainConfig cfg = small_config();
  cfg.epochs = 1;
  cfg.toggles = {true, false, true, false};
  auto rep = train::train_dccd(ds, cfg);
  CHECK(rep.warmup_bank.all_ready());
  CHECK(rep.final_bank.all_ready());
  REQUIRE(rep.marginal_curve.size() >= 2);
  CHECK(rep.marginal_curve.front().first == 0);
  CHECK(rep.marginal_curve.back().first == 1);
}

TEST_CASE("dccd: determinism — identical config gives bit-identical reports") {
  synth::Dataset ds = small_world();
  train::TrainConfig cfg = small_config();
  cfg.toggles = {true, false, true, true};
  auto a = train::train_dccd(ds, cfg);
  auto b = train::train_dccd(ds, cfg);
  REQUIRE(a.epochs.size() == b.epochs.size());
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    CHECK(a.epochs[e].l_ce == b.epochs[e].l_ce);
    CHECK(a.epochs[e].l_ce_star == b.epochs[e].l_ce_star);
    CHECK(a.epochs[e].l_adv_star == b.epochs[e].l_adv_star);
    CHECK(a.epochs[e].objective == b.epochs[e].objective);
  }
  CHECK(stacks_identical(a.final_stack, b.final_stack));
  for (std::size_t d = 0; d < a.final_bank.domain_count; ++d) {
    CHECK(linalg::max_abs_diff(a.final_bank.cov[d], b.final_bank.cov[d]) == 0.0);
    CHECK(a.final_bank.mean[d] == b.final_bank.mean[d]);
  }
  REQUIRE(a.marginal_curve.size() == b.marginal_curve.size());
  for (std::size_t i = 0; i < a.marginal_curve.size(); ++i)
    CHECK(a.marginal_curve[i].second == b.marginal_curve[i].second);
}

TEST_CASE("dccd: reported objective decomposes into the logged components") {
  synth::Dataset ds = small_world();
  train::TrainConfig cfg = small_config();
  cfg.toggles = {true, false, true, true};
  auto rep = train::train_dccd(ds, cfg);
  for (const auto& e : rep.epochs) {
    const double recomposed = e.l_ce + cfg.gamma * (e.l_ce_star - e.l_adv_star);
    CHECK(std::abs(e.objective - recomposed) < 1e-10);
  }
}

TEST_CASE("dccd: defaults train to completion with finite losses on the default world") {
  train::TrainConfig cfg;  // beta 0.3, gamma 0.25, 60 epochs
  cfg.toggles = {true, false, true, true};
  auto rep = train::train_dccd(default_world(), cfg);
  REQUIRE(rep.epochs.size() == cfg.epochs);
  for (const auto& e : rep.epochs) {
    CHECK(std::isfinite(e.l_ce));
    CHECK(std::isfinite(e.l_ce_star));
    CHECK(std::isfinite(e.l_adv_star));
  }
  CHECK(rep.marginal_curve.size() >= 5);

  // adversarial pressure: the discriminator cannot dominate the starred game
  const std::size_t n = rep.epochs.size();
  double acc = 0.0;
  for (std::size_t e = n - 5; e < n; ++e) acc += rep.epochs[e].disc_star_acc;
  acc /= 5.0;
  const double k = static_cast<double>(default_world().spec.source_domains);
  CHECK(acc < 1.0 - 1.0 / (2.0 * k));
}

TEST_CASE("dccd: paired toggle runs — causal-effect and distribution diagnostics") {
  const synth::Dataset& ds = default_world();
  Matrix probes = target_probes(ds, 30);
  double marg_sum[2] = {0.0, 0.0};
  double ate_init_sum[2] = {0.0, 0.0};
  double ate_final_sum[2] = {0.0, 0.0};
  for (unsigned long long seed : {7ull, 8ull, 9ull}) {
    double final_ate[2];
    for (int adv = 0; adv < 2; ++adv) {
      train::TrainConfig cfg;
      cfg.seed = seed;
      cfg.toggles = {true, false, true, adv != 0};
      auto rep = train::train_dccd(ds, cfg);
      const double a0 =
          eval::estimate_ate(rep.initial_stack, rep.warmup_bank, probes, cfg.epsilon_spd).ate_norm;
      const double a1 =
          eval::estimate_ate(rep.final_stack, rep.final_bank, probes, cfg.epsilon_spd).ate_norm;
      CHECK(a1 < a0);  // strict decrease for every run
      final_ate[adv] = a1;
      ate_init_sum[adv] += a0;
      ate_final_sum[adv] += a1;
      marg_sum[adv] += rep.marginal_curve.back().second;
    }
    CHECK(final_ate[0] != final_ate[1]);  // distinct outcomes
  }
  // averaged over seeds the effect at least halves for both toggle sets
  CHECK(ate_final_sum[0] < 0.5 * ate_init_sum[0]);
  CHECK(ate_final_sum[1] < 0.5 * ate_init_sum[1]);
  // the starred adversarial term is what matches the intervention marginals
  CHECK(marg_sum[1] < marg_sum[0]);
}

TEST_CASE("plan_interventions and run_episode argument validation") {
  synth::Dataset ds = small_world();
  train::TrainConfig cfg = small_config();
  nn::StackArch arch = cfg.arch;
  arch.input_dim = ds.spec.input_dim;
  arch.classes = ds.source_classes;
  arch.domains = 3;
  nn::NetworkStack stack = nn::make_stack(arch, 4);

  train::Batch b;
  b.x = Matrix(3, ds.spec.input_dim);
  for (int i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < ds.spec.input_dim; ++c) b.x.at(i, c) = ds.train[i].x[c];
    b.y.push_back(ds.train[i].y);
    b.d.push_back(ds.train[i].d);
  }
  auto feats = nn::forward_encoder(stack, b.x);
  core::DomainStyleBank bank = core::make_bank(3, arch.channels, 0.3);
  core::update_bank(bank, feats, {0, 1, 2});
  CHECK_THROWS_AS(train::plan_interventions(feats, bank, {0, 1}, 1e-2), std::invalid_argument);

  train::LossToggles starred{true, false, true, false};
  CHECK_THROWS_AS(train::run_episode(stack, b, nullptr, starred, 0.25, 1.0, false),
                  std::invalid_argument);
}

TEST_CASE("train log: one parseable JSON record per epoch") {
  synth::Dataset ds = small_world();
  train::TrainConfig cfg = small_config();
  cfg.toggles = {true, false, true, true};
  auto rep = train::train_dccd(ds, cfg);
  const std::string path = "train_log_test.jsonl";
  train::write_train_log(path, rep);
  std::ifstream in(path);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.contains("epoch"));
    CHECK(j.contains("objective"));
    ++lines;
  }
  CHECK(lines == cfg.epochs);
  std::remove(path.c_str());
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dccd/eval.hpp"
#include "dccd/rng.hpp"
#include "oracles.hpp"

using namespace dccd;
using eval::DiscreteJoint;
using linalg::Matrix;

namespace {

Matrix random_points(Rng& rng, std::size_t n, std::size_t dim, double spread = 1.0) {
  Matrix m(n, dim);
  for (double& v : m.data()) v = spread * rng.gaussian();
  return m;
}

DiscreteJoint random_full_joint(Rng& rng, std::size_t nz, std::size_t ny, std::size_t nd) {
  DiscreteJoint j = eval::make_joint(nz, ny, nd);
  double total = 0.0;
  for (double& v : j.p) {
    v = rng.uniform();
    total += v;
  }
  for (double& v : j.p) v /= total;
  return j;
}

// direct summation oracle for H(target|given) over explicit loops
double cond_entropy_brute(const DiscreteJoint& j, bool target_d_given_y) {
  double h = 0.0;
  if (target_d_given_y) {
    for (std::size_t y = 0; y < j.ny; ++y) {
      double py = 0.0;
      for (std::size_t z = 0; z < j.nz; ++z)
        for (std::size_t d = 0; d < j.nd; ++d) py += j.at(z, y, d);
      for (std::size_t d = 0; d < j.nd; ++d) {
        double pdy = 0.0;
        for (std::size_t z = 0; z < j.nz; ++z) pdy += j.at(z, y, d);
        if (pdy > 0.0) h -= pdy * std::log2(pdy / py);
      }
    }
  } else {  // H(y|z)
    for (std::size_t z = 0; z < j.nz; ++z) {
      double pz = 0.0;
      for (std::size_t y = 0; y < j.ny; ++y)
        for (std::size_t d = 0; d < j.nd; ++d) pz += j.at(z, y, d);
      for (std::size_t y = 0; y < j.ny; ++y) {
        double pyz = 0.0;
        for (std::size_t d = 0; d < j.nd; ++d) pyz += j.at(z, y, d);
        if (pyz > 0.0) h -= pyz * std::log2(pyz / pz);
      }
    }
  }
  return h;
}

nn::NetworkStack identity_stack() {
  nn::StackArch arch;
  arch.input_dim = 4;
  arch.encoder_depth = 1;
  arch.channels = 2;
  arch.positions = 2;
  arch.embed_dim = 2;
  arch.classes = 2;
  arch.domains = 2;
  nn::NetworkStack stack = nn::make_stack(arch, 1);
  stack.encoder[0].w = Matrix::identity(4);
  stack.encoder[0].b = Matrix(1, 4);
  stack.encoder[0].tanh_after = false;
  stack.mapper.w = Matrix(2, 4);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t s = 0; s < 2; ++s) stack.mapper.w.at(c, c * 2 + s) = 0.5;
  stack.mapper.b = Matrix(1, 2);
  stack.mapper.tanh_after = false;
  return stack;
}

core::DomainStyleBank two_bank(const std::vector<double>& u0, const std::vector<double>& u1) {
  core::DomainStyleBank b = core::make_bank(2, 2, 0.3);
  b.cov[0] = Matrix::identity(2);
  b.cov[1] = Matrix::identity(2);
  b.mean[0] = u0;
  b.mean[1] = u1;
  b.ready = {1, 1};
  return b;
}

}  // namespace

TEST_CASE("cmc_map: gallery equal to queries is a perfect retrieval") {
  Rng rng(3);
  Matrix e = random_points(rng, 6, 4);
  std::vector<std::size_t> ids = {0, 1, 2, 3, 4, 5};
  auto r = eval::cmc_map(e, e, ids, ids);
  CHECK(r.cmc_at(1) == 1.0);
  CHECK(r.mean_ap == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cmc_map: hand case with the correct match ranked second") {
  Matrix q = Matrix::from_rows({{0.0, 0.0}});
  Matrix g = Matrix::from_rows({{1.0, 0.0}, {2.0, 0.0}, {3.0, 0.0}});
  auto r = eval::cmc_map(q, g, {7}, {5, 7, 6});
  CHECK(r.cmc_at(1) == 0.0);
  CHECK(r.cmc_at(2) == 1.0);
  CHECK(r.cmc_at(3) == 1.0);
  CHECK(r.mean_ap == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("cmc_map: random embeddings hit at chance rate") {
  Rng rng(11);
  const std::size_t g = 200, relevant = 4;
  Matrix gallery = random_points(rng, g, 3);
  std::vector<std::size_t> gallery_ids(g);
  for (std::size_t i = 0; i < g; ++i) gallery_ids[i] = i / relevant;  // 4 copies per id

  const std::size_t trials = 2000;
  double hits = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    Matrix q = random_points(rng, 1, 3);
    auto r = eval::cmc_map(q, gallery, {t % (g / relevant)}, gallery_ids);
    hits += r.cmc_at(1);
  }
  const double expect = static_cast<double>(relevant) / static_cast<double>(g);
  CHECK(std::abs(hits / trials - expect) < 0.015);
}

TEST_CASE("cmc_map: curve is nondecreasing in k") {
  Rng rng(13);
  Matrix q = random_points(rng, 10, 4);
  Matrix g = random_points(rng, 30, 4);
  std::vector<std::size_t> qid(10), gid(30);
  for (std::size_t i = 0; i < 10; ++i) qid[i] = i;
  for (std::size_t i = 0; i < 30; ++i) gid[i] = i % 10;
  auto r = eval::cmc_map(q, g, qid, gid);
  for (std::size_t k = 1; k < r.cmc_curve.size(); ++k) CHECK(r.cmc_curve[k] >= r.cmc_curve[k - 1]);
}

TEST_CASE("cmc_map: matches exhaustive AP on small galleries") {
  Rng rng(17);
  for (int trial = 0; trial < 250; ++trial) {
    const std::size_t g = 2 + rng.index(19);
    const std::size_t ids = 1 + rng.index(g);
    Matrix gallery = random_points(rng, g, 3);
    std::vector<std::size_t> gid(g);
    for (std::size_t i = 0; i < g; ++i) gid[i] = rng.index(ids);
    const std::size_t target = gid[rng.index(g)];  // guaranteed present
    Matrix q = random_points(rng, 1, 3);
    auto r = eval::cmc_map(q, gallery, {target}, gid);

    // brute force: rank by distance, then apply the textbook definitions
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t j = 0; j < g; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        const double d = q.at(0, k) - gallery.at(j, k);
        acc += d * d;
      }
      ranked.push_back({acc, j});
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](auto& a, auto& b) { return a.first < b.first; });
    std::vector<int> rel;
    for (auto& [d, j] : ranked) rel.push_back(gid[j] == target ? 1 : 0);
    CHECK(r.mean_ap == doctest::Approx(oracles::average_precision_brute(rel)).epsilon(1e-12));
    for (std::size_t k = 1; k <= g; ++k) {
      bool hit = false;
      for (std::size_t i = 0; i < k; ++i) hit = hit || rel[i] == 1;
      CHECK(r.cmc_at(k) == (hit ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("cmc_map: rejects malformed inputs") {
  Matrix q(1, 3), g(2, 4);
  CHECK_THROWS_AS(eval::cmc_map(q, g, {0}, {0, 1}), std::invalid_argument);
  Matrix g2(2, 3);
  CHECK_THROWS_AS(eval::cmc_map(q, g2, {5}, {0, 1}), std::invalid_argument);
}

TEST_CASE("conditional_entropy: independent uniform domain gives 1 bit") {
  DiscreteJoint j = eval::make_joint(2, 3, 2);
  for (std::size_t z = 0; z < 2; ++z)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t d = 0; d < 2; ++d) j.at(z, y, d) = 1.0 / 12.0;
  CHECK(eval::conditional_entropy(j, eval::kD, eval::kY) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("conditional_entropy: disjoint structure gives exactly zero") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    DiscreteJoint j = eval::random_disjoint_joint(seed);
    CHECK(eval::conditional_entropy(j, eval::kD, eval::kY) == 0.0);
  }
}

TEST_CASE("conditional_entropy: matches direct summation on hand and random tables") {
  DiscreteJoint j = eval::make_joint(3, 2, 2);
  double vals[] = {0.05, 0.1, 0.0, 0.15, 0.2, 0.05, 0.1, 0.0, 0.05, 0.1, 0.15, 0.05};
  for (std::size_t i = 0; i < 12; ++i) j.p[i] = vals[i];
  CHECK(eval::conditional_entropy(j, eval::kD, eval::kY) ==
        doctest::Approx(cond_entropy_brute(j, true)).epsilon(1e-12));
  CHECK(eval::conditional_entropy(j, eval::kY, eval::kZ) ==
        doctest::Approx(cond_entropy_brute(j, false)).epsilon(1e-12));

  Rng rng(23);
  for (int t = 0; t < 30; ++t) {
    DiscreteJoint r = random_full_joint(rng, 2 + rng.index(3), 2 + rng.index(3), 2 + rng.index(2));
    CHECK(eval::conditional_entropy(r, eval::kD, eval::kY) ==
          doctest::Approx(cond_entropy_brute(r, true)).epsilon(1e-11));
    CHECK(eval::conditional_entropy(r, eval::kY, eval::kZ) ==
          doctest::Approx(cond_entropy_brute(r, false)).epsilon(1e-11));
  }
}

TEST_CASE("property: conditional entropy chain rule H(d,y|z) = H(d|z,y) + H(y|z)") {
  Rng rng(29);
  for (int t = 0; t < 60; ++t) {
    DiscreteJoint j = random_full_joint(rng, 2 + rng.index(4), 2 + rng.index(4), 2 + rng.index(3));
    const double lhs = eval::conditional_entropy(j, eval::kD | eval::kY, eval::kZ);
    const double rhs = eval::conditional_entropy(j, eval::kD, eval::kZ | eval::kY) +
                       eval::conditional_entropy(j, eval::kY, eval::kZ);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("verify_theorem1: constant z leaves all class information unexplained") {
  // z has a single value: H(d|z) = H(d), so the premise branch is active
  Rng rng(31);
  DiscreteJoint j = eval::make_joint(1, 4, 2);
  std::vector<std::size_t> dom = {0, 0, 1, 1};
  double total = 0.0;
  for (std::size_t y = 0; y < 4; ++y) total += (j.at(0, y, dom[y]) = 0.1 + rng.uniform());
  for (double& v : j.p) v /= total;
  auto r = eval::verify_theorem1(j);
  CHECK(r.applicable);
  CHECK(r.premise_active);
  CHECK(r.holds);
  CHECK(r.premise_slack >= -1e-10);
}

TEST_CASE("verify_theorem1: perfectly class-informative z keeps the general inequality") {
  // z = y: H(y|z) = 0 and H(d|z) = 0, premise inactive for nonuniform d
  DiscreteJoint j = eval::make_joint(3, 3, 2);
  std::vector<std::size_t> dom = {0, 0, 1};
  const double py[] = {0.5, 0.25, 0.25};
  for (std::size_t y = 0; y < 3; ++y) j.at(y, y, dom[y]) = py[y];
  auto r = eval::verify_theorem1(j);
  CHECK(r.applicable);
  CHECK(!r.premise_active);
  CHECK(r.holds);
  CHECK(std::abs(r.h_y_given_z) < 1e-12);
  CHECK(std::abs(r.h_d_given_z) < 1e-12);
}

TEST_CASE("property: the entropy bound never fails on randomized disjoint joints") {
  std::size_t premise_cases = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    DiscreteJoint j = eval::random_disjoint_joint(seed, seed % 3 == 0);
    auto r = eval::verify_theorem1(j);
    CHECK(r.applicable);
    CHECK(r.holds);
    CHECK(r.slack >= -1e-10);
    if (r.premise_active) {
      ++premise_cases;
      CHECK(r.premise_slack >= -1e-10);
    }
  }
  CHECK(premise_cases >= 300);  // the forced-invariant construction activates the premise
}

TEST_CASE("estimate_ate: identical banks give exactly zero effect") {
  nn::NetworkStack stack = identity_stack();
  core::DomainStyleBank bank = two_bank({0.5, -0.5}, {0.5, -0.5});
  Rng rng(37);
  auto rep = eval::estimate_ate(stack, bank, random_points(rng, 5, 4), 1e-6);
  CHECK(rep.ate_norm == 0.0);
}

TEST_CASE("estimate_ate: hand displacement for a linear stack") {
  nn::NetworkStack stack = identity_stack();
  core::DomainStyleBank bank = two_bank({1.0, 0.0}, {0.0, 2.0});
  Rng rng(41);
  auto rep = eval::estimate_ate(stack, bank, random_points(rng, 3, 4), 1e-9);
  // channel means are U_0=(1,0) and U_1=(0,2); after the floored-norm
  // projection the embeddings are (a,0) and (0,b)
  const double a = 1.0 / std::sqrt(1.0 + nn::kEmbedNormFloor);
  const double b = 2.0 / std::sqrt(4.0 + nn::kEmbedNormFloor);
  const double expect = std::sqrt(a * a + b * b);
  CHECK(rep.ate_norm == doctest::Approx(expect).epsilon(1e-6));
  CHECK(rep.pair_means.at(0, 1) == doctest::Approx(expect).epsilon(1e-6));
  CHECK(rep.pair_means.at(1, 0) == doctest::Approx(rep.pair_means.at(0, 1)).epsilon(1e-12));
}

TEST_CASE("estimate_ate: invariant under domain relabeling") {
  Rng rng(43);
  nn::StackArch arch;
  arch.input_dim = 5;
  arch.channels = 3;
  arch.positions = 4;
  arch.embed_dim = 4;
  arch.classes = 4;
  arch.domains = 3;
  nn::NetworkStack stack = nn::make_stack(arch, 19);
  core::DomainStyleBank bank = core::make_bank(3, 3, 0.3);
  for (int d = 0; d < 3; ++d) {
    Matrix b(3, 3);
    for (double& v : b.data()) v = rng.gaussian();
    bank.cov[d] = linalg::add(linalg::multiply(b, linalg::transpose(b)), Matrix::identity(3));
    bank.mean[d] = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    bank.ready[d] = 1;
  }
  core::DomainStyleBank permuted = bank;
  permuted.cov = {bank.cov[1], bank.cov[2], bank.cov[0]};
  permuted.mean = {bank.mean[1], bank.mean[2], bank.mean[0]};

  Matrix probes = random_points(rng, 4, 5);
  auto a = eval::estimate_ate(stack, bank, probes, 1e-6);
  auto b = eval::estimate_ate(stack, permuted, probes, 1e-6);
  CHECK(std::abs(a.ate_norm - b.ate_norm) < 1e-12);
}

TEST_CASE("estimate_ate: empty probe set rejected") {
  nn::NetworkStack stack = identity_stack();
  core::DomainStyleBank bank = two_bank({0, 0}, {1, 1});
  CHECK_THROWS_AS(eval::estimate_ate(stack, bank, Matrix(0, 4), 1e-6), std::invalid_argument);
}

TEST_CASE("marginal_match: identical sample sets give zero") {
  Rng rng(47);
  Matrix a = random_points(rng, 8, 3);
  CHECK(eval::marginal_match({a, a}) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("marginal_match: disjoint point masses match the hand value") {
  Matrix a = Matrix::from_rows({{0, 0}, {0, 0}});
  Matrix b = Matrix::from_rows({{3, 4}, {3, 4}});
  // 2*E||x-y|| - E||x-x'|| - E||y-y'|| = 2*5 - 0 - 0
  CHECK(eval::marginal_match({a, b}) == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("marginal_match: symmetric and equal to the energy-distance oracle") {
  Rng rng(53);
  Matrix a = random_points(rng, 6, 3);
  Matrix b = random_points(rng, 9, 3, 2.0);
  CHECK(eval::marginal_match({a, b}) == doctest::Approx(eval::marginal_match({b, a})).epsilon(1e-12));

  std::vector<std::vector<double>> av, bv;
  for (std::size_t i = 0; i < a.rows(); ++i)
    av.push_back({a.at(i, 0), a.at(i, 1), a.at(i, 2)});
  for (std::size_t i = 0; i < b.rows(); ++i)
    bv.push_back({b.at(i, 0), b.at(i, 1), b.at(i, 2)});
  CHECK(eval::energy_distance(a, b) ==
        doctest::Approx(oracles::energy_distance_brute(av, bv)).epsilon(1e-12));
}

TEST_CASE("marginal_match: too few samples or domains rejected") {
  Matrix a = Matrix::from_rows({{0.0, 0.0}});
  Matrix b = Matrix::from_rows({{1.0, 1.0}, {2.0, 2.0}});
  CHECK_THROWS_AS(eval::marginal_match({a, b}), std::invalid_argument);
  CHECK_THROWS_AS(eval::marginal_match({b}), std::invalid_argument);
}

TEST_CASE("entropy proxy: uniform discriminator reports log2 K") {
  Rng rng(59);
  Matrix z = random_points(rng, 20, 4);
  std::vector<std::size_t> d(20);
  for (std::size_t i = 0; i < 20; ++i) d[i] = i % 3;
  nn::LinearLayer disc;
  disc.w = Matrix(3, 4);
  disc.b = Matrix(1, 3);
  CHECK(eval::entropy_proxy_bits(disc, z, d) == doctest::Approx(std::log2(3.0)).epsilon(1e-12));
}

TEST_CASE("entropy proxy: converged refit on separable domains approaches zero") {
  Rng rng(61);
  const std::size_t n = 60;
  Matrix z(n, 2);
  std::vector<std::size_t> d(n);
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = i % 2;
    z.at(i, 0) = (d[i] == 0 ? -4.0 : 4.0) + 0.3 * rng.gaussian();
    z.at(i, 1) = rng.gaussian();
  }
  eval::RefitOptions opt;
  opt.iterations = 1500;
  opt.lr = 1.0;
  nn::LinearLayer disc = eval::refit_discriminator(z, d, 2, opt);
  CHECK(eval::entropy_proxy_bits(disc, z, d) < 0.1);
}

TEST_CASE("entropy proxy: Gibbs inequality against the plug-in conditional entropy") {
  Rng rng(67);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t nz = 2 + rng.index(3);
    const std::size_t nd = 2 + rng.index(3);
    // empirical joint from integer counts; one-hot embeddings realize the
    // discrete z exactly
    std::vector<std::vector<std::size_t>> counts(nz, std::vector<std::size_t>(nd));
    std::size_t total = 0;
    for (auto& row : counts)
      for (auto& c : row) total += (c = 1 + rng.index(5));
    Matrix z(total, nz);
    std::vector<std::size_t> d(total);
    DiscreteJoint joint = eval::make_joint(nz, 1, nd);
    std::size_t at = 0;
    for (std::size_t zi = 0; zi < nz; ++zi)
      for (std::size_t di = 0; di < nd; ++di) {
        joint.at(zi, 0, di) = static_cast<double>(counts[zi][di]) / static_cast<double>(total);
        for (std::size_t c = 0; c < counts[zi][di]; ++c) {
          z.at(at, zi) = 1.0;
          d[at] = di;
          ++at;
        }
      }

    // arbitrary conditional q(d|z) realized through log-probability weights
    nn::LinearLayer disc;
    disc.w = Matrix(nd, nz);
    disc.b = Matrix(1, nd);
    for (std::size_t zi = 0; zi < nz; ++zi) {
      std::vector<double> q(nd);
      double t = 0.0;
      for (double& v : q) t += (v = 0.05 + rng.uniform());
      for (std::size_t di = 0; di < nd; ++di) disc.w.at(di, zi) = std::log(q[di] / t);
    }

    const double proxy = eval::entropy_proxy_bits(disc, z, d);
    const double h = eval::conditional_entropy(joint, eval::kD, eval::kZ);
    CHECK(proxy >= h - 1e-9);
  }
}

TEST_CASE("entropy proxy: end-to-end report carries H(d)") {
  synth::WorldSpec w;
  w.source_domains = 2;
  w.target_domains = 0;
  w.ids_per_domain = {2, 2};
  w.samples_per_id = 10;
  w.input_dim = 6;
  w.class_signal_dim = 3;
  w.seed = 7;
  synth::Dataset ds = synth::generate(w);
  nn::StackArch arch;
  arch.input_dim = 6;
  arch.channels = 3;
  arch.positions = 4;
  arch.embed_dim = 4;
  arch.classes = 4;
  arch.domains = 2;
  nn::NetworkStack stack = nn::make_stack(arch, 5);
  eval::RefitOptions opt;
  opt.iterations = 100;
  auto rep = eval::entropy_proxy_from_discriminator(stack, ds.train, opt);
  CHECK(rep.h_d_bits == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.proxy_bits >= 0.0);
  CHECK(rep.proxy_bits <= std::log2(2.0) + 1e-9);  // refit starts uniform and only improves
}

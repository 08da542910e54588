#include "dccd/dccd_core.hpp"

#include <cmath>

#include "dccd/io_util.hpp"

namespace dccd::core {

using linalg::Matrix;

std::vector<double> channel_mean(const FeatureMap& f) {
  std::vector<double> mean(f.channels(), 0.0);
  const double inv = 1.0 / static_cast<double>(f.positions());
  for (std::size_t c = 0; c < f.channels(); ++c) {
    double acc = 0.0;
    for (std::size_t s = 0; s < f.positions(); ++s) acc += f.values.at(c, s);
    mean[c] = acc * inv;
  }
  return mean;
}

DomainStyleBank make_bank(std::size_t domains, std::size_t channels, double momentum) {
  if (!(momentum > 0.0) || momentum > 1.0)
    throw std::invalid_argument("style bank: momentum must be in (0,1]");
  DomainStyleBank b;
  b.domain_count = domains;
  b.channels = channels;
  b.momentum = momentum;
  b.cov.assign(domains, Matrix(channels, channels));
  b.mean.assign(domains, std::vector<double>(channels, 0.0));
  b.ready.assign(domains, 0);
  return b;
}

WhitenResult whiten(const FeatureMap& f, double epsilon) {
  if (f.positions() < 2) throw std::invalid_argument("whiten: need at least 2 positions");

  WhitenResult r;
  r.own_mean = channel_mean(f);
  Matrix centered = f.values;
  for (std::size_t c = 0; c < f.channels(); ++c)
    for (std::size_t s = 0; s < f.positions(); ++s) centered.at(c, s) -= r.own_mean[c];

  Matrix cov = linalg::covariance(centered, true);
  r.own_factor = linalg::cholesky(linalg::regularize_spd(cov, epsilon));
  r.white = FeatureMap(linalg::solve_lower(r.own_factor, centered));
  return r;
}

void update_bank(DomainStyleBank& bank, const std::vector<FeatureMap>& maps,
                 const std::vector<std::size_t>& domains) {
  if (maps.empty() || maps.size() != domains.size())
    throw std::invalid_argument("update_bank: batch empty or misaligned");

  std::vector<std::size_t> counts(bank.domain_count, 0);
  std::vector<Matrix> cov_sum(bank.domain_count, Matrix(bank.channels, bank.channels));
  std::vector<std::vector<double>> mean_sum(bank.domain_count,
                                            std::vector<double>(bank.channels, 0.0));

  for (std::size_t i = 0; i < maps.size(); ++i) {
    const std::size_t d = domains[i];
    if (d >= bank.domain_count) throw std::invalid_argument("update_bank: domain index out of range");
    if (maps[i].channels() != bank.channels)
      throw std::invalid_argument("update_bank: channel count mismatch");
    Matrix cov = linalg::covariance(maps[i].values);
    std::vector<double> mu = channel_mean(maps[i]);
    for (std::size_t k = 0; k < cov.data().size(); ++k) cov_sum[d].data()[k] += cov.data()[k];
    for (std::size_t k = 0; k < bank.channels; ++k) mean_sum[d][k] += mu[k];
    ++counts[d];
  }

  const double beta = bank.momentum;
  for (std::size_t d = 0; d < bank.domain_count; ++d) {
    if (counts[d] == 0) continue;  // indicator sum is zero; bank untouched
    const double inv = 1.0 / static_cast<double>(counts[d]);
    if (!bank.ready[d]) {
      for (std::size_t k = 0; k < cov_sum[d].data().size(); ++k)
        bank.cov[d].data()[k] = cov_sum[d].data()[k] * inv;
      for (std::size_t k = 0; k < bank.channels; ++k) bank.mean[d][k] = mean_sum[d][k] * inv;
      bank.ready[d] = 1;
    } else {
      for (std::size_t k = 0; k < cov_sum[d].data().size(); ++k)
        bank.cov[d].data()[k] = (1.0 - beta) * bank.cov[d].data()[k] + beta * cov_sum[d].data()[k] * inv;
      for (std::size_t k = 0; k < bank.channels; ++k)
        bank.mean[d][k] = (1.0 - beta) * bank.mean[d][k] + beta * mean_sum[d][k] * inv;
    }
  }
}

namespace {

linalg::SpdFactor target_factor(const DomainStyleBank& bank, std::size_t target_domain,
                                double epsilon) {
  if (target_domain >= bank.domain_count)
    throw std::invalid_argument("style bank: target domain out of range");
  if (!bank.ready[target_domain]) throw BankNotReadyError(target_domain);
  return linalg::cholesky(linalg::regularize_spd(bank.cov[target_domain], epsilon));
}

}  // namespace

FeatureMap color(const FeatureMap& white, std::size_t target_domain, const DomainStyleBank& bank,
                 double epsilon) {
  if (white.channels() != bank.channels)
    throw std::invalid_argument("color: channel count does not match bank");
  linalg::SpdFactor lj = target_factor(bank, target_domain, epsilon);
  Matrix out = linalg::multiply(lj.lower, white.values);
  const std::vector<double>& u = bank.mean[target_domain];
  for (std::size_t c = 0; c < white.channels(); ++c)
    for (std::size_t s = 0; s < white.positions(); ++s) out.at(c, s) += u[c];
  return FeatureMap(std::move(out));
}

FeatureMap dccd_transform(const FeatureMap& f, std::size_t target_domain,
                          const DomainStyleBank& bank, double epsilon) {
  return color(whiten(f, epsilon).white, target_domain, bank, epsilon);
}

nn::AffineMap intervention_affine(const FeatureMap& f, std::size_t target_domain,
                                  const DomainStyleBank& bank, double epsilon) {
  WhitenResult w = whiten(f, epsilon);
  linalg::SpdFactor lj = target_factor(bank, target_domain, epsilon);
  // A = L_j * L_own^-1 via L_own^-1 = solve(L_own, I)
  Matrix own_inv = linalg::solve_lower(w.own_factor, Matrix::identity(f.channels()));
  nn::AffineMap m;
  m.a = linalg::multiply(lj.lower, own_inv);
  m.shift.assign(f.channels(), 0.0);
  const std::vector<double>& u = bank.mean[target_domain];
  for (std::size_t r = 0; r < f.channels(); ++r) {
    double acc = u[r];
    for (std::size_t k = 0; k < f.channels(); ++k) acc -= m.a.at(r, k) * w.own_mean[k];
    m.shift[r] = acc;
  }
  return m;
}

InterventionSample make_intervention_sample(const nn::NetworkStack& stack,
                                            const std::vector<double>& x, std::size_t y,
                                            std::size_t target_domain, const DomainStyleBank& bank,
                                            double epsilon) {
  Matrix xb(1, x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xb.at(0, i) = x[i];
  FeatureMap f = nn::forward_encoder(stack, xb).at(0);
  InterventionSample s;
  s.embedding = nn::forward_mapper(stack, dccd_transform(f, target_domain, bank, epsilon));
  s.class_label = y;
  s.intervened_domain = target_domain;
  return s;
}

std::vector<double> do_test_embed(const nn::NetworkStack& stack, const std::vector<double>& x,
                                  const DomainStyleBank& bank, double epsilon,
                                  const std::optional<std::vector<double>>& weights) {
  if (!bank.all_ready()) {
    for (std::size_t d = 0; d < bank.domain_count; ++d)
      if (!bank.ready[d]) throw BankNotReadyError(d);
    throw std::invalid_argument("do_test: empty bank");
  }
  const std::size_t k = bank.domain_count;
  std::vector<double> w;
  if (weights) {
    w = *weights;
    if (w.size() != k) throw std::invalid_argument("do_test: weight count must equal domain count");
    double sum = 0.0;
    for (double v : w) sum += v;
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("do_test: weights must sum to 1");
  } else {
    w.assign(k, 1.0 / static_cast<double>(k));
  }

  Matrix xb(1, x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xb.at(0, i) = x[i];
  FeatureMap f = nn::forward_encoder(stack, xb).at(0);

  std::vector<double> z(stack.arch.embed_dim, 0.0);
  for (std::size_t d = 0; d < k; ++d) {
    std::vector<double> zi = nn::forward_mapper(stack, dccd_transform(f, d, bank, epsilon));
    for (std::size_t j = 0; j < z.size(); ++j) z[j] += w[d] * zi[j];
  }
  return z;
}

void save_bank(const std::string& path, const DomainStyleBank& bank) {
  auto out = io::open_out(path);
  io::write_bytes(out, "DCDB", 4);
  io::write_u32(out, 1);
  io::write_u32(out, static_cast<std::uint32_t>(bank.domain_count));
  io::write_u32(out, static_cast<std::uint32_t>(bank.channels));
  io::write_f64(out, bank.momentum);
  for (std::uint8_t r : bank.ready) io::write_u8(out, r);
  for (const auto& u : bank.mean) io::write_f64_block(out, u);
  for (const auto& v : bank.cov) io::write_f64_block(out, v.data());
}

DomainStyleBank load_bank(const std::string& path) {
  auto in = io::open_in(path);
  io::expect_magic(in, "DCDB", "bank checkpoint");
  const std::uint32_t version = io::read_u32(in);
  if (version != 1) throw std::runtime_error("bank checkpoint: unsupported version");
  const std::uint32_t k = io::read_u32(in);
  const std::uint32_t c = io::read_u32(in);
  const double beta = io::read_f64(in);
  DomainStyleBank bank = make_bank(k, c, beta);
  for (std::uint32_t d = 0; d < k; ++d) bank.ready[d] = io::read_u8(in);
  for (auto& u : bank.mean) {
    for (double& x : u) x = io::read_f64(in);
  }
  for (auto& v : bank.cov) io::read_f64_block(in, v.data());
  return bank;
}

}  // namespace dccd::core

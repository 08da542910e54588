#include "dccd/synth_data.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "dccd/io_util.hpp"
#include "dccd/rng.hpp"

namespace dccd::synth {

using linalg::Matrix;

namespace {

// default style strength when the world does not pin explicit transforms
constexpr double kMixPerturbation = 0.0;  // spectral-ish scale of (mix - I)
constexpr double kShiftScale = 4.5;

Matrix random_isometry(Rng& rng, std::size_t rows, std::size_t cols) {
  // Gram-Schmidt on gaussian columns
  Matrix q(rows, cols);
  for (std::size_t c = 0; c < cols; ++c) {
    std::vector<double> v(rows);
    for (double& x : v) x = rng.gaussian();
    for (std::size_t prev = 0; prev < c; ++prev) {
      double dot = 0.0;
      for (std::size_t r = 0; r < rows; ++r) dot += v[r] * q.at(r, prev);
      for (std::size_t r = 0; r < rows; ++r) v[r] -= dot * q.at(r, prev);
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-9) throw std::runtime_error("generate: degenerate isometry draw");
    for (std::size_t r = 0; r < rows; ++r) q.at(r, c) = v[r] / norm;
  }
  return q;
}

StyleTransform draw_style(Rng& rng, std::size_t dim) {
  StyleTransform s;
  s.mix = Matrix::identity(dim);
  const double scale = kMixPerturbation / std::sqrt(static_cast<double>(dim));
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j) s.mix.at(i, j) += scale * rng.gaussian();
  s.shift.resize(dim);
  for (double& v : s.shift) v = kShiftScale * rng.gaussian();
  return s;
}

void validate(const WorldSpec& spec, std::size_t domain_total) {
  if (spec.source_domains == 0) throw std::invalid_argument("world: need at least one source domain");
  if (spec.samples_per_id == 0) throw std::invalid_argument("world: samples_per_id must be >= 1");
  if (spec.class_signal_dim == 0 || spec.class_signal_dim > spec.input_dim)
    throw std::invalid_argument("world: class_signal_dim must be in [1, input_dim]");
  if (spec.noise_scale < 0.0) throw std::invalid_argument("world: noise_scale must be >= 0");
  if (!spec.ids_per_domain.empty() && spec.ids_per_domain.size() != domain_total)
    throw std::invalid_argument("world: ids_per_domain must list every domain");
  for (std::size_t m : spec.ids_per_domain)
    if (m == 0) throw std::invalid_argument("world: every domain needs at least one identity");
  if (!spec.styles.empty() && spec.styles.size() != domain_total)
    throw std::invalid_argument("world: styles must cover every domain");
}

}  // namespace

Dataset generate(const WorldSpec& spec) {
  const std::size_t domain_total = spec.source_domains + spec.target_domains;
  validate(spec, domain_total);

  Dataset ds;
  ds.spec = spec;
  if (ds.spec.ids_per_domain.empty())
    ds.spec.ids_per_domain.assign(domain_total, spec.ids_per_domain_default);

  ds.class_offset.resize(domain_total);
  std::size_t offset = 0;
  for (std::size_t d = 0; d < domain_total; ++d) {
    ds.class_offset[d] = offset;
    offset += ds.spec.ids_per_domain[d];
    if (d + 1 == spec.source_domains) ds.source_classes = offset;
  }
  ds.total_classes = offset;

  Rng rng(spec.seed);

  // class prototypes in the signal subspace, embedded by a fixed isometry
  Matrix embed = random_isometry(rng, spec.input_dim, spec.class_signal_dim);
  ds.prototypes = Matrix(ds.total_classes, spec.input_dim);
  for (std::size_t y = 0; y < ds.total_classes; ++y) {
    std::vector<double> s(spec.class_signal_dim);
    for (double& v : s) v = rng.gaussian();
    for (std::size_t r = 0; r < spec.input_dim; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < spec.class_signal_dim; ++c) acc += embed.at(r, c) * s[c];
      ds.prototypes.at(y, r) = acc;
    }
  }

  if (ds.spec.styles.empty()) {
    ds.spec.styles.reserve(domain_total);
    for (std::size_t d = 0; d < domain_total; ++d) ds.spec.styles.push_back(draw_style(rng, spec.input_dim));
  }

  std::vector<double> noisy(spec.input_dim);
  for (std::size_t d = 0; d < domain_total; ++d) {
    const StyleTransform& style = ds.spec.styles[d];
    for (std::size_t local = 0; local < ds.spec.ids_per_domain[d]; ++local) {
      const std::size_t y = ds.class_offset[d] + local;
      for (std::size_t n = 0; n < spec.samples_per_id; ++n) {
        for (std::size_t r = 0; r < spec.input_dim; ++r)
          noisy[r] = ds.prototypes.at(y, r) + spec.noise_scale * rng.gaussian();
        LabeledSample sample;
        sample.x.resize(spec.input_dim);
        for (std::size_t r = 0; r < spec.input_dim; ++r) {
          double acc = style.shift[r];
          for (std::size_t c = 0; c < spec.input_dim; ++c) acc += style.mix.at(r, c) * noisy[c];
          sample.x[r] = acc;
        }
        sample.y = y;
        sample.d = d;
        if (d < spec.source_domains)
          ds.train.push_back(std::move(sample));
        else
          ds.heldout.push_back(std::move(sample));
      }
    }
  }
  return ds;
}

double empirical_mutual_information_yd(const std::vector<LabeledSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("mutual information: empty dataset");
  std::map<std::pair<std::size_t, std::size_t>, double> joint;
  std::map<std::size_t, double> py, pd;
  const double inv = 1.0 / static_cast<double>(samples.size());
  for (const LabeledSample& s : samples) {
    joint[{s.y, s.d}] += inv;
    py[s.y] += inv;
    pd[s.d] += inv;
  }
  double mi = 0.0;
  for (const auto& [key, p] : joint) {
    if (p <= 0.0) continue;
    mi += p * std::log2(p / (py[key.first] * pd[key.second]));
  }
  return mi;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  auto out = io::open_out(path);
  io::write_bytes(out, "DCDS", 4);
  io::write_u32(out, 1);
  io::write_u32(out, static_cast<std::uint32_t>(ds.spec.input_dim));
  io::write_u32(out, static_cast<std::uint32_t>(ds.spec.source_domains));
  io::write_u32(out, static_cast<std::uint32_t>(ds.spec.target_domains));
  io::write_u32(out, static_cast<std::uint32_t>(ds.source_classes));
  io::write_u32(out, static_cast<std::uint32_t>(ds.total_classes));
  io::write_u64(out, ds.spec.seed);
  io::write_u64(out, ds.train.size());
  io::write_u64(out, ds.heldout.size());
  for (const auto* split : {&ds.train, &ds.heldout}) {
    for (const LabeledSample& s : *split) io::write_f64_block(out, s.x);
    for (const LabeledSample& s : *split) io::write_u32(out, static_cast<std::uint32_t>(s.y));
    for (const LabeledSample& s : *split) io::write_u32(out, static_cast<std::uint32_t>(s.d));
  }
}

Dataset load_dataset(const std::string& path) {
  auto in = io::open_in(path);
  io::expect_magic(in, "DCDS", "dataset");
  const std::uint32_t version = io::read_u32(in);
  if (version != 1) throw std::runtime_error("dataset: unsupported version");
  Dataset ds;
  ds.spec.input_dim = io::read_u32(in);
  ds.spec.source_domains = io::read_u32(in);
  ds.spec.target_domains = io::read_u32(in);
  ds.source_classes = io::read_u32(in);
  ds.total_classes = io::read_u32(in);
  ds.spec.seed = io::read_u64(in);
  const std::uint64_t n_train = io::read_u64(in);
  const std::uint64_t n_heldout = io::read_u64(in);
  for (auto [split, count] : {std::pair{&ds.train, n_train}, std::pair{&ds.heldout, n_heldout}}) {
    split->resize(count);
    for (LabeledSample& s : *split) {
      s.x.resize(ds.spec.input_dim);
      io::read_f64_block(in, s.x);
    }
    for (LabeledSample& s : *split) s.y = io::read_u32(in);
    for (LabeledSample& s : *split) s.d = io::read_u32(in);
  }
  return ds;
}

}  // namespace dccd::synth

#include "dccd/experiment.hpp"

#include "dccd/rng.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dccd::exp {

namespace fs = std::filesystem;
using linalg::Matrix;
using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct FieldSetter {
  std::function<void(ExperimentSpec&, const std::string&)> set;
};

template <class T>
T parse_number(const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (in.fail() || !in.eof()) throw std::runtime_error("malformed number '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::runtime_error("malformed flag '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_number<std::size_t>(trim(item)));
  return out;
}

const std::map<std::string, FieldSetter>& world_fields() {
  static const std::map<std::string, FieldSetter> m = {
      {"source_domains", {[](ExperimentSpec& s, const std::string& v) { s.world.source_domains = parse_number<std::size_t>(v); }}},
      {"target_domains", {[](ExperimentSpec& s, const std::string& v) { s.world.target_domains = parse_number<std::size_t>(v); }}},
      {"ids_per_domain", {[](ExperimentSpec& s, const std::string& v) { s.world.ids_per_domain = parse_list(v); }}},
      {"ids_per_domain_default", {[](ExperimentSpec& s, const std::string& v) { s.world.ids_per_domain_default = parse_number<std::size_t>(v); }}},
      {"samples_per_id", {[](ExperimentSpec& s, const std::string& v) { s.world.samples_per_id = parse_number<std::size_t>(v); }}},
      {"input_dim", {[](ExperimentSpec& s, const std::string& v) { s.world.input_dim = parse_number<std::size_t>(v); }}},
      {"class_signal_dim", {[](ExperimentSpec& s, const std::string& v) { s.world.class_signal_dim = parse_number<std::size_t>(v); }}},
      {"noise_scale", {[](ExperimentSpec& s, const std::string& v) { s.world.noise_scale = parse_number<double>(v); }}},
      {"seed", {[](ExperimentSpec& s, const std::string& v) { s.world.seed = parse_number<std::uint64_t>(v); }}},
  };
  return m;
}

const std::map<std::string, FieldSetter>& train_fields() {
  static const std::map<std::string, FieldSetter> m = {
      {"gamma", {[](ExperimentSpec& s, const std::string& v) { s.train.gamma = parse_number<double>(v); }}},
      {"beta", {[](ExperimentSpec& s, const std::string& v) { s.train.beta = parse_number<double>(v); }}},
      {"epochs", {[](ExperimentSpec& s, const std::string& v) { s.train.epochs = parse_number<std::size_t>(v); }}},
      {"batch_size", {[](ExperimentSpec& s, const std::string& v) { s.train.batch_size = parse_number<std::size_t>(v); }}},
      {"lr", {[](ExperimentSpec& s, const std::string& v) { s.train.lr = parse_number<double>(v); }}},
      {"lr_decay", {[](ExperimentSpec& s, const std::string& v) { s.train.lr_decay = parse_number<double>(v); }}},
      {"lr_decay_interval", {[](ExperimentSpec& s, const std::string& v) { s.train.lr_decay_interval = parse_number<std::size_t>(v); }}},
      {"momentum", {[](ExperimentSpec& s, const std::string& v) { s.train.momentum = parse_number<double>(v); }}},
      {"weight_decay", {[](ExperimentSpec& s, const std::string& v) { s.train.weight_decay = parse_number<double>(v); }}},
      {"epsilon_spd", {[](ExperimentSpec& s, const std::string& v) { s.train.epsilon_spd = parse_number<double>(v); }}},
      {"grl_lambda", {[](ExperimentSpec& s, const std::string& v) { s.train.grl_lambda = parse_number<double>(v); }}},
      {"use_ce", {[](ExperimentSpec& s, const std::string& v) { s.train.toggles.use_ce = parse_bool(v); }}},
      {"use_adv", {[](ExperimentSpec& s, const std::string& v) { s.train.toggles.use_adv = parse_bool(v); }}},
      {"use_ce_star", {[](ExperimentSpec& s, const std::string& v) { s.train.toggles.use_ce_star = parse_bool(v); }}},
      {"use_adv_star", {[](ExperimentSpec& s, const std::string& v) { s.train.toggles.use_adv_star = parse_bool(v); }}},
      {"seed", {[](ExperimentSpec& s, const std::string& v) { s.train.seed = parse_number<std::uint64_t>(v); }}},
      {"eval_interval", {[](ExperimentSpec& s, const std::string& v) { s.train.eval_interval = parse_number<std::size_t>(v); }}},
      {"probe_per_domain", {[](ExperimentSpec& s, const std::string& v) { s.train.probe_per_domain = parse_number<std::size_t>(v); }}},
      {"encoder_hidden", {[](ExperimentSpec& s, const std::string& v) { s.train.arch.encoder_hidden = parse_number<std::size_t>(v); }}},
      {"encoder_depth", {[](ExperimentSpec& s, const std::string& v) { s.train.arch.encoder_depth = parse_number<std::size_t>(v); }}},
      {"channels", {[](ExperimentSpec& s, const std::string& v) { s.train.arch.channels = parse_number<std::size_t>(v); }}},
      {"positions", {[](ExperimentSpec& s, const std::string& v) { s.train.arch.positions = parse_number<std::size_t>(v); }}},
      {"embed_dim", {[](ExperimentSpec& s, const std::string& v) { s.train.arch.embed_dim = parse_number<std::size_t>(v); }}},
  };
  return m;
}

const std::map<std::string, FieldSetter>& eval_fields() {
  static const std::map<std::string, FieldSetter> m = {
      {"do_test", {[](ExperimentSpec& s, const std::string& v) { s.eval.do_test = parse_bool(v); }}},
      {"probe_size", {[](ExperimentSpec& s, const std::string& v) { s.eval.probe_size = parse_number<std::size_t>(v); }}},
      {"cmc_ks", {[](ExperimentSpec& s, const std::string& v) { s.eval.cmc_ks = parse_list(v); }}},
  };
  return m;
}

const std::map<std::string, FieldSetter>& run_fields() {
  static const std::map<std::string, FieldSetter> m = {
      {"mode", {[](ExperimentSpec& s, const std::string& v) { s.mode = v; }}},
      {"out", {[](ExperimentSpec& s, const std::string& v) { s.out_dir = v; }}},
      {"verify_joints", {[](ExperimentSpec& s, const std::string& v) { s.verify_joints = parse_number<std::size_t>(v); }}},
  };
  return m;
}

void validate_mode(const std::string& mode) {
  if (mode != "baseline-dal" && mode != "dccd" && mode != "ablation-grid" &&
      mode != "verify-theorems")
    throw std::invalid_argument("unknown mode '" + mode + "'");
}

std::ofstream open_text(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path.string());
  return out;
}

void write_json_file(const fs::path& path, const json& j) {
  auto out = open_text(path);
  out << j.dump(2) << "\n";
}

void note(bool quiet, const std::string& msg) {
  if (!quiet) std::printf("%s\n", msg.c_str());
}

}  // namespace

ExperimentSpec parse_spec_text(const std::string& text, const std::string& origin) {
  ExperimentSpec spec;
  std::istringstream in(text);
  std::string line;
  std::string section;  // "" = run-level
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw SpecParseError(origin, line_no, "unterminated section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section != "world" && section != "train" && section != "eval")
        throw SpecParseError(origin, line_no, "unknown section [" + section + "]");
      continue;
    }
    std::size_t eq = t.find('=');
    if (eq == std::string::npos) throw SpecParseError(origin, line_no, "expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    const auto& table = section == "world"   ? world_fields()
                        : section == "train" ? train_fields()
                        : section == "eval"  ? eval_fields()
                                             : run_fields();
    auto it = table.find(key);
    if (it == table.end())
      throw SpecParseError(origin, line_no,
                           "unknown key '" + key + "'" +
                               (section.empty() ? "" : " in section [" + section + "]"));
    try {
      it->second.set(spec, value);
    } catch (const std::exception& e) {
      throw SpecParseError(origin, line_no, std::string(e.what()) + " for key '" + key + "'");
    }
  }
  validate_mode(spec.mode);
  return spec;
}

ExperimentSpec parse_spec_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open spec file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_spec_text(buf.str(), path);
}

json manifest_json(const ExperimentSpec& spec) {
  json j;
  j["format_versions"] = {{"dataset", 1}, {"stack", 1}, {"bank", 1}};
  j["mode"] = spec.mode;
  j["out"] = spec.out_dir;
  j["verify_joints"] = spec.verify_joints;
  j["world"] = {{"source_domains", spec.world.source_domains},
                {"target_domains", spec.world.target_domains},
                {"ids_per_domain", spec.world.ids_per_domain},
                {"ids_per_domain_default", spec.world.ids_per_domain_default},
                {"samples_per_id", spec.world.samples_per_id},
                {"input_dim", spec.world.input_dim},
                {"class_signal_dim", spec.world.class_signal_dim},
                {"noise_scale", spec.world.noise_scale},
                {"seed", spec.world.seed}};
  j["train"] = {{"gamma", spec.train.gamma},
                {"beta", spec.train.beta},
                {"epochs", spec.train.epochs},
                {"batch_size", spec.train.batch_size},
                {"lr", spec.train.lr},
                {"lr_decay", spec.train.lr_decay},
                {"lr_decay_interval", spec.train.lr_decay_interval},
                {"momentum", spec.train.momentum},
                {"weight_decay", spec.train.weight_decay},
                {"epsilon_spd", spec.train.epsilon_spd},
                {"grl_lambda", spec.train.grl_lambda},
                {"use_ce", spec.train.toggles.use_ce},
                {"use_adv", spec.train.toggles.use_adv},
                {"use_ce_star", spec.train.toggles.use_ce_star},
                {"use_adv_star", spec.train.toggles.use_adv_star},
                {"seed", spec.train.seed},
                {"eval_interval", spec.train.eval_interval},
                {"probe_per_domain", spec.train.probe_per_domain},
                {"encoder_hidden", spec.train.arch.encoder_hidden},
                {"encoder_depth", spec.train.arch.encoder_depth},
                {"channels", spec.train.arch.channels},
                {"positions", spec.train.arch.positions},
                {"embed_dim", spec.train.arch.embed_dim}};
  j["eval"] = {{"do_test", spec.eval.do_test},
               {"probe_size", spec.eval.probe_size},
               {"cmc_ks", spec.eval.cmc_ks}};
  return j;
}

void write_manifest(const std::string& path, const ExperimentSpec& spec) {
  write_json_file(path, manifest_json(spec));
}

ExperimentSpec read_manifest_json(const json& j) {
  ExperimentSpec spec;
  spec.mode = j.at("mode").get<std::string>();
  validate_mode(spec.mode);
  spec.out_dir = j.value("out", std::string{});
  spec.verify_joints = j.value("verify_joints", spec.verify_joints);
  const json& w = j.at("world");
  spec.world.source_domains = w.at("source_domains").get<std::size_t>();
  spec.world.target_domains = w.at("target_domains").get<std::size_t>();
  spec.world.ids_per_domain = w.at("ids_per_domain").get<std::vector<std::size_t>>();
  spec.world.ids_per_domain_default = w.at("ids_per_domain_default").get<std::size_t>();
  spec.world.samples_per_id = w.at("samples_per_id").get<std::size_t>();
  spec.world.input_dim = w.at("input_dim").get<std::size_t>();
  spec.world.class_signal_dim = w.at("class_signal_dim").get<std::size_t>();
  spec.world.noise_scale = w.at("noise_scale").get<double>();
  spec.world.seed = w.at("seed").get<std::uint64_t>();
  const json& t = j.at("train");
  spec.train.gamma = t.at("gamma").get<double>();
  spec.train.beta = t.at("beta").get<double>();
  spec.train.epochs = t.at("epochs").get<std::size_t>();
  spec.train.batch_size = t.at("batch_size").get<std::size_t>();
  spec.train.lr = t.at("lr").get<double>();
  spec.train.lr_decay = t.at("lr_decay").get<double>();
  spec.train.lr_decay_interval = t.at("lr_decay_interval").get<std::size_t>();
  spec.train.momentum = t.at("momentum").get<double>();
  spec.train.weight_decay = t.at("weight_decay").get<double>();
  spec.train.epsilon_spd = t.at("epsilon_spd").get<double>();
  spec.train.grl_lambda = t.at("grl_lambda").get<double>();
  spec.train.toggles.use_ce = t.at("use_ce").get<bool>();
  spec.train.toggles.use_adv = t.at("use_adv").get<bool>();
  spec.train.toggles.use_ce_star = t.at("use_ce_star").get<bool>();
  spec.train.toggles.use_adv_star = t.at("use_adv_star").get<bool>();
  spec.train.seed = t.at("seed").get<std::uint64_t>();
  spec.train.eval_interval = t.at("eval_interval").get<std::size_t>();
  spec.train.probe_per_domain = t.at("probe_per_domain").get<std::size_t>();
  spec.train.arch.encoder_hidden = t.at("encoder_hidden").get<std::size_t>();
  spec.train.arch.encoder_depth = t.at("encoder_depth").get<std::size_t>();
  spec.train.arch.channels = t.at("channels").get<std::size_t>();
  spec.train.arch.positions = t.at("positions").get<std::size_t>();
  spec.train.arch.embed_dim = t.at("embed_dim").get<std::size_t>();
  const json& e = j.at("eval");
  spec.eval.do_test = e.at("do_test").get<bool>();
  spec.eval.probe_size = e.at("probe_size").get<std::size_t>();
  spec.eval.cmc_ks = e.at("cmc_ks").get<std::vector<std::size_t>>();
  return spec;
}

ExperimentSpec load_spec(const std::string& path) {
  if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    json j = json::parse(in);
    return read_manifest_json(j);
  }
  return parse_spec_file(path);
}

const std::vector<AblationRow>& ablation_rows() {
  static const std::vector<AblationRow> rows = {
      {"ce", {true, false, false, false}, false, false},
      {"ce_adv", {true, true, false, false}, false, false},
      {"ce_cestar", {true, false, true, false}, true, false},
      {"ce_cestar_advstar", {true, false, true, true}, true, false},
      {"ce_cestar_dotest", {true, false, true, false}, true, true},
      {"ce_cestar_advstar_dotest", {true, false, true, true}, true, true},
  };
  return rows;
}

Matrix probe_inputs(const synth::Dataset& ds, std::size_t probe_size) {
  const auto& pool = ds.heldout.empty() ? ds.train : ds.heldout;
  std::vector<std::size_t> domains;
  for (const auto& s : pool)
    if (std::find(domains.begin(), domains.end(), s.d) == domains.end()) domains.push_back(s.d);
  const std::size_t per_domain = (probe_size + domains.size() - 1) / domains.size();
  std::vector<const synth::LabeledSample*> chosen;
  for (std::size_t d : domains) {
    std::size_t got = 0;
    for (const auto& s : pool)
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

namespace {

Matrix gather_rows(const std::vector<const synth::LabeledSample*>& rows, std::size_t dim) {
  Matrix x(rows.size(), dim);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < dim; ++c) x.at(i, c) = rows[i]->x[c];
  return x;
}

Matrix do_test_embed_batch(const nn::NetworkStack& stack, const core::DomainStyleBank& bank,
                           const Matrix& x, double eps) {
  Matrix z(x.rows(), stack.arch.embed_dim);
  std::vector<double> xi(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t c = 0; c < x.cols(); ++c) xi[c] = x.at(i, c);
    std::vector<double> zi = core::do_test_embed(stack, xi, bank, eps);
    for (std::size_t e = 0; e < zi.size(); ++e) z.at(i, e) = zi[e];
  }
  return z;
}

}  // namespace

RetrievalEval evaluate_retrieval(const synth::Dataset& ds, const nn::NetworkStack& stack,
                                 const core::DomainStyleBank& bank, double epsilon, bool do_test) {
  if (ds.heldout.empty()) throw std::invalid_argument("retrieval: no held-out target samples");
  std::vector<const synth::LabeledSample*> query, gallery;
  std::vector<std::size_t> qid, gid;
  for (std::size_t i = 0; i < ds.heldout.size(); ++i) {
    if (i % 2) {
      query.push_back(&ds.heldout[i]);
      qid.push_back(ds.heldout[i].y);
    } else {
      gallery.push_back(&ds.heldout[i]);
      gid.push_back(ds.heldout[i].y);
    }
  }
  Matrix qx = gather_rows(query, ds.spec.input_dim);
  Matrix gx = gather_rows(gallery, ds.spec.input_dim);

  RetrievalEval out;
  out.plain = eval::cmc_map(nn::embed_batch(stack, qx), nn::embed_batch(stack, gx), qid, gid);
  if (do_test && bank.all_ready()) {
    out.do_test = eval::cmc_map(do_test_embed_batch(stack, bank, qx, epsilon),
                                do_test_embed_batch(stack, bank, gx, epsilon), qid, gid);
    out.has_do_test = true;
  }
  return out;
}

void run_generate(const ExperimentSpec& spec, bool quiet) {
  fs::create_directories(spec.out_dir);
  synth::Dataset ds = synth::generate(spec.world);
  synth::save_dataset((fs::path(spec.out_dir) / "dataset.bin").string(), ds);
  write_manifest((fs::path(spec.out_dir) / "manifest.json").string(), spec);
  note(quiet, "dataset: " + std::to_string(ds.train.size()) + " train / " +
                  std::to_string(ds.heldout.size()) + " held-out samples -> " + spec.out_dir);
}

namespace {

json single_metrics(const ExperimentSpec& spec, const synth::Dataset& ds,
                    const train::TrainReport& report, const RetrievalEval& r) {
  const bool dccd_mode = spec.mode == "dccd";
  const double eps = spec.train.epsilon_spd;
  json m;

  m["retrieval_plain"] = eval::retrieval_json(r.plain, spec.eval.cmc_ks);
  if (r.has_do_test) m["retrieval_do_test"] = eval::retrieval_json(r.do_test, spec.eval.cmc_ks);

  if (dccd_mode && report.final_bank.all_ready()) {
    Matrix probes = probe_inputs(ds, spec.eval.probe_size);
    m["ate_init"] = eval::ate_json(
        eval::estimate_ate(report.initial_stack, report.warmup_bank, probes, eps));
    m["ate_final"] =
        eval::ate_json(eval::estimate_ate(report.final_stack, report.final_bank, probes, eps));
    json curve = json::array();
    for (const auto& [epoch, v] : report.marginal_curve) curve.push_back({epoch, v});
    m["marginal_match_curve"] = curve;
  }

  eval::EntropyProxyReport proxy =
      eval::entropy_proxy_from_discriminator(report.final_stack, ds.train);
  m["entropy_proxy_bits"] = proxy.proxy_bits;
  m["h_d_bits"] = proxy.h_d_bits;
  m["mi_train_bits"] = synth::empirical_mutual_information_yd(ds.train);

  const auto& last = report.epochs.back();
  m["final_losses"] = {{"l_ce", last.l_ce},
                       {"l_adv", last.l_adv},
                       {"l_ce_star", last.l_ce_star},
                       {"l_adv_star", last.l_adv_star},
                       {"objective", last.objective},
                       {"disc_star_acc", last.disc_star_acc}};
  return m;
}

}  // namespace

void run_single(const ExperimentSpec& spec, bool quiet) {
  if (spec.mode != "dccd" && spec.mode != "baseline-dal")
    throw std::invalid_argument("run_single: mode must be dccd or baseline-dal");
  fs::create_directories(spec.out_dir);
  const fs::path out(spec.out_dir);
  write_manifest((out / "manifest.json").string(), spec);

  synth::Dataset ds = synth::generate(spec.world);
  synth::save_dataset((out / "dataset.bin").string(), ds);

  train::TrainReport report = spec.mode == "dccd" ? train::train_dccd(ds, spec.train)
                                                  : train::train_baseline_dal(ds, spec.train);
  train::write_train_log((out / "train_log.jsonl").string(), report);
  nn::save_stack((out / "stack.bin").string(), report.final_stack);
  if (spec.mode == "dccd") core::save_bank((out / "bank.bin").string(), report.final_bank);

  RetrievalEval r = evaluate_retrieval(ds, report.final_stack, report.final_bank,
                                       spec.train.epsilon_spd,
                                       spec.mode == "dccd" && spec.eval.do_test);
  json metrics = single_metrics(spec, ds, report, r);
  write_json_file(out / "metrics.json", metrics);
  eval::write_cmc_csv((out / "cmc.csv").string(), r.has_do_test ? r.do_test : r.plain);
  if (r.has_do_test) eval::write_cmc_csv((out / "cmc_plain.csv").string(), r.plain);

  const json& retrieval = metrics.contains("retrieval_do_test") ? metrics["retrieval_do_test"]
                                                                : metrics["retrieval_plain"];
  note(quiet, spec.mode + " run: rank1 = " + std::to_string(retrieval["rank1"].get<double>()) +
                  ", map = " + std::to_string(retrieval["map"].get<double>()) + " -> " +
                  spec.out_dir);
}

void run_eval_artifacts(const ExperimentSpec& spec, bool quiet) {
  const fs::path out(spec.out_dir);
  synth::Dataset ds = synth::load_dataset((out / "dataset.bin").string());
  nn::NetworkStack stack = nn::load_stack((out / "stack.bin").string());
  core::DomainStyleBank bank;
  const bool have_bank = fs::exists(out / "bank.bin");
  if (have_bank) bank = core::load_bank((out / "bank.bin").string());

  json m;
  RetrievalEval r = evaluate_retrieval(ds, stack, bank, spec.train.epsilon_spd,
                                       have_bank && spec.eval.do_test);
  m["retrieval_plain"] = eval::retrieval_json(r.plain, spec.eval.cmc_ks);
  if (r.has_do_test) m["retrieval_do_test"] = eval::retrieval_json(r.do_test, spec.eval.cmc_ks);
  if (have_bank && bank.all_ready()) {
    Matrix probes = probe_inputs(ds, spec.eval.probe_size);
    m["ate_final"] =
        eval::ate_json(eval::estimate_ate(stack, bank, probes, spec.train.epsilon_spd));
  }
  eval::EntropyProxyReport proxy = eval::entropy_proxy_from_discriminator(stack, ds.train);
  m["entropy_proxy_bits"] = proxy.proxy_bits;
  m["h_d_bits"] = proxy.h_d_bits;
  m["mi_train_bits"] = synth::empirical_mutual_information_yd(ds.train);
  write_json_file(out / "metrics.json", m);
  eval::write_cmc_csv((out / "cmc.csv").string(), r.has_do_test ? r.do_test : r.plain);
  if (r.has_do_test) eval::write_cmc_csv((out / "cmc_plain.csv").string(), r.plain);
  note(quiet, "eval: metrics written -> " + spec.out_dir);
}

void run_grid(const ExperimentSpec& spec, bool quiet) {
  fs::create_directories(spec.out_dir);
  const fs::path out(spec.out_dir);
  write_manifest((out / "manifest.json").string(), spec);

  json summary;
  json rows_json = json::object();
  auto run_cell = [&](const fs::path& dir, const AblationRow& row, std::uint64_t seed) {
    ExperimentSpec cell = spec;
    cell.mode = row.dccd_mode ? "dccd" : "baseline-dal";
    cell.out_dir = dir.string();
    cell.train.toggles = row.toggles;
    cell.train.seed = seed;
    cell.eval.do_test = row.do_test;
    run_single(cell, /*quiet=*/true);
    std::ifstream in(dir / "metrics.json");
    json metrics = json::parse(in);
    const json& r = row.do_test ? metrics.at("retrieval_do_test") : metrics.at("retrieval_plain");
    return r.at("rank1").get<double>();
  };

  for (const AblationRow& row : ablation_rows()) {
    json per_seed = json::object();
    double mean = 0.0;
    for (std::uint64_t seed : kCanonicalSeeds) {
      const fs::path dir = out / "rows" / row.name / ("seed" + std::to_string(seed));
      const double r1 = run_cell(dir, row, seed);
      per_seed[std::to_string(seed)] = r1;
      mean += r1;
      note(quiet, std::string("grid row ") + row.name + " seed " + std::to_string(seed) +
                      ": rank1 " + std::to_string(r1));
    }
    mean /= static_cast<double>(std::size(kCanonicalSeeds));
    rows_json[row.name] = {{"rank1_mean", mean}, {"rank1_per_seed", per_seed}};
  }
  summary["rows"] = rows_json;

  // parameter sweeps, full objective with do-test at the default seed
  const AblationRow& full = ablation_rows().back();
  json beta_json = json::object();
  for (double beta : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    ExperimentSpec cell = spec;
    cell.train.beta = beta;
    const fs::path dir = out / "sweeps" / ("beta_" + std::to_string(beta).substr(0, 3));
    ExperimentSpec c2 = cell;
    c2.mode = "dccd";
    c2.out_dir = dir.string();
    c2.train.toggles = full.toggles;
    c2.eval.do_test = true;
    run_single(c2, true);
    std::ifstream in(dir / "metrics.json");
    json metrics = json::parse(in);
    beta_json[std::to_string(beta)] = metrics.at("retrieval_do_test").at("rank1").get<double>();
    note(quiet, "grid beta " + std::to_string(beta) + ": rank1 " +
                    std::to_string(beta_json[std::to_string(beta)].get<double>()));
  }
  summary["beta_sweep"] = beta_json;

  json gamma_json = json::object();
  for (double gamma : {0.05, 0.1, 0.25, 0.5, 1.0}) {
    ExperimentSpec cell = spec;
    cell.train.gamma = gamma;
    const fs::path dir = out / "sweeps" / ("gamma_" + std::to_string(gamma).substr(0, 4));
    ExperimentSpec c2 = cell;
    c2.mode = "dccd";
    c2.out_dir = dir.string();
    c2.train.toggles = full.toggles;
    c2.eval.do_test = true;
    run_single(c2, true);
    std::ifstream in(dir / "metrics.json");
    json metrics = json::parse(in);
    gamma_json[std::to_string(gamma)] = metrics.at("retrieval_do_test").at("rank1").get<double>();
    note(quiet, "grid gamma " + std::to_string(gamma) + ": rank1 " +
                    std::to_string(gamma_json[std::to_string(gamma)].get<double>()));
  }
  summary["gamma_sweep"] = gamma_json;

  write_json_file(out / "grid_summary.json", summary);
  note(quiet, "grid summary -> " + (out / "grid_summary.json").string());
}

void run_verify(const ExperimentSpec& spec, bool quiet) {
  fs::create_directories(spec.out_dir);
  const fs::path out(spec.out_dir);
  write_manifest((out / "manifest.json").string(), spec);

  std::size_t violations = 0;
  std::size_t inapplicable = 0;
  std::size_t premise_cases = 0;
  double min_slack = 1e300;
  double min_premise_slack = 1e300;
  for (std::uint64_t seed = 0; seed < spec.verify_joints; ++seed) {
    eval::DiscreteJoint joint = eval::random_disjoint_joint(seed, seed % 3 == 0);
    eval::Theorem1Report rep = eval::verify_theorem1(joint);
    if (!rep.applicable) ++inapplicable;
    if (!rep.holds) ++violations;
    min_slack = std::min(min_slack, rep.slack);
    if (rep.premise_active) {
      ++premise_cases;
      min_premise_slack = std::min(min_premise_slack, rep.premise_slack);
    }
  }

  // chain-rule identity of the conditional entropies on dense random joints
  double chain_max_err = 0.0;
  dccd::Rng rng(424242);
  for (int t = 0; t < 200; ++t) {
    eval::DiscreteJoint j = eval::make_joint(2 + rng.index(4), 2 + rng.index(4), 2 + rng.index(3));
    double total = 0.0;
    for (double& v : j.p) total += (v = rng.uniform());
    for (double& v : j.p) v /= total;
    const double lhs = eval::conditional_entropy(j, eval::kD | eval::kY, eval::kZ);
    const double rhs = eval::conditional_entropy(j, eval::kD, eval::kZ | eval::kY) +
                       eval::conditional_entropy(j, eval::kY, eval::kZ);
    chain_max_err = std::max(chain_max_err, std::abs(lhs - rhs));
  }

  json report = {{"joints", spec.verify_joints},
                 {"violations", violations},
                 {"inapplicable", inapplicable},
                 {"premise_cases", premise_cases},
                 {"min_slack", min_slack},
                 {"min_premise_slack", min_premise_slack},
                 {"chain_identity_max_err", chain_max_err}};
  write_json_file(out / "theorems.json", report);
  std::printf("verify-theorems: joints %zu, violations: %zu (min slack %.3e), chain identity err %.3e\n",
              spec.verify_joints, violations, min_slack, chain_max_err);
  (void)quiet;
}

void run_experiment(const ExperimentSpec& spec, bool quiet) {
  validate_mode(spec.mode);
  if (spec.out_dir.empty()) throw std::invalid_argument("experiment: output directory not set");
  if (spec.mode == "ablation-grid")
    run_grid(spec, quiet);
  else if (spec.mode == "verify-theorems")
    run_verify(spec, quiet);
  else
    run_single(spec, quiet);
}

}  // namespace dccd::exp

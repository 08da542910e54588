#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "dccd/eval.hpp"
#include "dccd/synth_data.hpp"
#include "dccd/train.hpp"

namespace dccd::exp {

struct EvalOptions {
  bool do_test = true;            // average embeddings over interventions at test time
  std::size_t probe_size = 60;    // held-out probes for the causal-effect estimate
  std::vector<std::size_t> cmc_ks = {1, 5, 10};
};

// One experiment: a world, a training configuration, evaluation options and
// a mode that selects the driver.
struct ExperimentSpec {
  std::string mode = "dccd";  // baseline-dal | dccd | ablation-grid | verify-theorems
  std::string out_dir;
  synth::WorldSpec world;
  train::TrainConfig train;
  EvalOptions eval;
  std::size_t verify_joints = 1000;
};

class SpecParseError : public std::runtime_error {
 public:
  SpecParseError(const std::string& origin, std::size_t line, const std::string& what)
      : std::runtime_error(origin + ":" + std::to_string(line) + ": " + what), line_number(line) {}
  std::size_t line_number;
};

// Flat key = value format with [world], [train], [eval] sections; keys
// outside any section are run-level (mode, out, verify_joints). '#' and ';'
// start comments. Unknown keys or malformed values raise SpecParseError with
// the offending line.
ExperimentSpec parse_spec_text(const std::string& text, const std::string& origin);
ExperimentSpec parse_spec_file(const std::string& path);

// Fully resolved spec plus format versions; a rerun from the manifest
// reproduces every metric file byte for byte.
nlohmann::json manifest_json(const ExperimentSpec& spec);
void write_manifest(const std::string& path, const ExperimentSpec& spec);
ExperimentSpec read_manifest_json(const nlohmann::json& j);

// Loads either format: *.json manifests or the flat text format.
ExperimentSpec load_spec(const std::string& path);

// --- drivers; each writes its artifacts under spec.out_dir ---

// generate + save the dataset (dataset.bin)
void run_generate(const ExperimentSpec& spec, bool quiet);

// single training run: manifest.json, dataset.bin, train_log.jsonl,
// stack.bin, bank.bin (dccd), metrics.json, cmc.csv (+ cmc_plain.csv)
void run_single(const ExperimentSpec& spec, bool quiet);

// evaluation over previously written artifacts in out_dir
void run_eval_artifacts(const ExperimentSpec& spec, bool quiet);

// the six ablation rows over the canonical seeds plus beta/gamma sweeps;
// writes grid_summary.json and one run directory per cell
void run_grid(const ExperimentSpec& spec, bool quiet);

// discrete-oracle verification of the entropy bound; writes theorems.json
// and reports the violation count
void run_verify(const ExperimentSpec& spec, bool quiet);

// dispatch on spec.mode
void run_experiment(const ExperimentSpec& spec, bool quiet);

// canonical seeds for 3-seed comparisons (grid rows, acceptance ordering)
inline constexpr std::uint64_t kCanonicalSeeds[3] = {7, 8, 9};

// the six ablation rows of the grid, in reporting order
struct AblationRow {
  const char* name;
  train::LossToggles toggles;
  bool dccd_mode;
  bool do_test;
};
const std::vector<AblationRow>& ablation_rows();

// retrieval protocol over the held-out split: odd indices query, even
// indices gallery; embeddings are plain forward or do-test averaged
struct RetrievalEval {
  eval::RetrievalResult plain;
  eval::RetrievalResult do_test;  // only filled when requested
  bool has_do_test = false;
};
RetrievalEval evaluate_retrieval(const synth::Dataset& ds, const nn::NetworkStack& stack,
                                 const core::DomainStyleBank& bank, double epsilon, bool do_test);

// balanced probe block over target domains (leading samples per domain)
linalg::Matrix probe_inputs(const synth::Dataset& ds, std::size_t probe_size);

}  // namespace dccd::exp

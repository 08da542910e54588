// Experiment runner: generation, training, evaluation, ablation grids and
// the discrete theorem checks behind one command-line surface.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dccd/experiment.hpp"

namespace {

struct CommonArgs {
  std::string spec_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool spec_required) {
  auto* spec = cmd->add_option("--spec", args.spec_path, "experiment spec (flat text or manifest .json)");
  if (spec_required) spec->required();
  cmd->add_option("--out", args.out_dir, "output directory (overrides the spec)");
  cmd->add_option("--seed", args.seed, "training seed override")->each([&](const std::string&) {
    args.seed_set = true;
  });
  cmd->add_flag("--quiet", args.quiet, "suppress progress output");
}

dccd::exp::ExperimentSpec resolve(const CommonArgs& args) {
  dccd::exp::ExperimentSpec spec =
      args.spec_path.empty() ? dccd::exp::ExperimentSpec{} : dccd::exp::load_spec(args.spec_path);
  if (!args.out_dir.empty()) spec.out_dir = args.out_dir;
  if (args.seed_set) spec.train.seed = args.seed;
  if (spec.out_dir.empty()) throw std::invalid_argument("no output directory (--out or 'out =' in the spec)");
  return spec;
}

void emit_error(const std::string& kind, const std::string& message, const std::string& out_dir) {
  nlohmann::json err = {{"error", kind}, {"message", message}};
  std::fprintf(stderr, "%s\n", err.dump().c_str());
  if (!out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (!ec) {
      std::ofstream f(std::filesystem::path(out_dir) / "error.json");
      if (f) f << err.dump(2) << "\n";
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"domain-class correlation decomposition lab"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, grid_args, verify_args, run_args;
  std::size_t verify_joints = 0;

  add_common(app.add_subcommand("generate", "generate and store the synthetic dataset"), gen_args, false);
  add_common(app.add_subcommand("train", "train one configuration and write all artifacts"), train_args, false);
  add_common(app.add_subcommand("eval", "evaluate previously written artifacts"), eval_args, false);
  add_common(app.add_subcommand("grid", "run the ablation rows and parameter sweeps"), grid_args, false);
  auto* verify_cmd = app.add_subcommand("verify", "run the discrete entropy-bound oracles");
  add_common(verify_cmd, verify_args, false);
  verify_cmd->add_option("--joints", verify_joints, "number of random joints to test");
  add_common(app.add_subcommand("run", "dispatch on the spec's mode"), run_args, false);

  CLI11_PARSE(app, argc, argv);

  const std::string sub = app.get_subcommands().front()->get_name();
  CommonArgs* args = sub == "generate" ? &gen_args
                     : sub == "train"  ? &train_args
                     : sub == "eval"   ? &eval_args
                     : sub == "grid"   ? &grid_args
                     : sub == "verify" ? &verify_args
                                       : &run_args;

  std::string out_for_error;
  try {
    dccd::exp::ExperimentSpec spec = resolve(*args);
    out_for_error = spec.out_dir;
    if (sub == "generate") {
      dccd::exp::run_generate(spec, args->quiet);
    } else if (sub == "train") {
      if (spec.mode != "dccd" && spec.mode != "baseline-dal")
        throw std::invalid_argument("train: spec mode must be dccd or baseline-dal");
      dccd::exp::run_single(spec, args->quiet);
    } else if (sub == "eval") {
      dccd::exp::run_eval_artifacts(spec, args->quiet);
    } else if (sub == "grid") {
      spec.mode = "ablation-grid";
      dccd::exp::run_grid(spec, args->quiet);
    } else if (sub == "verify") {
      spec.mode = "verify-theorems";
      if (verify_joints > 0) spec.verify_joints = verify_joints;
      dccd::exp::run_verify(spec, args->quiet);
    } else {
      dccd::exp::run_experiment(spec, args->quiet);
    }
  } catch (const dccd::exp::SpecParseError& e) {
    emit_error("spec_parse", e.what(), out_for_error);
    return 2;
  } catch (const std::exception& e) {
    emit_error("runtime", e.what(), out_for_error);
    return 1;
  }
  return 0;
}

// contfuse: train, evaluate, ablate, gradient-check, benchmark and report.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure
// (non-finite loss or a failed gradient check).

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "contfuse/experiment.hpp"

namespace {

using namespace contfuse;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "Experiment config (JSON); defaults apply when omitted")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Override the config seed");
  cmd->add_option("--out", o.out, "Run directory (default runs/<name>)");
}

ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig c = load_experiment(o.config, env_overrides());
  if (o.seed) c.seed = *o.seed;
  return c;
}

fs::path out_dir(const CommonOptions& o, const ExperimentConfig& c) {
  return o.out.empty() ? fs::path("runs") / c.name : fs::path(o.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-fusion 3D detector: training and evaluation tools"};
  app.require_subcommand(1);

  CommonOptions train_opts, eval_opts, ablate_opts;
  auto* train_cmd = app.add_subcommand("train", "Train a detector and write a run directory");
  add_common(train_cmd, train_opts);

  std::string checkpoint, dataset;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and write eval_report.json");
  add_common(eval_cmd, eval_opts);
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--dataset", dataset, "Dataset directory (default: the config's evaluation split)")
      ->check(CLI::ExistingDirectory);

  auto* ablate_cmd = app.add_subcommand("ablate", "Train every ablation variant and compare training AP");
  add_common(ablate_cmd, ablate_opts);

  Real tolerance = 1e-4;
  std::string gradcheck_out;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  gradcheck_cmd->add_option("--tolerance", tolerance, "Relative error threshold")->capture_default_str();
  gradcheck_cmd->add_option("--out", gradcheck_out, "Directory for gradcheck.json");

  BenchOptions bench;
  std::string bench_out;
  auto* bench_cmd = app.add_subcommand("bench", "Time KNN, voxelization, fusion and NMS across sizes");
  bench_cmd->add_option("--points", bench.point_counts, "Point-cloud sizes")->capture_default_str();
  bench_cmd->add_option("--boxes", bench.box_counts, "NMS box counts")->capture_default_str();
  bench_cmd->add_option("--repeats", bench.repeats, "Timed repetitions per row")->capture_default_str();
  bench_cmd->add_option("--seed", bench.seed, "Input seed")->capture_default_str();
  bench_cmd->add_option("--out", bench_out, "Directory for bench.json");

  std::vector<std::string> runs;
  std::string report_out = "report";
  auto* report_cmd = app.add_subcommand("report", "Merge run directories into plot-ready tables");
  report_cmd->add_option("runs", runs, "Run directories")->required();
  report_cmd->add_option("--out", report_out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) {
      const ExperimentConfig c = resolve(train_opts);
      const fs::path out = out_dir(train_opts, c);
      const TrainRunResult r = train_run(c, out, &std::cout);
      std::cout << "final loss " << r.metrics["final_loss"].get<Real>() << " (" << r.metrics["loss_ratio"].get<Real>()
                << " of initial)\n"
                << format_report_table(r.metrics["eval"]) << "run directory: " << out.string() << "\n";
    } else if (*eval_cmd) {
      const ExperimentConfig c = resolve(eval_opts);
      const fs::path out = out_dir(eval_opts, c);
      const auto scenes = dataset.empty() ? evaluation_scenes(c) : read_dataset(dataset);
      const Json report = eval_run(c, checkpoint, scenes, out);
      std::cout << format_report_table(report) << "report: " << (out / "eval_report.json").string() << "\n";
    } else if (*ablate_cmd) {
      const ExperimentConfig c = resolve(ablate_opts);
      const fs::path out = out_dir(ablate_opts, c);
      const Json report = ablate_run(c, out, &std::cout);
      std::cout << format_ablation_table(report) << "report: " << (out / "ablation.json").string() << "\n";
    } else if (*gradcheck_cmd) {
      const GradCheckReport r = gradcheck_run(tolerance, &std::cout);
      if (!gradcheck_out.empty()) {
        fs::create_directories(gradcheck_out);
        detail::run::write_text(fs::path(gradcheck_out) / "gradcheck.json", r.to_json().dump(2) + "\n");
      }
      std::cout << (r.passed ? "all gradient checks passed\n" : "gradient check FAILED\n");
      return r.passed ? kExitOk : kExitNumeric;
    } else if (*bench_cmd) {
      const Json rows = bench_run(bench, &std::cout);
      if (!bench_out.empty()) {
        fs::create_directories(bench_out);
        detail::run::write_text(fs::path(bench_out) / "bench.json", rows.dump(2) + "\n");
      }
    } else if (*report_cmd) {
      std::vector<fs::path> dirs(runs.begin(), runs.end());
      const Json r = report_run(dirs, report_out);
      for (const Json& run : r["runs"])
        std::cout << run["run"].get<std::string>() << ": " << run["steps"] << " steps, final loss " << run["final_loss"]
                  << "\n";
      std::cout << "tables written to " << report_out << "\n";
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CheckpointError& e) {
    std::cerr << "incompatible checkpoint: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}

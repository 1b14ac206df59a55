// Command-line front end for the Monte-Carlo harness.
//
//   risloc_cli run <spec.json|demo> [--out DIR] [--seed N] [--threads N] [--format csv|json]
//   risloc_cli bounds <spec.json|demo> ...
//   risloc_cli validate <spec.json|demo>
//   risloc_cli demo ...
//
// Exit codes: 0 success, 2 invalid spec, 3 runtime failure.

#include <chrono>
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "risloc/harness.hpp"

namespace {

constexpr int kExitInvalidSpec = 2;
constexpr int kExitRuntime = 3;

risloc::ExperimentSpec resolve(const std::string& source) {
  return source == "demo" ? risloc::demo_spec() : risloc::load_spec(source);
}

void print_report(const risloc::ValidationReport& rep) {
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
  for (const auto& e : rep.errors) std::cerr << "error: " << e << "\n";
}

void print_summary(const std::vector<risloc::SummaryRow>& rows) {
  std::printf("%8s %12s %12s %12s %12s %7s\n", "value", "rmse_pos[m]", "rms_peb[m]", "rmse_vb", "rmse_vr", "failed");
  for (const auto& r : rows)
    std::printf("%8.4g %12.5g %12.5g %12.5g %12.5g %7d\n", r.sweep_value, r.rmse_position, r.rms_peb, r.rmse_v_b,
                r.rmse_v_r, r.failed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RIS-aided SISO localization: simulation, estimation and bounds"};
  app.require_subcommand(1);

  std::string source;
  std::string out_dir = "risloc_out";
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string format = "csv";

  auto add_common = [&](CLI::App* sub, bool with_source) {
    if (with_source) sub->add_option("spec", source, "experiment spec file, or 'demo'")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "override the experiment seed");
    sub->add_option("--threads", threads, "worker threads (0 = all cores)");
    sub->add_option("--format", format, "record format")->check(CLI::IsMember({"csv", "json"}));
  };
  CLI::App* run = app.add_subcommand("run", "run estimator and bounds over the sweep");
  add_common(run, true);
  CLI::App* bounds = app.add_subcommand("bounds", "PEB/CRB sweep without the estimator");
  add_common(bounds, true);
  CLI::App* validate = app.add_subcommand("validate", "check a spec (delay range, NB validity)");
  validate->add_option("spec", source, "experiment spec file, or 'demo'")->required();
  CLI::App* demo = app.add_subcommand("demo", "run the built-in desk-scale arc");
  add_common(demo, false);

  CLI11_PARSE(app, argc, argv);
  if (demo->parsed()) source = "demo";

  risloc::ExperimentSpec spec;
  try {
    spec = resolve(source);
    if (seed != 0) spec.seed = seed;
    const risloc::ValidationReport rep = risloc::validate_spec(spec);
    print_report(rep);
    if (!rep.ok()) return kExitInvalidSpec;
    if (validate->parsed()) {
      std::cout << "spec '" << spec.name << "' is valid (" << spec.sweep.values.size() << " sweep values, "
                << rep.warnings.size() << " warnings)\n";
      return 0;
    }
  } catch (const risloc::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalidSpec;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalidSpec;
  }

  const auto fmt = format == "json" ? risloc::OutputFormat::Json : risloc::OutputFormat::Csv;
  const risloc::RunOptions opt{threads};
  try {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::filesystem::path> written;
    if (bounds->parsed()) {
      written = risloc::write_bound_outputs(out_dir, spec, risloc::run_bounds(spec, opt), fmt);
    } else {
      const auto records = risloc::run_experiment(spec, opt);
      print_summary(risloc::aggregate(records));
      written = risloc::write_run_outputs(out_dir, spec, records, fmt);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& p : written) std::cout << "wrote " << p.string() << "\n";
    std::cout << "elapsed " << secs << " s\n";
  } catch (const risloc::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalidSpec;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}

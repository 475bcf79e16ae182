#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wscl/error.hpp"
#include "wscl/experiment.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides,
            const std::vector<std::uint64_t>& seeds, const std::string& out, std::size_t workers) {
  wscl::Json doc = wscl::Json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) {
      std::cerr << "invalid config: cannot open " << config_path << '\n';
      return 2;
    }
    doc = wscl::Json::parse(in, nullptr, false);
    if (doc.is_discarded()) {
      std::cerr << "invalid config: " << config_path << " is not valid JSON\n";
      return 2;
    }
  }
  try {
    for (const auto& o : overrides) wscl::apply_override(doc, o);
    if (!seeds.empty()) doc["seeds"] = seeds;
    if (!out.empty()) doc["output_dir"] = out;
    wscl::RunOptions options;
    options.workers = workers ? workers : wscl::workers_from_env();
    options.log = &std::cerr;
    return wscl::run_experiment(doc, options);
  } catch (const wscl::Error& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out) {
  std::vector<fs::path> paths(dirs.begin(), dirs.end());
  const fs::path target = out.empty() ? paths.front() / "report" : fs::path(out);
  try {
    const std::size_t n = wscl::emit_report(paths, target);
    std::cout << "report from " << n << " run(s) written to " << target.string() << '\n';
    return 0;
  } catch (const wscl::Error& e) {
    std::cerr << e.what() << '\n';
    return e.code() == wscl::ErrorCode::EmptyInput ? 2 : 1;
  }
}

int cmd_gen_data(const std::string& spec_text, std::uint64_t seed, const std::string& out) {
  wscl::SynthSpec spec;
  try {
    spec = wscl::parse_synth_spec(spec_text);
  } catch (const wscl::Error& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }
  try {
    const wscl::SynthData data = wscl::synth_datasets(spec, seed);
    fs::create_directories(out);
    wscl::save_dataset(data.train, fs::path(out) / "train.wds");
    wscl::save_dataset(data.test, fs::path(out) / "test.wds");
    if (data.dream.size() > 0) wscl::save_dataset(data.dream, fs::path(out) / "dream.wds");
    std::cout << "wrote " << data.train.size() << " train, " << data.test.size() << " test, " << data.dream.size()
              << " dream samples to " << out << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wake-sleep consolidated continual learning experiments"};
  app.require_subcommand(1);

  std::string config_path, out;
  std::vector<std::string> overrides;
  std::vector<std::uint64_t> seeds;
  std::size_t workers = 0;
  auto* run = app.add_subcommand("run", "Train and evaluate every seed and sweep point of a config");
  run->add_option("-c,--config", config_path, "JSON config file (defaults apply to missing keys)");
  run->add_option("--set", overrides, "Override a config entry, e.g. --set wscl.lr=0.01");
  run->add_option("--seed", seeds, "Replace the seed list");
  run->add_option("-o,--out", out, "Output directory");
  run->add_option("-j,--workers", workers, "Parallel runs (default: WSCL_WORKERS or the core count)");

  std::vector<std::string> report_dirs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "Tabulate run records into CSV files");
  report->add_option("dirs", report_dirs, "Run directories")->required();
  report->add_option("-o,--out", report_out, "Report directory (default: <first dir>/report)");

  std::string spec = "synth:";
  std::uint64_t data_seed = 0;
  std::string data_out;
  auto* gen = app.add_subcommand("gen-data", "Write synthetic train/test/dream datasets in the binary format");
  gen->add_option("--spec", spec, "Generator spec, e.g. synth:tasks=5,mirror=0.5");
  gen->add_option("--seed", data_seed, "Generator seed");
  gen->add_option("-o,--out", data_out, "Output directory")->required();

  auto* defaults = app.add_subcommand("defaults", "Print the default config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*run) return cmd_run(config_path, overrides, seeds, out, workers);
  if (*report) return cmd_report(report_dirs, report_out);
  if (*gen) return cmd_gen_data(spec, data_seed, data_out);
  if (*defaults) {
    std::cout << wscl::to_json(wscl::ExperimentConfig{}).dump(2) << '\n';
    return 0;
  }
  return 2;
}

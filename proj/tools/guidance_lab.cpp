// guidance-lab: batch runner for guided-sampling experiments on analytic targets.
//
//   guidance-lab run --config configs/bimodal_cfg.json --out-dir out/cfg
//   guidance-lab sweep --config configs/bimodal_cfgig.json --param sigma_star --values 0.25,0.5,1,2
//   guidance-lab gaussian-theory --gamma 1 --w 2 --out-dir out/theory
//   guidance-lab figure2 --out-dir out/figure2
//
// Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 I/O error.

#include "guidance_lab/guidance_lab.hpp"

#include "CLI11.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <ios>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace gl = guidance_lab;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("guidance-lab");
  logger->set_pattern("[%H:%M:%S] [%^%l%$] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("GUIDANCE_LAB_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps anything unknown to "off"; only honour real names.
    if (level != spdlog::level::off || std::string(env) == "off") {
      spdlog::set_level(level);
    } else {
      spdlog::warn("ignoring unknown GUIDANCE_LAB_LOG level '{}'", env);
    }
  }
}

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::string out_dir = "out";

  gl::RunOptions options() const {
    gl::RunOptions o;
    o.out_dir = out_dir;
    o.threads = threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : threads;
    o.seed = seed;
    return o;
  }
};

void add_common(CLI::App* cmd, CommonFlags& f, bool config_required) {
  auto* opt = cmd->add_option("--config", f.config, "Experiment config or manifest (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--seed", f.seed, "Override the config seed");
  cmd->add_option("--threads", f.threads, "Worker threads (0 = all cores); results do not depend on it")
      ->capture_default_str();
  cmd->add_option("--out-dir", f.out_dir, "Output directory")->capture_default_str();
}

/// Comma-separated sweep values; each is read as JSON, falling back to a string.
std::vector<gl::json> parse_values(const std::string& text) {
  std::vector<gl::json> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(',', start), text.size());
    const std::string item = text.substr(start, end - start);
    gl::require(!item.empty(), "empty entry in --values");
    try {
      out.push_back(gl::json::parse(item));
    } catch (const gl::json::parse_error&) {
      out.push_back(item);
    }
    start = end + 1;
  }
  return out;
}

void log_summary(const gl::json& summary, const std::filesystem::path& dir) {
  for (const auto& w : summary.value("warnings", gl::json::array())) spdlog::warn("{}", w.get<std::string>());
  if (summary.contains("metrics")) {
    for (const auto& c : summary["metrics"]["coordinates"]) {
      spdlog::info("x_{}: mean {:.4f} (ref {:.4f}), var {:.4f} (ref {:.4f}), W2 {:.4f}, KS {:.4f}",
                   c["coordinate"].get<int>(), c["samples"]["mean"].get<double>(),
                   c["reference"]["mean"].get<double>(), c["samples"]["variance"].get<double>(),
                   c["reference"]["variance"].get<double>(), c["w2"].get<double>(), c["ks"].get<double>());
    }
  }
  if (summary.contains("w2")) {
    spdlog::info("W2 to tilt: cfg {:.4f}, ideal {:.4f}, cfgig {:.4f}", summary["w2"]["cfg"].get<double>(),
                 summary["w2"]["ideal"].get<double>(), summary["w2"]["cfgig"].get<double>());
  }
  spdlog::info("wrote {}", dir.string());
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Guided diffusion sampling experiments on analytic targets"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(gl::kVersion));

  CommonFlags run_flags;
  auto* run = app.add_subcommand("run", "Run one experiment from a config or manifest");
  add_common(run, run_flags, true);

  CommonFlags sweep_flags;
  std::string param, values;
  auto* sweep = app.add_subcommand("sweep", "Run a config once per value of one parameter");
  add_common(sweep, sweep_flags, true);
  sweep->add_option("--param", param, "Parameter: bare key, dotted path or JSON pointer")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();

  CommonFlags theory_flags;
  double gamma = 1.0, w = 2.0;
  std::vector<long> repeats;
  std::vector<double> sigma_stars;
  auto* theory = app.add_subcommand("gaussian-theory", "Closed-form (sigma*, R) grid for the Gaussian case");
  add_common(theory, theory_flags, false);
  theory->add_option("--gamma", gamma, "Likelihood scale")->capture_default_str();
  theory->add_option("--w", w, "Guidance scale (> 1)")->capture_default_str();
  theory->add_option("--R", repeats, "Refinement counts");
  theory->add_option("--sigma-star", sigma_stars, "Renoising levels");

  CommonFlags fig_flags;
  std::size_t samples = 10000, chains = 1000;
  auto* fig = app.add_subcommand("figure2", "CFG vs ideal trajectories and samples on the bimodal toy");
  add_common(fig, fig_flags, false);
  fig->add_option("--samples", samples, "Samples per method")->capture_default_str();
  fig->add_option("--trajectory-chains", chains, "Chains with recorded trajectories")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (*run) {
    const gl::RunOptions opt = run_flags.options();
    const gl::RunReport rep = gl::run_config(gl::load_json_file(run_flags.config), opt);
    log_summary(rep.summary, opt.out_dir);
  } else if (*sweep) {
    const gl::RunOptions opt = sweep_flags.options();
    const gl::json m = gl::run_sweep(gl::load_json_file(sweep_flags.config), param, parse_values(values), opt);
    spdlog::info("{} runs over {}; wrote {}", m["runs"].size(), m["sweep"]["parameter"].get<std::string>(),
                 (opt.out_dir / "sweep.csv").string());
  } else if (*theory) {
    gl::json config;
    if (!theory_flags.config.empty()) {
      config = gl::load_json_file(theory_flags.config);
    } else {
      config = {{"schema_version", gl::kSchemaVersion}, {"experiment", "gaussian-theory"}, {"gamma", gamma}, {"w", w}};
      if (!repeats.empty()) config["R"] = repeats;
      if (!sigma_stars.empty()) config["sigma_star"] = sigma_stars;
    }
    const gl::RunOptions opt = theory_flags.options();
    const gl::RunReport rep = gl::run_config(config, opt);
    spdlog::info("V(w) = {:.6f}; {} rows", rep.summary["V"].get<double>(), rep.summary["rows"].get<std::size_t>());
    log_summary(rep.summary, opt.out_dir);
  } else if (*fig) {
    gl::json config = fig_flags.config.empty() ? gl::figure2_default_config() : gl::load_json_file(fig_flags.config);
    if (fig_flags.config.empty()) {
      config["samples"] = samples;
      config["trajectory_chains"] = chains;
    }
    const gl::RunOptions opt = fig_flags.options();
    log_summary(gl::run_config(config, opt).summary, opt.out_dir);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  try {
    return run_cli(argc, argv);
  } catch (const gl::numerical_error& e) {
    spdlog::error("numerical failure at step {}: {}", e.step(), e.what());
    return kExitNumerical;
  } catch (const gl::config_error& e) {
    spdlog::error("config error: {}", e.what());
    return kExitConfig;
  } catch (const gl::json::exception& e) {
    spdlog::error("config error: {}", e.what());
    return kExitConfig;
  } catch (const gl::unsupported_error& e) {
    spdlog::error("unsupported configuration: {}", e.what());
    return kExitConfig;
  } catch (const gl::io_error& e) {
    spdlog::error("I/O error: {}", e.what());
    return kExitIo;
  } catch (const std::ios_base::failure& e) {
    spdlog::error("I/O error: {}", e.what());
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    spdlog::error("I/O error: {}", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return 1;
  }
}

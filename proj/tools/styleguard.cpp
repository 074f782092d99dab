// styleguard: protect, attack, mimic, evaluate, plot.

#include <CLI11.hpp>

#include <iostream>

#include "styleguard/app.hpp"

namespace app = sguard::app;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

void log_line(const std::string& s) { std::cerr << "[styleguard] " << s << "\n"; }

app::RunConfig resolve(const std::string& path, const std::optional<std::uint64_t>& seed) {
  app::RunConfig c = path.empty() ? app::parse_config(app::json::object()) : app::load_config(path);
  if (seed) {
    c.seed = *seed;
    c.protect.seed = *seed;
  }
  return c;
}

int report(const char* kind, const std::exception& e, int code) {
  std::cerr << "styleguard: " << kind << ": " << e.what() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Bounded anti-mimicry perturbations against toy diffusion models"};
  cli.require_subcommand(1);

  std::string config, out, run, input, clean, csv;
  std::vector<std::string> protected_runs;
  std::optional<std::uint64_t> seed;

  auto common = [&](CLI::App* sub, bool out_required = true) {
    sub->add_option("--config", config, "JSON run config")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Overrides the config seed");
    auto* o = sub->add_option("--out", out, "Output directory");
    if (out_required) o->required();
  };

  auto* protect = cli.add_subcommand("protect", "Craft protected images into a run directory");
  common(protect);
  auto* attack = cli.add_subcommand("attack", "Apply the configured attacks to a run's protected set");
  common(attack);
  attack->add_option("--run", run, "Run directory or image folder")->required()->check(CLI::ExistingDirectory);
  auto* mimic = cli.add_subcommand("mimic", "Fine-tune the base model on images and sample from it");
  common(mimic);
  mimic->add_option("--input", input, "Run directory or image folder")->required()->check(CLI::ExistingDirectory);
  auto* evaluate = cli.add_subcommand("evaluate", "Score protected runs against a clean run");
  common(evaluate);
  evaluate->add_option("--clean", clean, "Clean run directory or image folder")
      ->required()
      ->check(CLI::ExistingDirectory);
  evaluate->add_option("--protected", protected_runs, "Protected run directories (repeatable)")
      ->required()
      ->check(CLI::ExistingDirectory);
  auto* plot = cli.add_subcommand("plot", "Bar charts from a metrics CSV");
  common(plot);
  plot->add_option("--csv", csv, "metrics.csv from evaluate")->required();

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = cli.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*protect) {
      const auto o = app::cmd_protect(resolve(config, seed), out, log_line);
      std::cout << out << "\n";
      if (!o.artifacts.complete) {
        std::cerr << "styleguard: numeric failure, partial run written: " << o.artifacts.error << "\n";
        return kNumeric;
      }
    } else if (*attack) {
      for (const auto& p : app::cmd_attack(resolve(config, seed), run, out, log_line)) std::cout << p.string() << "\n";
    } else if (*mimic) {
      app::cmd_mimic(resolve(config, seed), input, out, log_line);
      std::cout << out << "\n";
    } else if (*evaluate) {
      std::vector<app::fs::path> runs(protected_runs.begin(), protected_runs.end());
      const auto o = app::cmd_evaluate(resolve(config, seed), clean, runs, out, log_line);
      for (const auto& w : o.warnings) log_line("warning: " + w);
      for (const auto& r : o.rows) {
        std::cout << r.method << " " << r.metrics.preprocessing << " fid=" << app::fmt(r.metrics.fid)
                  << " precision=" << app::fmt(r.metrics.precision) << "\n";
      }
    } else if (*plot) {
      app::cmd_plot(csv, out);
      std::cout << out << "\n";
    }
  } catch (const sguard::ConfigError& e) {
    return report("config error", e, kConfig);
  } catch (const sguard::VocabularyError& e) {
    return report("config error", e, kConfig);
  } catch (const sguard::IndexError& e) {
    return report("config error", e, kConfig);
  } catch (const sguard::NumericError& e) {
    return report("numeric failure", e, kNumeric);
  } catch (const sguard::DataError& e) {
    return report("data error", e, kData);
  } catch (const sguard::ContractError& e) {
    return report("data error", e, kData);
  } catch (const sguard::DegenerateInputError& e) {
    return report("data error", e, kData);
  } catch (const std::filesystem::filesystem_error& e) {
    return report("data error", e, kData);
  } catch (const std::exception& e) {
    return report("error", e, kFailure);
  }
  return kOk;
}

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dp2guard/errors.hpp"
#include "dp2guard/harness.hpp"
#include "dp2guard/ledger.hpp"

namespace {

std::vector<std::string> split_values(const std::string& list) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : list) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

void print_summary(const dp2guard::ExperimentResult& r) {
  const auto& last = r.metrics.back();
  std::printf("rounds=%zu final_accuracy=%.4f ledger_blocks=%zu\n", r.metrics.size(), last.accuracy,
              r.ledger.blocks().size());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DP2Guard federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("--config", config_path, "Experiment JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory")->required();

  std::string ledger_path;
  auto* verify = app.add_subcommand("verify-ledger", "Check a ledger's hash chain");
  verify->add_option("path", ledger_path, "ledger.jsonl")->required();

  std::string sweep_config;
  std::string sweep_out = "sweep-out";
  std::string vary;
  auto* sweep = app.add_subcommand("sweep", "Run one experiment per value of a config key");
  sweep->add_option("--config", sweep_config, "Base experiment JSON")->required()->check(CLI::ExistingFile);
  sweep->add_option("--vary", vary, "key=v1,v2,...")->required();
  sweep->add_option("--out", sweep_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      print_summary(dp2guard::run_to_dir(dp2guard::load_config(config_path), out_dir));
      return 0;
    }
    if (*verify) {
      const dp2guard::VerifyResult r = dp2guard::verify_file(ledger_path);
      if (r.ok) {
        std::printf("ok\n");
        return 0;
      }
      std::printf("first bad block: %zu\n", r.first_bad_index);
      return 1;
    }
    if (*sweep) {
      const auto eq = vary.find('=');
      if (eq == std::string::npos || eq == 0) throw dp2guard::ConfigError("--vary expects key=v1,v2,...");
      const std::string key = vary.substr(0, eq);
      const std::vector<std::string> values = split_values(vary.substr(eq + 1));
      const auto points = dp2guard::run_sweep(dp2guard::load_config(sweep_config), key, values, sweep_out);
      for (const auto& p : points) std::printf("%s=%s final_accuracy=%.4f\n", key.c_str(), p.value.c_str(),
                                               p.result.metrics.back().accuracy);
      return 0;
    }
  } catch (const dp2guard::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

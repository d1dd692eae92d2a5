#pragma once
// Output writers for training runs: a per-step CSV trace and a per-trial
// JSONL summary.  Every file opens with an echo of the full configuration so
// a result file is self-describing.  All numeric fields are printed with
// %.10g; apart from wall_ms (which measures real elapsed time and is
// inherently machine-dependent) the emitted bytes are a pure function of the
// configuration and seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "../../vendor/json.hpp"
#include "config.hpp"
#include "core.hpp"

namespace discgrad {

inline std::string fmt_g10(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return std::string(buf);
}

// Streams one row per (step, trial, estimator) snapshot.  `estimator` rows
// cover both the driver and any variance probes riding on its trajectory.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const RunConfig& cfg) : out_(path) {
    require(out_.good(), "csv: cannot open '" + path + "' for writing");
    std::istringstream cfg_lines(cfg.serialize());
    std::string line;
    out_ << "# version=" << kLibraryVersion << "\n";
    out_ << "# config_hash=" << config_hash_hex(cfg) << "\n";
    while (std::getline(cfg_lines, line)) out_ << "# " << line << "\n";
    out_ << "step,trial,estimator,objective,ln_var,lambda,eta_mean,wall_ms\n";
  }

  void row(int step, int trial, const std::string& estimator, double objective, double ln_var,
           double lambda, double eta_mean, double wall_ms) {
    out_ << step << ',' << trial << ',' << estimator << ',' << fmt_g10(objective) << ','
         << fmt_g10(ln_var) << ',' << fmt_g10(lambda) << ',' << fmt_g10(eta_mean) << ','
         << fmt_g10(wall_ms) << "\n";
  }

  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

struct TrialSummary {
  int trial = 0;
  std::string estimator;
  double final_objective = 0.0;
  double best_objective = 0.0;
  int steps_completed = 0;
  bool failed = false;
  double lambda_final = 0.0;
  double eta_mean_final = 0.0;
};

class JsonlWriter {
 public:
  JsonlWriter(const std::string& path, const RunConfig& cfg)
      : out_(path), hash_(config_hash_hex(cfg)), config_text_(cfg.serialize()) {
    require(out_.good(), "jsonl: cannot open '" + path + "' for writing");
  }

  void summary(const TrialSummary& s) {
    nlohmann::json j;
    j["trial"] = s.trial;
    j["estimator"] = s.estimator;
    j["final_objective"] = s.final_objective;
    j["best_objective"] = s.best_objective;
    j["steps_completed"] = s.steps_completed;
    j["failed"] = s.failed;
    j["lambda_final"] = s.lambda_final;
    j["eta_mean_final"] = s.eta_mean_final;
    j["config_hash"] = hash_;
    j["config"] = config_text_;
    j["version"] = kLibraryVersion;
    out_ << j.dump() << "\n";
  }

  void record(const nlohmann::json& extra) {
    nlohmann::json j = extra;
    j["config_hash"] = hash_;
    j["version"] = kLibraryVersion;
    out_ << j.dump() << "\n";
  }

  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
  std::string hash_;
  std::string config_text_;
};

}  // namespace discgrad

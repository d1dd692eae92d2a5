#pragma once
// Run configuration: a flat sectioned key=value text format, validated
// strictly (unknown sections or keys are errors), with a deterministic
// serialization that is echoed into every output file and hashed into trial
// summaries so results stay attributable to the exact settings that made them.

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "estimators.hpp"
#include "models.hpp"
#include "optim.hpp"

namespace discgrad {

constexpr const char* kLibraryVersion = "0.1.0";

struct RunConfig {
  // [run]
  std::string task = "gen";  // toy | gen | structpred
  std::string estimator = "rebar";
  int trials = 5;
  int steps = 5000;
  uint64_t seed = 1;
  std::string out;  // output path prefix; empty disables file output
  int log_interval = 100;
  // [model]
  int layers = 1;
  int units = 20;
  std::string det = "linear";  // linear | tanh2
  int det_width = 200;
  int obs_dim = 16;
  double toy_target = 0.45;
  // [data]
  std::string source = "synthetic";  // synthetic | path to an IDX image file
  int data_count = 1000;
  std::string binarize_rule = "threshold";  // threshold | bernoulli
  uint64_t binarize_seed = 1;
  // [optim]
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99999;
  double eps = 1e-8;
  int minibatch = 24;
  // [estimator]
  double lambda = 0.1;
  double eta = 1.0;
  bool adapt_lambda = true;
  bool adapt_eta = true;
  bool baseline = true;
  int baseline_hidden = 100;
  bool couple = true;
  double lambda_fd_step = 1e-3;
  // [variance]
  std::string probes = "rebar,simple_muprop,nvil,reinforce";

  void validate() const {
    require(task == "toy" || task == "gen" || task == "structpred",
            "config: task must be toy, gen, or structpred");
    parse_estimator_kind(estimator);
    require(trials >= 1, "config: trials must be >= 1");
    require(steps >= 0, "config: steps must be >= 0");
    require(log_interval >= 1, "config: log_interval must be >= 1");
    require(layers >= 1 && units >= 1, "config: layers and units must be >= 1");
    parse_det_kind(det);
    require(det_width >= 1, "config: det_width must be >= 1");
    require(obs_dim >= 1, "config: obs_dim must be >= 1");
    require(toy_target > 0.0 && toy_target < 1.0, "config: toy_target must lie in (0,1)");
    require(data_count >= 10, "config: data_count must be >= 10");
    parse_binarize_rule_checked();
    require(lr > 0.0, "config: lr must be positive");
    require(beta1 >= 0.0 && beta1 < 1.0, "config: beta1 must lie in [0,1)");
    require(beta2 >= 0.0 && beta2 < 1.0, "config: beta2 must lie in [0,1)");
    require(eps > 0.0, "config: eps must be positive");
    require(minibatch >= 1, "config: minibatch must be >= 1");
    require(lambda > 0.0, "config: lambda must be positive");
    require(baseline_hidden >= 1, "config: baseline_hidden must be >= 1");
    require(lambda_fd_step > 0.0 && lambda_fd_step <= 0.1,
            "config: lambda_fd_step must lie in (0, 0.1]");
    for (const std::string& p : probe_list()) parse_estimator_kind(p);
  }

  std::vector<std::string> probe_list() const {
    std::vector<std::string> out;
    std::string cur;
    for (char c : probes) {
      if (c == ',') {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else if (!std::isspace((unsigned char)c)) {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  }

  std::string serialize() const {
    std::ostringstream os;
    auto d = [](double v) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    os << "run.task=" << task << "\nrun.estimator=" << estimator << "\nrun.trials=" << trials
       << "\nrun.steps=" << steps << "\nrun.seed=" << seed << "\nrun.out=" << out
       << "\nrun.log_interval=" << log_interval << "\nmodel.layers=" << layers
       << "\nmodel.units=" << units << "\nmodel.det=" << det << "\nmodel.det_width=" << det_width
       << "\nmodel.obs_dim=" << obs_dim << "\nmodel.toy_target=" << d(toy_target)
       << "\ndata.source=" << source << "\ndata.count=" << data_count
       << "\ndata.binarize=" << binarize_rule << "\ndata.binarize_seed=" << binarize_seed
       << "\noptim.lr=" << d(lr) << "\noptim.beta1=" << d(beta1) << "\noptim.beta2=" << d(beta2)
       << "\noptim.eps=" << d(eps) << "\noptim.minibatch=" << minibatch
       << "\nestimator.lambda=" << d(lambda) << "\nestimator.eta=" << d(eta)
       << "\nestimator.adapt_lambda=" << (adapt_lambda ? "true" : "false")
       << "\nestimator.adapt_eta=" << (adapt_eta ? "true" : "false")
       << "\nestimator.baseline=" << (baseline ? "true" : "false")
       << "\nestimator.baseline_hidden=" << baseline_hidden
       << "\nestimator.couple=" << (couple ? "true" : "false")
       << "\nestimator.lambda_fd_step=" << d(lambda_fd_step) << "\nvariance.probes=" << probes
       << "\n";
    return os.str();
  }

  // The same fields in the sectioned file format the parser accepts.
  std::string to_ini() const {
    std::istringstream fields(serialize());
    std::ostringstream os;
    std::string line, section;
    while (std::getline(fields, line)) {
      const size_t dot = line.find('.');
      const std::string sec = line.substr(0, dot);
      if (sec != section) {
        os << "[" << sec << "]\n";
        section = sec;
      }
      os << line.substr(dot + 1) << "\n";
    }
    return os.str();
  }

 private:
  void parse_binarize_rule_checked() const {
    require(binarize_rule == "threshold" || binarize_rule == "bernoulli",
            "config: binarize rule must be threshold or bernoulli");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace((unsigned char)s[a])) ++a;
  while (b > a && std::isspace((unsigned char)s[b - 1])) --b;
  return s.substr(a, b - a);
}

inline double to_double(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    require(pos == v.size(), "config: bad number for " + key + ": '" + v + "'");
    return x;
  } catch (const Error&) {
    throw;
  } catch (...) {
    fail("config: bad number for " + key + ": '" + v + "'");
  }
}

inline int to_int(const std::string& v, const std::string& key) {
  const double x = to_double(v, key);
  const int i = (int)x;
  require((double)i == x, "config: " + key + " must be an integer, got '" + v + "'");
  return i;
}

inline uint64_t to_u64(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    unsigned long long x = std::stoull(v, &pos);
    require(pos == v.size(), "config: bad integer for " + key + ": '" + v + "'");
    return (uint64_t)x;
  } catch (const Error&) {
    throw;
  } catch (...) {
    fail("config: bad integer for " + key + ": '" + v + "'");
  }
}

inline bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("config: " + key + " must be true or false, got '" + v + "'");
}

}  // namespace detail

inline void apply_config_kv(RunConfig& c, const std::string& section, const std::string& key,
                            const std::string& value) {
  using detail::to_bool;
  using detail::to_double;
  using detail::to_int;
  using detail::to_u64;
  const std::string full = section + "." + key;
  if (section == "run") {
    if (key == "task") c.task = value;
    else if (key == "estimator") c.estimator = value;
    else if (key == "trials") c.trials = to_int(value, full);
    else if (key == "steps") c.steps = to_int(value, full);
    else if (key == "seed") c.seed = to_u64(value, full);
    else if (key == "out") c.out = value;
    else if (key == "log_interval") c.log_interval = to_int(value, full);
    else fail("config: unknown key '" + full + "'");
  } else if (section == "model") {
    if (key == "layers") c.layers = to_int(value, full);
    else if (key == "units") c.units = to_int(value, full);
    else if (key == "det") c.det = value;
    else if (key == "det_width") c.det_width = to_int(value, full);
    else if (key == "obs_dim") c.obs_dim = to_int(value, full);
    else if (key == "toy_target") c.toy_target = to_double(value, full);
    else fail("config: unknown key '" + full + "'");
  } else if (section == "data") {
    if (key == "source") c.source = value;
    else if (key == "count") c.data_count = to_int(value, full);
    else if (key == "binarize") c.binarize_rule = value;
    else if (key == "binarize_seed") c.binarize_seed = to_u64(value, full);
    else fail("config: unknown key '" + full + "'");
  } else if (section == "optim") {
    if (key == "lr") c.lr = to_double(value, full);
    else if (key == "beta1") c.beta1 = to_double(value, full);
    else if (key == "beta2") c.beta2 = to_double(value, full);
    else if (key == "eps") c.eps = to_double(value, full);
    else if (key == "minibatch") c.minibatch = to_int(value, full);
    else fail("config: unknown key '" + full + "'");
  } else if (section == "estimator") {
    if (key == "lambda") c.lambda = to_double(value, full);
    else if (key == "eta") c.eta = to_double(value, full);
    else if (key == "adapt_lambda") c.adapt_lambda = to_bool(value, full);
    else if (key == "adapt_eta") c.adapt_eta = to_bool(value, full);
    else if (key == "baseline") c.baseline = to_bool(value, full);
    else if (key == "baseline_hidden") c.baseline_hidden = to_int(value, full);
    else if (key == "couple") c.couple = to_bool(value, full);
    else if (key == "lambda_fd_step") c.lambda_fd_step = to_double(value, full);
    else fail("config: unknown key '" + full + "'");
  } else if (section == "variance") {
    if (key == "probes") c.probes = value;
    else fail("config: unknown key '" + full + "'");
  } else {
    fail("config: unknown section '" + section + "'");
  }
}

// Applies the file's settings on top of `base`, so verb presets or earlier
// layers survive for keys the file does not mention.
inline RunConfig parse_config_text_onto(const std::string& text, RunConfig c) {
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      require(line.back() == ']', "config: malformed section at line " + std::to_string(lineno));
      section = detail::trim(line.substr(1, line.size() - 2));
      require(!section.empty(), "config: empty section at line " + std::to_string(lineno));
      continue;
    }
    const size_t eq = line.find('=');
    require(eq != std::string::npos,
            "config: expected key=value at line " + std::to_string(lineno));
    require(!section.empty(), "config: key before any section at line " + std::to_string(lineno));
    apply_config_kv(c, section, detail::trim(line.substr(0, eq)),
                    detail::trim(line.substr(eq + 1)));
  }
  return c;
}

inline RunConfig parse_config_text(const std::string& text) {
  return parse_config_text_onto(text, RunConfig{});
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "config: cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline RunConfig parse_config_file(const std::string& path) {
  return parse_config_text(read_text_file(path));
}

inline uint64_t fnv1a_hash(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= (uint64_t)c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string config_hash_hex(const RunConfig& c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)fnv1a_hash(c.serialize()));
  return std::string(buf);
}

inline AdamConfig adam_config(const RunConfig& c) {
  AdamConfig a;
  a.lr = c.lr;
  a.beta1 = c.beta1;
  a.beta2 = c.beta2;
  a.eps = c.eps;
  return a;
}

inline EstimatorConfig estimator_config(const RunConfig& c, EstimatorKind kind) {
  EstimatorConfig e;
  e.kind = kind;
  e.lambda_init = c.lambda;
  e.eta_init = c.eta;
  e.adapt_lambda = c.adapt_lambda;
  e.adapt_eta = c.adapt_eta;
  e.lambda_fd_step = c.lambda_fd_step;
  e.use_baseline = c.baseline;
  e.baseline_hidden = c.baseline_hidden;
  e.couple = c.couple;
  return e;
}

}  // namespace discgrad

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pllab/engine.hpp"
#include "pllab/estimator.hpp"
#include "pllab/noise.hpp"
#include "pllab/objectives.hpp"

namespace pllab {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Sectioned key-value text: `[section]` headers, `key = value` lines,
/// `#` comment lines. Values keep everything after the first `=`, trimmed.
class KvConfig {
 public:
  static KvConfig parse(const std::string& text) {
    KvConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string trimmed = trim(line);
      if (trimmed.empty() || trimmed[0] == '#') continue;
      if (trimmed.front() == '[') {
        if (trimmed.back() != ']')
          throw ConfigError("config line " + std::to_string(line_no) + ": malformed section header");
        section = trim(trimmed.substr(1, trimmed.size() - 2));
        if (section.empty())
          throw ConfigError("config line " + std::to_string(line_no) + ": empty section name");
        cfg.sections_[section];  // section may stay empty
        continue;
      }
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
      if (section.empty())
        throw ConfigError("config line " + std::to_string(line_no) + ": key outside any section");
      const std::string key = trim(trimmed.substr(0, eq));
      if (key.empty())
        throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
      cfg.sections_[section][key] = trim(trimmed.substr(eq + 1));
    }
    return cfg;
  }

  static KvConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
  }

  std::string serialize() const {
    std::ostringstream out;
    bool first = true;
    for (const auto& [section, entries] : sections_) {
      if (!first) out << "\n";
      first = false;
      out << "[" << section << "]\n";
      for (const auto& [key, value] : entries) out << key << " = " << value << "\n";
    }
    return out.str();
  }

  bool has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
  }

  const std::string* find(const std::string& section, const std::string& key) const {
    const auto sec = sections_.find(section);
    if (sec == sections_.end()) return nullptr;
    const auto it = sec->second.find(key);
    return it == sec->second.end() ? nullptr : &it->second;
  }

  std::string get_str(const std::string& section, const std::string& key) const {
    const std::string* v = find(section, key);
    if (!v) throw ConfigError("missing config key [" + section + "] " + key);
    return *v;
  }
  std::string get_str(const std::string& section, const std::string& key,
                      const std::string& fallback) const {
    const std::string* v = find(section, key);
    return v ? *v : fallback;
  }

  double get_num(const std::string& section, const std::string& key) const {
    return parse_num(section, key, get_str(section, key));
  }
  double get_num(const std::string& section, const std::string& key, double fallback) const {
    const std::string* v = find(section, key);
    return v ? parse_num(section, key, *v) : fallback;
  }

  long get_int(const std::string& section, const std::string& key) const {
    return parse_int(section, key, get_str(section, key));
  }
  long get_int(const std::string& section, const std::string& key, long fallback) const {
    const std::string* v = find(section, key);
    return v ? parse_int(section, key, *v) : fallback;
  }

  std::uint64_t get_u64(const std::string& section, const std::string& key) const {
    const std::string raw = get_str(section, key);
    try {
      if (!raw.empty() && raw[0] == '-') throw std::invalid_argument(raw);  // stoull wraps
      std::size_t used = 0;
      const std::uint64_t value = std::stoull(raw, &used);
      if (used != raw.size()) throw std::invalid_argument(raw);
      return value;
    } catch (const std::exception&) {
      throw ConfigError("config key [" + section + "] " + key + ": not an unsigned integer");
    }
  }

  bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
    const std::string* v = find(section, key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError("config key [" + section + "] " + key + ": not a boolean");
  }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    sections_[section][key] = value;
  }

  const std::map<std::string, std::map<std::string, std::string>>& sections() const {
    return sections_;
  }

  static std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return {};
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
  }

 private:
  double parse_num(const std::string& section, const std::string& key,
                   const std::string& raw) const {
    try {
      std::size_t used = 0;
      const double value = std::stod(raw, &used);
      if (used != raw.size()) throw std::invalid_argument(raw);
      return value;
    } catch (const std::exception&) {
      throw ConfigError("config key [" + section + "] " + key + ": not a number");
    }
  }
  long parse_int(const std::string& section, const std::string& key,
                 const std::string& raw) const {
    try {
      std::size_t used = 0;
      const long value = std::stol(raw, &used);
      if (used != raw.size()) throw std::invalid_argument(raw);
      return value;
    } catch (const std::exception&) {
      throw ConfigError("config key [" + section + "] " + key + ": not an integer");
    }
  }

  std::map<std::string, std::map<std::string, std::string>> sections_;
};

struct ObjectiveSpec {
  std::string kind;                 // quadratic | ring | least_squares
  std::vector<double> eigenvalues;  // quadratic
  std::uint64_t seed = 0;           // quadratic / least_squares
  double alpha = 1.0;               // ring
  double beta = 4.0;                // ring
  long n = 0;                       // least_squares rows
  long d = 0;                       // least_squares columns
};

struct NoiseSpec {
  std::string kind = "zero";  // zero | sharp | minibatch
  double sigma = 0.0;         // sharp
  long batch = 1;             // minibatch
  bool replacement = true;    // minibatch
};

struct Theta0Spec {
  enum class Kind { kExplicit, kRingOffset };
  Kind kind = Kind::kExplicit;
  std::vector<double> values;  // explicit vector
  double angle = 0.0;          // ring offset: circle angle t
  double dx = 0.0;             // ring offset: x displacement
  double dr = 0.0;             // ring offset: radial displacement
};

struct RunSpec {
  std::vector<double> gammas;
  long steps = 0;
  int replicas = 1;
  std::uint64_t base_seed = 0;
  long record_every = 1;
  Theta0Spec theta0;
};

struct EstimatorSpec {
  std::optional<long> k_start;
  std::optional<long> k_end;
  double floor = 1e-200;
  double headroom = 1e4;
  double eps_tol = 0.02;
  double eps_band = 0.05;
  bool snap_limit = true;
  long sigma_draws = 2000;  // effective-sigma certification
  int sigma_probes = 12;
};

struct GeometrySpec {
  double tube_radius = 0.1;        // ball radius for the PL-constant estimate
  int pl_samples = 400;
  double contraction_eps = 0.05;   // band above m(gamma) for the descent check
  double tail_fraction = 0.8;      // checked share of the convergent steps
};

struct OutputSpec {
  std::string dir = ".";
  bool combined = false;  // one trajectory CSV with a replica column
};

namespace detail {

inline std::vector<double> parse_number_list(const std::string& raw, const std::string& what) {
  std::vector<double> values;
  std::string token;
  std::istringstream in(raw);
  while (std::getline(in, token, ',')) {
    token = KvConfig::trim(token);
    if (token.empty()) continue;
    try {
      std::size_t used = 0;
      values.push_back(std::stod(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ConfigError(what + ": not a number list");
    }
  }
  if (values.empty()) throw ConfigError(what + ": empty list");
  return values;
}

/// Grid spec `min:max:count` with inclusive endpoints.
inline std::vector<double> parse_gamma_grid(const std::string& raw) {
  std::vector<std::string> parts;
  std::string token;
  std::istringstream in(raw);
  while (std::getline(in, token, ':')) parts.push_back(KvConfig::trim(token));
  if (parts.size() != 3) throw ConfigError("gamma_grid: expected min:max:count");
  try {
    const double lo = std::stod(parts[0]);
    const double hi = std::stod(parts[1]);
    const long count = std::stol(parts[2]);
    if (count < 1 || !(hi >= lo)) throw std::invalid_argument(raw);
    std::vector<double> grid;
    grid.reserve(static_cast<std::size_t>(count));
    if (count == 1) {
      grid.push_back(lo);
    } else {
      for (long i = 0; i < count; ++i)
        grid.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
    }
    return grid;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("gamma_grid: expected min:max:count");
  }
}

inline std::string format_number(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

inline std::string format_number_list(const std::vector<double>& values) {
  std::ostringstream out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out << ",";
    out << format_number(values[i]);
  }
  return out.str();
}

}  // namespace detail

/// A full experiment description. Seeds are mandatory: every emitted number
/// must be reproducible from the config alone.
struct ExperimentConfig {
  ObjectiveSpec objective;
  NoiseSpec noise;
  RunSpec run;
  EstimatorSpec estimator;
  GeometrySpec geometry;
  OutputSpec output;

  static ExperimentConfig from(const KvConfig& kv) {
    ExperimentConfig cfg;

    cfg.objective.kind = kv.get_str("objective", "kind");
    if (cfg.objective.kind == "quadratic") {
      cfg.objective.eigenvalues =
          detail::parse_number_list(kv.get_str("objective", "eigenvalues"),
                                    "[objective] eigenvalues");
      cfg.objective.seed = kv.get_u64("objective", "seed");
    } else if (cfg.objective.kind == "ring") {
      cfg.objective.alpha = kv.get_num("objective", "alpha", 1.0);
      cfg.objective.beta = kv.get_num("objective", "beta", 4.0);
    } else if (cfg.objective.kind == "least_squares") {
      cfg.objective.n = kv.get_int("objective", "n");
      cfg.objective.d = kv.get_int("objective", "d");
      cfg.objective.seed = kv.get_u64("objective", "seed");
    } else {
      throw ConfigError("unknown objective kind: " + cfg.objective.kind);
    }

    cfg.noise.kind = kv.get_str("noise", "kind", "zero");
    if (cfg.noise.kind == "sharp") {
      cfg.noise.sigma = kv.get_num("noise", "sigma");
      if (!(cfg.noise.sigma >= 0.0)) throw ConfigError("[noise] sigma must be nonnegative");
    } else if (cfg.noise.kind == "minibatch") {
      cfg.noise.batch = kv.get_int("noise", "batch");
      cfg.noise.replacement = kv.get_bool("noise", "replacement", true);
    } else if (cfg.noise.kind != "zero") {
      throw ConfigError("unknown noise kind: " + cfg.noise.kind);
    }

    if (kv.has("run", "gamma") && kv.has("run", "gamma_grid"))
      throw ConfigError("[run]: gamma and gamma_grid are mutually exclusive");
    if (kv.has("run", "gamma_grid")) {
      cfg.run.gammas = detail::parse_gamma_grid(kv.get_str("run", "gamma_grid"));
    } else {
      cfg.run.gammas = detail::parse_number_list(kv.get_str("run", "gamma"), "[run] gamma");
    }
    for (double g : cfg.run.gammas)
      if (!(g > 0.0)) throw ConfigError("[run] gamma values must be positive");

    cfg.run.steps = kv.get_int("run", "steps");
    if (cfg.run.steps < 1) throw ConfigError("[run] steps must be >= 1");
    cfg.run.replicas = static_cast<int>(kv.get_int("run", "replicas", 1));
    if (cfg.run.replicas < 1) throw ConfigError("[run] replicas must be >= 1");
    cfg.run.base_seed = kv.get_u64("run", "base_seed");  // mandatory, no default
    cfg.run.record_every = kv.get_int("run", "record_every", 1);
    if (cfg.run.record_every < 1) throw ConfigError("[run] record_every must be >= 1");

    const std::string theta0 = kv.get_str("run", "theta0");
    if (theta0.rfind("ring_offset", 0) == 0) {
      std::istringstream in(theta0.substr(11));
      cfg.run.theta0.kind = Theta0Spec::Kind::kRingOffset;
      if (!(in >> cfg.run.theta0.angle >> cfg.run.theta0.dx >> cfg.run.theta0.dr))
        throw ConfigError("[run] theta0: expected ring_offset <angle> <dx> <dr>");
    } else {
      cfg.run.theta0.kind = Theta0Spec::Kind::kExplicit;
      cfg.run.theta0.values = detail::parse_number_list(theta0, "[run] theta0");
    }

    if (kv.has("estimator", "k_start")) cfg.estimator.k_start = kv.get_int("estimator", "k_start");
    if (kv.has("estimator", "k_end")) cfg.estimator.k_end = kv.get_int("estimator", "k_end");
    cfg.estimator.floor = kv.get_num("estimator", "floor", 1e-200);
    cfg.estimator.headroom = kv.get_num("estimator", "headroom", 1e4);
    cfg.estimator.eps_tol = kv.get_num("estimator", "eps_tol", 0.02);
    cfg.estimator.eps_band = kv.get_num("estimator", "eps_band", 0.05);
    if (!(cfg.estimator.eps_tol > 0.0)) throw ConfigError("[estimator] eps_tol must be positive");
    if (cfg.estimator.eps_band < cfg.estimator.eps_tol)
      throw ConfigError("[estimator] eps_band must be >= eps_tol");
    cfg.estimator.snap_limit = kv.get_bool("estimator", "snap_limit", true);
    cfg.estimator.sigma_draws = kv.get_int("estimator", "sigma_draws", 2000);
    cfg.estimator.sigma_probes = static_cast<int>(kv.get_int("estimator", "sigma_probes", 12));

    cfg.geometry.tube_radius = kv.get_num("geometry", "tube_radius", 0.1);
    if (!(cfg.geometry.tube_radius > 0.0))
      throw ConfigError("[geometry] tube_radius must be positive");
    cfg.geometry.pl_samples = static_cast<int>(kv.get_int("geometry", "pl_samples", 400));
    cfg.geometry.contraction_eps = kv.get_num("geometry", "contraction_eps", 0.05);
    cfg.geometry.tail_fraction = kv.get_num("geometry", "tail_fraction", 0.8);

    cfg.output.dir = kv.get_str("output", "dir", ".");
    cfg.output.combined = kv.get_bool("output", "combined", false);
    return cfg;
  }

  KvConfig to_kv() const {
    KvConfig kv;
    kv.set("objective", "kind", objective.kind);
    if (objective.kind == "quadratic") {
      kv.set("objective", "eigenvalues", detail::format_number_list(objective.eigenvalues));
      kv.set("objective", "seed", std::to_string(objective.seed));
    } else if (objective.kind == "ring") {
      kv.set("objective", "alpha", detail::format_number(objective.alpha));
      kv.set("objective", "beta", detail::format_number(objective.beta));
    } else {
      kv.set("objective", "n", std::to_string(objective.n));
      kv.set("objective", "d", std::to_string(objective.d));
      kv.set("objective", "seed", std::to_string(objective.seed));
    }

    kv.set("noise", "kind", noise.kind);
    if (noise.kind == "sharp") kv.set("noise", "sigma", detail::format_number(noise.sigma));
    if (noise.kind == "minibatch") {
      kv.set("noise", "batch", std::to_string(noise.batch));
      kv.set("noise", "replacement", noise.replacement ? "true" : "false");
    }

    kv.set("run", "gamma", detail::format_number_list(run.gammas));
    kv.set("run", "steps", std::to_string(run.steps));
    kv.set("run", "replicas", std::to_string(run.replicas));
    kv.set("run", "base_seed", std::to_string(run.base_seed));
    kv.set("run", "record_every", std::to_string(run.record_every));
    if (run.theta0.kind == Theta0Spec::Kind::kRingOffset) {
      std::ostringstream out;
      out << "ring_offset " << detail::format_number(run.theta0.angle) << " "
          << detail::format_number(run.theta0.dx) << " " << detail::format_number(run.theta0.dr);
      kv.set("run", "theta0", out.str());
    } else {
      kv.set("run", "theta0", detail::format_number_list(run.theta0.values));
    }

    if (estimator.k_start) kv.set("estimator", "k_start", std::to_string(*estimator.k_start));
    if (estimator.k_end) kv.set("estimator", "k_end", std::to_string(*estimator.k_end));
    kv.set("estimator", "floor", detail::format_number(estimator.floor));
    kv.set("estimator", "headroom", detail::format_number(estimator.headroom));
    kv.set("estimator", "eps_tol", detail::format_number(estimator.eps_tol));
    kv.set("estimator", "eps_band", detail::format_number(estimator.eps_band));
    kv.set("estimator", "snap_limit", estimator.snap_limit ? "true" : "false");
    kv.set("estimator", "sigma_draws", std::to_string(estimator.sigma_draws));
    kv.set("estimator", "sigma_probes", std::to_string(estimator.sigma_probes));

    kv.set("geometry", "tube_radius", detail::format_number(geometry.tube_radius));
    kv.set("geometry", "pl_samples", std::to_string(geometry.pl_samples));
    kv.set("geometry", "contraction_eps", detail::format_number(geometry.contraction_eps));
    kv.set("geometry", "tail_fraction", detail::format_number(geometry.tail_fraction));

    kv.set("output", "dir", output.dir);
    kv.set("output", "combined", output.combined ? "true" : "false");
    return kv;
  }
};

inline std::shared_ptr<Objective> make_objective(const ObjectiveSpec& spec) {
  if (spec.kind == "quadratic")
    return std::make_shared<QuadraticObjective>(
        QuadraticObjective::from_spectrum(spec.eigenvalues, spec.seed));
  if (spec.kind == "ring") return std::make_shared<RingValleyObjective>(spec.alpha, spec.beta);
  if (spec.kind == "least_squares")
    return std::make_shared<InterpolatingLeastSquares>(
        InterpolatingLeastSquares::gaussian(spec.n, spec.d, spec.seed));
  throw ConfigError("unknown objective kind: " + spec.kind);
}

inline std::shared_ptr<NoiseModel> make_noise(const NoiseSpec& spec,
                                              const std::shared_ptr<Objective>& obj) {
  if (spec.kind == "zero") return std::make_shared<ZeroNoise>();
  if (spec.kind == "sharp") {
    const auto quadratic = std::dynamic_pointer_cast<QuadraticObjective>(obj);
    if (!quadratic) throw ConfigError("sharp noise requires a quadratic objective");
    return std::make_shared<SharpQuadraticNoise>(quadratic->matrix(), spec.sigma);
  }
  if (spec.kind == "minibatch") {
    const auto ls = std::dynamic_pointer_cast<InterpolatingLeastSquares>(obj);
    if (!ls) throw ConfigError("minibatch noise requires a least_squares objective");
    return std::make_shared<MinibatchNoise>(ls, spec.batch, spec.replacement);
  }
  throw ConfigError("unknown noise kind: " + spec.kind);
}

inline Vector resolve_theta0(const Theta0Spec& spec, const Objective& obj) {
  if (spec.kind == Theta0Spec::Kind::kRingOffset) {
    const auto* ring = dynamic_cast<const RingValleyObjective*>(&obj);
    if (!ring) throw ConfigError("ring_offset theta0 requires a ring objective");
    Vector theta(3);
    theta << spec.dx, (1.0 + spec.dr) * std::cos(spec.angle),
        (1.0 + spec.dr) * std::sin(spec.angle);
    return theta;
  }
  Vector theta(static_cast<Eigen::Index>(spec.values.size()));
  for (std::size_t i = 0; i < spec.values.size(); ++i)
    theta[static_cast<Eigen::Index>(i)] = spec.values[i];
  if (theta.size() != obj.dim())
    throw ConfigError("theta0 dimension does not match the objective");
  return theta;
}

/// (mu, L) from the objective's known minima spectrum plus a noise level.
inline SpectralParams reference_params(const Objective& obj, double sigma) {
  const auto hint = obj.local_spectrum_hint();
  if (!hint) throw ConfigError("objective does not expose a local spectrum");
  return SpectralParams(hint->first, hint->second, sigma);
}

inline EstimatorOptions make_estimator_options(const ExperimentConfig& cfg, int threads = 0) {
  EstimatorOptions opts;
  opts.k_start = cfg.estimator.k_start;
  opts.k_end = cfg.estimator.k_end;
  opts.floor = cfg.estimator.floor;
  opts.headroom = cfg.estimator.headroom;
  opts.bands.eps_tol = cfg.estimator.eps_tol;
  opts.bands.eps_band = cfg.estimator.eps_band;
  opts.limit.snap_to_manifold = cfg.estimator.snap_limit;
  opts.threads = threads;
  return opts;
}

}  // namespace pllab

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcbf/envs.hpp"
#include "pcbf/error.hpp"
#include "pcbf/nn.hpp"
#include "pcbf/return_law.hpp"
#include "pcbf/trainer.hpp"

namespace pcbf::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// 17 significant digits: enough for an exact double round trip.
inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw IoError("cannot parse number '" + s + "'");
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

/// Write to a sibling temp file, then rename over the destination.
inline void write_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os << contents;
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

inline std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline std::vector<std::string> read_lines(const fs::path& path) {
  std::istringstream is(read_file(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return lines;
}

// ---------------------------------------------------------------------------
// Generic CSV tables

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(const fs::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw IoError(path.string() + ": empty CSV");
  CsvTable t;
  t.header = split_csv_line(lines[0]);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto row = split_csv_line(lines[i]);
    if (row.size() != t.header.size()) throw IoError(path.string() + ": ragged row " + std::to_string(i));
    t.rows.push_back(std::move(row));
  }
  return t;
}

/// Serialise a table; cells that parse as numbers are re-emitted at 17 digits.
inline std::string csv_string(const CsvTable& t) {
  auto join = [](const std::vector<std::string>& cells, bool numeric) {
    std::string line;
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (j) line += ",";
      const std::string& c = cells[j];
      char* end = nullptr;
      const double v = numeric && !c.empty() ? std::strtod(c.c_str(), &end) : 0.0;
      const bool is_number = numeric && !c.empty() && end && *end == '\0';
      const bool is_integer = is_number && c.find_first_of(".eEn") == std::string::npos;
      line += is_number && !is_integer ? fmt(v) : c;
    }
    return line + "\n";
  };
  std::string out = join(t.header, false);
  for (const auto& r : t.rows) out += join(r, true);
  return out;
}

// ---------------------------------------------------------------------------
// Network checkpoints

inline json mlp_to_json(const nn::Mlp& p) {
  json j;
  j["layer_sizes"] = p.layer_sizes;
  j["init_seed"] = p.init_seed;
  json ws = json::array(), bs = json::array();
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(p.weights[l].size()));
    for (Eigen::Index i = 0; i < p.weights[l].rows(); ++i) {
      for (Eigen::Index k = 0; k < p.weights[l].cols(); ++k) flat.push_back(p.weights[l](i, k));
    }
    ws.push_back(flat);
    bs.push_back(std::vector<double>(p.biases[l].data(), p.biases[l].data() + p.biases[l].size()));
  }
  j["weights"] = ws;
  j["biases"] = bs;
  return j;
}

inline nn::Mlp mlp_from_json(const json& j) {
  nn::Mlp p;
  p.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
  nn::validate_layer_sizes(p.layer_sizes);
  p.init_seed = j.at("init_seed").get<std::uint64_t>();
  const auto& ws = j.at("weights");
  const auto& bs = j.at("biases");
  if (ws.size() + 1 != p.layer_sizes.size() || bs.size() + 1 != p.layer_sizes.size()) {
    throw IoError("checkpoint: layer count does not match layer_sizes");
  }
  for (std::size_t l = 0; l + 1 < p.layer_sizes.size(); ++l) {
    const auto flat = ws[l].get<std::vector<double>>();
    const auto bias = bs[l].get<std::vector<double>>();
    const int rows = p.layer_sizes[l], cols = p.layer_sizes[l + 1];
    if (flat.size() != static_cast<std::size_t>(rows) * cols || bias.size() != static_cast<std::size_t>(cols)) {
      throw IoError("checkpoint: parameter count mismatch in layer " + std::to_string(l));
    }
    nn::Matrix w(rows, cols);
    for (int i = 0; i < rows; ++i) {
      for (int k = 0; k < cols; ++k) w(i, k) = flat[static_cast<std::size_t>(i) * cols + k];
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(Eigen::Map<const nn::Vector>(bias.data(), cols));
  }
  return p;
}

struct Checkpoint {
  nn::Mlp online;
  nn::Mlp target;
  std::string env;
  int context_dim = 1;
  double gamma = 0.0;
  int nfe = 10;
  long step = 0;
};

inline void save_checkpoint(const fs::path& path, const Checkpoint& c) {
  json j;
  j["format"] = "pcbf-checkpoint";
  j["version"] = 1;
  j["env"] = c.env;
  j["context_dim"] = c.context_dim;
  j["gamma"] = c.gamma;
  j["nfe"] = c.nfe;
  j["step"] = c.step;
  j["online"] = mlp_to_json(c.online);
  j["target"] = mlp_to_json(c.target);
  write_atomic(path, j.dump(1) + "\n");
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path.string());
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw IoError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != "pcbf-checkpoint") throw IoError(path.string() + " is not a checkpoint file");
  Checkpoint c;
  c.env = j.at("env").get<std::string>();
  c.context_dim = j.at("context_dim").get<int>();
  c.gamma = j.at("gamma").get<double>();
  c.nfe = j.at("nfe").get<int>();
  c.step = j.at("step").get<long>();
  c.online = mlp_from_json(j.at("online"));
  c.target = mlp_from_json(j.at("target"));
  return c;
}

// ---------------------------------------------------------------------------
// Datasets: state,reward,next_state,done

inline std::string dataset_csv(std::span<const envs::Transition> data) {
  std::string out = "state,reward,next_state,done\n";
  for (const auto& t : data) {
    out += std::to_string(t.state) + "," + fmt(t.reward) + "," + std::to_string(t.next_state) + "," +
           (t.done ? "1" : "0") + "\n";
  }
  return out;
}

inline void write_dataset(const fs::path& path, std::span<const envs::Transition> data) {
  write_atomic(path, dataset_csv(data));
}

inline std::vector<envs::Transition> read_dataset(const fs::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0] != "state,reward,next_state,done") {
    throw IoError(path.string() + ": missing dataset header");
  }
  std::vector<envs::Transition> data;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto c = split_csv_line(lines[i]);
    if (c.size() != 4) throw IoError(path.string() + ": bad row " + std::to_string(i));
    data.push_back({std::stoi(c[0]), parse_double(c[1]), std::stoi(c[2]), c[3] == "1"});
  }
  return data;
}

// ---------------------------------------------------------------------------
// Metrics: step,loss,loss_std,w1_s<k>...; blank cells where a value is absent

inline std::string metrics_csv(const trainer::MetricsLog& log) {
  std::string out = "step,loss,loss_std";
  for (int s : log.eval_states) out += ",w1_s" + std::to_string(s);
  out += "\n";
  std::size_t e = 0;
  for (std::size_t k = 0; k < log.losses.size(); ++k) {
    const long step = static_cast<long>(k) + 1;
    out += std::to_string(step) + "," + fmt(log.losses[k]) + ",";
    if (k < log.loss_std.size() && !std::isnan(log.loss_std[k])) out += fmt(log.loss_std[k]);
    const bool has_eval = e < log.evals.size() && log.evals[e].step == step;
    for (std::size_t j = 0; j < log.eval_states.size(); ++j) {
      out += ",";
      if (has_eval) out += fmt(log.evals[e].w1[j]);
    }
    if (has_eval) ++e;
    out += "\n";
  }
  return out;
}

inline void write_metrics(const fs::path& path, const trainer::MetricsLog& log) { write_atomic(path, metrics_csv(log)); }

inline trainer::MetricsLog read_metrics(const fs::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw IoError(path.string() + ": empty metrics file");
  const auto head = split_csv_line(lines[0]);
  if (head.size() < 3 || head[0] != "step" || head[1] != "loss" || head[2] != "loss_std") {
    throw IoError(path.string() + ": bad metrics header");
  }
  trainer::MetricsLog log;
  for (std::size_t j = 3; j < head.size(); ++j) log.eval_states.push_back(std::stoi(head[j].substr(4)));
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto c = split_csv_line(lines[i]);
    c.resize(head.size());
    log.losses.push_back(parse_double(c[1]));
    log.loss_std.push_back(c[2].empty() ? std::numeric_limits<double>::quiet_NaN() : parse_double(c[2]));
    if (head.size() > 3 && !c[3].empty()) {
      trainer::EvalRecord rec{std::stol(c[0]), {}};
      for (std::size_t j = 3; j < head.size(); ++j) rec.w1.push_back(parse_double(c[j]));
      log.evals.push_back(std::move(rec));
    }
  }
  return log;
}

// ---------------------------------------------------------------------------
// Monte Carlo oracle cache: one JSON header line, then raw float64 samples.

struct OracleKey {
  std::string spec_id;
  int state = 0;
  double gamma = 0.0;
  int n_rollouts = 0;
  std::uint64_t seed = 0;
  int horizon_cap = 2000;

  std::string describe() const {
    return spec_id + "|state=" + std::to_string(state) + "|gamma=" + fmt(gamma) + "|n=" + std::to_string(n_rollouts) +
           "|seed=" + std::to_string(seed) + "|cap=" + std::to_string(horizon_cap);
  }

  std::string filename() const {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char ch : describe()) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return spec_id + "_s" + std::to_string(state) + "_n" + std::to_string(n_rollouts) + "_" + hex + ".oracle";
  }
};

/// Cache directory: $PCBF_CACHE_DIR if set, otherwise the fallback.
inline fs::path cache_dir(const fs::path& fallback) {
  if (const char* env = std::getenv("PCBF_CACHE_DIR"); env && *env) return fs::path(env);
  return fallback;
}

inline void write_oracle_cache(const fs::path& dir, const OracleKey& key, const Empirical& law, double tail_bound) {
  json h;
  h["format"] = "pcbf-oracle";
  h["spec"] = key.spec_id;
  h["state"] = key.state;
  h["gamma"] = key.gamma;
  h["n"] = key.n_rollouts;
  h["seed"] = key.seed;
  h["horizon_cap"] = key.horizon_cap;
  h["truncation_tail_bound"] = tail_bound;
  std::string contents = h.dump() + "\n";
  const auto* bytes = reinterpret_cast<const char*>(law.samples.data());
  contents.append(bytes, law.samples.size() * sizeof(double));
  write_atomic(dir / key.filename(), contents);
}

/// Load a cached oracle; throws IoError naming the key when absent or stale.
inline Empirical read_oracle_cache(const fs::path& dir, const OracleKey& key) {
  const fs::path path = dir / key.filename();
  if (!fs::exists(path)) throw IoError("missing oracle cache for key " + key.describe() + " (" + path.string() + ")");
  const std::string raw = read_file(path);
  const auto nl = raw.find('\n');
  if (nl == std::string::npos) throw IoError("corrupt oracle cache " + path.string());
  const json h = json::parse(raw.substr(0, nl));
  if (h.value("spec", "") != key.spec_id || h.value("state", -1) != key.state || h.value("n", -1) != key.n_rollouts ||
      h.value("seed", std::uint64_t{0}) != key.seed || h.value("gamma", -1.0) != key.gamma ||
      h.value("horizon_cap", -1) != key.horizon_cap) {
    throw IoError("oracle cache header does not match key " + key.describe());
  }
  const std::size_t bytes = raw.size() - nl - 1;
  if (bytes != static_cast<std::size_t>(key.n_rollouts) * sizeof(double)) {
    throw IoError("oracle cache " + path.string() + " has the wrong sample count");
  }
  Empirical e;
  e.samples.resize(static_cast<std::size_t>(key.n_rollouts));
  std::memcpy(e.samples.data(), raw.data() + nl + 1, bytes);
  return e;
}

/// Return the cached oracle, generating and caching it on a miss.
inline Empirical cached_mc_oracle(const envs::MrpSpec& spec, const OracleKey& key, const fs::path& dir) {
  const fs::path path = dir / key.filename();
  if (fs::exists(path)) return read_oracle_cache(dir, key);
  RngStream rng = RngStream(key.seed).split(static_cast<std::uint64_t>(key.state));
  Empirical law = envs::mc_return_oracle(spec, key.state, key.gamma, key.n_rollouts, key.horizon_cap, rng);
  write_oracle_cache(dir, key, law, envs::truncation_tail_bound(spec, key.gamma, key.horizon_cap));
  return law;
}

}  // namespace pcbf::io

#include "trajrep/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace trajrep {

namespace {

std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 14695981039346656037ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (embed_dim < 1) fail("embed_dim must be positive");
  if (hidden_dim != 2 * embed_dim) fail("hidden_dim must equal 2 * embed_dim");
  const std::pair<int, const char*> positive[] = {
      {gat_layers, "gat_layers"},           {road_layers, "road_layers"},
      {grid_layers, "grid_layers"},         {interactor_layers, "interactor_layers"},
      {road_heads, "road_heads"},           {grid_heads, "grid_heads"},
      {interactor_heads, "interactor_heads"}, {batch_size, "batch_size"},
      {mask_span, "mask_span"},             {synth_rows, "synth_rows"},
      {synth_cols, "synth_cols"},           {synth_classes, "synth_classes"}};
  for (auto [v, name] : positive) {
    if (v < 1) fail(std::string(name) + " must be positive");
  }
  if (embed_dim % road_heads || embed_dim % grid_heads || embed_dim % interactor_heads) {
    fail("embed_dim must be divisible by every head count");
  }
  if (epochs < 0 || synth_trajectories < 0) fail("counts must be nonnegative");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
  if (mask_ratio < 0.0 || mask_ratio >= 1.0) fail("mask_ratio must be in [0, 1)");
  if (temperature <= 0.0) fail("temperature must be positive");
  if (learning_rate <= 0.0) fail("learning_rate must be positive");
  if (grid_cell_m <= 0.0) fail("grid_cell_m must be positive");
  if (min_length_m < 0.0) fail("min_length_m must be nonnegative");
  const double sum = split_train + split_val + split_test;
  if (split_train < 0 || split_val < 0 || split_test < 0 || std::abs(sum - 1.0) > 1e-9) {
    fail("split ratios must be nonnegative and sum to 1");
  }
  if (synth_noise_m < 0.0) fail("synth_noise_m must be nonnegative");
}

std::map<std::string, std::string> RunConfig::to_map() const {
  return {
      {"embed_dim", std::to_string(embed_dim)},
      {"hidden_dim", std::to_string(hidden_dim)},
      {"gat_layers", std::to_string(gat_layers)},
      {"road_layers", std::to_string(road_layers)},
      {"grid_layers", std::to_string(grid_layers)},
      {"interactor_layers", std::to_string(interactor_layers)},
      {"road_heads", std::to_string(road_heads)},
      {"grid_heads", std::to_string(grid_heads)},
      {"interactor_heads", std::to_string(interactor_heads)},
      {"dropout", fmt_double(dropout)},
      {"mask_ratio", fmt_double(mask_ratio)},
      {"mask_span", std::to_string(mask_span)},
      {"temperature", fmt_double(temperature)},
      {"batch_size", std::to_string(batch_size)},
      {"epochs", std::to_string(epochs)},
      {"learning_rate", fmt_double(learning_rate)},
      {"grid_cell_m", fmt_double(grid_cell_m)},
      {"min_length_m", fmt_double(min_length_m)},
      {"split_train", fmt_double(split_train)},
      {"split_val", fmt_double(split_val)},
      {"split_test", fmt_double(split_test)},
      {"utc_offset_s", fmt_double(utc_offset_s)},
      {"synth_rows", std::to_string(synth_rows)},
      {"synth_cols", std::to_string(synth_cols)},
      {"synth_trajectories", std::to_string(synth_trajectories)},
      {"synth_noise_m", fmt_double(synth_noise_m)},
      {"synth_classes", std::to_string(synth_classes)},
      {"seed", std::to_string(seed)},
      {"data_dir", data_dir},
  };
}

std::string RunConfig::serialize() const {
  std::ostringstream out;
  for (const auto& [k, v] : to_map()) out << k << " = " << v << "\n";
  return out.str();
}

RunConfig RunConfig::parse(const std::map<std::string, std::string>& kv) {
  RunConfig cfg;
  auto as_int = [](const std::string& k, const std::string& v) {
    std::size_t used = 0;
    int r = 0;
    try {
      r = std::stoi(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size()) throw std::invalid_argument("config: bad integer for " + k + ": " + v);
    return r;
  };
  auto as_double = [](const std::string& k, const std::string& v) {
    std::size_t used = 0;
    double r = 0;
    try {
      r = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size()) throw std::invalid_argument("config: bad number for " + k + ": " + v);
    return r;
  };
  for (const auto& [k, v] : kv) {
    if (k == "embed_dim") cfg.embed_dim = as_int(k, v);
    else if (k == "hidden_dim") cfg.hidden_dim = as_int(k, v);
    else if (k == "gat_layers") cfg.gat_layers = as_int(k, v);
    else if (k == "road_layers") cfg.road_layers = as_int(k, v);
    else if (k == "grid_layers") cfg.grid_layers = as_int(k, v);
    else if (k == "interactor_layers") cfg.interactor_layers = as_int(k, v);
    else if (k == "road_heads") cfg.road_heads = as_int(k, v);
    else if (k == "grid_heads") cfg.grid_heads = as_int(k, v);
    else if (k == "interactor_heads") cfg.interactor_heads = as_int(k, v);
    else if (k == "dropout") cfg.dropout = as_double(k, v);
    else if (k == "mask_ratio") cfg.mask_ratio = as_double(k, v);
    else if (k == "mask_span") cfg.mask_span = as_int(k, v);
    else if (k == "temperature") cfg.temperature = as_double(k, v);
    else if (k == "batch_size") cfg.batch_size = as_int(k, v);
    else if (k == "epochs") cfg.epochs = as_int(k, v);
    else if (k == "learning_rate") cfg.learning_rate = as_double(k, v);
    else if (k == "grid_cell_m") cfg.grid_cell_m = as_double(k, v);
    else if (k == "min_length_m") cfg.min_length_m = as_double(k, v);
    else if (k == "split_train") cfg.split_train = as_double(k, v);
    else if (k == "split_val") cfg.split_val = as_double(k, v);
    else if (k == "split_test") cfg.split_test = as_double(k, v);
    else if (k == "utc_offset_s") cfg.utc_offset_s = as_double(k, v);
    else if (k == "synth_rows") cfg.synth_rows = as_int(k, v);
    else if (k == "synth_cols") cfg.synth_cols = as_int(k, v);
    else if (k == "synth_trajectories") cfg.synth_trajectories = as_int(k, v);
    else if (k == "synth_noise_m") cfg.synth_noise_m = as_double(k, v);
    else if (k == "synth_classes") cfg.synth_classes = as_int(k, v);
    else if (k == "seed") cfg.seed = std::stoull(v);
    else if (k == "data_dir") cfg.data_dir = v;
    else throw std::invalid_argument("config: unknown key " + k);
  }
  return cfg;
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(serialize())));
  return buf;
}

std::map<std::string, std::string> parse_config_stream(std::istream& in, const std::string& path);

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  return parse_config_stream(in, path);
}

std::map<std::string, std::string> read_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config_stream(in, "<string>");
}

std::map<std::string, std::string> parse_config_stream(std::istream& in,
                                                       const std::string& path) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.resize(hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config: " + path + ":" + std::to_string(lineno) +
                               ": expected key = value");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

int split_of(const std::string& traj_id, const RunConfig& cfg) {
  // FNV-1a mixes its high bits poorly on short strings, so push the hash
  // through a finalizer before taking the top 53 bits as a uniform in [0, 1).
  std::uint64_t h = fnv1a(traj_id);
  h ^= h >> 30; h *= 0xbf58476d1ce4e5b9ull;
  h ^= h >> 27; h *= 0x94d049bb133111ebull;
  h ^= h >> 31;
  const double u = static_cast<double>(h >> 11) / 9007199254740992.0;
  if (u < cfg.split_train) return 0;
  if (u < cfg.split_train + cfg.split_val) return 1;
  return 2;
}

}  // namespace trajrep

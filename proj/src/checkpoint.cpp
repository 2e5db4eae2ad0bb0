#include "trajrep/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace trajrep {

namespace {

constexpr char kMagic[8] = {'T', 'R', 'J', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const std::uint64_t n = get_u64(in);
  if (n > (1ull << 30)) throw std::runtime_error("checkpoint: implausible string length");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

void put_tensor(std::ostream& out, const Tensor& t) {
  put_u64(out, static_cast<std::uint64_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) put_u64(out, static_cast<std::uint64_t>(t.dim(i)));
  for (int i = 0; i < t.numel(); ++i) {
    std::uint64_t bits;
    const double v = t[i];
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
  }
}

Tensor get_tensor(std::istream& in) {
  const std::uint64_t nd = get_u64(in);
  if (nd > 8) throw std::runtime_error("checkpoint: implausible tensor rank");
  // rank 0 marks a never-initialized tensor (e.g. untouched optimizer state),
  // not a scalar; Tensor({}) would have one element
  if (nd == 0) return Tensor{};
  std::vector<int> shape;
  for (std::uint64_t i = 0; i < nd; ++i) shape.push_back(static_cast<int>(get_u64(in)));
  Tensor t(shape);
  for (int i = 0; i < t.numel(); ++i) {
    const std::uint64_t bits = get_u64(in);
    double v;
    std::memcpy(&v, &bits, 8);
    t[i] = v;
  }
  return t;
}

bool same_shape(const Tensor& a, const Tensor& b) {
  if (a.ndim() != b.ndim()) return false;
  for (int i = 0; i < a.ndim(); ++i) {
    if (a.dim(i) != b.dim(i)) return false;
  }
  return true;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, bool with_optimizer) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, 8);
  put_u64(out, kVersion);
  put_string(out, model.config().serialize());
  put_string(out, variant_to_string(model.variant()));
  put_u64(out, static_cast<std::uint64_t>(model.params.step_count()));
  put_u64(out, with_optimizer ? 1 : 0);
  put_u64(out, static_cast<std::uint64_t>(model.params.size()));
  auto& store = const_cast<ParamStore&>(model.params);
  for (int h = 0; h < store.size(); ++h) {
    put_string(out, store.name(h));
    put_tensor(out, store.value(h));
    if (with_optimizer) {
      put_tensor(out, store.opt_state(h).m);
      put_tensor(out, store.opt_state(h).v);
    }
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

namespace {

std::ifstream open_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
  }
  const std::uint64_t version = get_u64(in);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
  }
  return in;
}

}  // namespace

RunConfig peek_checkpoint(const std::string& path, Variant& variant_out) {
  auto in = open_checkpoint(path);
  RunConfig cfg = RunConfig::parse(read_config_string(get_string(in)));
  variant_out = variant_from_string(get_string(in));
  return cfg;
}

void load_checkpoint(const std::string& path, Model& model) {
  auto in = open_checkpoint(path);
  const std::string cfg_text = get_string(in);
  const std::string variant = get_string(in);
  if (variant != variant_to_string(model.variant())) {
    throw std::runtime_error("checkpoint: variant " + variant + " does not match model variant " +
                             variant_to_string(model.variant()));
  }
  const RunConfig cfg = RunConfig::parse(read_config_string(cfg_text));
  if (cfg.embed_dim != model.config().embed_dim || cfg.hidden_dim != model.config().hidden_dim) {
    throw std::runtime_error("checkpoint: model dimensions (d=" + std::to_string(cfg.embed_dim) +
                             ") incompatible with target (d=" +
                             std::to_string(model.config().embed_dim) + ")");
  }
  const std::int64_t step = static_cast<std::int64_t>(get_u64(in));
  const bool with_opt = get_u64(in) != 0;
  const std::uint64_t count = get_u64(in);
  if (count != static_cast<std::uint64_t>(model.params.size())) {
    throw std::runtime_error("checkpoint: holds " + std::to_string(count) + " tensors, model has " +
                             std::to_string(model.params.size()));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = get_string(in);
    Tensor value = get_tensor(in);
    if (!model.params.contains(name)) {
      throw std::runtime_error("checkpoint: parameter " + name + " unknown to the model");
    }
    const int h = model.params.handle(name);
    if (!same_shape(value, model.params.value(h))) {
      throw std::runtime_error("checkpoint: parameter " + name + " has shape " +
                               value.shape_str() + ", model expects " +
                               model.params.value(h).shape_str());
    }
    model.params.value(h) = std::move(value);
    if (with_opt) {
      model.params.opt_state(h).m = get_tensor(in);
      model.params.opt_state(h).v = get_tensor(in);
    }
  }
  model.params.set_step_count(step);
}

}  // namespace trajrep

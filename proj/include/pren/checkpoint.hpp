#pragma once

// Binary checkpoint container, all integers and floats little-endian:
//
//   "PRENCKPT" | u32 version | u32 n + n bytes of RunConfig JSON
//   u32 count, then per parameter:
//     u32 n + name | u32 rank | u64 extents[rank] | f32 values[numel]
//   u8 has_optimizer, then if 1:
//     f64 rho | f64 eps | u32 count, then per entry:
//       u32 n + name | u64 numel | f32 E[g^2][numel] | f32 E[dx^2][numel]

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "pren/config.hpp"
#include "pren/errors.hpp"
#include "pren/model.hpp"
#include "pren/training.hpp"

namespace pren {

inline constexpr char kCheckpointMagic[8] = {'P', 'R', 'E', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ParamRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  RunConfig config;
  std::string config_json;
  std::vector<ParamRecord> params;
  bool has_optimizer = false;
  OptState<float> optimizer;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  template <typename V>
  void pod(V v) {
    bytes(&v, sizeof v);
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void floats(const std::vector<float>& v) { bytes(v.data(), v.size() * sizeof(float)); }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string buf) : buf_(std::move(buf)) {}
  void bytes(void* p, std::size_t n) {
    if (n > buf_.size() - pos_) throw FormatError("checkpoint truncated");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename V>
  V pod() {
    V v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    if (n > buf_.size() - pos_) throw FormatError("checkpoint truncated");
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<float> floats(std::size_t n) {
    if (n > (buf_.size() - pos_) / sizeof(float)) throw FormatError("checkpoint truncated");
    std::vector<float> v(n);
    bytes(v.data(), n * sizeof(float));
    return v;
  }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

template <typename V, typename T>
std::vector<V> cast_vec(std::span<const T> s) {
  std::vector<V> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = static_cast<V>(s[i]);
  return out;
}

}  // namespace detail

/// Serializes the model's parameters (as 32-bit floats) and, when given,
/// the optimizer accumulators.
template <typename T>
std::string serialize_checkpoint(const RunConfig& config, const ParamStore<T>& params,
                                 const OptState<T>* opt = nullptr) {
  detail::Writer w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.pod(kCheckpointVersion);
  w.str(to_json(config));
  w.pod(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params.items()) {
    w.str(name);
    w.pod(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.pod(static_cast<std::uint64_t>(e));
    w.floats(detail::cast_vec<float, T>(t.data()));
  }
  w.pod(static_cast<std::uint8_t>(opt ? 1 : 0));
  if (opt) {
    w.pod(opt->rho);
    w.pod(opt->eps);
    w.pod(static_cast<std::uint32_t>(opt->sq_grad.size()));
    for (const auto& [name, eg] : opt->sq_grad) {
      const auto& ed = opt->sq_delta.at(name);
      w.str(name);
      w.pod(static_cast<std::uint64_t>(eg.size()));
      w.floats(detail::cast_vec<float, T>(std::span<const T>(eg)));
      w.floats(detail::cast_vec<float, T>(std::span<const T>(ed)));
    }
  }
  return w.data();
}

inline Checkpoint parse_checkpoint(std::string bytes) {
  detail::Reader r(std::move(bytes));
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw FormatError("not a checkpoint (bad magic)");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  ck.config_json = r.str();
  ck.config = parse_run_config(ck.config_json);
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    ParamRecord p;
    p.name = r.str();
    const auto rank = r.pod<std::uint32_t>();
    if (rank == 0 || rank > 8) throw FormatError("parameter '" + p.name + "': bad rank");
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto e = r.pod<std::uint64_t>();
      if (e == 0 || e > (1ull << 32)) throw FormatError("parameter '" + p.name + "': bad extent");
      p.shape.push_back(static_cast<std::size_t>(e));
    }
    p.values = r.floats(numel_of(p.shape));
    ck.params.push_back(std::move(p));
  }
  ck.has_optimizer = r.pod<std::uint8_t>() != 0;
  if (ck.has_optimizer) {
    ck.optimizer.rho = r.pod<double>();
    ck.optimizer.eps = r.pod<double>();
    const auto n = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
      auto name = r.str();
      const auto numel = r.pod<std::uint64_t>();
      ck.optimizer.sq_grad[name] = r.floats(numel);
      ck.optimizer.sq_delta[name] = r.floats(numel);
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint");
  return ck;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing '" + path + "'");
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename T>
void save_checkpoint(const std::string& path, const RunConfig& config, const ParamStore<T>& params,
                     const OptState<T>* opt = nullptr) {
  write_file(path, serialize_checkpoint(config, params, opt));
}

inline Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path)); }

/// Copies checkpoint values into `params`. Every parameter must be present
/// with the same shape, and the checkpoint must hold no extras.
template <typename T>
void restore_params(ParamStore<T>& params, const Checkpoint& ck) {
  if (ck.params.size() != params.size())
    throw ConfigError("checkpoint holds " + std::to_string(ck.params.size()) + " parameters, model expects " +
                      std::to_string(params.size()));
  for (const auto& rec : ck.params) {
    if (!params.contains(rec.name)) throw ConfigError("checkpoint parameter '" + rec.name + "' unknown to model");
    auto& t = params.at(rec.name);
    if (t.shape() != rec.shape)
      throw ConfigError("parameter '" + rec.name + "': checkpoint shape " + shape_str(rec.shape) +
                        " vs model shape " + shape_str(t.shape()));
    auto dst = t.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(rec.values[i]);
  }
}

template <typename T>
OptState<T> restore_optimizer(const Checkpoint& ck) {
  OptState<T> s;
  s.rho = ck.optimizer.rho;
  s.eps = ck.optimizer.eps;
  for (const auto& [k, v] : ck.optimizer.sq_grad) s.sq_grad[k] = std::vector<T>(v.begin(), v.end());
  for (const auto& [k, v] : ck.optimizer.sq_delta) s.sq_delta[k] = std::vector<T>(v.begin(), v.end());
  return s;
}

/// Rebuilds the model described by the checkpoint and loads its weights.
template <typename T>
std::unique_ptr<Recognizer<T>> model_from_checkpoint(const Checkpoint& ck) {
  auto m = make_model<T>(ck.config.model);
  restore_params(m->params(), ck);
  return m;
}

}  // namespace pren

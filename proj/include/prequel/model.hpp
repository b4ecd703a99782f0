#pragma once

// The source-only quality predictor: an encoder backend (or two, for the
// combined variant) feeding one regression head per predicted quantity.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "prequel/encoder.hpp"
#include "prequel/error.hpp"
#include "prequel/io.hpp"
#include "prequel/random.hpp"

namespace prequel::model {

namespace fs = std::filesystem;

enum class Variant { simple, multitask, combined };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::simple: return "simple";
    case Variant::multitask: return "multitask";
    case Variant::combined: return "combined";
  }
  return "?";
}

inline Variant variant_from_string(std::string_view s) {
  if (s == "simple") return Variant::simple;
  if (s == "multitask") return Variant::multitask;
  if (s == "combined") return Variant::combined;
  throw PreconditionError("unknown model variant '" + std::string(s) + "'");
}

// dense(in -> hidden), tanh, dense(hidden -> 1).
//
// Parameters live in one flat vector:
//   [ W1 (hidden x in, row-major) | b1 (hidden) | w2 (hidden) | b2 ]
class RegressionHead {
 public:
  RegressionHead() = default;
  RegressionHead(std::size_t in_dim, std::size_t hidden_dim)
      : in_(in_dim), hidden_(hidden_dim), params_(hidden_dim * in_dim + 2 * hidden_dim + 1, 0.0) {
    if (in_dim == 0 || hidden_dim == 0) throw PreconditionError("head dimensions must be positive");
  }

  std::size_t input_dim() const { return in_; }
  std::size_t hidden_dim() const { return hidden_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  double& w1(std::size_t h, std::size_t i) { return params_[h * in_ + i]; }
  double w1(std::size_t h, std::size_t i) const { return params_[h * in_ + i]; }
  std::size_t b1_offset() const { return hidden_ * in_; }
  std::size_t w2_offset() const { return hidden_ * in_ + hidden_; }
  std::size_t b2_offset() const { return hidden_ * in_ + 2 * hidden_; }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
  void initialize(Rng& rng) {
    const double a1 = 1.0 / std::sqrt(static_cast<double>(in_));
    const double a2 = 1.0 / std::sqrt(static_cast<double>(hidden_));
    for (std::size_t k = 0; k < w2_offset(); ++k) params_[k] = rng.uniform(-a1, a1);
    for (std::size_t k = w2_offset(); k < params_.size(); ++k) params_[k] = rng.uniform(-a2, a2);
  }

  double forward(std::span<const double> x, std::vector<double>* hidden_out = nullptr) const {
    check_input(x);
    std::vector<double> local;
    std::vector<double>& h = hidden_out ? *hidden_out : local;
    h.assign(hidden_, 0.0);
    const double* b1 = params_.data() + b1_offset();
    const double* w2 = params_.data() + w2_offset();
    double y = params_[b2_offset()];
    for (std::size_t j = 0; j < hidden_; ++j) {
      const double* row = params_.data() + j * in_;
      double z = b1[j];
      for (std::size_t i = 0; i < in_; ++i) z += row[i] * x[i];
      h[j] = std::tanh(z);
      y += w2[j] * h[j];
    }
    return y;
  }

  // Adds dL/dparams to grad given dL/dy, re-using the hidden activations of
  // a preceding forward() on the same input.
  void backward(std::span<const double> x, std::span<const double> hidden, double dy, std::span<double> grad) const {
    const std::size_t b1 = b1_offset(), w2 = w2_offset();
    for (std::size_t j = 0; j < hidden_; ++j) {
      grad[w2 + j] += dy * hidden[j];
      const double dz = dy * params_[w2 + j] * (1.0 - hidden[j] * hidden[j]);
      grad[b1 + j] += dz;
      double* grow = grad.data() + j * in_;
      for (std::size_t i = 0; i < in_; ++i) grow[i] += dz * x[i];
    }
    grad[b2_offset()] += dy;
  }

  bool operator==(const RegressionHead& o) const {
    return in_ == o.in_ && hidden_ == o.hidden_ && params_ == o.params_;
  }

 private:
  void check_input(std::span<const double> x) const {
    if (x.size() != in_)
      throw PreconditionError("head expects input of width " + std::to_string(in_) + ", got " + std::to_string(x.size()));
  }

  std::size_t in_ = 0;
  std::size_t hidden_ = 0;
  std::vector<double> params_;
};

class PredictorModel {
 public:
  using Backend = std::shared_ptr<const EncoderBackend>;

  static PredictorModel simple(Backend backend) {
    return PredictorModel(Variant::simple, {std::move(backend)}, {"da"});
  }

  // Shared backend; one head per name. "da" is always present.
  static PredictorModel multitask(Backend backend, std::vector<std::string> heads) {
    if (std::find(heads.begin(), heads.end(), "da") == heads.end()) heads.insert(heads.begin(), "da");
    return PredictorModel(Variant::multitask, {std::move(backend)}, std::move(heads));
  }

  // Pooled vectors of both backends are concatenated before the head.
  static PredictorModel combined(Backend first, Backend second) {
    return PredictorModel(Variant::combined, {std::move(first), std::move(second)}, {"da"});
  }

  Variant variant() const { return variant_; }
  const std::vector<Backend>& backends() const { return backends_; }
  std::size_t input_dim() const {
    std::size_t d = 0;
    for (const auto& b : backends_) d += b->dim();
    return d;
  }

  std::vector<std::string> head_names() const {
    std::vector<std::string> names;
    for (const auto& [k, _] : heads_) names.push_back(k);
    return names;
  }
  bool has_head(const std::string& name) const { return heads_.count(name) > 0; }
  RegressionHead& head(const std::string& name) { return heads_.at(name); }
  const RegressionHead& head(const std::string& name) const { return heads_.at(name); }
  std::map<std::string, RegressionHead>& heads() { return heads_; }
  const std::map<std::string, RegressionHead>& heads() const { return heads_; }

  std::vector<double> encode(std::string_view text) const {
    std::vector<double> x;
    x.reserve(input_dim());
    for (const auto& b : backends_) {
      const auto v = b->encode(text);
      if (v.size() != b->dim()) throw Error("backend " + b->name() + " returned a vector of the wrong width");
      x.insert(x.end(), v.begin(), v.end());
    }
    return x;
  }

  std::map<std::string, double> forward_encoded(std::span<const double> x) const {
    std::map<std::string, double> out;
    for (const auto& [name, h] : heads_) out[name] = h.forward(x);
    return out;
  }

  std::map<std::string, double> forward(std::string_view text) const { return forward_encoded(encode(text)); }

  double predict(std::string_view text, const std::string& head_name = "da") const {
    return head(head_name).forward(encode(text));
  }

  // Head k is seeded from (seed, name) so the draw does not depend on which
  // other heads exist.
  void initialize(std::uint64_t seed) {
    for (auto& [name, h] : heads_) {
      Rng rng(derive_seed(seed, fnv1a64(name)));
      h.initialize(rng);
    }
  }

  bool same_weights(const PredictorModel& o) const { return heads_ == o.heads_; }

  json describe() const {
    json backends = json::array();
    for (const auto& b : backends_) backends.push_back(b->describe());
    json heads = json::object();
    for (const auto& [name, h] : heads_) heads[name] = {{"input_dim", h.input_dim()}, {"hidden_dim", h.hidden_dim()}};
    return {{"variant", to_string(variant_)}, {"backends", backends}, {"heads", heads}, {"activation", "tanh"}};
  }

 private:
  PredictorModel(Variant v, std::vector<Backend> backends, std::vector<std::string> head_names)
      : variant_(v), backends_(std::move(backends)) {
    for (const auto& b : backends_)
      if (!b) throw PreconditionError("null encoder backend");
    const std::size_t d = input_dim();
    for (const auto& name : head_names) heads_.emplace(name, RegressionHead(d, d));
  }

  Variant variant_;
  std::vector<Backend> backends_;
  std::map<std::string, RegressionHead> heads_;
};

// ---------------------------------------------------------------------------
// Checkpoints
//
//   <dir>/config.json      model description plus caller metadata
//   <dir>/head-<name>.bin  one blob per head, little-endian:
//       char[4]  magic "PQHD"
//       u32      format version (1)
//       u32      input_dim
//       u32      hidden_dim
//       f64[hidden*input]  W1, row-major
//       f64[hidden]        b1
//       f64[hidden]        w2
//       f64                b2
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  out.append(reinterpret_cast<const char*>(bits.data()), bits.size());
}

template <class T>
T get_le(std::string_view in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error("truncated head blob");
  std::array<unsigned char, sizeof(T)> bits;
  std::memcpy(bits.data(), in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  pos += sizeof(T);
  return std::bit_cast<T>(bits);
}

}  // namespace detail

inline std::string encode_head(const RegressionHead& h) {
  std::string out = "PQHD";
  detail::put_le<std::uint32_t>(out, 1);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(h.input_dim()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(h.hidden_dim()));
  for (double p : h.parameters()) detail::put_le<double>(out, p);
  return out;
}

inline RegressionHead decode_head(std::string_view blob) {
  if (blob.substr(0, 4) != "PQHD") throw Error("not a head blob (bad magic)");
  std::size_t pos = 4;
  if (detail::get_le<std::uint32_t>(blob, pos) != 1) throw Error("unsupported head blob version");
  const auto in = detail::get_le<std::uint32_t>(blob, pos);
  const auto hidden = detail::get_le<std::uint32_t>(blob, pos);
  RegressionHead h(in, hidden);
  for (double& p : h.parameters()) p = detail::get_le<double>(blob, pos);
  if (pos != blob.size()) throw Error("trailing bytes in head blob");
  return h;
}

inline void save_checkpoint(const PredictorModel& m, const fs::path& dir, const json& metadata = json::object()) {
  fs::create_directories(dir);
  json config = m.describe();
  config["format"] = "prequel-checkpoint/1";
  config["metadata"] = metadata;
  for (const auto& [name, h] : m.heads()) io::write_atomically(dir / ("head-" + name + ".bin"), encode_head(h));
  io::write_atomically(dir / "config.json", config.dump(2) + "\n");
}

inline json read_checkpoint_config(const fs::path& dir) { return json::parse(io::read_file(dir / "config.json")); }

inline PredictorModel load_checkpoint(const fs::path& dir, const std::string& endpoint_override = {}) {
  const json config = read_checkpoint_config(dir);
  const Variant v = variant_from_string(config.at("variant").get<std::string>());
  std::vector<PredictorModel::Backend> backends;
  for (const auto& b : config.at("backends")) backends.push_back(make_backend(b, endpoint_override));
  std::vector<std::string> names;
  for (const auto& [name, _] : config.at("heads").items()) names.push_back(name);
  PredictorModel m = [&] {
    switch (v) {
      case Variant::simple: return PredictorModel::simple(backends.at(0));
      case Variant::multitask: return PredictorModel::multitask(backends.at(0), names);
      case Variant::combined: return PredictorModel::combined(backends.at(0), backends.at(1));
    }
    throw Error("unreachable");
  }();
  for (auto& [name, h] : m.heads()) {
    RegressionHead loaded = decode_head(io::read_file(dir / ("head-" + name + ".bin")));
    if (loaded.input_dim() != h.input_dim() || loaded.hidden_dim() != h.hidden_dim())
      throw Error("head '" + name + "' shape does not match its backend");
    h = std::move(loaded);
  }
  return m;
}

}  // namespace prequel::model

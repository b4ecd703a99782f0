#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "prequel/error.hpp"
#include "prequel/random.hpp"
#include "prequel/text.hpp"
#include "prequel/transport.hpp"

namespace prequel::model {

using json = nlohmann::json;

// Maps a sentence to a fixed-width pooled vector.
class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;
  virtual std::string name() const = 0;
  virtual std::string version() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> encode(std::string_view text) const = 0;
  // Enough to rebuild the backend from a checkpoint.
  virtual json describe() const = 0;
};

// Deterministic, dependency-free encoder: signed feature hashing of character
// 3..5-grams, L2-normalized, followed by two length channels
// (characters / 100, words / 20). Intended for desk-scale runs and tests.
class HashedNgramEncoder : public EncoderBackend {
 public:
  static constexpr std::size_t kLengthChannels = 2;

  explicit HashedNgramEncoder(std::size_t dim = 256, int min_n = 3, int max_n = 5)
      : dim_(dim), min_n_(min_n), max_n_(max_n) {
    if (dim_ <= kLengthChannels) throw PreconditionError("hashed encoder dim must exceed 2");
    if (min_n_ < 1 || max_n_ < min_n_) throw PreconditionError("invalid n-gram range");
  }

  std::string name() const override { return "hashed-char-ngram"; }
  std::string version() const override { return "1"; }
  std::size_t dim() const override { return dim_; }

  std::vector<double> encode(std::string_view raw) const override {
    if (text::trim(raw).empty()) throw PreconditionError("cannot encode empty text");
    const std::u32string cps = text::code_points(" " + text::canonical_whitespace(raw) + " ");
    const std::size_t buckets = dim_ - kLengthChannels;
    std::vector<double> v(dim_, 0.0);
    std::string gram;
    for (int n = min_n_; n <= max_n_; ++n) {
      const auto un = static_cast<std::size_t>(n);
      for (std::size_t i = 0; i + un <= cps.size(); ++i) {
        gram.clear();
        gram.push_back(static_cast<char>('0' + n));
        for (std::size_t k = 0; k < un; ++k) {
          const char32_t c = cps[i + k];
          gram.append(reinterpret_cast<const char*>(&c), sizeof c);
        }
        const std::uint64_t h = splitmix64(fnv1a64(gram));
        v[h % buckets] += (h >> 63) ? -1.0 : 1.0;
      }
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < buckets; ++i) norm += v[i] * v[i];
    if (norm > 0.0) {
      norm = std::sqrt(norm);
      for (std::size_t i = 0; i < buckets; ++i) v[i] /= norm;
    }
    v[buckets] = static_cast<double>(text::char_count(raw)) / 100.0;
    v[buckets + 1] = static_cast<double>(text::split_words(raw).size()) / 20.0;
    return v;
  }

  json describe() const override {
    return {{"name", name()}, {"version", version()}, {"dim", dim_}, {"min_n", min_n_}, {"max_n", max_n_}};
  }

 private:
  std::size_t dim_;
  int min_n_, max_n_;
};

// Pretrained contextual encoder served out of process; returns the pooled
// first-token vector.  {id, text} -> {id, vector: [dim reals]}
class EncoderAdapter : public EncoderBackend {
 public:
  EncoderAdapter(std::string endpoint, std::size_t dim = 1024, std::string model_version = "unversioned")
      : client_(std::make_unique<transport::JsonClient>(std::move(endpoint))),
        dim_(dim),
        version_(std::move(model_version)) {}

  std::string name() const override { return "encoder-adapter"; }
  std::string version() const override { return version_; }
  std::size_t dim() const override { return dim_; }

  std::vector<double> encode(std::string_view text) const override {
    if (text::trim(text).empty()) throw PreconditionError("cannot encode empty text");
    const std::string id = "enc-" + io::content_hash(text);
    const json resp = client_->call(json{{"id", id}, {"text", text}});
    if (resp.contains("error")) throw TransportError("encoder error: " + resp["error"].dump());
    const auto it = resp.find("vector");
    if (it == resp.end() || !it->is_array() || it->size() != dim_)
      throw TransportError("encoder response for '" + id + "' is not a vector of length " + std::to_string(dim_));
    std::vector<double> v;
    v.reserve(dim_);
    for (const auto& x : *it) {
      if (!x.is_number()) throw TransportError("encoder returned a non-numeric component");
      v.push_back(x.get<double>());
      if (!std::isfinite(v.back())) throw TransportError("encoder returned a non-finite component");
    }
    return v;
  }

  json describe() const override {
    return {{"name", name()}, {"version", version_}, {"dim", dim_}, {"endpoint", client_->endpoint()}};
  }

 private:
  std::unique_ptr<transport::JsonClient> client_;
  std::size_t dim_;
  std::string version_;
};

// Rebuilds a backend from describe(); endpoint_override replaces a stored
// adapter endpoint when non-empty.
inline std::shared_ptr<const EncoderBackend> make_backend(const json& desc, const std::string& endpoint_override = {}) {
  const auto name = desc.at("name").get<std::string>();
  if (name == "hashed-char-ngram")
    return std::make_shared<HashedNgramEncoder>(desc.at("dim").get<std::size_t>(), desc.value("min_n", 3),
                                                desc.value("max_n", 5));
  if (name == "encoder-adapter") {
    const std::string endpoint = endpoint_override.empty() ? desc.at("endpoint").get<std::string>() : endpoint_override;
    return std::make_shared<EncoderAdapter>(endpoint, desc.at("dim").get<std::size_t>(),
                                            desc.value("version", std::string("unversioned")));
  }
  throw PreconditionError("unknown encoder backend '" + name + "'");
}

}  // namespace prequel::model

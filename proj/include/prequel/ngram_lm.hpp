#pragma once

// Word n-gram language model with add-k smoothing, used for the n-gram
// probability features.

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "prequel/error.hpp"
#include "prequel/text.hpp"

namespace prequel::analysis {

class NgramLM {
 public:
  static constexpr const char* kBos = "<s>";
  static constexpr const char* kEos = "</s>";
  static constexpr const char* kUnk = "<unk>";

  NgramLM(std::span<const std::string> corpus, int max_order = 4, double k = 0.01) : max_order_(max_order), k_(k) {
    if (corpus.empty()) throw PreconditionError("cannot train an n-gram model on an empty corpus");
    if (max_order_ < 1) throw PreconditionError("n-gram order must be at least 1");
    if (!(k_ > 0.0)) throw PreconditionError("smoothing constant must be positive");
    for (const auto& s : corpus)
      for (auto& w : text::split_words(s)) vocab_.insert(std::move(w));
    vocab_.insert(kEos);
    vocab_.insert(kUnk);
    counts_.resize(static_cast<std::size_t>(max_order_));
    for (const auto& s : corpus) {
      const auto toks = padded(s);
      for (int n = 1; n <= max_order_; ++n) {
        auto& table = counts_[static_cast<std::size_t>(n - 1)];
        for (std::size_t i = static_cast<std::size_t>(max_order_ - 1); i < toks.size(); ++i) {
          const std::string h = history(toks, i, n);
          table.ngram[h + '\x1f' + toks[i]] += 1.0;
          table.context[h] += 1.0;
        }
      }
    }
  }

  int max_order() const { return max_order_; }
  double k() const { return k_; }
  // Predictable types: training words plus </s> and <unk>.
  std::size_t vocabulary_size() const { return vocab_.size(); }
  const std::unordered_set<std::string>& vocabulary() const { return vocab_; }

  // P(word | previous order-1 tokens). The history is given oldest first and
  // may contain <s>; unknown words are mapped to <unk>.
  double probability(std::string_view word, std::span<const std::string> hist, int order) const {
    check_order(order);
    std::vector<std::string> toks;
    const std::size_t need = static_cast<std::size_t>(order - 1);
    // Keep the last order-1 history tokens, left-padding with <s>.
    for (std::size_t i = 0; i < need; ++i) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(hist.size()) - static_cast<std::ptrdiff_t>(need) + static_cast<std::ptrdiff_t>(i);
      toks.push_back(src < 0 ? std::string(kBos) : map_word(hist[static_cast<std::size_t>(src)]));
    }
    toks.push_back(map_word(word));
    return prob_at(toks, toks.size() - 1, order);
  }

  // Mean natural-log probability per predicted token (words and </s>).
  double mean_log_prob(std::string_view sentence, int order) const {
    check_order(order);
    const auto toks = padded(sentence);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = static_cast<std::size_t>(max_order_ - 1); i < toks.size(); ++i, ++count)
      sum += std::log(prob_at(toks, i, order));
    return sum / static_cast<double>(count);
  }

  static std::string feature_name(int order) {
    switch (order) {
      case 1: return "unigram";
      case 2: return "bigram";
      default: return std::to_string(order) + "gram";
    }
  }

 private:
  struct Table {
    std::unordered_map<std::string, double> ngram;
    std::unordered_map<std::string, double> context;
  };

  void check_order(int order) const {
    if (order < 1 || order > max_order_) throw PreconditionError("n-gram order out of range");
  }

  std::string map_word(std::string_view w) const {
    std::string s(w);
    if (s == kBos) return s;
    return vocab_.count(s) ? s : std::string(kUnk);
  }

  std::vector<std::string> padded(std::string_view sentence) const {
    std::vector<std::string> toks(static_cast<std::size_t>(max_order_ - 1), kBos);
    for (auto& w : text::split_words(sentence)) toks.push_back(map_word(w));
    toks.push_back(kEos);
    return toks;
  }

  static std::string history(const std::vector<std::string>& toks, std::size_t i, int n) {
    std::string h;
    for (std::size_t j = i - static_cast<std::size_t>(n - 1); j < i; ++j) {
      h += toks[j];
      h += '\x1e';
    }
    return h;
  }

  double prob_at(const std::vector<std::string>& toks, std::size_t i, int order) const {
    const auto& table = counts_[static_cast<std::size_t>(order - 1)];
    const std::string h = history(toks, i, order);
    const auto c_hw = table.ngram.find(h + '\x1f' + toks[i]);
    const auto c_h = table.context.find(h);
    const double num = (c_hw == table.ngram.end() ? 0.0 : c_hw->second) + k_;
    const double den = (c_h == table.context.end() ? 0.0 : c_h->second) + k_ * static_cast<double>(vocab_.size());
    return num / den;
  }

  int max_order_;
  double k_;
  std::unordered_set<std::string> vocab_;
  std::vector<Table> counts_;
};

}  // namespace prequel::analysis

#pragma once

// Training protocol for PredictorModel heads:
//
//  * Adam, linear warm-up over the first warmup_fraction of all steps, then
//    a constant rate;
//  * per-epoch seeded shuffling, mean-squared error per head, summed with
//    per-head weights;
//  * periodic evaluation (Pearson of the eval head on the held-out set) with
//    early stopping after `patience` non-improving rounds;
//  * seed reset: an attempt that early-stops inside the first epoch, or whose
//    final evaluation falls below reset_corr_floor, is discarded and training
//    restarts from the next seed, up to max_seed_resets times.
//
// The weights at the best evaluation round are returned.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prequel/corpus.hpp"
#include "prequel/error.hpp"
#include "prequel/metrics.hpp"
#include "prequel/model.hpp"
#include "prequel/random.hpp"

namespace prequel::model {

using corpus::Dataset;

struct TrainingConfig {
  double learning_rate = 1e-5;
  double warmup_fraction = 0.10;
  std::size_t batch_size = 4;
  int max_epochs = 3;
  int min_epochs = 1;
  // 0 selects the default cadence: every 300 steps when an epoch is shorter
  // than 1000 steps, every 3000 otherwise.
  long eval_every = 0;
  int patience = 10;
  double reset_corr_floor = 0.1;
  int max_seed_resets = 5;
  std::map<std::string, double> head_loss_weights;  // missing heads weigh 1
  std::map<std::string, std::string> head_labels;   // head -> label; identity when missing
  std::string eval_head = "da";
  std::uint64_t seed = 1;
  // Start from the weights of the model passed in instead of re-initializing.
  bool warm_start = false;
  double holdout_fraction = 0.10;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw PreconditionError("learning_rate must be positive");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw PreconditionError("warmup_fraction must be in [0, 1)");
    if (batch_size == 0) throw PreconditionError("batch_size must be positive");
    if (max_epochs <= 0 || min_epochs <= 0 || min_epochs > max_epochs)
      throw PreconditionError("need 0 < min_epochs <= max_epochs");
    if (eval_every < 0) throw PreconditionError("eval_every must be non-negative");
    if (patience <= 0) throw PreconditionError("patience must be positive");
    if (max_seed_resets < 0) throw PreconditionError("max_seed_resets must be non-negative");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw PreconditionError("holdout_fraction must be in (0, 1)");
    for (const auto& [k, w] : head_loss_weights)
      if (!(w >= 0.0) || !std::isfinite(w)) throw PreconditionError("head loss weight for '" + k + "' must be finite and >= 0");
  }

  long eval_interval(long steps_per_epoch) const {
    if (eval_every > 0) return eval_every;
    return steps_per_epoch < 1000 ? 300 : 3000;
  }

  double loss_weight(const std::string& head) const {
    auto it = head_loss_weights.find(head);
    return it == head_loss_weights.end() ? 1.0 : it->second;
  }

  std::string label_for(const std::string& head) const {
    auto it = head_labels.find(head);
    return it == head_labels.end() ? head : it->second;
  }

  json to_json() const {
    return {{"learning_rate", learning_rate},   {"warmup_fraction", warmup_fraction},
            {"batch_size", batch_size},         {"max_epochs", max_epochs},
            {"min_epochs", min_epochs},         {"eval_every", eval_every},
            {"patience", patience},             {"reset_corr_floor", reset_corr_floor},
            {"max_seed_resets", max_seed_resets}, {"head_loss_weights", head_loss_weights},
            {"head_labels", head_labels},       {"eval_head", eval_head},
            {"seed", seed},                     {"warm_start", warm_start},
            {"holdout_fraction", holdout_fraction}, {"adam_beta1", adam_beta1},
            {"adam_beta2", adam_beta2},         {"adam_epsilon", adam_epsilon},
            {"activation", "tanh"},             {"loss", "mse"}};
  }

  // Keys absent from j keep their current values.
  void merge_json(const json& j) {
    auto get = [&](const char* key, auto& field) {
      if (auto it = j.find(key); it != j.end()) it->get_to(field);
    };
    get("learning_rate", learning_rate);
    get("warmup_fraction", warmup_fraction);
    get("batch_size", batch_size);
    get("max_epochs", max_epochs);
    get("min_epochs", min_epochs);
    get("eval_every", eval_every);
    get("patience", patience);
    get("reset_corr_floor", reset_corr_floor);
    get("max_seed_resets", max_seed_resets);
    get("head_loss_weights", head_loss_weights);
    get("head_labels", head_labels);
    get("eval_head", eval_head);
    get("seed", seed);
    get("warm_start", warm_start);
    get("holdout_fraction", holdout_fraction);
    get("adam_beta1", adam_beta1);
    get("adam_beta2", adam_beta2);
    get("adam_epsilon", adam_epsilon);
  }
};

inline long warmup_steps(double warmup_fraction, long total_steps) {
  return static_cast<long>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
}

// Learning-rate multiplier for the update at 0-based `step`: 0 at step 0,
// rising linearly to 1 at `warmup`, constant afterwards.
inline double warmup_multiplier(long step, long warmup) {
  if (warmup <= 0 || step >= warmup) return 1.0;
  return static_cast<double>(step) / static_cast<double>(warmup);
}

enum class StopReason { patience, max_epochs, seed_reset_exhausted };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::patience: return "patience";
    case StopReason::max_epochs: return "max_epochs";
    case StopReason::seed_reset_exhausted: return "seed_reset_exhausted";
  }
  return "?";
}

struct EvalRecord {
  long step;
  int epoch;
  double correlation;
};

struct AttemptSummary {
  std::uint64_t seed;
  StopReason stop_reason;
  long steps;
  double final_correlation;
  bool early_stop_in_first_epoch;
};

struct TrainingState {
  long step = 0;
  double best_correlation = -std::numeric_limits<double>::infinity();
  long best_step = -1;
  std::vector<EvalRecord> history;
  int resets = 0;
  StopReason stop_reason = StopReason::max_epochs;
  std::uint64_t seed = 0;
  std::vector<AttemptSummary> attempts;

  json to_json() const {
    json hist = json::array();
    for (const auto& r : history) hist.push_back({{"step", r.step}, {"epoch", r.epoch}, {"correlation", r.correlation}});
    json att = json::array();
    for (const auto& a : attempts)
      att.push_back({{"seed", a.seed},
                     {"stop_reason", to_string(a.stop_reason)},
                     {"steps", a.steps},
                     {"final_correlation", a.final_correlation},
                     {"early_stop_in_first_epoch", a.early_stop_in_first_epoch}});
    return {{"step", step},       {"best_correlation", best_correlation}, {"best_step", best_step},
            {"history", hist},    {"resets", resets},                     {"stop_reason", to_string(stop_reason)},
            {"seed", seed},       {"attempts", att}};
  }
};

class SeedResetsExhausted : public Error {
 public:
  explicit SeedResetsExhausted(TrainingState state)
      : Error("training degenerated on every seed (" + std::to_string(state.attempts.size()) + " attempts)"),
        state_(std::move(state)) {}
  const TrainingState& state() const { return state_; }

 private:
  TrainingState state_;
};

struct TrainerHooks {
  // Replaces the measured evaluation correlation (used to script protocol
  // scenarios in tests). Arguments: model, attempt, step, measured value.
  std::function<double(const PredictorModel&, int, long, double)> eval_override;
  // Called with the starting weights of every attempt.
  std::function<void(const PredictorModel&, int)> on_attempt_start;
};

struct TrainingResult {
  PredictorModel model;
  TrainingState state;
};

// An encoded example: backend output plus one regression target per head.
struct EncodedExample {
  std::vector<double> x;
  std::map<std::string, double> targets;
};

// Weighted multitask MSE over a batch: sum_k w_k * mean_b (y_k - t_k)^2.
inline double batch_loss(const PredictorModel& m, std::span<const EncodedExample> batch, const TrainingConfig& cfg) {
  double total = 0.0;
  for (const auto& [name, head] : m.heads()) {
    double se = 0.0;
    for (const auto& ex : batch) {
      const double d = head.forward(ex.x) - ex.targets.at(name);
      se += d * d;
    }
    total += cfg.loss_weight(name) * se / static_cast<double>(batch.size());
  }
  return total;
}

// Analytic gradient of batch_loss, one flat vector per head. Pass `only_head`
// to differentiate a single head's loss term.
inline std::map<std::string, std::vector<double>> batch_gradient(const PredictorModel& m,
                                                                 std::span<const EncodedExample> batch,
                                                                 const TrainingConfig& cfg,
                                                                 const std::string* only_head = nullptr) {
  std::map<std::string, std::vector<double>> grads;
  std::vector<double> hidden;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const auto& [name, head] : m.heads()) {
    auto& g = grads[name];
    g.assign(head.parameter_count(), 0.0);
    if (only_head && *only_head != name) continue;
    const double w = cfg.loss_weight(name);
    if (w == 0.0) continue;
    for (const auto& ex : batch) {
      const double y = head.forward(ex.x, &hidden);
      const double dy = w * 2.0 * (y - ex.targets.at(name)) * inv_b;
      head.backward(ex.x, hidden, dy, g);
    }
  }
  return grads;
}

class AdamOptimizer {
 public:
  AdamOptimizer(const PredictorModel& m, double beta1, double beta2, double eps)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, h] : m.heads()) {
      m_[name].assign(h.parameter_count(), 0.0);
      v_[name].assign(h.parameter_count(), 0.0);
    }
  }

  void step(PredictorModel& model, const std::map<std::string, std::vector<double>>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, head] : model.heads()) {
      const auto& g = grads.at(name);
      auto& m = m_[name];
      auto& v = v_[name];
      auto p = head.parameters();
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

namespace detail {

inline std::vector<EncodedExample> encode_dataset(const PredictorModel& m, const Dataset& ds, const TrainingConfig& cfg,
                                                  const std::vector<std::string>& heads) {
  std::vector<EncodedExample> out;
  out.reserve(ds.size());
  for (const auto& ex : ds.examples) {
    EncodedExample e{m.encode(ex.source.text), {}};
    for (const auto& h : heads) e.targets[h] = ex.label(cfg.label_for(h));
    out.push_back(std::move(e));
  }
  return out;
}

struct AttemptOutcome {
  PredictorModel best;
  TrainingState state;
  bool degenerate;
};

inline double evaluate_head(const PredictorModel& m, const std::string& head, std::span<const EncodedExample> eval) {
  std::vector<double> preds, gold;
  preds.reserve(eval.size());
  gold.reserve(eval.size());
  const auto& h = m.head(head);
  for (const auto& ex : eval) {
    preds.push_back(h.forward(ex.x));
    gold.push_back(ex.targets.at(head));
  }
  try {
    return metrics::pearson(preds, gold);
  } catch (const UndefinedStatistic&) {
    return 0.0;
  }
}

inline AttemptOutcome run_attempt(const PredictorModel& initial, std::span<const EncodedExample> train,
                                  std::span<const EncodedExample> eval, const TrainingConfig& cfg, int attempt,
                                  std::uint64_t seed, const TrainerHooks& hooks) {
  PredictorModel model = initial;
  if (!cfg.warm_start) model.initialize(seed);
  if (hooks.on_attempt_start) hooks.on_attempt_start(model, attempt);

  const auto n = static_cast<long>(train.size());
  const long bs = static_cast<long>(cfg.batch_size);
  const long steps_per_epoch = (n + bs - 1) / bs;
  const long total_steps = steps_per_epoch * cfg.max_epochs;
  const long warmup = warmup_steps(cfg.warmup_fraction, total_steps);
  const long interval = cfg.eval_interval(steps_per_epoch);

  AdamOptimizer adam(model, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
  TrainingState state;
  state.seed = seed;
  PredictorModel best = model;
  int since_best = 0;
  bool stopped_early = false;
  int stop_epoch = 0;
  long last_eval_step = -1;

  auto evaluate = [&](int epoch) {
    double r = evaluate_head(model, cfg.eval_head, eval);
    if (hooks.eval_override) r = hooks.eval_override(model, attempt, state.step, r);
    state.history.push_back({state.step, epoch, r});
    last_eval_step = state.step;
    if (r > state.best_correlation) {
      state.best_correlation = r;
      state.best_step = state.step;
      best = model;
      since_best = 0;
    } else {
      ++since_best;
    }
    return since_best >= cfg.patience;
  };

  std::vector<EncodedExample> batch;
  for (int epoch = 0; epoch < cfg.max_epochs && !stopped_early; ++epoch) {
    const auto order = shuffled_indices(train.size(), derive_seed(seed, static_cast<std::uint64_t>(epoch) + 1));
    for (long start = 0; start < n; start += bs) {
      batch.clear();
      for (long k = start; k < std::min(n, start + bs); ++k) batch.push_back(train[order[static_cast<std::size_t>(k)]]);
      const auto grads = batch_gradient(model, batch, cfg);
      adam.step(model, grads, cfg.learning_rate * warmup_multiplier(state.step, warmup));
      ++state.step;
      if (state.step % interval == 0 && evaluate(epoch)) {
        stopped_early = true;
        stop_epoch = epoch;
        break;
      }
    }
  }
  if (!stopped_early && last_eval_step != state.step) evaluate(cfg.max_epochs - 1);

  state.stop_reason = stopped_early ? StopReason::patience : StopReason::max_epochs;
  const bool first_epoch_stop = stopped_early && stop_epoch < cfg.min_epochs;
  const double final_r = state.history.back().correlation;
  state.attempts.push_back({seed, state.stop_reason, state.step, final_r, first_epoch_stop});
  return {std::move(best), std::move(state), first_epoch_stop || final_r < cfg.reset_corr_floor};
}

using AttemptData = std::pair<std::vector<EncodedExample>, std::vector<EncodedExample>>;

inline TrainingResult run_with_resets(const PredictorModel& model, const TrainingConfig& cfg, const TrainerHooks& hooks,
                                      const std::function<AttemptData(std::uint64_t)>& data_for_seed) {
  std::vector<AttemptSummary> history;
  for (int attempt = 0;; ++attempt) {
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(attempt);
    const auto [train, eval] = data_for_seed(seed);
    auto outcome = run_attempt(model, train, eval, cfg, attempt, seed, hooks);
    history.push_back(outcome.state.attempts.back());
    outcome.state.attempts = history;
    outcome.state.resets = attempt;
    if (!outcome.degenerate) return {std::move(outcome.best), std::move(outcome.state)};
    if (attempt >= cfg.max_seed_resets) {
      outcome.state.stop_reason = StopReason::seed_reset_exhausted;
      throw SeedResetsExhausted(std::move(outcome.state));
    }
  }
}

inline std::vector<std::string> checked_heads(const PredictorModel& m, const TrainingConfig& cfg) {
  cfg.validate();
  if (!m.has_head(cfg.eval_head)) throw PreconditionError("model has no head '" + cfg.eval_head + "' to evaluate");
  return m.head_names();
}

}  // namespace detail

// Trains on `train_set`, evaluating on `eval_set`. A seed reset re-seeds
// initialization and batch order; the evaluation split stays fixed.
inline TrainingResult train(const PredictorModel& model, const Dataset& train_set, const Dataset& eval_set,
                            const TrainingConfig& cfg, const TrainerHooks& hooks = {}) {
  const auto heads = detail::checked_heads(model, cfg);
  if (train_set.size() == 0 || eval_set.size() == 0) throw PreconditionError("train and eval sets must be non-empty");
  const auto train_x = detail::encode_dataset(model, train_set, cfg, heads);
  const auto eval_x = detail::encode_dataset(model, eval_set, cfg, heads);
  return detail::run_with_resets(model, cfg, hooks, [&](std::uint64_t) { return detail::AttemptData{train_x, eval_x}; });
}

// Trains on `pool`, holding out holdout_fraction of it for evaluation. The
// held-out sample is redrawn from each attempt's seed.
inline TrainingResult train_with_holdout(const PredictorModel& model, const Dataset& pool, const TrainingConfig& cfg,
                                         const TrainerHooks& hooks = {}) {
  const auto heads = detail::checked_heads(model, cfg);
  if (pool.size() < 2) throw PreconditionError("need at least two training examples");
  const auto encoded = detail::encode_dataset(model, pool, cfg, heads);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < pool.size(); ++i) index[pool.examples[i].id()] = i;
  return detail::run_with_resets(model, cfg, hooks, [&](std::uint64_t seed) {
    const auto [kept, held] = corpus::holdout_eval(pool, cfg.holdout_fraction, derive_seed(seed, 0x686f6c64));
    if (held.size() == 0) throw PreconditionError("held-out evaluation set is empty; need more training data");
    detail::AttemptData data;
    for (const auto& ex : kept.examples) data.first.push_back(encoded[index.at(ex.id())]);
    for (const auto& ex : held.examples) data.second.push_back(encoded[index.at(ex.id())]);
    return data;
  });
}

struct TwoPhaseResult {
  PredictorModel model;
  TrainingState intertraining;
  TrainingState finetuning;
};

// Phase 1 fits the augmented labels; phase 2 continues from those weights on
// the DA labels with a fresh optimizer and warm-up schedule.
inline TwoPhaseResult intertrain_then_finetune(const PredictorModel& model, const Dataset& aug_set, const Dataset& da_set,
                                               const TrainingConfig& cfg_aug, TrainingConfig cfg_da,
                                               const TrainerHooks& hooks_aug = {}, const TrainerHooks& hooks_da = {}) {
  if (aug_set.size() == 0) throw PreconditionError("intertraining set is empty");
  if (da_set.size() == 0) throw PreconditionError("fine-tuning set is empty");
  auto phase1 = train_with_holdout(model, aug_set, cfg_aug, hooks_aug);
  cfg_da.warm_start = true;
  auto phase2 = train_with_holdout(phase1.model, da_set, cfg_da, hooks_da);
  return {std::move(phase2.model), std::move(phase1.state), std::move(phase2.state)};
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

class Ensemble {
 public:
  explicit Ensemble(std::vector<PredictorModel> members, std::vector<std::uint64_t> seeds = {})
      : members_(std::move(members)), seeds_(std::move(seeds)) {
    if (members_.empty()) throw PreconditionError("ensemble needs at least one member");
    const auto names = members_.front().head_names();
    for (const auto& m : members_)
      if (m.head_names() != names) throw PreconditionError("ensemble members disagree on head names");
  }

  const std::vector<PredictorModel>& members() const { return members_; }
  const std::vector<std::uint64_t>& seeds() const { return seeds_; }

  double predict(std::string_view text, const std::string& head = "da") const {
    double sum = 0.0;
    for (const auto& m : members_) sum += m.predict(text, head);
    return sum / static_cast<double>(members_.size());
  }

 private:
  std::vector<PredictorModel> members_;
  std::vector<std::uint64_t> seeds_;
};

inline std::vector<double> ensemble_predict(const Ensemble& ens, std::span<const std::string> texts) {
  std::vector<double> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(ens.predict(t));
  return out;
}

}  // namespace prequel::model

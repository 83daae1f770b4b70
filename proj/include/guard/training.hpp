#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "guard/composed.hpp"
#include "guard/constraints.hpp"
#include "guard/errors.hpp"
#include "guard/gold.hpp"
#include "guard/model.hpp"
#include "guard/policy.hpp"
#include "guard/random.hpp"

namespace guard {

struct CurvePoint {
  std::uint64_t samples = 0;
  double kl = 0.0;  // exact KL(g || pi)
  double ar = 0.0;  // exact AR of pi
  double wall_ms = 0.0;
};

struct LearningCurve {
  std::string method;
  std::vector<CurvePoint> points;
};

/// BG = total proposal draws, bg = draws spent in the CAP phase.
struct TrainingBudget {
  std::uint64_t total = 0;
  std::uint64_t cap = 0;
  std::uint64_t samples_per_step = 10;
  double checkpoint_fraction = 0.05;
};

struct FitOptions {
  std::size_t max_steps = 20000;
  double learning_rate = 1.0;
  double tolerance = 1e-4;  // infinity norm of the mean-loss gradient
  double smoothing = 1e-6;  // add-epsilon pseudo count on observed contexts
};

struct FitReport {
  std::size_t steps = 0;
  double gradient_norm = 0.0;
  std::size_t contexts = 0;
};

struct DpgOptions {
  double learning_rate = 0.1;
  std::size_t order = 0;  // policy family; 0 = tabular (order = max_length)
  double divergence_factor = 10.0;
  double divergence_floor = 0.01;  // KL threshold never drops below factor * floor
  // Largest change of any single logit in one update; larger updates are
  // rescaled as a whole. 0 disables.
  double max_logit_step = 1.0;
  bool record_wall_clock = false;
};

struct TrainResult {
  ModelPtr model;
  LearningCurve curve;
  std::uint64_t draws = 0;
  std::uint64_t accepted = 0;   // SFT / CAP phase: filtered dataset size
  double z_estimate = 0.0;      // DPG moving-average partition estimate
  bool fell_back_to_cold = false;
  FitReport fit;
};

class TrainingDiverged : public Error {
 public:
  explicit TrainingDiverged(LearningCurve curve)
      : Error(ErrorKind::kTrainingDiverged, "training diverged: KL exceeded the abort threshold"),
        curve_(std::move(curve)) {}
  const LearningCurve& curve() const noexcept { return curve_; }

 private:
  LearningCurve curve_;
};

class DegenerateDataset : public Error {
 public:
  DegenerateDataset()
      : Error(ErrorKind::kDegenerateDataset, "no sampled sequence satisfied the constraint") {}
};

/// Constraint-aware proposal analog: the base model with `bias` added to the
/// logits of the keyword tokens until the keyword first occurs.
inline ModelPtr cap_model(ModelPtr base, const Sequence& keyword, double bias) {
  std::vector<double> b(base->vocab_size(), 0.0);
  for (Token t : keyword) {
    if (t == kEos || t >= b.size())
      throw Error(ErrorKind::kInvalidInput, "CAP keyword must consist of vocabulary tokens");
    b[t] = bias;
  }
  return apply_logit_bias(std::move(base), std::move(b), keyword);
}

/// Gradient descent on the mean add-epsilon-smoothed negative log-likelihood
///   -(1/N) sum_c sum_v (count(c,v) + eps) log pi(v | c)
/// over contexts observed in `samples`. Unobserved contexts keep their
/// current parameters. Stops at `tolerance` or `max_steps`.
inline FitReport fit_cross_entropy(SoftmaxPolicy& policy, std::span<const Sequence> samples,
                                   const FitOptions& opt = {}) {
  if (samples.empty()) throw Error(ErrorKind::kInvalidInput, "fit_cross_entropy needs samples");
  const std::size_t v = policy.vocab_size();
  GradientBuffer counts(policy.indexer().size(), v);
  for (const auto& y : samples) {
    require_valid_sequence(policy, y);
    for (std::size_t t = 0; t < y.size(); ++t)
      counts.row(policy.indexer().index(std::span<const Token>(y).first(t)))[y[t]] += 1.0;
  }
  const double n = static_cast<double>(samples.size());
  const auto& ctx = counts.touched();
  std::vector<double> visits(ctx.size());
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    auto row = counts.row(ctx[i]);
    for (double& c : row) c += opt.smoothing;
    for (double c : row) visits[i] += c;
  }
  FitReport rep;
  rep.contexts = ctx.size();
  std::vector<double> grad(v);
  for (;;) {
    // Ascent direction -(dLoss/dtheta) = (count - visits * pi) / N
    double norm = 0.0;
    for (std::size_t i = 0; i < ctx.size(); ++i) {
      auto p = policy.probs(ctx[i]);
      auto c = counts.peek(ctx[i]);
      for (std::size_t t = 0; t < v; ++t) norm = std::max(norm, std::abs(c[t] - visits[i] * p[t]));
    }
    rep.gradient_norm = norm / n;
    if (rep.gradient_norm <= opt.tolerance || rep.steps >= opt.max_steps) break;
    for (std::size_t i = 0; i < ctx.size(); ++i) {
      auto p = policy.probs(ctx[i]);
      auto c = counts.peek(ctx[i]);
      for (std::size_t t = 0; t < v; ++t) grad[t] = (c[t] - visits[i] * p[t]) / n;
      policy.add_to_row(ctx[i], grad, opt.learning_rate);
    }
    ++rep.steps;
  }
  return rep;
}

/// Convenience overload: fine-tunes a fresh policy initialized from `init`.
inline ModelPtr fit_cross_entropy(std::span<const Sequence> samples,
                                  const AutoregressiveModel& init, std::size_t order,
                                  const FitOptions& opt = {}, FitReport* report = nullptr) {
  SoftmaxPolicy policy(init, order == 0 ? init.max_length() : order);
  const FitReport r = fit_cross_entropy(policy, samples, opt);
  if (report) *report = r;
  return policy.snapshot();
}

/// Records exact KL(g || pi) and AR(pi) at checkpoints.
class CurveRecorder {
 public:
  CurveRecorder(const FilteredModel& fm, std::string method, bool wall_clock)
      : fm_(fm), wall_clock_(wall_clock), start_(std::chrono::steady_clock::now()) {
    curve_.method = std::move(method);
  }

  const CurvePoint& record(std::uint64_t samples, const AutoregressiveModel& pi) {
    CurvePoint p;
    p.samples = samples;
    p.kl = exact_kl(fm_.gold(), pi);
    p.ar = exact_acceptance_rate(pi, fm_.constraint());
    if (wall_clock_)
      p.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                            start_)
                      .count();
    if (!curve_.points.empty() && curve_.points.back().samples == samples)
      curve_.points.back() = p;
    else
      curve_.points.push_back(p);
    return curve_.points.back();
  }

  LearningCurve& curve() noexcept { return curve_; }

 private:
  const FilteredModel& fm_;
  bool wall_clock_;
  std::chrono::steady_clock::time_point start_;
  LearningCurve curve_;
};

/// Sample counts at which curves are evaluated: multiples of
/// fraction * total, up to total.
inline std::vector<std::uint64_t> checkpoint_schedule(std::uint64_t total, double fraction) {
  std::vector<std::uint64_t> out;
  if (total == 0) return out;
  const auto count = static_cast<std::uint64_t>(std::llround(1.0 / fraction));
  for (std::uint64_t k = 1; k <= count; ++k) {
    const auto s = static_cast<std::uint64_t>(
        std::llround(static_cast<double>(total) * static_cast<double>(k) / static_cast<double>(count)));
    if (out.empty() || s > out.back()) out.push_back(s);
  }
  return out;
}

namespace detail {

/// Core DPG loop on an existing policy. `offset` is the number of samples
/// already consumed (CAP phase) and is only used for curve x-coordinates.
inline void run_dpg(const FilteredModel& fm, SoftmaxPolicy& policy, std::uint64_t budget,
                    std::uint64_t offset, const TrainingBudget& tb, const DpgOptions& opt,
                    Rng& rng, CurveRecorder& rec, const std::vector<std::uint64_t>& schedule,
                    double kl_abort, TrainResult& out) {
  GradientBuffer grad(policy.indexer().size(), policy.vocab_size());
  const std::uint64_t per_step = std::max<std::uint64_t>(1, tb.samples_per_step);
  auto next_cp = std::upper_bound(schedule.begin(), schedule.end(), offset);
  double z_hat = 0.0;
  std::uint64_t n = 0;
  while (n < budget) {
    const std::uint64_t batch = std::min(per_step, budget - n);
    for (std::uint64_t i = 0; i < batch; ++i) {
      const Sequence y = sample_sequence(policy, rng);
      ++n;
      const double lp_target = fm.log_potential(y);
      const double lp_pi = policy.logprob(y);
      const double ratio = lp_target == kNegInf ? 0.0 : std::exp(lp_target - lp_pi);
      z_hat = (static_cast<double>(n - 1) * z_hat + ratio) / static_cast<double>(n);
      if (ratio > 0.0 && z_hat > 0.0)
        policy.accumulate_grad_logprob(y, ratio / z_hat, grad);
    }
    double scale = opt.learning_rate / static_cast<double>(batch);
    if (opt.max_logit_step > 0.0) {
      double peak = 0.0;
      for (std::size_t c : grad.touched())
        for (double g : grad.peek(c)) peak = std::max(peak, std::abs(g));
      if (peak * scale > opt.max_logit_step) scale = opt.max_logit_step / peak;
    }
    policy.apply(grad, scale);
    grad.clear();
    while (next_cp != schedule.end() && offset + n >= *next_cp) {
      const auto& p = rec.record(*next_cp, policy);
      ++next_cp;
      if (p.kl > kl_abort) throw TrainingDiverged(rec.curve());
    }
  }
  out.draws += n;
  out.z_estimate = z_hat;
}

inline double abort_threshold(const DpgOptions& opt, double initial_kl) {
  return opt.divergence_factor * std::max(initial_kl, opt.divergence_floor);
}

}  // namespace detail

/// Distributional policy gradient from `init` with `budget` proposal draws.
inline TrainResult dpg_train(const FilteredModel& fm, const AutoregressiveModel& init,
                             const TrainingBudget& tb, const DpgOptions& opt, Rng& rng,
                             std::string method = "dpg") {
  if (tb.total == 0) throw Error(ErrorKind::kInvalidInput, "DPG budget must be positive");
  SoftmaxPolicy policy(init, opt.order == 0 ? init.max_length() : opt.order);
  CurveRecorder rec(fm, std::move(method), opt.record_wall_clock);
  const double kl0 = rec.record(0, policy).kl;
  TrainResult out;
  const auto schedule = checkpoint_schedule(tb.total, tb.checkpoint_fraction);
  detail::run_dpg(fm, policy, tb.total, 0, tb, opt, rng, rec, schedule,
                  detail::abort_threshold(opt, kl0), out);
  out.model = policy.snapshot();
  out.curve = std::move(rec.curve());
  return out;
}

/// Warm-start DPG: bg draws from the CAP proposal, filtered and fitted onto
/// pi (initialized at a), then DPG with the remaining BG - bg draws. An
/// empty filtered dataset degrades to cold-start DPG on the remaining budget.
inline TrainResult warm_start_dpg(const FilteredModel& fm, const AutoregressiveModel& cap,
                                  const TrainingBudget& tb, const DpgOptions& opt,
                                  const FitOptions& fit, Rng& rng,
                                  std::string method = "warm-dpg") {
  if (tb.cap > tb.total) throw Error(ErrorKind::kInvalidInput, "CAP budget exceeds total budget");
  const AutoregressiveModel& base = fm.base();
  SoftmaxPolicy policy(base, opt.order == 0 ? base.max_length() : opt.order);
  CurveRecorder rec(fm, std::move(method), opt.record_wall_clock);
  const double kl0 = rec.record(0, policy).kl;
  const auto schedule = checkpoint_schedule(tb.total, tb.checkpoint_fraction);
  TrainResult out;

  std::vector<Sequence> dataset;
  for (std::uint64_t i = 0; i < tb.cap; ++i) {
    Sequence y = sample_sequence(cap, rng);
    if (fm.constraint().evaluate(y)) dataset.push_back(std::move(y));
  }
  out.draws = tb.cap;
  out.accepted = dataset.size();
  if (tb.cap > 0) {
    for (std::uint64_t s : schedule)
      if (s < tb.cap) rec.record(s, policy);
    if (dataset.empty()) {
      out.fell_back_to_cold = true;
    } else {
      out.fit = fit_cross_entropy(policy, dataset, fit);
    }
    rec.record(tb.cap, policy);
  }
  if (tb.total > tb.cap)
    detail::run_dpg(fm, policy, tb.total - tb.cap, tb.cap, tb, opt, rng, rec, schedule,
                    detail::abort_threshold(opt, kl0), out);
  out.model = policy.snapshot();
  out.curve = std::move(rec.curve());
  return out;
}

/// Supervised fine-tuning of a on filtered samples from a. The curve refits
/// from a on the data seen so far at every checkpoint.
inline TrainResult sft_train(const FilteredModel& fm, const TrainingBudget& tb,
                             std::size_t order, const FitOptions& fit, Rng& rng,
                             bool wall_clock = false, std::string method = "sft") {
  if (tb.total == 0) throw Error(ErrorKind::kInvalidInput, "SFT budget must be positive");
  const AutoregressiveModel& base = fm.base();
  const std::size_t family = order == 0 ? base.max_length() : order;
  CurveRecorder rec(fm, std::move(method), wall_clock);
  TrainResult out;
  {
    SoftmaxPolicy init(base, family);
    rec.record(0, init);
  }
  const auto schedule = checkpoint_schedule(tb.total, tb.checkpoint_fraction);
  std::vector<Sequence> dataset;
  std::uint64_t drawn = 0;
  std::unique_ptr<SoftmaxPolicy> last;
  for (std::uint64_t cp : schedule) {
    for (; drawn < cp; ++drawn) {
      Sequence y = sample_sequence(base, rng);
      if (fm.constraint().evaluate(y)) dataset.push_back(std::move(y));
    }
    auto policy = std::make_unique<SoftmaxPolicy>(base, family);
    if (!dataset.empty()) out.fit = fit_cross_entropy(*policy, dataset, fit);
    rec.record(cp, *policy);
    last = std::move(policy);
  }
  out.draws = drawn;
  out.accepted = dataset.size();
  if (dataset.empty()) throw DegenerateDataset();
  out.model = last->snapshot();
  out.curve = std::move(rec.curve());
  return out;
}

}  // namespace guard

#include <gtest/gtest.h>

#include <map>

#include "test_util.hpp"

using namespace guard;
using namespace guard::testing;

namespace {

// An instance with at most 200 satisfying sequences and a distinct proposal.
struct Small {
  std::shared_ptr<const FilteredModel> fm;
  ModelPtr proposal;
};

Small small_instance(std::uint64_t seed) {
  Rng rng(seed);
  auto a = random_tabular(letters(3), 4, rng, 0.0, 0.6);
  auto ap = random_tabular(letters(3), 4, rng, 0.0, 0.6);
  auto fm = std::make_shared<const FilteredModel>(a, Constraint::contains({2}));
  return {fm, ap};
}

}  // namespace

TEST(GuardSample, AlwaysSatisfiedTakesOneDraw) {
  Rng rng(1);
  const auto r = guard_sample(*two_position_model(), Constraint::always(), rng);
  EXPECT_EQ(r.report.draws, 1u);
  EXPECT_EQ(r.report.accepts, 1u);
  EXPECT_DOUBLE_EQ(r.report.ar_estimate, 1.0);
  EXPECT_EQ(r.report.seed, 1u);
}

TEST(GuardSample, OutputLawIsGoldForBaseProposal) {
  const auto s = small_instance(2);
  const auto& g = s.fm->gold();
  ASSERT_LE(g.size(), 200u);
  Rng rng(3);
  std::map<std::uint64_t, std::size_t> counts;
  const auto codec = g.codec();
  for (int i = 0; i < 100000; ++i) {
    const auto r = guard_sample(s.fm->base(), s.fm->constraint(), rng);
    ASSERT_TRUE(s.fm->constraint()(r.sequence));
    ++counts[codec.encode(r.sequence)];
  }
  EXPECT_GT(chi_square(counts, g).p_value, 1e-3);
}

TEST(GuardSample, OutputLawIsConditionedProposal) {
  const auto s = small_instance(4);
  const auto gprime = condition_on(enumerate_support(*s.proposal), s.fm->constraint());
  Rng rng(5);
  std::map<std::uint64_t, std::size_t> counts;
  for (int i = 0; i < 50000; ++i)
    ++counts[gprime.codec().encode(guard_sample(*s.proposal, s.fm->constraint(), rng).sequence)];
  EXPECT_GT(chi_square(counts, gprime).p_value, 1e-3);
}

TEST(GuardSample, LongRunAcceptanceRate) {
  auto m = two_position_model();
  const auto b = Constraint::contains({2});
  Rng rng(6);
  std::uint64_t draws = 0;
  const int accepts = 20000;
  for (int i = 0; i < accepts; ++i) draws += guard_sample(*m, b, rng).report.draws;
  const double ar = accepts / static_cast<double>(draws);
  EXPECT_NEAR(ar, 0.51, 3.0 * std::sqrt(0.51 * 0.49 / static_cast<double>(draws)));
}

TEST(GuardSample, BudgetExhaustionKeepsReport) {
  auto m = make_iid_model(letters(2), 3, {0.5, 0.5, 0.0});
  Rng rng(7);
  try {
    guard_sample(*m, Constraint::contains({2}), rng, 25);
    FAIL();
  } catch (const DrawBudgetExhausted& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDrawBudgetExhausted);
    EXPECT_EQ(e.report().draws, 25u);
    EXPECT_EQ(e.report().accepts, 0u);
    EXPECT_EQ(e.report().ar_estimate, 0.0);
  }
}

TEST(EstimateAr, Extremes) {
  Rng rng(8);
  const auto one = estimate_ar(*two_position_model(), Constraint::always(), 1000, rng);
  EXPECT_EQ(one.ar, 1.0);
  EXPECT_EQ(one.std_error, 0.0);
  EXPECT_EQ(estimate_ar(*two_position_model(), Constraint::never(), 1000, rng).ar, 0.0);
  EXPECT_THROW(estimate_ar(*two_position_model(), Constraint::always(), 0, rng), Error);
}

TEST(EstimateAr, WithinThreeSigmaOfPartition) {
  const auto s = small_instance(9);
  Rng rng(10);
  const auto est = estimate_ar(s.fm->base(), s.fm->constraint(), 100000, rng);
  const double z = s.fm->partition();
  EXPECT_NEAR(est.ar, z, 3.0 * std::sqrt(z * (1 - z) / 1e5));
}

TEST(Qrs, EndpointsOfBeta) {
  const auto s = small_instance(11);
  const auto prop = enumerate_support(*s.proposal);
  const double wmax = max_importance_weight(prop, *s.fm);
  const auto big = qrs_exact_dist(prop, *s.fm, wmax);
  EXPECT_LE(max_abs_difference(big.table, s.fm->gold()), 1e-12);
  const auto tiny = qrs_exact_dist(prop, *s.fm, 1e-12 * wmax);
  const auto gprime = condition_on(prop, s.fm->constraint());
  EXPECT_LE(max_abs_difference(tiny.table, gprime), 1e-12);
  EXPECT_NEAR(tiny.acceptance_rate, satisfying_mass(s.fm->constraint(), prop), 1e-12);
}

TEST(Qrs, KlNonincreasingInBeta) {
  const auto s = small_instance(12);
  const auto prop = enumerate_support(*s.proposal);
  const double zp = satisfying_mass(s.fm->constraint(), prop);
  double prev = kInf;
  for (double m = 1; m <= 4096; m *= 2) {
    const double kl = exact_kl(s.fm->gold(), qrs_exact_dist(prop, *s.fm, m * zp).table);
    EXPECT_LE(kl, prev + 1e-15);
    prev = kl;
  }
}

TEST(Qrs, SamplesMatchExactLaw) {
  const auto s = small_instance(13);
  const auto prop = enumerate_support(*s.proposal);
  const double beta = 0.5 * max_importance_weight(prop, *s.fm);
  const auto exact = qrs_exact_dist(prop, *s.fm, beta);
  Rng rng(14);
  std::map<std::uint64_t, std::size_t> counts;
  std::uint64_t draws = 0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const auto r = qrs_sample(*s.proposal, *s.fm, beta, rng);
    ASSERT_TRUE(s.fm->constraint()(r.sequence));
    draws += r.report.draws;
    ++counts[prop.codec().encode(r.sequence)];
  }
  EXPECT_GT(chi_square(counts, exact.table).p_value, 1e-3);
  const double ar = n / static_cast<double>(draws);
  EXPECT_NEAR(ar, exact.acceptance_rate,
              3.0 * std::sqrt(exact.acceptance_rate * (1 - exact.acceptance_rate) / draws));
  EXPECT_THROW(qrs_sample(*s.proposal, *s.fm, 0.0, rng), Error);
}

TEST(Qrs, NeverAcceptsViolations) {
  const auto s = small_instance(15);
  Rng rng(16);
  for (int i = 0; i < 2000; ++i)
    EXPECT_TRUE(s.fm->constraint()(qrs_sample(*s.proposal, *s.fm, 1e-9, rng).sequence));
  EXPECT_EQ(log_importance_weight(*s.proposal, *s.fm, Sequence{1, 1, 1, 1}), kNegInf);
}

TEST(Imh, GoldProposalAlwaysMoves) {
  const auto s = small_instance(17);
  auto g = gold_as_model(*s.fm);
  Rng rng(18);
  auto state = imh_init(*g, *s.fm, rng);
  for (int i = 0; i < 200; ++i) {
    const Sequence before = state.current;
    const double w = state.log_weight;
    state = imh_step(state, *g, *s.fm, rng);
    EXPECT_NEAR(state.log_weight, w, 1e-9);
    EXPECT_TRUE(s.fm->constraint()(state.current));
  }
  EXPECT_EQ(state.steps, 200u);
}

TEST(Imh, TwoStateChainMatchesGold) {
  // Satisfying set {A B, B A}: contains B with exactly one B.
  Rng init(190);
  auto base = random_tabular(letters(2), 2, init);
  const FilteredModel fm(base, Constraint::conjunction({Constraint::contains({2}),
                                                       Constraint::contains({1})}));
  auto proposal = make_iid_model(letters(2), 2, {0.0, 0.2, 0.8});
  ASSERT_EQ(fm.gold().size(), 2u);
  Rng rng(19);
  auto state = imh_init(*proposal, fm, rng);
  const Sequence ab{1, 2};
  const int batches = 100, per = 1000;
  std::vector<double> means;
  for (int b = 0; b < batches; ++b) {
    int hits = 0;
    for (int i = 0; i < per; ++i) {
      state = imh_step(state, *proposal, fm, rng);
      ASSERT_TRUE(fm.constraint()(state.current));
      hits += state.current == ab;
    }
    means.push_back(hits / static_cast<double>(per));
  }
  double mean = 0, var = 0;
  for (double m : means) mean += m / batches;
  for (double m : means) var += (m - mean) * (m - mean) / (batches - 1);
  EXPECT_NEAR(mean, fm.gold().prob(ab), 3.0 * std::sqrt(var / batches) + 1e-3);
}

TEST(Imh, GuardedStepCountsDraws) {
  const auto s = small_instance(20);
  Rng rng(21);
  auto state = imh_init(*s.proposal, *s.fm, rng);
  SamplerReport rep;
  for (int i = 0; i < 100; ++i) {
    state = imh_guarded_step(state, *s.proposal, *s.fm, rng, kDefaultMaxDraws, &rep);
    EXPECT_TRUE(s.fm->constraint()(state.current));
  }
  EXPECT_EQ(rep.accepts, 100u);
  EXPECT_GE(rep.draws, 100u);
}

TEST(ImhExact, PropagatorMatchesDenseMatrix) {
  const auto s = small_instance(22);
  const auto prop = enumerate_support(*s.proposal);
  const auto st = imh_states(prop, *s.fm);
  const auto t = imh_transition_matrix(st);
  const std::size_t n = st.size();
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      EXPECT_GE(t[i * n + j], -1e-15);
      row += t[i * n + j];
    }
    EXPECT_NEAR(row, 1.0, 1e-12);
  }
  Rng rng(23);
  std::vector<double> p(n);
  double tot = 0;
  for (double& x : p) tot += (x = rng.uniform());
  for (double& x : p) x /= tot;
  const ImhPropagator fast(st);
  const auto q = fast.step(p);
  for (std::size_t j = 0; j < n; ++j) {
    double dense = 0;
    for (std::size_t i = 0; i < n; ++i) dense += p[i] * t[i * n + j];
    EXPECT_NEAR(q[j], dense, 1e-14);
  }
}

TEST(ImhExact, GoldIsStationaryAndChainConverges) {
  const auto s = small_instance(24);
  const auto prop = enumerate_support(*s.proposal);
  const auto& g = s.fm->gold();
  EXPECT_LE(max_abs_difference(imh_exact_marginal(prop, *s.fm, 1, g), g), 1e-12);
  const auto init = condition_on(prop, s.fm->constraint());
  EXPECT_LE(max_abs_difference(imh_exact_marginal(prop, *s.fm, 0, init), init), 0.0);
  // Independence sampler bound: TV_n <= (1 - 1/w)^n, w = max g/g'.
  double w = 0;
  for (const auto& e : g.entries()) w = std::max(w, e.prob / init.prob_of_key(e.key));
  for (std::uint64_t n : {10u, 100u, 1000u})
    EXPECT_LE(total_variation(imh_exact_marginal(prop, *s.fm, n, init), g),
              std::pow(1 - 1 / w, static_cast<double>(n)) + 1e-12);
  double prev = kInf;
  for (std::uint64_t n = 1; n <= 1024; n *= 2) {
    const double kl = exact_kl(g, imh_exact_marginal(prop, *s.fm, n, init));
    EXPECT_LE(kl, prev + 1e-15);
    prev = kl;
  }
}

TEST(Heuristics, AvoidanceExactOnIndependentModel) {
  auto base = make_iid_model(letters(3), 4, {0.0, 0.4, 0.3, 0.3});
  const FilteredModel fm(base, Constraint::avoids({3}));
  auto h = heuristic_avoidance_model(base, 3);
  EXPECT_LE(exact_kl(fm.gold(), *h), 1e-12);
}

TEST(Heuristics, AvoidanceBiasedOnDependentModel) {
  Rng rng(25);
  auto base = random_tabular(letters(3), 5, rng);
  const FilteredModel fm(base, Constraint::avoids({3}));
  EXPECT_GT(exact_kl(fm.gold(), *heuristic_avoidance_model(base, 3)), 1e-6);
}

TEST(Heuristics, AvoidanceOfAbsentTokenIsIdentity) {
  auto base = make_iid_model(letters(3), 3, {0.2, 0.5, 0.3, 0.0});
  const FilteredModel fm(base, Constraint::avoids({3}));
  EXPECT_EQ(max_abs_difference(fm.gold(), enumerate_support(*heuristic_avoidance_model(base, 3))),
            0.0);
}

TEST(Heuristics, EnforceAtEndRule) {
  EXPECT_EQ(enforce_at_end({1, 3, 0}, 3, 5), (Sequence{1, 3, 0}));
  EXPECT_EQ(enforce_at_end({1, 2, 0}, 3, 5), (Sequence{1, 2, 3, 0}));
  EXPECT_EQ(enforce_at_end({1, 2, 1, 0}, 3, 4), (Sequence{1, 2, 1, 3}));
  EXPECT_EQ(enforce_at_end({1, 2, 1, 2}, 3, 4), (Sequence{1, 2, 1, 3}));
  EXPECT_EQ(enforce_at_end({0}, 3, 4), (Sequence{3, 0}));
  EXPECT_THROW(enforce_at_end({0}, 0, 4), Error);
}

TEST(Heuristics, EnforceAtEndSamplesAndTable) {
  Rng rng(26);
  auto base = make_iid_model(letters(3), 5, {0.3, 0.4, 0.3, 0.0});  // never emits token 3
  const auto table = enforce_at_end_table(*base, 3);
  EXPECT_NEAR(table.total(), 1.0, 1e-12);
  const auto h = positional_histogram(table, Sequence{3}, 10);
  EXPECT_NEAR(h.fraction(9), 1.0, 1e-12);
  for (int i = 0; i < 1000; ++i) {
    const Sequence y = heuristic_enforce_at_end(*base, 3, rng);
    ASSERT_TRUE(Constraint::contains({3})(y));
    ASSERT_TRUE(is_valid_sequence(y, 4, 5));
    EXPECT_EQ(content(y).back(), 3);
  }
}

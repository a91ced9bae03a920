#include <doctest.h>

#include <cmath>

#include "projiql/envs.hpp"
#include "projiql/errors.hpp"
#include "projiql/theory.hpp"

using namespace projiql;
using namespace projiql::theory;

namespace {

std::vector<double> vec(std::initializer_list<double> v) { return v; }

TabularMDP one_state_mdp() {
  TabularMDP mdp(1, 1, 0.9);
  mdp.p(0, 0, 0) = 1.0;
  mdp.r(0, 0) = 0.7;
  return mdp;
}

}  // namespace

TEST_CASE("lemma 1 holds at near-equal levels and on a point mass") {
  const TabularMDP mdp = random_mdp(5, 3, 0.9, 11);
  const CategoricalPolicy pi = random_policy(5, 3, 12);
  const BoundReport near = check_lemma1(mdp, pi, 0.7 - 1e-12, 0.7);
  CHECK(near.pass);
  CHECK(std::abs(near.slack) < 1e-8);

  const BoundReport point = check_lemma1(one_state_mdp(), CategoricalPolicy::uniform(1, 1), 0.2, 0.9);
  CHECK(point.pass);
  CHECK(point.lhs == doctest::Approx(point.rhs).epsilon(1e-12));
  CHECK(point.lhs == doctest::Approx(7.0).epsilon(1e-9));

  CHECK_THROWS_AS(check_lemma1(mdp, pi, 0.7, 0.7), ContractError);
}

TEST_CASE("lemma 1 sweep over random MDPs") {
  const BoundReport r = sweep_lemma1(200, 2024);
  CHECK(r.trials == 200);
  CHECK(r.failures == 0);
  CHECK(r.pass);
}

TEST_CASE("lemma 3 variance ordering and identity") {
  const auto s = WeightedSamples::uniform({0.0, 1.0, 5.0});
  const BoundReport r = check_lemma3(s, 0.6, 0.9);
  CHECK(r.pass);
  CHECK(r.lhs <= r.rhs);
  CHECK(r.detail.at("identity_residual") < 1e-9);
  CHECK_THROWS_AS(check_lemma3(s, 0.4, 0.9), ContractError);
  CHECK_THROWS_AS(check_lemma3(s, 0.9, 0.6), ContractError);
  CHECK(sweep_lemma3(200, 7).pass);
}

TEST_CASE("theorem 1 forms coincide when the policies do") {
  const CategoricalPolicy beta = random_policy(4, 3, 5);
  const TabularMDP mdp = random_mdp(4, 3, 0.9, 6);
  const auto exact = expectile_value_iteration(mdp, beta, TauSchedule(0.7));
  const BoundReport r = check_theorem1_equivalence(beta, beta, exact.q, exact.v);
  CHECK(r.pass);
  CHECK(r.lhs < 1e-12);
  CHECK(r.detail.at("max_kl") == 0.0);
}

TEST_CASE("theorem 1 small perturbation stays inside the budget") {
  const CategoricalPolicy beta = random_policy(6, 3, 21);
  const CategoricalPolicy phi = perturb_policy(beta, 1e-4, 22);
  CHECK(max_state_kl(phi, beta) == doctest::Approx(1e-4).epsilon(1e-6));
  const TabularMDP mdp = random_mdp(6, 3, 0.9, 23);
  const auto exact = expectile_value_iteration(mdp, beta, TauSchedule(0.7));
  const BoundReport r = check_theorem1_equivalence(beta, phi, exact.q, exact.v);
  CHECK(r.pass);
  CHECK(r.lhs > 0.0);
  CHECK(r.lhs <= r.rhs);
}

TEST_CASE("theorem 1 positive branch is exact for any policy") {
  const CategoricalPolicy beta = random_policy(3, 4, 31);
  const CategoricalPolicy phi = random_policy(3, 4, 32);
  std::vector<double> q(12);
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = 1.0 + 0.25 * static_cast<double>(i % 5);
  const std::vector<double> v = {0.5, 0.9, 1.0};  // below every Q
  const ValueLossForms f = value_loss_forms(beta, phi, q, v);
  CHECK(f.dataset_form == doctest::Approx(f.policy_form).epsilon(1e-13));
  CHECK(f.positive_dataset == f.dataset_form);
  CHECK(check_theorem1_equivalence(beta, phi, q, v).pass);
}

TEST_CASE("kl divergence edge cases") {
  CHECK(kl_divergence(vec({0.5, 0.5}), vec({0.5, 0.5})) == 0.0);
  CHECK(kl_divergence(vec({1.0, 0.0}), vec({0.5, 0.5})) == doctest::Approx(std::log(2.0)));
  CHECK(std::isinf(kl_divergence(vec({0.5, 0.5}), vec({1.0, 0.0}))));
  const CategoricalPolicy beta = random_policy(3, 3, 1);
  CHECK(perturb_policy(beta, 0.0, 4).table() == beta.table());
}

TEST_CASE("lemma 2 bound") {
  const TabularMDP mdp = random_mdp(6, 3, 0.9, 41);
  const CategoricalPolicy beta = random_policy(6, 3, 42);

  const BoundReport zero = check_lemma2(mdp, beta, 0.0, 5, 1);
  CHECK(zero.pass);
  CHECK(zero.slack >= 0.0);
  CHECK(zero.lhs == doctest::Approx(zero.rhs).epsilon(1e-12));

  const BoundReport r = check_lemma2(mdp, beta, 0.01, 100, 43);
  CHECK(r.trials == 100);
  CHECK(r.pass);

  // An optimal behaviour policy cannot be beaten.
  const auto vi = value_iteration(mdp);
  std::vector<double> soft(18);
  for (std::size_t s = 0; s < 6; ++s)
    for (std::size_t a = 0; a < 3; ++a) soft[s * 3 + a] = a == vi.greedy[s] ? 0.98 : 0.01;
  const CategoricalPolicy near_opt(6, 3, soft);
  CHECK(check_lemma2(mdp, near_opt, 0.05, 20, 44).pass);

  TabularMDP negative = mdp;
  negative.r(0, 0) = -1.0;
  CHECK_THROWS_AS(check_lemma2(negative, beta, 0.01, 1, 1), ContractError);
}

TEST_CASE("tabular proj-iql iterates") {
  SUBCASE("infinite lambda is the identity") {
    const TabularMDP mdp = random_mdp(4, 3, 0.8, 51);
    const CategoricalPolicy pi = random_policy(4, 3, 52);
    const auto traj = run_tabular_projiql(mdp, 3, std::numeric_limits<double>::infinity(), pi, tau_ramp(0.5, 0.8, 3));
    REQUIRE(traj.size() == 4);
    for (const auto& it : traj) CHECK(it.policy.table() == pi.table());
    // Large but finite lambda moves the policy only slightly.
    const auto near = run_tabular_projiql(mdp, 1, 1e9, pi, tau_ramp(0.5, 0.5, 1));
    for (std::size_t i = 0; i < pi.table().size(); ++i)
      CHECK(near[1].policy.table()[i] == doctest::Approx(pi.table()[i]).epsilon(1e-8));
  }
  SUBCASE("bandit: the better arm gains mass every round") {
    const TabularMDP mdp = bandit(vec({0.0, 1.0}));
    const auto traj =
        run_tabular_projiql(mdp, 6, 1.0, CategoricalPolicy::uniform(1, 2), [](std::size_t) { return TauSchedule(0.7); });
    for (std::size_t k = 0; k + 1 < traj.size(); ++k)
      CHECK(traj[k + 1].policy.prob(0, 1) > traj[k].policy.prob(0, 1));
    // First step by hand: V = expectile_0.7 of {0, 1} uniform = 0.7, tilt e^{-0.7} vs e^{0.3}.
    const double p = std::exp(0.3) / (std::exp(0.3) + std::exp(-0.7));
    CHECK(traj[1].policy.prob(0, 1) == doctest::Approx(p).epsilon(1e-9));
  }
  SUBCASE("tau 0.5 matches policy evaluation") {
    const TabularMDP mdp = random_mdp(5, 2, 0.9, 61);
    const auto traj = run_tabular_projiql(mdp, 4, 0.5, random_policy(5, 2, 62), tau_ramp(0.5, 0.5, 4));
    for (const auto& it : traj) {
      const auto v = policy_evaluation(mdp, it.policy);
      for (std::size_t s = 0; s < 5; ++s) CHECK(it.v[s] == doctest::Approx(v[s]).epsilon(1e-8));
    }
  }
  SUBCASE("bad inputs") {
    const TabularMDP mdp = bandit(vec({0.0, 1.0}));
    const auto pi = CategoricalPolicy::uniform(1, 2);
    CHECK_THROWS_AS(run_tabular_projiql(mdp, 1, 0.0, pi, tau_ramp(0.5, 0.5, 1)), ContractError);
    CHECK_THROWS_AS(run_tabular_projiql(mdp, 1, 1.0, pi, tau_ramp(0.4, 0.5, 1)), ContractError);
  }
}

TEST_CASE("theorem 2 monotone Q") {
  SUBCASE("fixed point") {
    const TabularMDP mdp = random_mdp(3, 2, 0.9, 71);
    const auto det = CategoricalPolicy::deterministic(2, {0, 1, 0});
    const auto traj = run_tabular_projiql(mdp, 3, 1.0, det, tau_ramp(0.6, 0.6, 3));
    const BoundReport r = check_theorem2(traj);
    CHECK(r.pass);
    CHECK(std::abs(r.lhs) < 1e-9);
  }
  SUBCASE("5x5 gridmaze with a tau ramp") {
    envs::GridMazeOptions o;
    o.gamma = 0.9;
    o.slip = 0.1;
    const auto maze = envs::build_gridmaze("S.#..\n.....\n#.###\n..#..\n....G\n", o);
    const auto traj =
        run_tabular_projiql(maze.mdp, 20, 0.5, CategoricalPolicy::uniform(maze.mdp.n_states, 4), tau_ramp(0.5, 0.9, 20));
    const BoundReport r = check_theorem2(traj);
    CHECK(r.trials == 20);
    CHECK(r.pass);
  }
  SUBCASE("single step at a constant level") {
    const TabularMDP mdp = random_mdp(6, 3, 0.9, 81);
    const auto traj = run_tabular_projiql(mdp, 1, 0.3, random_policy(6, 3, 82), tau_ramp(0.8, 0.8, 1));
    CHECK(check_theorem2(traj).pass);
  }
  SUBCASE("decreasing tau is a contract violation") {
    const TabularMDP mdp = random_mdp(3, 2, 0.9, 91);
    const auto traj = run_tabular_projiql(mdp, 2, 1.0, random_policy(3, 2, 92), tau_ramp(0.9, 0.6, 2));
    CHECK_THROWS_AS(check_theorem2(traj), ContractError);
  }
}

TEST_CASE("theorem 3 half inequalities") {
  SUBCASE("mean level, unchanged policy") {
    const TabularMDP mdp = random_mdp(4, 3, 0.9, 101);
    const CategoricalPolicy pi = random_policy(4, 3, 102);
    const BoundReport r = check_theorem3(mdp, {pi, pi, TauSchedule(0.5), TauSchedule(0.5)});
    CHECK(r.pass);
    CHECK(std::abs(r.detail.at("max_lhs")) < 1e-9);
    CHECK(std::abs(r.detail.at("min_rhs")) < 1e-9);
  }
  SUBCASE("bandit at tau 0.9") {
    const TabularMDP mdp = bandit(vec({0.0, 0.4, 1.0}));
    const auto pi = CategoricalPolicy::uniform(1, 3);
    const auto values = expectile_value_iteration(mdp, pi, TauSchedule(0.9));
    const auto next = tilt_policy(pi, values.q, values.v, 0.05);
    const BoundReport r = check_theorem3(mdp, {pi, next, TauSchedule(0.9), TauSchedule(0.9)});
    CHECK(r.pass);
    CHECK(r.detail.at("max_lhs") < 0.0);
    CHECK(r.detail.at("min_rhs") > 0.0);
  }
  SUBCASE("random sweep") {
    const BoundReport r = sweep_theorem3(100, 303);
    CHECK(r.trials == 100);
    CHECK(r.pass);
  }
}

TEST_CASE("criterion probability") {
  const auto q = vec({0.0, 1.0, 2.0});
  const auto u = vec({1.0 / 3, 1.0 / 3, 1.0 / 3});
  CHECK(check_criterion_probability(u, q, -1.0) == doctest::Approx(1.0));
  CHECK(check_criterion_probability(u, q, 3.0) == 0.0);
  CHECK(check_criterion_probability(u, q, 1.0) == doctest::Approx(2.0 / 3));
  const auto pi = CategoricalPolicy::uniform(2, 3);
  const auto table = vec({5.0, 5.0, 5.0, 0.0, 1.0, 2.0});
  CHECK(check_criterion_probability(pi, table, 1.0, 1) == doctest::Approx(2.0 / 3));
}

TEST_CASE("theorem 4 and the Cantelli chain") {
  SUBCASE("identical iterates") {
    const TabularMDP mdp = random_mdp(4, 3, 0.9, 111);
    const CategoricalPolicy pi = random_policy(4, 3, 112);
    const BoundReport r = check_theorem4(mdp, {pi, pi, TauSchedule(0.7), TauSchedule(0.7)}, 0, 1);
    CHECK(r.pass);
    CHECK(r.detail.at("max_probability_gap") == 0.0);
  }
  SUBCASE("point mass") {
    const TabularMDP mdp = bandit(vec({0.5, 0.5}));
    const auto pi = CategoricalPolicy::uniform(1, 2);
    const BoundReport r = check_theorem4(mdp, {pi, pi, TauSchedule(0.6), TauSchedule(0.9)}, 0, 1);
    CHECK(r.pass);
    CHECK(r.detail.at("max_probability_gap") == 0.0);
    CHECK(check_criterion_probability(pi, mdp.reward, 0.5, 0) == 1.0);
  }
  SUBCASE("3-action bandit quotients shrink as tau rises") {
    const auto rewards = vec({0.0, 1.0, 3.0});
    const auto samples = WeightedSamples::uniform(rewards);
    const double var = weighted_variance(samples);
    const double q6 = var / expectile_variance(samples, ExpectileParam(0.6));
    const double q9 = var / expectile_variance(samples, ExpectileParam(0.9));
    CHECK(q9 <= q6);
    // Each quotient bounds the superior-action probability at its own level.
    for (double tau : {0.6, 0.9}) {
      const double e = expectile(samples, ExpectileParam(tau));
      CHECK(check_criterion_probability(vec({1.0 / 3, 1.0 / 3, 1.0 / 3}), rewards, e) <= var / expectile_variance(samples, ExpectileParam(tau)));
    }
    const TabularMDP mdp = bandit(rewards);
    const auto pi = CategoricalPolicy::uniform(1, 3);
    CHECK(check_theorem4(mdp, {pi, pi, TauSchedule(0.6), TauSchedule(0.9)}, 0, 1).pass);
  }
  SUBCASE("monte carlo variant") {
    const TabularMDP mdp = random_mdp(4, 3, 0.9, 121);
    const CategoricalPolicy pi = random_policy(4, 3, 122);
    const auto values = expectile_value_iteration(mdp, pi, TauSchedule(0.6));
    const auto next = tilt_policy(pi, values.q, values.v, 0.5);
    const BoundReport r = check_theorem4(mdp, {pi, next, TauSchedule(0.6), TauSchedule(0.8)}, 4000, 9);
    CHECK(r.pass);
    CHECK(r.tolerance == doctest::Approx(3.0 / std::sqrt(4000.0)));
  }
  SUBCASE("ordering contract") {
    const TabularMDP mdp = random_mdp(2, 2, 0.9, 131);
    const auto pi = CategoricalPolicy::uniform(2, 2);
    CHECK_THROWS_AS(check_theorem4(mdp, {pi, pi, TauSchedule(0.9), TauSchedule(0.6)}, 0, 1), ContractError);
  }
  SUBCASE("random sweep") {
    const BoundReport r = sweep_theorem4(100, 404);
    CHECK(r.trials == 100);
    CHECK(r.pass);
  }
}

TEST_CASE("bound report aggregation keeps the worst slack") {
  BoundReport total;
  total.trials = 0;
  BoundReport a;
  a.lhs = 0.0;
  a.rhs = 1.0;
  a.finish();
  BoundReport b;
  b.lhs = 2.0;
  b.rhs = 1.0;
  b.finish();
  accumulate(total, a);
  accumulate(total, b);
  CHECK(total.trials == 2);
  CHECK(total.failures == 1);
  CHECK_FALSE(total.pass);
  CHECK(total.slack == -1.0);
}

"""End-to-end verification gates.

Each test implements one release criterion at its stated tolerance and
prints a PASS/FAIL line.  The workflow-level checks run the full loop on
synthetic affine ground truth where exact answers are available; tolerances
and seeds are pinned, so outcomes are reproducible bit-for-bit.
"""

import math
import time

import numpy as np
import pytest

from policy_surrogate import synthetic
from policy_surrogate.domain import TreatmentCondition, TreatmentGrid
from policy_surrogate.evaluation import (TruthTable, WorkflowProblem,
                                         budget_to_threshold, bundle_runs,
                                         compare_noise_models,
                                         compare_specifications, execute,
                                         run_one_stage_baseline)
from policy_surrogate.gpr import GpModel, KernelComponent, KernelSpec
from policy_surrogate.regression import (INTERACTION, MAIN_EFFECTS, design_row,
                                         fit_response)
from policy_surrogate.seqdes import (AcquisitionConfig, InitPlan, ModelSettings,
                                     SeqDesState, select_condition,
                                     select_county, snr_score)
from policy_surrogate.gpr import PosteriorSummary
from policy_surrogate.simulator import (CountyOudParams, LinearTruthSimulator,
                                        SimConfig, expected_deaths_analytic,
                                        simulate_replicate,
                                        transition_probabilities)

from oracles import (dense_gp_posterior, gaussian_width_argmax,
                     ols_normal_equations)


def report(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f"  ({detail})" if detail else ""
    print(f"ACCEPTANCE {name}: {status}{suffix}")
    assert ok, f"{name}: {detail}"


def linear_problem(seed, n_counties, budget, plan, noise, roughness,
                   grid=TreatmentGrid(5, 5), reps=8, interaction=0.0,
                   settings=ModelSettings()):
    counties = synthetic.make_counties(n_counties, seed=100 + seed)
    params = synthetic.make_linear_truth(counties, seed=200 + seed,
                                         noise_sd_range=noise,
                                         roughness=roughness,
                                         interaction_scale=interaction)
    sim = LinearTruthSimulator(params)
    truth = TruthTable.from_simulator(sim, [c.county_id for c in counties], grid)
    return WorkflowProblem(counties=tuple(counties), grid=grid, simulator=sim,
                           truth=truth, plan=InitPlan(*plan), budget=budget,
                           replicates_per_step=reps, settings=settings)


class TestGpMathOracle:
    def test_posterior_and_likelihood_match_dense_oracle(self):
        rng = np.random.default_rng(2024)
        start = time.time()
        worst = 0.0
        for _ in range(25):
            n = int(rng.integers(5, 21))
            d = int(rng.integers(1, 6))
            dims = list(range(d))
            rng.shuffle(dims)
            n_comp = int(rng.integers(1, min(3, d) + 1))
            splits = np.array_split(dims, n_comp)
            comps = [(tuple(int(i) for i in grp), float(rng.uniform(0.3, 3.0)),
                      float(rng.uniform(0.2, 4.0))) for grp in splits if len(grp)]
            spec = KernelSpec(tuple(KernelComponent(*c) for c in comps))
            x = rng.normal(size=(n, d))
            y = rng.normal(size=n) * 5 + rng.uniform(-10, 10)
            noise = rng.uniform(0.01, 1.0, size=n)
            x_star = rng.normal(size=d)

            model = GpModel(spec, x, y, noise)
            mean, var = model.posterior(x_star[None, :])
            lml = model.log_marginal_likelihood()
            ref_mean, ref_var, ref_lml = dense_gp_posterior(comps, x, y, noise,
                                                            x_star)
            for got, ref in ((mean[0], ref_mean), (var[0], ref_var),
                             (lml, ref_lml)):
                err = abs(got - ref) / max(abs(ref), 1e-12)
                worst = max(worst, err)
        elapsed = time.time() - start
        report("gp-math-oracle", worst < 1e-8 and elapsed < 10.0,
               f"max rel err {worst:.2e}, {elapsed:.2f}s")


class TestOlsOracle:
    def test_fit_matches_normal_equations(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(25):
            kind = MAIN_EFFECTS if rng.random() < 0.7 else INTERACTION
            rows = []
            from policy_surrogate.domain import Observation
            for _ in range(int(rng.integers(12, 40))):
                n, b = int(rng.integers(0, 5)), int(rng.integers(0, 5))
                y = 120 - 4 * n - 3 * b + 0.3 * n * b + rng.normal(0, 6)
                rows.append(Observation("c", TreatmentCondition(n, b),
                                        max(y, 0.0), 0))
            try:
                est = fit_response(rows, kind)
            except Exception:
                continue
            x = np.vstack([design_row(o.condition, kind) for o in rows])
            yv = np.array([o.outcome for o in rows])
            beta_ref, cov_ref = ols_normal_equations(x, yv)
            be = np.max(np.abs(est.beta - beta_ref) / np.maximum(np.abs(beta_ref), 1e-12))
            scale = max(np.max(np.abs(cov_ref)), 1e-12)
            ce = np.max(np.abs(est.cov - cov_ref)) / scale
            worst = max(worst, be, ce)
        report("ols-oracle", worst < 1e-8, f"max rel err {worst:.2e}")


class _StubSurrogate:
    def __init__(self, means, variances):
        self._means = means
        self._vars = variances
        self.n_counties = means.shape[0]

    def posterior_batch(self, x_std):
        return self._means.copy(), self._vars.copy()


class TestSelectionOracles:
    def test_county_selection_equals_bruteforce(self):
        rng = np.random.default_rng(11)
        counties = synthetic.make_counties(12, seed=0)
        cfg = AcquisitionConfig()
        all_match = True
        for _ in range(100):
            means = rng.uniform(-50, 300, size=(12, 3))
            variances = rng.uniform(0.0, 25.0, size=(12, 3))
            state = SeqDesState(counties=tuple(counties),
                                grid=TreatmentGrid(5, 5),
                                settings=ModelSettings(), budget_total=10,
                                seed=0,
                                surrogate=_StubSurrogate(means, variances),
                                pool_x_std=np.zeros((12, 5)))
            got = select_county(state, cfg)
            best, best_score = None, -math.inf
            for cid, m, v in sorted(zip(state.county_ids, means, variances)):
                score = snr_score(PosteriorSummary(m, v), cfg)
                if score > best_score:
                    best, best_score = cid, score
            all_match &= got == best
        report("county-selection-oracle", all_match, "100/100 exact")

    def test_condition_selection_matches_gaussian_widths(self):
        rng = np.random.default_rng(13)
        hits = 0
        for trial in range(100):
            v = rng.uniform(0.05, 2.0, size=3)
            mu = rng.uniform(-10, 10, size=3)

            class Draws:
                def sample_posterior(self, x, s, seed, _v=v, _mu=mu):
                    r = np.random.default_rng(seed)
                    return _mu + np.sqrt(_v) * r.standard_normal((s, 3))

            got = select_condition(Draws(), None, TreatmentGrid(5, 5),
                                   AcquisitionConfig(s=50_000, seed=trial))
            ref = gaussian_width_argmax(v[0], v[1], v[2], 5, 5)
            hits += (got.n, got.b) == ref
        report("condition-selection-oracle", hits >= 95, f"{hits}/100")


class TestCiCalibration:
    def test_empirical_interval_coverage(self):
        rng = np.random.default_rng(303)
        trials, s = 2000, 10_000
        covered = 0
        chunk = 200
        for start in range(0, trials, chunk):
            k = min(chunk, trials - start)
            mu = rng.uniform(-50, 50, size=(k, 1))
            sd = rng.uniform(0.5, 20.0, size=(k, 1))
            theta = rng.normal(mu[:, 0], sd[:, 0])
            samples = mu + sd * rng.standard_normal((k, s))
            lo, hi = np.quantile(samples, [0.025, 0.975], axis=1)
            covered += int(np.sum((theta >= lo) & (theta <= hi)))
        coverage = covered / trials
        report("ci-calibration", abs(coverage - 0.95) <= 0.015,
               f"coverage {coverage:.4f}")


class TestBudgetEfficiency:
    def test_two_stage_reaches_five_percent_with_tenth_of_exhaustive(self):
        # exhaustive reference: 20 counties x 25 conditions x 40 replicates
        exhaustive = 20 * 25 * 40
        budget = exhaustive // 10
        start = time.time()
        finals = []
        for seed in range(5):
            problem = linear_problem(seed, n_counties=20, budget=budget,
                                     plan=(8, 3), noise=(3.0, 25.0),
                                     roughness=1.0)
            state = execute(problem, seed=seed)
            finals.append(state.history[-1].rel_error)
            assert state.budget_used <= budget
        elapsed = time.time() - start
        mean_rel = float(np.mean(finals))
        report("budget-efficiency", mean_rel <= 0.05 and elapsed < 300.0,
               f"mean rel err {mean_rel:.4f} at {budget} of {exhaustive} runs, "
               f"{elapsed:.0f}s")


class TestAblationOrderings:
    def test_heteroscedastic_noise_beats_pooled(self):
        het, hom = [], []
        for seed in range(5):
            problem = linear_problem(seed, n_counties=16, budget=1200,
                                     plan=(6, 2), noise=(3.0, 25.0),
                                     roughness=0.6)
            out = compare_noise_models(problem, seeds=[seed])
            het.append(out["hetero"].final_error)
            hom.append(out["homo"].final_error)
        report("hetero-vs-homo",
               float(np.mean(het)) <= float(np.mean(hom)),
               f"hetero {np.mean(het):.4f} vs homo {np.mean(hom):.4f}")

    def test_two_stage_needs_no_more_budget_than_one_stage(self):
        ts, os_ = [], []
        for seed in range(5):
            problem = linear_problem(seed, n_counties=16, budget=1500,
                                     plan=(6, 2), noise=(5.0, 20.0),
                                     roughness=0.3, reps=16)
            two = execute(problem, seed=seed)
            one = run_one_stage_baseline(problem, seed=seed)
            ts.append(budget_to_threshold(bundle_runs([two]), 0.05))
            os_.append(budget_to_threshold(bundle_runs([one]), 0.05))
        report("two-stage-vs-one-stage",
               float(np.mean(ts)) <= float(np.mean(os_)),
               f"two-stage {np.mean(ts):.0f} vs one-stage {np.mean(os_):.0f} "
               f"runs to 5%")

    def test_grid_sizes_reach_similar_error_at_equal_per_condition_budget(self):
        e25, e16 = [], []
        per_condition = 80
        for seed in range(5):
            p25 = linear_problem(seed, n_counties=16,
                                 budget=25 * per_condition, plan=(6, 2),
                                 noise=(5.0, 20.0), roughness=0.3, reps=16,
                                 grid=TreatmentGrid(5, 5))
            p16 = linear_problem(seed, n_counties=16,
                                 budget=16 * per_condition, plan=(6, 2),
                                 noise=(5.0, 20.0), roughness=0.3, reps=16,
                                 grid=TreatmentGrid(4, 4))
            e25.append(execute(p25, seed=seed).history[-1].rel_error)
            e16.append(execute(p16, seed=seed).history[-1].rel_error)
        gap = abs(float(np.mean(e25)) - float(np.mean(e16)))
        report("grid-size-parity", gap <= 0.01,
               f"5x5 {np.mean(e25):.4f} vs 4x4 {np.mean(e16):.4f}, "
               f"gap {gap * 100:.2f}pp")


class TestInteractionRobustness:
    def test_no_interaction_truth_yields_null_interaction_estimates(self):
        fracs, ratios = [], []
        for seed in range(5):
            problem = linear_problem(seed, n_counties=16, budget=1500,
                                     plan=(6, 2), noise=(5.0, 20.0),
                                     roughness=0.3, reps=16, interaction=0.0)
            main_state = execute(problem, seed=seed)
            int_state = execute(problem, seed=seed,
                                settings=ModelSettings(response_kind=INTERACTION))
            cmp = compare_specifications(main_state, int_state, s=2000,
                                         seed=seed)
            fracs.append(cmp.fraction_spanning_zero)
            ratios.append(cmp.munb_abs_mean / cmp.main_abs_mean)
        ok = float(np.mean(fracs)) >= 0.60 and float(np.mean(ratios)) < 0.2
        report("interaction-robustness", ok,
               f"{np.mean(fracs) * 100:.0f}% of intervals span zero, "
               f"|mu_nb| ratio {np.mean(ratios):.3f}")


class TestSimulatorCorrectness:
    def test_replicate_mean_matches_analytic_expectation(self):
        rng = np.random.default_rng(77)
        reps = 10_000
        all_ok = True
        details = []
        for case in range(10):
            params = CountyOudParams(
                beta0=float(rng.uniform(-3.5, -2.0)), beta1=0.01,
                beta2=float(rng.uniform(-3.0, -1.5)), beta3=0.02,
                beta4=float(rng.uniform(-4.5, -2.5)), beta5=0.002,
                beta6=0.03,
                baseline_opioid_rate=float(rng.uniform(40, 90)),
                baseline_bup_rate=float(rng.uniform(15, 40)),
                baseline_nal_rate=float(rng.uniform(5, 25)),
                fentanyl_rate=float(rng.uniform(100, 600)))
            condition = TreatmentCondition(int(rng.integers(0, 5)),
                                           int(rng.integers(0, 5)))
            base_cfg = SimConfig(horizon_years=2, steps_per_year=12,
                                 cohort_size=100)
            expected = expected_deaths_analytic(params, condition, base_cfg)
            outcomes = np.empty(reps)
            for i in range(reps):
                cfg = SimConfig(horizon_years=2, steps_per_year=12,
                                cohort_size=100, rng_seed=case * reps + i)
                outcomes[i] = simulate_replicate("x", params, condition,
                                                 cfg).outcome
            se = outcomes.std(ddof=1) / math.sqrt(reps)
            dev = abs(outcomes.mean() - expected)
            all_ok &= dev <= 3 * se
            details.append(f"{dev / max(se, 1e-12):.2f}se")
        report("simulator-analytic-match", all_ok,
               "deviations: " + ", ".join(details))

    def test_closed_cohort_and_monotone_naloxone(self):
        params = CountyOudParams(beta0=-2.9, beta1=0.01, beta2=-2.6,
                                 beta3=0.018, beta4=-4.0, beta5=0.0015,
                                 beta6=0.03, baseline_opioid_rate=70.0,
                                 baseline_bup_rate=30.0,
                                 baseline_nal_rate=15.0, fentanyl_rate=400.0)
        cfg = SimConfig(cohort_size=2000, rng_seed=5)
        _, traj = simulate_replicate("x", params, TreatmentCondition(2, 1),
                                     cfg, return_trajectory=True)
        closed = bool(np.all(traj.sum(axis=1) == 2000))

        p3 = [transition_probabilities(params, TreatmentCondition(n, 0))[2]
              for n in range(5)]
        monotone = all(a > b for a, b in zip(p3, p3[1:]))
        report("simulator-invariants", closed and monotone,
               f"closed cohort {closed}, p3 strictly decreasing {monotone}")


class TestDeterminism:
    def test_cli_reruns_are_byte_identical(self, tmp_path):
        from conftest import write_problem_files
        from policy_surrogate.cli import main
        write_problem_files(tmp_path)
        blobs = []
        for name in ("first", "second"):
            rc = main(["run", "--config", str(tmp_path / "config.json"),
                       "--seed", "13", "--out", str(tmp_path / name)])
            assert rc == 0
            blobs.append((tmp_path / name / "history.csv").read_bytes()
                         + (tmp_path / name / "coefficients.csv").read_bytes())
        report("determinism", blobs[0] == blobs[1],
               "history and coefficient tables byte-identical")

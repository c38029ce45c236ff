"""Transfer fit: schedule recurrence, reductions, anchor shrinkage."""

import math

import numpy as np
import pytest

from mtgmm import (
    TaskData,
    ThetaEstimate,
    TlSchedule,
    distance_d,
    em_single_task,
    fit_tl_gmm,
    tl_tuning_lambda,
    zero_tl_schedule,
)
from mtgmm.em import iter_em
from mtgmm.prox import prox_scalar_w
from mtgmm.simbench import SimConfig, _align_inits, gen_tl_sim1


def unit_tl(kappa0=1.0 / 3.0, **kw):
    return TlSchedule(1, 1, 1, 1, 1, 1, kappa0=kappa0, **kw)


def target_problem(seed=0, h_mu=0.3, n=100):
    cfg = SimConfig("tl-sim1", K=3, n=n, p=5, h_w=0.15, h_mu=h_mu, n_test=50, reps=1, seed=seed)
    data = gen_tl_sim1(cfg, np.random.default_rng((seed, 0)))
    inits = _align_inits(data, cfg)
    anchors = data.truths[1].theta()  # the common source parameters
    return data.train[0], inits[0], anchors


class TestTlSchedule:
    def test_round_one_value(self):
        lam_w, lam_mu, lam_beta = tl_tuning_lambda(unit_tl(), 1, 5, 100)
        assert lam_w == pytest.approx(math.sqrt(5) + 10.0, abs=1e-12)
        assert lam_w == pytest.approx(12.2361, abs=1e-4)
        assert lam_mu == lam_w and lam_beta == lam_w

    def test_kappa0_zero_second_tier_vanishes(self):
        sched = unit_tl(kappa0=0.0)
        for t in (2, 3, 5):
            c1w, c1m, c1b, c2w, c2m, c2b = sched.constants_at(t)
            assert c2w == 0.0 and c2m == 0.0
            # as printed, the beta second tier couples to the FIRST-tier mu
            assert c2b == c1m
        symmetric = unit_tl(kappa0=0.0, beta2_uses_mu1=False)
        assert symmetric.constants_at(3)[5] == 0.0

    def test_second_tier_decays_when_contracting(self):
        sched = unit_tl(kappa0=0.2, beta2_uses_mu1=False)
        values = [sum(sched.constants_at(t)[3:]) for t in range(1, 24)]
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_as_printed_variant_keeps_mu1_floor(self):
        # with the printed coupling, the beta second tier inherits the
        # first-tier mu constant and cannot vanish
        sched = unit_tl(kappa0=0.2)
        late = sched.constants_at(40)
        assert late[5] >= late[1] * sched.script_c[3] * 0.99

    def test_validation(self):
        with pytest.raises(ValueError):
            TlSchedule(1, 1, 1, kappa0=-0.1)
        with pytest.raises(ValueError):
            TlSchedule(1, 1, -1)


class TestFitTl:
    def test_zero_penalty_reduces_to_single_task_em_exactly(self):
        target, init0, anchors = target_problem(seed=1)
        fit = fit_tl_gmm(target, init0, anchors, zero_tl_schedule(), T0=9, tol=0.0)
        gen = iter_em(target, init0)
        for _ in range(9):
            theta, sigma = next(gen)
        assert distance_d(theta, fit.theta0).value == 0.0
        np.testing.assert_array_equal(sigma, fit.sigma0)

    def test_huge_penalty_snaps_to_anchors(self):
        target, init0, anchors = target_problem(seed=2)
        sched = TlSchedule(1e6, 1e6, 1e6, 1e6, 1e6, 1e6, kappa0=0.0)
        fit = fit_tl_gmm(target, init0, anchors, sched, T0=1)
        assert distance_d(fit.theta0, anchors).value < 1e-6

    def test_anchors_never_mutated(self):
        target, init0, anchors = target_problem(seed=3)
        snapshot = (
            anchors.w,
            anchors.mu1.copy(),
            anchors.mu2.copy(),
            anchors.beta.copy(),
        )
        fit = fit_tl_gmm(target, init0, anchors, unit_tl(kappa0=0.2), T0=6)
        assert fit.anchors is anchors
        assert anchors.w == snapshot[0]
        np.testing.assert_array_equal(anchors.mu1, snapshot[1])
        np.testing.assert_array_equal(anchors.mu2, snapshot[2])
        np.testing.assert_array_equal(anchors.beta, snapshot[3])

    def test_round_one_w_moves_monotonically_with_lambda(self):
        target, init0, anchors = target_problem(seed=4)
        from mtgmm.em import _estep_stats

        _, gbar, *_ = _estep_stats(init0, target.z)
        previous_gap = None
        for lam in (0.0, 0.1, 0.5, 1.0, 5.0, 50.0):
            w = prox_scalar_w(gbar, target.n, lam, anchors.w)
            gap = abs(w - anchors.w)
            if previous_gap is not None:
                assert gap <= previous_gap + 1e-12
            previous_gap = gap

    def test_sigma_pd_and_deterministic(self):
        from mtgmm.core import cholesky_spd

        target, init0, anchors = target_problem(seed=5)
        a = fit_tl_gmm(target, init0, anchors, unit_tl(kappa0=0.2), T0=7, tol=0.0)
        b = fit_tl_gmm(target, init0, anchors, unit_tl(kappa0=0.2), T0=7, tol=0.0)
        cholesky_spd(a.sigma0)
        assert distance_d(a.theta0, b.theta0).value == 0.0
        np.testing.assert_array_equal(a.sigma0, b.sigma0)

    def test_dimension_check(self):
        target, init0, anchors = target_problem(seed=6)
        bad = ThetaEstimate(0.5, np.zeros(4), np.ones(4), np.ones(4))
        with pytest.raises(ValueError):
            fit_tl_gmm(target, init0, bad, zero_tl_schedule())

    def test_transfer_beats_target_only_when_sources_match(self):
        # identical-distribution sources: anchored fit should win most reps
        wins = 0
        reps = 25
        for rep in range(reps):
            cfg = SimConfig("tl-sim1", K=8, n=100, p=5, h_w=0.15, h_mu=0.0, n_test=400, reps=1, seed=31)
            data = gen_tl_sim1(cfg, np.random.default_rng((31, rep)))
            inits = _align_inits(data, cfg)
            truth = data.truths[0].theta()

            def err(theta):
                return min(
                    distance_d(theta, truth).value,
                    distance_d(theta.flipped(), truth).value,
                )

            anchors = data.truths[1].theta()
            tl = fit_tl_gmm(
                data.train[0], inits[0],
                anchors,
                TlSchedule(0.5, 0.5, 0.5, 0.5, 0.5, 0.5, script_c=(0.5,) * 4, kappa0=1 / 3),
            )
            single, _ = em_single_task(data.train[0], inits[0])
            wins += int(err(tl.theta0) < err(single))
        assert wins >= 0.8 * reps

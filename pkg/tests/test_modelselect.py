"""Cross-validated schedule selection."""

import numpy as np
import pytest

from mtgmm import CvGrid, cv_select_mtl, cv_select_tl
from mtgmm.modelselect import _fold_indices, mtl_schedule_from_cell, tl_schedule_from_cell
from mtgmm.simbench import SimConfig, _align_inits, gen_mtl_sim1, gen_tl_sim1


def problem(seed=0, K=4, h_mu=0.2, n=80):
    cfg = SimConfig("mtl-sim1", K=K, n=n, p=5, h_w=0.05, h_mu=h_mu, n_test=50, reps=1, seed=seed)
    data = gen_mtl_sim1(cfg, np.random.default_rng((seed, 0)))
    return data, _align_inits(data, cfg)


class TestCvGrid:
    def test_validation(self):
        with pytest.raises(ValueError):
            CvGrid((), (1.0,), 5)
        with pytest.raises(ValueError):
            CvGrid((1.0,), (1.0,), 1)
        with pytest.raises(ValueError):
            CvGrid((-0.1,), (1.0,), 5)

    def test_cells_sorted_ascending(self):
        grid = CvGrid((2.0, 0.5), (1.0, 0.1), 3)
        cells = grid.cells()
        assert cells[0] == (0.5, 0.1)
        assert cells[-1] == (2.0, 1.0)
        assert len(cells) == 4


class TestFoldAssignment:
    def test_deterministic_under_seed(self):
        a = _fold_indices(23, 5, np.random.default_rng(3))
        b = _fold_indices(23, 5, np.random.default_rng(3))
        for fa, fb in zip(a, b):
            np.testing.assert_array_equal(fa, fb)

    def test_fold_sizes_partition(self):
        folds = _fold_indices(23, 5, np.random.default_rng(4))
        sizes = sorted(len(f) for f in folds)
        assert sizes == [4, 4, 5, 5, 5]
        assert sorted(np.concatenate(folds)) == list(range(23))

    def test_permutation_changes_folds_not_sizes(self):
        a = _fold_indices(23, 5, np.random.default_rng(5))
        b = _fold_indices(23, 5, np.random.default_rng(6))
        assert sorted(len(f) for f in a) == sorted(len(f) for f in b)
        assert any(not np.array_equal(fa, fb) for fa, fb in zip(a, b))


class TestCvSelectMtl:
    def test_single_cell_grid(self):
        data, inits = problem(seed=1)
        grid = CvGrid((0.5,), (0.5,), 4)
        schedule, table = cv_select_mtl(data.train, inits, grid, seed=0)
        assert len(table) == 1
        assert schedule.c1_w == 0.5 and schedule.c2_w == 0.5
        assert schedule.c1_mu == schedule.c1_beta == 0.5
        assert np.isfinite(table[0]["loglik"])

    def test_table_bookkeeping(self):
        data, inits = problem(seed=2)
        grid = CvGrid((0.0, 1.0), (0.5, 2.0), 4)
        schedule, table = cv_select_mtl(data.train, inits, grid, seed=0)
        assert len(table) == 4
        assert all(np.isfinite(row["loglik"]) for row in table)
        best = max(table, key=lambda row: row["loglik"])
        assert (schedule.c1_w, schedule.c1_mu) == (best["c_w"], best["c_rest"])

    def test_selected_cell_beats_others(self):
        data, inits = problem(seed=3)
        grid = CvGrid((0.0, 0.5), (0.0, 0.5), 4)
        schedule, table = cv_select_mtl(data.train, inits, grid, seed=0)
        chosen = next(
            row for row in table
            if (row["c_w"], row["c_rest"]) == (schedule.c1_w, schedule.c1_mu)
        )
        assert all(chosen["loglik"] >= row["loglik"] for row in table)

    def test_zero_cell_wins_under_strong_heterogeneity(self):
        # h_mu = 2: pooling the means biases the fit, so the 0 cell
        # should win against a huge-penalty cell most of the time
        wins = 0
        for seed in range(4):
            data, inits = problem(seed=100 + seed, K=6, h_mu=2.0, n=100)
            grid = CvGrid((0.0, 5.0), (0.0, 5.0), 4)
            schedule, _ = cv_select_mtl(data.train, inits, grid, T=12, seed=0)
            wins += int(schedule.c1_mu == 0.0)
        assert wins >= 3

    def test_fold_size_guard(self):
        data, inits = problem(seed=4, n=30)
        with pytest.raises(ValueError, match="folds"):
            cv_select_mtl(data.train, inits, CvGrid((0.5,), (0.5,), 5), seed=0)

    def test_deterministic(self):
        data, inits = problem(seed=5)
        grid = CvGrid((0.0, 0.5), (0.5,), 4)
        s1, t1 = cv_select_mtl(data.train, inits, grid, seed=9)
        s2, t2 = cv_select_mtl(data.train, inits, grid, seed=9)
        assert t1 == t2 and s1 == s2


class TestCvSelectTl:
    def test_runs_and_selects(self):
        cfg = SimConfig("tl-sim1", K=3, n=100, p=5, h_w=0.15, h_mu=0.2, n_test=50, reps=1, seed=7)
        data = gen_tl_sim1(cfg, np.random.default_rng((7, 0)))
        inits = _align_inits(data, cfg)
        anchors = data.truths[1].theta()
        grid = CvGrid((0.0, 0.5), (0.0, 0.5), 4)
        schedule, table = cv_select_tl(data.train[0], inits[0], anchors, grid, seed=0)
        assert len(table) == 4
        best = max(table, key=lambda row: row["loglik"])
        assert (schedule.c1_w, schedule.c1_mu) == (best["c_w"], best["c_rest"])

    def test_schedule_builders(self):
        mtl = mtl_schedule_from_cell(0.3, 0.7)
        assert (mtl.c1_w, mtl.c2_w, mtl.c1_mu, mtl.c2_beta) == (0.3, 0.3, 0.7, 0.7)
        assert mtl.kappa == pytest.approx(1.0 / 3.0)
        tl = tl_schedule_from_cell(0.3, 0.7)
        assert (tl.c1_w, tl.c2_mu) == (0.3, 0.7)
        assert tl.kappa0 == pytest.approx(1.0 / 3.0)

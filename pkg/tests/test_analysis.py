import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltretrain import analysis as A
from ltretrain import losses as L
from ltretrain.classifier import ClassifierParams
from ltretrain.data import generate_synthetic
from ltretrain.errors import InvalidArgument
from ltretrain.losses import LossSpec, softmax
from ltretrain.metrics import magnitude_spread, weight_norms
from ltretrain.training import TrainConfig, train_classifier


class TestBiasHessian:
    def test_two_class(self):
        np.testing.assert_array_equal(A.bias_hessian([0.5, 0.5]), [[0.25, -0.25], [-0.25, 0.25]])

    def test_uniform_three_eigenvalues(self):
        ev = np.linalg.eigvalsh(A.bias_hessian(np.full(3, 1 / 3)))
        np.testing.assert_allclose(ev, [0, 1 / 3, 1 / 3], atol=1e-15)

    @given(st.integers(2, 50), st.integers(0, 2**32 - 1))
    def test_row_sums_and_psd(self, K, seed):
        rng = np.random.default_rng(seed)
        s = softmax(rng.standard_normal(K) * 3)
        if s.min() <= 0:
            return
        H = A.bias_hessian(s)
        assert np.max(np.abs(H.sum(axis=1))) <= 1e-15 * K
        ones = np.ones(K)
        assert abs(ones @ H @ ones) <= 1e-15 * K
        assert A.psd_check(H, 200, seed) >= -1e-12 * K
        # the eigen-decomposition oracle agrees
        assert np.linalg.eigvalsh(H).min() >= -1e-12 * K

    def test_invalid(self):
        with pytest.raises(InvalidArgument):
            A.bias_hessian([0.5, 0.6])
        with pytest.raises(InvalidArgument):
            A.bias_hessian([1.0, 0.0])

    def test_negative_control(self):
        assert A.psd_check(-np.eye(4), 100, 0) <= -1.0


class TestRowShift:
    @pytest.fixture
    def model(self, rng):
        params = ClassifierParams(rng.standard_normal((6, 4)) * 3, rng.standard_normal(6), np.ones(6))
        return params, rng.standard_normal((50, 4))

    def test_zero_shift(self, model):
        assert A.shift_invariance_check(*model, np.zeros(4)) == 0.0

    def test_large_shift(self, model, rng):
        params, X = model
        eps = rng.standard_normal(4)
        eps *= 10 / np.linalg.norm(eps)
        assert A.shift_invariance_check(params, X, eps) <= 1e-12
        change = np.abs(weight_norms(A.shifted_params(params, eps)) - weight_norms(params))
        assert change.max() > 1.0

    def test_linear_only(self, model):
        params, X = model
        with pytest.raises(InvalidArgument):
            A.shift_invariance_check(params.with_head("Cosine"), X, np.ones(4))


class TestPerturbation:
    def test_zero_noise(self, rng):
        base = rng.standard_normal((20, 5))
        res = A.perturbation_sim(np.ones(5), np.full(5, 0.2), A.PerturbationSpec(0.0, 1000, 1), base)
        np.testing.assert_array_equal(res.ratios, 1.0)
        assert res.spread == 0.0

    def test_reproducible(self, rng):
        base = rng.standard_normal((20, 5))
        spec = A.PerturbationSpec(0.3, 20_000, 9)
        a = A.perturbation_sim(np.arange(1.0, 6), np.full(5, 0.3), spec, base)
        b = A.perturbation_sim(np.arange(1.0, 6), np.full(5, 0.3), spec, base)
        np.testing.assert_array_equal(a.ratios, b.ratios)

    def test_shared_noise_is_a_no_op(self, rng):
        # one xi for every class with equal scales is a uniform logit shift
        base = rng.standard_normal((20, 5))
        res = A.perturbation_sim(np.ones(5), np.ones(5), A.PerturbationSpec(0.5, 5000, 2, shared=True), base)
        np.testing.assert_allclose(res.ratios, 1.0, atol=1e-12)

    def test_symmetric_case(self):
        # identical base rows and equal scales: every class sees the same law
        base = np.zeros((1, 4))
        res = A.perturbation_sim(np.ones(4), np.full(4, 0.5), A.PerturbationSpec(0.5, 200_000, 3), base)
        assert res.spread <= 0.02

    def test_spec_validation(self):
        with pytest.raises(InvalidArgument):
            A.PerturbationSpec(distribution="Cauchy")
        with pytest.raises(InvalidArgument):
            A.PerturbationSpec(trials=0)

    def test_lognormal(self):
        est = A.lognormal_mean_mc(0.5, 1_000_000, seed=0)
        assert abs(est / math.exp(0.125) - 1) <= 0.01

    def test_lognormal_zero_sigma(self):
        assert A.lognormal_mean_mc(0.0, 10) == 1.0


@pytest.fixture(scope="module")
def bench0():
    return A.benchmark(0)


class TestSweeps:
    def test_delta_zero_is_ce(self, bench0):
        b = bench0
        sweep = A.delta_sweep(b.train, b.test, [0.0], b.finetune, b.pretrained, b.stats)
        table = A.method_comparison(b.train, b.test, [A.method_presets()["ce"]], b.finetune, b.pretrained, b.stats)
        assert sweep.cells[0] == table.cells[0]

    def test_delta_range(self, bench0):
        with pytest.raises(InvalidArgument):
            A.delta_sweep(bench0.train, bench0.test, [1.0], bench0.finetune)

    def test_single_cell_grid(self, bench0):
        b = bench0
        spec = LossSpec(L.LORT, delta=0.9)
        grid = A.lr_wd_grid(b.train, b.test, [0.01], [1e-3], b.finetune, spec, b.pretrained, b.stats)
        cfg = replace(b.finetune, lr0=0.01, weight_decay=1e-3)
        params, _ = train_classifier(b.train, None, spec, cfg, b.pretrained, b.stats)
        from ltretrain.metrics import group_accuracy
        from ltretrain.classifier import NO_POSTHOC

        assert grid.cells[0] == group_accuracy(params, NO_POSTHOC, b.test, b.stats)

    def test_grid_permutation_invariance(self, bench0):
        b = bench0
        cfg = replace(b.finetune, epochs=2)
        g1 = A.lr_wd_grid(b.train, b.test, [0.01, 0.003], [0.0, 1e-3], cfg, LossSpec(L.CE), b.pretrained, b.stats)
        g2 = A.lr_wd_grid(b.train, b.test, [0.003, 0.01], [1e-3, 0.0], cfg, LossSpec(L.CE), b.pretrained, b.stats)
        for key in g1.keys:
            assert g1.cell(*key) == g2.cell(*key)
        np.testing.assert_array_equal(g1.matrix(), g2.matrix())

    def test_parallel_matches_serial(self, bench0):
        b = bench0
        cfg = replace(b.finetune, epochs=2)
        a = A.delta_sweep(b.train, b.test, [0.0, 0.5, 0.9], cfg, b.pretrained, b.stats, jobs=1)
        c = A.delta_sweep(b.train, b.test, [0.0, 0.5, 0.9], cfg, b.pretrained, b.stats, jobs=3)
        assert a.cells == c.cells

    def test_empty_axis(self, bench0):
        with pytest.raises(InvalidArgument):
            A.lr_wd_grid(bench0.train, bench0.test, [], [0.0], bench0.finetune, LossSpec())

    def test_csv(self, bench0, tmp_path):
        b = bench0
        cfg = replace(b.finetune, epochs=1)
        A.delta_sweep(b.train, b.test, [0.0, 0.5], cfg, b.pretrained, b.stats).write_csv(tmp_path / "d.csv")
        rows = (tmp_path / "d.csv").read_text().splitlines()
        assert rows[0] == "delta,acc_all,acc_many,acc_medium,acc_few"
        assert rows[1].startswith("0.0,") and rows[2].startswith("0.5,")

    def test_diverged_cell_recorded_absent(self, bench0, tmp_path):
        b = bench0
        cfg = replace(b.finetune, epochs=1)
        grid = A.lr_wd_grid(b.train, b.test, [1e300], [0.0], cfg, LossSpec(), None, b.stats)
        if grid.cells[0] is None:
            grid.write_csv(tmp_path / "g.csv")
            assert (tmp_path / "g.csv").read_text().splitlines()[1].endswith(",,,,")
            assert A.grid_spread(grid) == 0.0


class TestMethodComparison:
    def test_balanced_separable(self):
        # clusters 10 within-class standard deviations apart
        b = A.benchmark(0, imbalance_ratio=1.0, n_max=100, class_separation=10.0)
        methods = list(A.method_presets().values())
        table = A.method_comparison(b.train, b.test, methods, b.finetune, b.pretrained, b.stats)
        for (name,), cell in zip(table.keys, table.cells):
            assert cell[0] >= 99.0, name
        assert len(table.reports) == len(methods)

    def test_pair_form_accepted(self, bench0):
        from ltretrain.classifier import NO_POSTHOC

        b = bench0
        cfg = replace(b.finetune, epochs=1)
        table = A.method_comparison(b.train, b.test, [(LossSpec(L.CE), NO_POSTHOC)], cfg, b.pretrained, b.stats)
        assert table.keys == [(L.CE,)]

    def test_accuracy_tracks_magnitude_balance(self, benchmarks):
        # the method with flatter regularized magnitudes across class bins is the more accurate one
        agree = 0
        presets = A.method_presets()
        for b in benchmarks.values():
            t = A.method_comparison(b.train, b.test, [presets["ce"], presets["lort"]], b.finetune, b.pretrained, b.stats)
            acc = [c[0] for c in t.cells]
            spread = [magnitude_spread(r.L_regularized) for r in t.reports]
            agree += (acc[1] > acc[0]) == (spread[1] < spread[0])
        assert agree >= 4

    @pytest.mark.xfail(
        strict=True,
        reason="measured: LORT finetuning is far more LR-sensitive than CE on the desk benchmark",
    )
    def test_lort_grid_more_stable_than_ce(self, benchmarks):
        wins = 0
        for b in benchmarks.values():
            spreads = []
            for spec in (LossSpec(L.CE), LossSpec(L.LORT, delta=0.98)):
                g = A.lr_wd_grid(
                    b.train, b.test, [0.001, 0.003, 0.01, 0.03], [0.0, 5e-4, 5e-3], b.finetune, spec, b.pretrained, b.stats, jobs=4
                )
                spreads.append(A.grid_spread(g))
            wins += spreads[1] < spreads[0]
        assert wins >= 4


class TestVerification:
    def test_reduced_suite(self):
        checks = A.run_verification(trials=5)
        # five Monte Carlo draws cannot meet a 1% bound; those checks are flagged instead
        exact = [c for c in checks if not c.reduced_confidence or "gradcheck" in c.name or "PSD" in c.name]
        assert all(c.passed for c in exact), [c.line() for c in exact if not c.passed]
        assert all(c.reduced_confidence for c in checks if not c.passed)
        assert all("[reduced confidence]" in c.line() for c in checks if c.reduced_confidence)

    def test_negated_hessian_fails(self):
        checks = A.run_verification(trials=5, negate_hessian=True)
        psd = [c for c in checks if "PSD" in c.name]
        assert psd and not psd[0].passed

import csv
import io
import math
from dataclasses import replace

import numpy as np
import pytest

from fsmlp import FSMLP, ModelConfig
from fsmlp.analysis import (ConstraintKind, PenalizedLinear, SvdLinear, apply_constraint,
                            class_supremum, l1_penalty, l2_penalty, rademacher_estimate,
                            simplex_bound, svd_reconstruct, truncated_svd)
from fsmlp.analysis.experiments import (ROW_FIELDS, format_table, gap_experiment,
                                        rows_to_csv, synthetic_gap_dataset)
from fsmlp.autodiff import gradcheck, sum_
from fsmlp.layers import Linear, SimplexLinear
from fsmlp.training import TrainConfig


class TestSupremum:
    def test_vertex_and_ball(self):
        v = np.array([3.0, -1.0, 2.0])
        assert class_supremum(v, "simplex") == 3.0
        assert class_supremum(v, "l2", radius=2.0) == pytest.approx(2 * math.sqrt(14))

    def test_simplex_never_exceeds_l2(self):
        v = np.random.default_rng(0).normal(size=(5000, 7))
        assert np.all(class_supremum(v, "simplex") <= class_supremum(v, "l2") + 1e-12)

    def test_simplex_supremum_is_attained_on_simplex(self):
        # brute force over random simplex points never beats the vertex value
        rng = np.random.default_rng(1)
        v = rng.normal(size=4)
        w = rng.dirichlet(np.ones(4), size=20000)
        assert (w @ v).max() <= class_supremum(v, "simplex") + 1e-12

    def test_unknown_class(self):
        with pytest.raises(ValueError):
            class_supremum(np.ones(2), "linf")


class TestRademacher:
    def test_single_point_exact(self):
        est = rademacher_estimate(np.array([[1.0, 0.0]]), "simplex", n_trials=10_000, seed=0)
        assert est.exact
        assert est.estimate == 0.5
        assert est.bound == 1.0

    def test_single_point_monte_carlo(self):
        est = rademacher_estimate(np.array([[1.0, 0.0]]), "simplex", n_trials=10_000,
                                  seed=0, exact=False)
        assert round(est.estimate, 1) == 0.5
        assert abs(est.estimate - 0.5) < 4 * est.stderr

    def test_gaussian_comparison(self):
        data = np.random.default_rng(1).standard_normal((200, 10))
        simplex = rademacher_estimate(data, "simplex", 10_000, seed=1)
        ball = rademacher_estimate(data, "l2", 10_000, seed=1, radius=10.0)
        assert simplex.estimate <= simplex.bound
        assert simplex.estimate < ball.estimate
        assert ball.within_bound()
        assert ball.bound == pytest.approx(10 * simplex.bound)

    def test_bound_formula(self):
        data = np.array([[3.0, 4.0], [0.0, 0.0]])
        assert simplex_bound(data) == pytest.approx(5.0 / 2)

    def test_reproducible(self):
        data = np.random.default_rng(2).standard_normal((50, 3))
        a = rademacher_estimate(data, "simplex", 2500, seed=9)
        b = rademacher_estimate(data, "simplex", 2500, seed=9)
        c = rademacher_estimate(data, "simplex", 2500, seed=10)
        assert a == b
        assert a.estimate != c.estimate

    def test_chunked_prefix_stable(self):
        # chunk streams are independent, so the first 1000 trials agree across totals
        data = np.random.default_rng(3).standard_normal((30, 4))
        small = rademacher_estimate(data, "simplex", 1000, seed=4)
        child = np.random.SeedSequence(4).spawn(3)[0]
        signs = np.random.default_rng(child).integers(0, 2, size=(1000, 30)) * 2.0 - 1.0
        assert small.estimate == pytest.approx((signs @ data).max(axis=1).mean() / 30,
                                               rel=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            rademacher_estimate(np.ones((3, 2)), n_trials=50)
        with pytest.raises(ValueError):
            rademacher_estimate(np.ones((3, 2)), kind="l1")

    def test_to_dict(self):
        d = rademacher_estimate(np.ones((2, 2)), n_trials=100).to_dict()
        assert set(d) == {"n_samples", "n_trials", "kind", "radius", "estimate", "stderr",
                          "bound", "exact"}


class TestConstraintKind:
    @pytest.mark.parametrize("text, expected", [
        ("simplex", ConstraintKind("simplex")),
        ("none", ConstraintKind("none")),
        ("unconstrained", ConstraintKind("none")),
        ("l1", ConstraintKind("l1")),
        ("l2:0.5", ConstraintKind("l2", 0.5)),
        ("svd:8", ConstraintKind("svd", rank=8)),
    ])
    def test_parse(self, text, expected):
        assert ConstraintKind.parse(text) == expected

    def test_str_round_trip(self):
        for text in ("simplex", "none", "l1", "svd:3"):
            assert str(ConstraintKind.parse(text)) == text

    @pytest.mark.parametrize("text", ["svd", "svd:0", "l3", "simplex:2", "l1:-1"])
    def test_invalid(self, text):
        with pytest.raises(ValueError):
            ConstraintKind.parse(text)


class TestPenalties:
    def test_l2_example(self):
        assert l2_penalty(np.array([1.0, -2.0]), 0.5) == 2.5

    def test_l1(self):
        assert l1_penalty(np.array([1.0, -2.0]), 0.5) == 1.5

    @pytest.mark.parametrize("norm, expected", [("l1", 1.5), ("l2", 2.5)])
    def test_layer_penalty(self, norm, expected):
        layer = PenalizedLinear(2, 1, norm, lam=0.5)
        layer.weight.value = np.array([[1.0], [-2.0]])
        assert float(layer.penalty().value) == pytest.approx(expected)

    def test_penalty_gradcheck(self):
        layer = PenalizedLinear(3, 2, "l2", lam=0.3, rng=np.random.default_rng(0))
        gradcheck(lambda: layer.penalty(), [layer.weight])

    def test_model_adds_penalty_per_block(self):
        cfg = ModelConfig(lookback=8, horizon=4, channels=3, n_blocks=2, hidden_dim=8,
                          constraint="l2", penalty_lambda=0.1)
        model = FSMLP(cfg)
        expected = sum(l2_penalty(b.mixer.weight.value, 0.1) for b in model.scwm)
        assert model.penalty().shape == ()
        assert float(model.penalty().value) == pytest.approx(expected)
        assert FSMLP(replace(cfg, constraint="simplex")).penalty() is None


class TestSvd:
    def test_full_rank_reconstruction(self):
        w = np.random.default_rng(0).normal(size=(6, 4))
        np.testing.assert_allclose(svd_reconstruct(w, 4), w, atol=1e-9)

    def test_rank_one_exact(self):
        rng = np.random.default_rng(1)
        w = np.outer(rng.normal(size=5), rng.normal(size=3))
        np.testing.assert_allclose(svd_reconstruct(w, 1), w, atol=1e-9)

    def test_error_non_increasing_in_rank(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            w = rng.normal(size=(7, 5))
            errs = [np.linalg.norm(w - svd_reconstruct(w, k)) for k in range(1, 6)]
            assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))

    def test_factors_orthonormal(self):
        u, s, vt = truncated_svd(np.random.default_rng(3).normal(size=(6, 6)), 3)
        np.testing.assert_allclose(u.T @ u, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(vt @ vt.T, np.eye(3), atol=1e-12)
        assert np.all(np.diff(s) <= 0)

    def test_rank_out_of_range(self):
        with pytest.raises(ValueError):
            truncated_svd(np.ones((3, 2)), 3)
        with pytest.raises(ValueError):
            SvdLinear(3, 2, rank=0)

    def test_layer_forward_matches_dense(self):
        w = np.random.default_rng(4).normal(size=(4, 4))
        layer = SvdLinear(4, 4, rank=4, weight=w)
        x = np.random.default_rng(5).normal(size=(2, 3, 4))
        np.testing.assert_allclose(layer(x).value, x @ w, atol=1e-9)

    def test_layer_gradcheck(self):
        layer = SvdLinear(4, 3, rank=2, rng=np.random.default_rng(6))
        x = np.random.default_rng(7).normal(size=(2, 2, 4))
        w = np.random.default_rng(8).uniform(0.5, 1.5, size=(2, 2, 3))
        gradcheck(lambda: sum_(layer(x) * w), layer.parameters())


class TestApplyConstraint:
    @pytest.mark.parametrize("kind, cls", [("simplex", SimplexLinear), ("none", Linear),
                                           ("l1", PenalizedLinear), ("l2", PenalizedLinear),
                                           ("svd:2", SvdLinear)])
    def test_types(self, kind, cls):
        layer = apply_constraint(4, 4, kind, np.random.default_rng(0))
        assert type(layer) is cls

    def test_svd_rank_too_large(self):
        with pytest.raises(ValueError):
            apply_constraint(3, 3, "svd:4")


@pytest.fixture(scope="module")
def setup():
    ds = synthetic_gap_dataset(0, n_steps=300, n_channels=6, lookback=16, horizon=8)
    mcfg = ModelConfig(lookback=16, horizon=8, channels=6, n_blocks=1, hidden_dim=8)
    tcfg = TrainConfig(epochs=3, patience=3, batch_size=32)
    return ds, mcfg, tcfg


class TestGapExperiment:
    def test_rows_and_csv(self, setup):
        ds, mcfg, tcfg = setup
        rows = gap_experiment(ds, ["simplex", "none", "l1", "svd:2"], mcfg, tcfg)
        assert [r.constraint for r in rows] == ["simplex", "none", "l1", "svd:2"]
        for r in rows:
            assert r.status == "ok"
            assert r.gap == pytest.approx(r.val_loss_best - r.train_loss_final)
        parsed = list(csv.DictReader(io.StringIO(rows_to_csv(rows))))
        assert len(parsed) == 4 and tuple(parsed[0]) == ROW_FIELDS
        assert "svd:2" in format_table(rows)

    def test_identical_seeds_identical_rows(self, setup):
        ds, mcfg, tcfg = setup
        a = gap_experiment(ds, ["simplex", "simplex"], mcfg, tcfg)
        assert a[0] == a[1]

    def test_loss_modes(self, setup):
        ds, mcfg, tcfg = setup
        rows = gap_experiment(ds, ["simplex"], mcfg, tcfg, loss_modes=["dual", "time_only"])
        assert [r.loss_mode for r in rows] == ["dual", "time_only"]

    def test_divergence_recorded_and_continues(self, setup):
        ds, mcfg, tcfg = setup
        rows = gap_experiment(ds, ["none", "simplex"], mcfg,
                              replace(tcfg, divergence_threshold=1e-6))
        assert [r.status for r in rows] == ["diverged", "diverged"]
        assert "diverged" in format_table(rows)

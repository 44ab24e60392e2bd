import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import rawasc.acdl as acdl_mod
from oracles import pairwise_distances, simplex_grid, simplex_grid_objective
from rawasc.acdl import (AcdlConfig, CompactDictionary, _diverging, acdl_fit, candidate_pairs,
                        code_objective, eliminate_atoms, entropy_score, select_layer_dims,
                        simplex_project, sparse_code, write_trace_csv)
from rawasc.embed import LayerDataset
from rawasc.errors import DimensionError, NumericError, ParameterError
from rawasc.synthetic import subspace_benchmark

vectors = arrays(float, st.integers(1, 12), elements=st.floats(-50, 50))


def _dictionary(A, W, atom_class):
    K = A.shape[1]
    return CompactDictionary(np.asarray(A, float), np.asarray(W, float), np.ones(K, dtype=bool),
                             np.asarray(atom_class), np.zeros((2, 1)), np.zeros((K, 1)))


class TestSimplexProject:
    def test_feasible_unchanged(self):
        np.testing.assert_allclose(simplex_project([0.2, 0.8]), [0.2, 0.8], atol=1e-15)

    def test_symmetric(self):
        np.testing.assert_allclose(simplex_project([0.5, 0.5, 0.5]), [1 / 3] * 3)

    def test_corner(self):
        np.testing.assert_array_equal(simplex_project([1.0, 0.0, -1.0]), [1, 0, 0])
        np.testing.assert_array_equal(simplex_grid([1.0, 0.0, -1.0]), [1, 0, 0])

    def test_empty(self):
        with pytest.raises(DimensionError):
            simplex_project([])

    def test_columnwise(self):
        V = np.random.default_rng(0).standard_normal((4, 6))
        Z = simplex_project(V)
        for j in range(6):
            np.testing.assert_allclose(Z[:, j], simplex_project(V[:, j]), atol=1e-15)

    @given(vectors)
    def test_on_simplex_and_idempotent(self, v):
        z = simplex_project(v)
        assert z.min() >= 0
        assert abs(z.sum() - 1) <= 1e-12
        np.testing.assert_allclose(simplex_project(z), z, atol=1e-12)

    @given(vectors, arrays(float, 12, elements=st.floats(0, 1)))
    def test_is_closest(self, v, w):
        # any other simplex point is at least as far away
        other = simplex_project(w[:v.size] + 1e-3)
        z = simplex_project(v)
        assert np.linalg.norm(v - z) <= np.linalg.norm(v - other) + 1e-9


class TestSparseCode:
    def test_exact_atom(self):
        A = np.eye(5) * 3.0
        z = sparse_code(A, np.zeros((2, 5)), np.zeros(2), A[:, 2], gamma=0.0, n_iter=500)
        assert z[2] >= 0.99

    def test_single_atom(self):
        z = sparse_code(np.ones((3, 1)), np.ones((2, 1)), [1.0, 0.0], [5.0, -1.0, 2.0])
        np.testing.assert_array_equal(z, [1.0])

    def test_monotone_trace(self):
        rng = np.random.default_rng(1)
        A, W = rng.standard_normal((16, 8)), rng.standard_normal((3, 8))
        Y, G = rng.standard_normal((16, 5)), np.eye(3)[:, [0, 1, 2, 0, 1]]
        _, trace = sparse_code(A, W, G, Y, gamma=1.0, n_iter=200, return_trace=True)
        assert np.all(np.diff(trace, axis=0) <= 1e-10 * np.abs(trace[:-1]) + 1e-12)

    def test_against_grid_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(3):
            A, W = rng.standard_normal((16, 8)), rng.standard_normal((2, 8))
            y, g = rng.standard_normal(16), np.array([1.0, 0.0])
            sub = [0, 3, 5]
            z = sparse_code(A[:, sub], W[:, sub], g, y, gamma=1.0, n_iter=5000, tol=0.0)
            f = lambda x: code_objective(A[:, sub], W[:, sub], g[:, None], y[:, None], x[:, None], 1.0)[0]
            best, _ = simplex_grid_objective(f, 3, 1e-2)
            assert f(z) <= best + 1e-4

    def test_non_finite(self):
        with pytest.raises(NumericError):
            sparse_code(np.ones((2, 2)), np.ones((1, 2)), [1.0], [np.nan, 0.0])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            sparse_code(np.ones((3, 2)), np.ones((1, 2)), [1.0], [1.0, 0.0])


class TestEliminate:
    def test_duplicate_atoms(self):
        A = np.array([[1.0, 1.0, 5.0], [0.0, 0.0, 5.0]])
        W = np.array([[2.0, 0.1, 0.0], [0.0, 0.1, 3.0]])
        alive = eliminate_atoms(_dictionary(A, W, [0, 0, 1]), 0.3)
        assert alive.sum() == 2
        # the flatter weight column (atom 1) is the less discriminative one
        np.testing.assert_array_equal(alive, [True, False, True])

    def test_tau_zero(self):
        A = np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
        alive = eliminate_atoms(_dictionary(np.hstack([A, [[9.0], [9.0]]]), np.ones((2, 4)), [0, 0, 0, 1]), 0.0)
        assert alive.all()

    def test_two_tight_pairs(self):
        # pairs at distance 1, diameter 10: ratio 0.1 < tau 0.3
        A = np.array([[0.0, 1.0, 10.0, 10.0], [0.0, 0.0, 0.0, 1.0]])
        D = pairwise_distances(A)
        diameter = D.max()
        assert abs(D[0, 1] / diameter - 0.1) < 0.005 and abs(D[2, 3] / diameter - 0.1) < 0.005
        W = np.random.default_rng(0).standard_normal((2, 4))
        assert eliminate_atoms(_dictionary(A, W, [0, 0, 0, 0]), 0.3).sum() == 2

    def test_zero_diameter(self):
        A = np.ones((3, 4))
        W = np.array([[0.0, 3.0, 0.1, 0.0], [0.0, 0.0, 0.1, 2.0]])
        alive = eliminate_atoms(_dictionary(A, W, [0, 0, 1, 1]), 0.5)
        np.testing.assert_array_equal(alive, [False, True, False, True])

    def test_entropy_score(self):
        s = entropy_score(np.array([[5.0, 1.0], [0.0, 1.0]]))
        assert s[0] > s[1]
        np.testing.assert_allclose(s[1], np.log(0.5))

    @given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.integers(2, 10))
    def test_never_empties_class(self, seed, tau, k):
        rng = np.random.default_rng(seed)
        cls = rng.integers(0, 3, k)
        d = _dictionary(rng.standard_normal((4, k)) * rng.uniform(0.01, 1, k), rng.standard_normal((3, k)), cls)
        d.alive = rng.random(k) < 0.8
        alive = eliminate_atoms(d, tau)
        assert alive.sum() <= d.alive.sum()
        assert not np.any(alive & ~d.alive)
        for c in np.unique(cls[d.alive]):
            assert np.any(alive & (cls == c))

    def test_candidates_only_same_class(self):
        A = np.array([[0.0, 0.1, 10.0], [0.0, 0.0, 0.0]])
        assert candidate_pairs(_dictionary(A, np.ones((2, 3)), [0, 1, 1]), 0.5) == {}


def _two_point(copies=10):
    a, b = np.array([1.0, 0.0, 2.0, 0.0]), np.array([0.0, 3.0, 0.0, 1.0])
    return LayerDataset(np.column_stack([a] * copies + [b] * copies), np.repeat([0, 1], copies))


class TestAcdlFit:
    def test_two_point_dataset(self):
        res = acdl_fit(_two_point(), AcdlConfig(initial_atoms_per_class=4))
        assert res.converged
        assert res.d_selected == 2
        assert res.recon_error_trace[-1] <= 0.01

    def test_one_atom_per_class(self):
        ds = subspace_benchmark(seed=1, per_class=10)
        res = acdl_fit(ds, AcdlConfig(initial_atoms_per_class=1, max_outer_iters=20))
        assert res.d_selected == 4

    def test_plain_alternating_minimization(self):
        ds = subspace_benchmark(seed=2, per_class=10)
        cfg = AcdlConfig(tau=0.0, stop_recon_error=0.0, max_outer_iters=8, initial_atoms_per_class=5)
        res = acdl_fit(ds, cfg)
        assert res.d_selected == 20
        assert res.iterations == 8 and len(res.recon_error_trace) == 8
        assert not res.pruning_iters

    def test_scale_invariant(self):
        ds = subspace_benchmark(seed=3, per_class=10)
        cfg = AcdlConfig(max_outer_iters=10, initial_atoms_per_class=4)
        a = acdl_fit(ds, cfg)
        b = acdl_fit(LayerDataset(ds.Y * 37.5, ds.labels), cfg)
        np.testing.assert_allclose(a.recon_error_trace, b.recon_error_trace, atol=1e-6)

    def test_deterministic(self):
        ds = subspace_benchmark(seed=4, per_class=10)
        cfg = AcdlConfig(max_outer_iters=15, initial_atoms_per_class=4, seed=9)
        a, b = acdl_fit(ds, cfg), acdl_fit(ds, cfg)
        assert a.recon_error_trace == b.recon_error_trace
        assert a.dictionary.A.tobytes() == b.dictionary.A.tobytes()

    def test_result_invariants(self, monkeypatch):
        seen = []

        def check(Z, alive):
            Za = Z[alive]
            seen.append((Za.min(), np.abs(Za.sum(axis=0) - 1).max(), np.abs(Z[~alive]).max(initial=0.0)))

        monkeypatch.setattr(acdl_mod, "_check_codes", check)
        ds = subspace_benchmark(seed=5, per_class=12)
        res = acdl_fit(ds, AcdlConfig(initial_atoms_per_class=6, max_outer_iters=40))
        assert len(seen) == res.iterations == len(res.recon_error_trace) == len(res.alive_trace)
        for lo, dev, dead in seen:
            assert lo >= -1e-12 and dev <= 1e-9 and dead == 0
        d = res.dictionary
        assert res.d_selected == d.n_alive <= 24
        assert not d.A[:, ~d.alive].any()
        assert set(d.atom_class[d.alive]) == {0, 1, 2, 3}

    def test_too_few_samples(self):
        with pytest.raises(ParameterError):
            acdl_fit(LayerDataset(np.ones((3, 2)), [0, 1]), n_classes=3)

    def test_zero_data(self):
        with pytest.raises(NumericError):
            acdl_fit(LayerDataset(np.zeros((3, 4)), [0, 0, 1, 1]))

    def test_config_validation(self):
        for bad in ({"tau": 1.5}, {"gamma": -1}, {"stop_recon_error": -0.1}, {"max_outer_iters": 0}):
            with pytest.raises(ParameterError):
                AcdlConfig(**bad)

    def test_divergence_rule(self):
        assert _diverging([1, 2, 3, 4, 5, 6, 7], [])
        assert not _diverging([1, 2, 3, 4, 5, 6, 7], [4])
        assert not _diverging([1, 1.05, 1.1, 1.2, 1.3, 1.4, 1.5], [])


class TestSelectLayerDims:
    def test_ratios_and_failures(self):
        good = _two_point()
        bad = LayerDataset(np.zeros((6, 20)), good.labels, "bad")
        out = select_layer_dims({"good": good, "bad": bad}, AcdlConfig(initial_atoms_per_class=3))
        assert out["good"].compression_ratio == 1 - out["good"].d / 4
        assert out["bad"].d == 6 and out["bad"].compression_ratio == 0.0
        assert isinstance(out["bad"].error, NumericError)

    def test_per_layer_configs(self):
        ds = _two_point()
        out = select_layer_dims({"a": ds, "b": ds}, {"a": AcdlConfig(initial_atoms_per_class=1),
                                                      "b": AcdlConfig(initial_atoms_per_class=5)})
        assert out["a"].result.alive_trace[0] == 2
        assert out["b"].result.alive_trace[0] == 10

    @pytest.mark.parametrize("n, d, ratio", [(64, 64, 0.0), (1024, 51, 0.9502)])
    def test_ratio_arithmetic(self, n, d, ratio):
        from rawasc.acdl import LayerSelection
        assert LayerSelection("x", n, d).compression_ratio == pytest.approx(ratio, abs=1e-4)

    def test_trace_csv(self, tmp_path):
        res = acdl_fit(_two_point(), AcdlConfig(initial_atoms_per_class=2))
        write_trace_csv(tmp_path / "t.csv", res)
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "iter,alive_atoms,relative_recon_error,classification_loss"
        assert len(lines) == res.iterations + 1

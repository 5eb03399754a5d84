"""Orthogonal matching pursuit and result helpers."""

import itertools

import numpy as np
import pytest

from otfs_sbl.errors import DimensionError, InfeasibleError
from otfs_sbl.estimator import (NMSE_FLOOR_DB, Trace, measurement_from_arrays,
                                nmse, omp_default_sparsity, omp_estimate)

from conftest import cn


class TestOmp:
    def test_one_sparse_exact(self, rng):
        Phi = cn(rng, (12, 30))
        h = np.zeros(30, complex)
        h[17] = 2 - 1j
        res = omp_estimate(measurement_from_arrays(Phi @ h, Phi), sparsity=1)
        np.testing.assert_allclose(res.h_hat, h, atol=1e-12)
        np.testing.assert_array_equal(res.support, [17])
        assert res.converged and res.iterations == 1

    def test_against_brute_force(self, rng):
        # exhaustive search is the least-residual oracle; greedy never beats it
        # and finds the same support on most well-separated instances
        agree = 0
        for _ in range(30):
            Phi = cn(rng, (10, 20))
            h = np.zeros(20, complex)
            h[rng.choice(20, 3, replace=False)] = rng.uniform(1, 2, 3) * np.exp(
                2j * np.pi * rng.uniform(size=3))
            y = Phi @ h

            def resid(s):
                s = list(s)
                return np.linalg.norm(y - Phi[:, s] @ np.linalg.lstsq(Phi[:, s], y, rcond=None)[0])

            best = min(itertools.combinations(range(20), 3), key=resid)
            res = omp_estimate(measurement_from_arrays(y, Phi), sparsity=3)
            assert resid(res.support) >= resid(best) - 1e-9
            agree += list(res.support) == sorted(best)
        assert agree >= 20

    def test_residual_non_increasing(self, rng):
        Phi = cn(rng, (25, 60))
        y = cn(rng, 25)
        res = omp_estimate(measurement_from_arrays(y, Phi), sparsity=20)
        r = np.array(res.trace.residual)
        assert np.all(np.diff(r) <= 1e-12 * r[0])

    def test_residual_stop(self, rng):
        Phi = cn(rng, (30, 60))
        h = np.zeros(60, complex)
        h[[3, 40]] = [1, -1j]
        nv = 1e-4
        y = Phi @ h + np.sqrt(nv) * cn(rng, 30)
        res = omp_estimate(measurement_from_arrays(y, Phi, noise_var=nv))
        assert res.converged and set(res.support) == {3, 40}
        assert res.trace.residual[-1] <= np.sqrt(30 * nv)

    def test_zero_columns_never_chosen(self, rng):
        Phi = cn(rng, (8, 10))
        Phi[:, :4] = 0
        res = omp_estimate(measurement_from_arrays(cn(rng, 8), Phi), sparsity=8)
        assert np.all(res.support >= 4)

    def test_errors(self, rng):
        m = measurement_from_arrays(cn(rng, 5), cn(rng, (5, 9)))
        with pytest.raises(InfeasibleError):
            omp_estimate(m, sparsity=6)
        with pytest.raises(ValueError):
            omp_estimate(m)

    def test_default_budget(self):
        assert omp_default_sparsity(4, 3) == 28


class TestNmse:
    def test_values(self):
        h = np.array([1, 2, 3], complex)
        assert nmse(h, h) == NMSE_FLOOR_DB == -300.0
        assert nmse(h, np.zeros(3)) == pytest.approx(0.0, abs=1e-15)
        assert nmse(h, 2 * h) == pytest.approx(0.0, abs=1e-15)

    def test_worked_example(self):
        # error energy 0.02 against unit reference energy: 10 log10(0.02)
        h = np.array([1.0, 0.0])
        assert nmse(h, np.array([1.1, 0.1])) == pytest.approx(-16.9897, abs=1e-4)
        assert nmse(np.ones(4), np.ones(4) * 1.1) == pytest.approx(-20.0, abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            nmse(np.zeros(3), np.ones(3))
        with pytest.raises(DimensionError):
            nmse(np.ones(3), np.ones(4))


class TestTrace:
    def test_csv(self, tmp_path):
        t = Trace()
        t.append(np.inf, -3.0)
        t.append(0.125, -4.5)
        t.to_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines == ["iter,rel_change,nmse_db", "1,inf,-3.0", "2,0.125,-4.5"]
        assert len(t) == 2


class TestResultCsv:
    def test_columns(self, tmp_path):
        from otfs_sbl.estimator import RecoveryResult
        r = RecoveryResult(np.array([1 + 2j, complex(0.0, -0.5)]), 3, True, Trace(), "sbl",
                           rho=np.array([0.5, -1.0]))
        r.to_csv(tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text().splitlines() == [
            "index,re,im,rho", "0,1.0,2.0,0.5", "1,0.0,-0.5,-1.0"]

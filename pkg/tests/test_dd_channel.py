"""Grid numerology, coefficients, frames, channel draws and synthesis."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otfs_sbl.dd_channel import (ChannelSpec, PathParams, PilotLayout, SystemParams,
                                 apply_channel, channel_to_grid, data_mask,
                                 gen_channel, guard_mask, load_grid,
                                 make_pilot_frame, noise_var_from_snr, phi_coeff,
                                 psi_coeff, save_grid, synthesize_rx)
from otfs_sbl.errors import DimensionError, InfeasibleError

from conftest import cn


def geometric_psi(q, kappa, N):
    n = np.arange(N)
    return np.mean(np.exp(2j * np.pi * n * (-q - kappa) / N))


def brute_force_rx(tx, paths, params):
    """Direct triple loop over cells, paths and Doppler offsets."""
    N, M = params.N, params.M
    y = np.zeros((N, M), dtype=complex)
    for k in range(N):
        for l in range(M):
            acc = 0j
            for p in paths:
                pre = p.gain * np.exp(2j * np.pi * ((l - p.l_tau) / M)
                                      * ((p.k_nu + p.kappa) / N))
                for q in range(-params.eta, params.eta + 1):
                    psi = geometric_psi(q, p.kappa, N)
                    ph = np.exp(2j * np.pi * (l - p.l_tau) * (p.k_nu + p.kappa) / (M * N))
                    if l >= p.l_tau:
                        phi = psi * ph
                    else:
                        phi = ((psi - 1 / N) * ph
                               * np.exp(-2j * np.pi * ((k - p.k_nu + q) % N) / N))
                    acc += pre * phi * tx[(k - p.k_nu + q) % N, (l - p.l_tau) % M]
            y[k, l] = acc
    return y


class TestSystemParams:
    def test_presets(self):
        d, p = SystemParams.desk(), SystemParams.paper()
        assert (d.M, d.N, d.l_max, d.k_max, d.eta) == (32, 32, 8, 6, 3)
        assert (p.M, p.N, p.l_max, p.k_max, p.eta) == (128, 128, 20, 16, 5)
        assert p.fc == 4e9

    @pytest.mark.parametrize("kw", [
        dict(M=0, N=8), dict(M=8, N=8, eta=-1), dict(M=8, N=8, l_max=8),
        dict(M=8, N=8, k_max=4, l_max=1), dict(M=8, N=8, delta_f=0.0, l_max=1, k_max=1),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SystemParams(**kw)

    def test_physical_units(self):
        p = SystemParams(M=16, N=8, l_max=3, k_max=2, eta=1, delta_f=15e3)
        assert p.T == pytest.approx(1 / 15e3)
        assert p.delay_of(2) == pytest.approx(2 / (16 * 15e3))
        assert p.doppler_of(1, 0.25) == pytest.approx(1.25 * 15e3 / 8)


class TestPsi:
    def test_removable_singularity(self):
        assert psi_coeff(0, 0.0, 16) == 1 + 0j

    def test_integer_offset_vanishes(self):
        assert abs(psi_coeff(3, 0.0, 16)) < 1e-15

    def test_fractional_value(self):
        # high-precision geometric sum
        expected = 0.1879531625301515152 - 0.0866475947429838647j
        assert abs(psi_coeff(1, 0.3, 8) - expected) < 1e-12

    def test_matches_geometric_sum_on_sweep(self):
        N, eta = 16, 5
        for kappa in np.linspace(-0.49, 0.49, 100):
            for q in range(-eta, eta + 1):
                assert abs(psi_coeff(q, kappa, N) - geometric_psi(q, kappa, N)) < 1e-12

    @settings(max_examples=200, deadline=None)
    @given(q=st.integers(-10, 10), kappa=st.floats(-0.4999, 0.4999),
           N=st.integers(1, 64))
    def test_geometric_sum_property(self, q, kappa, N):
        np.testing.assert_allclose(psi_coeff(q, kappa, N), geometric_psi(q, kappa, N),
                                   atol=1e-12)

    def test_vectorised(self):
        q = np.arange(-3, 4)
        out = psi_coeff(q, 0.2, 8)
        np.testing.assert_allclose(out, [geometric_psi(v, 0.2, 8) for v in q], atol=1e-13)


class TestPhi:
    params = SystemParams(M=16, N=8, eta=1, l_max=3, k_max=1)

    def test_upper_branch_on_grid(self):
        path = PathParams(1.0, 2, 1, 0.0)
        l, k = 5, 3
        expected = np.exp(2j * np.pi * (l - 2) * 1 / (16 * 8))
        assert abs(phi_coeff(k, l, 0, path, self.params) - expected) < 1e-14

    def test_lower_branch_on_grid(self):
        path = PathParams(1.0, 3, 1, 0.0)
        k, l = 5, 1
        expected = ((1 - 1 / 8) * np.exp(2j * np.pi * (l - 3) * 1 / (16 * 8))
                    * np.exp(-2j * np.pi * ((k - 1) % 8) / 8))
        assert abs(phi_coeff(k, l, 0, path, self.params) - expected) < 1e-14

    def test_lower_branch_fractional(self):
        # independent 40-digit evaluation
        expected = -0.2403101610508425124 + 0.2221404279242512293j
        got = phi_coeff(2, 1, -1, PathParams(1.0, 3, 1, 0.2), self.params)
        assert abs(got - expected) < 1e-12


class TestLayout:
    def test_counts_paper_scale(self):
        layout = PilotLayout.centered(SystemParams.paper())
        assert (layout.Q, layout.R) == (693, 903)

    def test_counts_desk_scale(self, desk_layout):
        assert (desk_layout.Q, desk_layout.R) == (117, 171)

    def test_overflow(self):
        p = SystemParams(M=16, N=16, eta=2, l_max=4, k_max=3)
        with pytest.raises(DimensionError):
            PilotLayout.from_indices(p, [1], [8])

    def test_pilot_block_counts(self, desk):
        layout = PilotLayout.centered(SystemParams.paper(), n_doppler=2, n_delay=3)
        assert layout.Q == (2 * 16 + 2) * (20 + 3)
        assert layout.R == (2 * 16 + 2 + 2 * 5) * (20 + 3)


class TestFrame:
    def test_single_pilot_only(self, desk, desk_layout):
        frame = make_pilot_frame(desk, desk_layout)
        assert np.count_nonzero(frame) == 1
        assert frame[16, 16] == 1

    def test_guard_extent_paper(self):
        p = SystemParams.paper()
        mask = guard_mask(p, PilotLayout.centered(p))
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        assert rows.size == 75 and cols.size == 41
        assert rows[0] == 64 - 37 and cols[0] == 64 - 20

    def test_data_count_by_enumeration(self, desk, rng):
        for nk, nl in [(1, 1), (1, 2), (1, 3)]:
            layout = PilotLayout.centered(desk, nk, nl)
            n_data = desk.M * desk.N - (2 * (2 * desk.k_max + desk.eta) + nk) * (2 * desk.l_max + nl)
            assert data_mask(desk, layout).sum() == n_data
            data = cn(rng, n_data)
            frame = make_pilot_frame(desk, layout, data)
            guard = guard_mask(desk, layout)
            pilots = np.zeros_like(guard)
            pilots[np.ix_(layout.pilot_rows, layout.pilot_cols)] = True
            assert np.all(frame[guard & ~pilots] == 0)
            assert np.sum(np.abs(frame) ** 2) == pytest.approx(
                nk * nl + np.sum(np.abs(data) ** 2))

    def test_wrong_data_length(self, desk, desk_layout):
        with pytest.raises(DimensionError):
            make_pilot_frame(desk, desk_layout, np.ones(3))


class TestGenChannel:
    def test_single_path(self, desk):
        ch = gen_channel(desk, 1, fractional=False, rng=0)
        assert ch.P == 1
        assert abs(ch.paths[0].gain) == pytest.approx(1.0, abs=1e-15)
        assert ch.paths[0].kappa == 0

    def test_deterministic(self, desk):
        assert gen_channel(desk, 4, rng=7) == gen_channel(desk, 4, rng=7)

    def test_paper_scale_draw(self):
        p = SystemParams.paper()
        for seed in range(20):
            ch = gen_channel(p, 9, rng=seed)
            taps = {(q.l_tau, q.k_nu) for q in ch.paths}
            assert len(taps) == 9
            assert ch.power == pytest.approx(1.0, abs=1e-12)
            for q in ch.paths:
                assert 0 <= q.l_tau <= p.l_max and abs(q.k_nu) <= p.k_max
                assert -0.5 < q.kappa < 0.5

    def test_more_paths_than_delays(self, desk):
        ch = gen_channel(desk, 20, pdp="uniform", rng=3)
        assert len({(q.l_tau, q.k_nu) for q in ch.paths}) == 20

    def test_infeasible(self, desk):
        with pytest.raises(InfeasibleError):
            gen_channel(desk, (desk.l_max + 1) * (2 * desk.k_max + 1) + 1, rng=0)

    def test_duplicate_taps_rejected(self):
        with pytest.raises(ValueError):
            ChannelSpec((PathParams(1, 1, 1), PathParams(1, 1, 1, 0.1)))


class TestSynthesis:
    small = SystemParams(M=8, N=8, eta=2, l_max=3, k_max=2)

    def test_identity_channel(self, desk, rng):
        tx = cn(rng, (desk.N, desk.M))
        ch = ChannelSpec((PathParams(1.0, 0, 0, 0.0),))
        np.testing.assert_allclose(synthesize_rx(tx, ch, 0.0, desk), tx, atol=1e-14)

    def test_on_grid_against_brute_force(self, rng):
        p = self.small
        tx = cn(rng, (p.N, p.M))
        ch = ChannelSpec((PathParams(0.7 - 0.2j, 2, 3 % 3, 0.0),
                          PathParams(0.3j, 1, -2, 0.0)))
        np.testing.assert_allclose(apply_channel(tx, ch.paths, p),
                                   brute_force_rx(tx, ch.paths, p), atol=1e-12)

    def test_fractional_against_brute_force(self, rng):
        p = self.small
        tx = cn(rng, (p.N, p.M))
        ch = ChannelSpec((PathParams(0.5 + 0.5j, 2, 1, 0.31),
                          PathParams(-0.4, 0, -1, -0.12)))
        np.testing.assert_allclose(apply_channel(tx, ch.paths, p),
                                   brute_force_rx(tx, ch.paths, p), atol=1e-12)

    def test_on_grid_closed_form_from_delay_onward(self, desk, rng):
        # only q = 0 survives on cells with l >= l_tau
        tx = cn(rng, (desk.N, desk.M))
        h = 0.6 - 0.3j
        path = PathParams(h, 2, 3, 0.0)
        y = synthesize_rx(tx, ChannelSpec((path,)), 0.0, desk)
        k = np.arange(desk.N)[:, None]
        l = np.arange(2, desk.M)[None, :]
        expected = (h * np.exp(2j * np.pi * ((l - 2) / desk.M) * (3 / desk.N))
                    * phi_coeff(k, l, 0, path, desk)
                    * tx[(k - 3) % desk.N, (l - 2) % desk.M])
        np.testing.assert_allclose(y[:, 2:], expected, atol=1e-13)

    def test_fractional_spread(self, desk, desk_layout):
        tx = make_pilot_frame(desk, desk_layout)
        ch = ChannelSpec((PathParams(1.0, 2, 1, 0.25),))
        y = synthesize_rx(tx, ch, 0.0, desk)
        col = y[:, 16 + 2]
        assert np.count_nonzero(np.abs(col) > 1e-12) == 2 * desk.eta + 1

    def test_sparse_support_on_grid(self, desk, desk_layout):
        tx = make_pilot_frame(desk, desk_layout)
        ch = gen_channel(desk, 4, fractional=False, rng=5)
        y = synthesize_rx(tx, ch, 0.0, desk)
        assert np.count_nonzero(np.abs(y) > 1e-12) == 4

    def test_linear_in_gains(self, desk, rng):
        tx = cn(rng, (desk.N, desk.M))
        ch = gen_channel(desk, 4, rng=11)
        g1, g2 = cn(rng, 4), cn(rng, 4)
        a, b = 0.7 - 1.1j, -0.3 + 0.2j
        lhs = synthesize_rx(tx, ch.with_gains(a * g1 + b * g2), 0.0, desk)
        rhs = (a * synthesize_rx(tx, ch.with_gains(g1), 0.0, desk)
               + b * synthesize_rx(tx, ch.with_gains(g2), 0.0, desk))
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-12)

    def test_noise_variance(self, desk):
        tx = np.zeros((desk.N, desk.M), dtype=complex)
        ch = ChannelSpec((PathParams(1.0, 0, 0, 0.0),))
        y = np.concatenate([synthesize_rx(tx, ch, 0.5, desk, rng=s).ravel()
                            for s in range(20)])
        assert np.mean(np.abs(y) ** 2) == pytest.approx(0.5, rel=0.05)
        assert noise_var_from_snr(10) == pytest.approx(0.1)

    def test_negative_noise(self, desk):
        with pytest.raises(ValueError):
            synthesize_rx(np.zeros((32, 32)), gen_channel(desk, 1, rng=0), -1.0, desk)

    def test_guard_blocks_data_leakage(self, desk, desk_layout, rng):
        # data alone never reaches the observation window, fractional or not
        n_data = int(data_mask(desk, desk_layout).sum())
        data_only = make_pilot_frame(desk, desk_layout, cn(rng, n_data))
        data_only[16, 16] = 0
        for seed in range(10):
            ch = gen_channel(desk, 4, rng=seed)
            y = apply_channel(data_only, ch.paths, desk)
            window = y[16 - desk.k_max:16 + desk.k_max + 1, 16:16 + desk.l_max + 1]
            assert np.max(np.abs(window)) < 1e-12


class TestChannelToGrid:
    def test_on_grid_gains(self, desk, desk_layout):
        ch = gen_channel(desk, 4, fractional=False, rng=2)
        h = channel_to_grid(ch, desk, desk_layout)
        assert np.count_nonzero(h) == 4
        assert sorted(np.abs(h[h != 0])) == pytest.approx(
            sorted(abs(p.gain) for p in ch.paths))


class TestGridIO:
    @pytest.mark.parametrize("suffix", [".npy", ".csv"])
    def test_round_trip(self, tmp_path, rng, suffix):
        grid = cn(rng, (4, 5))
        path = tmp_path / f"g{suffix}"
        save_grid(grid, path)
        np.testing.assert_array_equal(load_grid(path), grid)

    def test_csv_layout(self, tmp_path):
        path = tmp_path / "g.csv"
        save_grid(np.array([[1 + 2j, 3 - 4j]]), path)
        assert path.read_text().splitlines() == ["1,2", "1.0,2.0,3.0,-4.0"]

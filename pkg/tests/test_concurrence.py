"""Concurrence formulas, the readout relation, and the analytic distribution."""

import math

import numpy as np
import pytest

from halfparity import (ConcurrencePdf, MeasConfig, NoSolutionError, XState, c_max,
                        c_max_numeric, c_of_readout, c_readout_symmetric, cdf,
                        concurrence, concurrence_path, derived_params, full_matrix,
                        histogram_grid, invert_readout, nonneg_condition, pdf,
                        pdf_mass, prob_zero, random_xstate, simulate_ensemble,
                        symmetric_config, update)
from helpers import wootters_concurrence


@pytest.fixture(scope="module")
def cfg():
    return symmetric_config(tau_m=0.60, eta_m=0.22, gamma=0.5, dt=0.01, T=1.6)


@pytest.fixture(scope="module")
def asym_cfg():
    # detuned levels and gamma large enough that the zero atom is populated
    return MeasConfig((-1.5, 0.3, -0.2, 1.2), 0.22, 0.4, 0.01, 1.6)


class TestConcurrenceFormula:
    def test_product_state_is_separable(self):
        assert concurrence(XState.product_x()) == 0.0

    def test_bell_state_is_maximal(self):
        assert concurrence(XState(0.0, 0.5, 0.5, 0.0, 0.5)) == 1.0

    def test_plain_value(self):
        assert concurrence(XState(0.1, 0.4, 0.4, 0.1, 0.3)) == pytest.approx(0.4, abs=1e-15)

    def test_against_general_wootters_recipe(self):
        gen = np.random.default_rng(21)
        states = [XState(0.1, 0.4, 0.4, 0.1, 0.3)] + [random_xstate(gen) for _ in range(200)]
        for x in states:
            assert concurrence(x) == pytest.approx(
                wootters_concurrence(full_matrix(x)), abs=1e-12)

    def test_path_version_matches_scalar(self):
        gen = np.random.default_rng(22)
        arr = np.stack([random_xstate(gen).to_array() for _ in range(50)])
        path = concurrence_path(arr)
        for k in range(50):
            assert path[k] == concurrence(XState.from_array(arr[k]))


class TestReadoutRelation:
    def test_matches_update_route(self, cfg):
        gen = np.random.default_rng(23)
        worst = 0.0
        for _ in range(1000):
            x0 = random_xstate(gen)
            t = float(gen.uniform(0.02, 2.0))
            v = float(gen.uniform(cfg.dv[0] - 4, cfg.dv[3] + 4))
            ct = c_of_readout(v, t, x0, cfg)
            post = update(x0, v, t, cfg)
            ref = 2.0 * (post.x5 - math.sqrt(max(post.x1 * post.x4, 0.0)))
            worst = max(worst, abs(ct - ref) / max(abs(ref), 1e-30))
        assert worst < 1e-10

    def test_symmetric_closed_form(self, cfg):
        x0 = XState.product_x()
        vs = np.linspace(-9.0, 9.0, 181)
        for t in (0.05, 0.3, 0.8, 1.6):
            diff = np.abs(c_of_readout(vs, t, x0, cfg) - c_readout_symmetric(vs, t, cfg))
            assert diff.max() < 1e-12

    def test_vanishes_at_long_times(self, cfg):
        val = c_of_readout(0.0, 60.0, XState.product_x(), cfg)
        assert 0.0 < val < math.exp(-cfg.gamma * 60.0) * 1.001

    def test_even_and_decreasing_in_magnitude(self, cfg):
        x0 = XState.product_x()
        vs = np.linspace(0.0, 8.0, 200)
        vals = c_of_readout(vs, 0.8, x0, cfg)
        assert np.all(np.diff(vals) < 0.0)
        assert np.allclose(vals, c_of_readout(-vs, 0.8, x0, cfg), atol=1e-15)


class TestNonnegCondition:
    def test_symmetric_always_holds_when_measurement_beats_dephasing(self, cfg):
        x0 = XState.product_x()
        for v in (-5.0, 0.0, 5.0):
            assert nonneg_condition(x0, cfg, 0.5, v)

    def test_boundary_gamma_equals_beta14(self):
        cfg = symmetric_config(dv_mag=1.0, eta_m=0.5, gamma=1.0, dt=0.01, T=1.0)
        assert derived_params(cfg).beta_14 == pytest.approx(1.0)
        assert not nonneg_condition(XState.product_x(), cfg, 0.5, 0.0)

    def test_medium_setup_satisfied(self, cfg):
        # beta14 = 3.33/us clearly beats gamma = 0.5/us
        assert nonneg_condition(XState.product_x(), cfg, 1.0, 0.0)

    def test_rejects_other_initial_states(self, cfg):
        with pytest.raises(ValueError):
            nonneg_condition(XState.pure(1), cfg, 0.5, 0.0)


class TestCMax:
    def test_zero_at_time_zero_limit(self, cfg):
        assert c_max(1e-12, cfg) == pytest.approx(0.0, abs=1e-11)

    def test_known_value(self):
        # b = 10/3, gamma = 0.5, t = 1
        cfg = symmetric_config(tau_m=0.60, eta_m=0.22, gamma=0.5, dt=0.01, T=1.6)
        assert derived_params(cfg).beta_14 == pytest.approx(10.0 / 3.0, rel=1e-12)
        assert c_max(1.0, cfg) == pytest.approx(0.5511933967950644, rel=1e-12)

    def test_is_the_peak_of_the_readout_map(self, cfg):
        x0 = XState.product_x()
        for t in (0.2, 0.9):
            vs = np.linspace(-6, 6, 301)
            vals = c_of_readout(vs, t, x0, cfg)
            assert vals.max() <= c_max(t, cfg) + 1e-12
            assert vals[150] == pytest.approx(c_max(t, cfg), rel=1e-12)

    def test_rejects_asymmetric(self, asym_cfg):
        with pytest.raises(Exception):
            c_max(0.5, asym_cfg)

    def test_numeric_agrees_with_closed_form(self, cfg):
        x0 = XState.product_x()
        for t in (0.3, 1.1):
            assert c_max_numeric(t, x0, cfg) == pytest.approx(c_max(t, cfg), abs=1e-10)


class TestInversion:
    def test_round_trip_symmetric(self, cfg):
        x0 = XState.product_x()
        for t in (0.3, 0.8, 1.4):
            cm = c_max(t, cfg)
            for frac in (1e-6, 0.1, 0.5, 0.9, 0.9999):
                c = frac * cm
                vm, vp = invert_readout(c, t, x0, cfg)
                assert vm == pytest.approx(-vp, abs=1e-12)
                assert c_of_readout(vp, t, x0, cfg) == pytest.approx(c, abs=1e-10)

    def test_roots_merge_at_the_peak(self, cfg):
        cm = c_max(0.8, cfg)
        vm, vp = invert_readout(cm * (1 - 1e-12), 0.8, XState.product_x(), cfg)
        assert abs(vm) < 1e-3 and abs(vp) < 1e-3

    def test_no_solution_above_cutoff(self, cfg):
        with pytest.raises(NoSolutionError):
            invert_readout(c_max(0.8, cfg) * 1.01, 0.8, XState.product_x(), cfg)

    def test_round_trip_general(self, asym_cfg):
        x0 = XState.product_x()
        for t in (0.4, 1.0):
            cm = c_max_numeric(t, x0, asym_cfg)
            for frac in (0.05, 0.5, 0.95):
                c = frac * cm
                vm, vp = invert_readout(c, t, x0, asym_cfg)
                assert vm < vp
                assert c_of_readout(vm, t, x0, asym_cfg) == pytest.approx(c, abs=1e-9)
                assert c_of_readout(vp, t, x0, asym_cfg) == pytest.approx(c, abs=1e-9)


class TestDensity:
    def test_normalization_symmetric(self, cfg):
        x0 = XState.product_x()
        for t in (0.3, 1.0):
            total = pdf_mass(t, x0, cfg) + prob_zero(t, x0, cfg)
            assert total == pytest.approx(1.0, abs=1e-4)

    def test_normalization_with_atom(self, asym_cfg):
        x0 = XState.product_x()
        total = pdf_mass(0.9, x0, asym_cfg) + prob_zero(0.9, x0, asym_cfg)
        assert total == pytest.approx(1.0, abs=1e-4)

    def test_density_is_cdf_slope(self, cfg, asym_cfg):
        x0 = XState.product_x()
        for c_fg, t in ((cfg, 0.8), (asym_cfg, 0.9)):
            cm = c_max_numeric(t, x0, c_fg)
            for frac in (0.2, 0.6):
                c = frac * cm
                h = 1e-7
                slope = (cdf(c + h, t, x0, c_fg) - cdf(c - h, t, x0, c_fg)) / (2 * h)
                assert pdf(c, t, x0, c_fg) == pytest.approx(slope, rel=1e-5)

    def test_symmetric_jacobian_formula(self, cfg):
        # independent density through the explicit arccosh inversion derivative
        x0 = XState.product_x()
        t = 0.8
        d = derived_params(cfg)
        bt = d.beta_14 * t
        amp = math.exp(-cfg.gamma * t) - math.exp(-bt)
        from halfparity import mixture_density
        for c in (0.1, 0.3, 0.5 * c_max(t, cfg)):
            g = (amp / c - 1.0) * math.exp(bt)
            dvdc = cfg.s / (2 * cfg.delta_v * t) * (amp / c ** 2) * math.exp(bt) \
                / math.sqrt(g * g - 1.0)
            vp = cfg.s / (2 * cfg.delta_v * t) * math.acosh(g)
            expected = 2.0 * mixture_density(vp, x0, t, cfg) * dvdc
            assert pdf(c, t, x0, cfg) == pytest.approx(expected, rel=1e-10)

    def test_zero_outside_support(self, cfg):
        x0 = XState.product_x()
        assert pdf(-0.1, 0.8, x0, cfg) == 0.0
        assert pdf(c_max(0.8, cfg) + 0.01, 0.8, x0, cfg) == 0.0

    def test_bimodality_onset(self, cfg):
        # early: single lobe near the cutoff; late: a second lobe near zero
        x0 = XState.product_x()
        early, late = 0.2, 1.4
        assert pdf(0.02, early, x0, cfg) < pdf(0.9 * c_max(early, cfg), early, x0, cfg)
        assert pdf(0.02, late, x0, cfg) > pdf(0.5 * c_max(late, cfg), late, x0, cfg)
        assert pdf(0.02, early, x0, cfg) < pdf(0.02, late, x0, cfg)


class TestZeroAtom:
    def test_no_atom_for_symmetric_product(self, cfg):
        for t in (0.1, 0.8, 1.5):
            assert prob_zero(t, XState.product_x(), cfg) == 0.0

    def test_pure_ground_state_never_entangles(self, cfg):
        assert prob_zero(0.5, XState.pure(1), cfg) == 1.0

    def test_vanishing_coherence_gives_unit_atom(self, cfg):
        assert prob_zero(0.5, XState(0.25, 0.25, 0.25, 0.25, 0.0), cfg) == 1.0

    def test_monte_carlo_fraction_matches(self, asym_cfg):
        x0 = XState.product_x()
        snap_times = [0.4, 0.9, 1.4]
        raw = simulate_ensemble(x0, asym_cfg, 20_000, seed=555, snapshot_times=snap_times)
        for col, t in enumerate(snap_times):
            conc = concurrence_path(raw.states[:, col, :])
            frac = float((conc == 0.0).mean())
            pz = prob_zero(t, x0, asym_cfg)
            se = math.sqrt(pz * (1 - pz) / raw.states.shape[0])
            assert abs(frac - pz) < 4 * se + 1e-4

    def test_grows_as_states_collapse_when_dephasing_dominates(self):
        # gamma above the even-odd distinguishability rate: every collapse
        # destination is separable, so the atom rises monotonically toward 1
        cfg = MeasConfig((-0.8, 0.2, -0.2, 1.4), 0.22, 0.8, 0.01, 1.6)
        x0 = XState.product_x()
        ts = [0.2, 0.5, 1.0, 2.0, 4.0, 8.0]
        vals = [prob_zero(t, x0, cfg) for t in ts]
        assert all(b > a for a, b in zip(vals, vals[1:]))
        assert vals[-1] > 0.9


def test_no_sample_ever_exceeds_the_bound(medium_cfg, medium_ensemble):
    # sharp-cutoff property over every grid point of a 10^4 ensemble
    bound = c_max(medium_ensemble.times[1:], medium_cfg)
    excess = medium_ensemble.concurrences[:, 1:] - bound
    assert float(excess.max()) < 1e-9


class TestConcurrencePdfObject:
    def test_fields_and_masses(self, cfg):
        dist = ConcurrencePdf(0.8, cfg, XState.product_x())
        assert dist.c_max == pytest.approx(c_max(0.8, cfg), rel=1e-12)
        assert dist.zero_atom == 0.0
        edges = np.arange(0.0, dist.c_max + 0.015, 0.015)
        edges[-1] = max(edges[-1], dist.c_max)
        masses = dist.bin_masses(edges)
        assert masses.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(masses >= -1e-12)

    def test_density_vector_evaluation(self, cfg):
        dist = ConcurrencePdf(0.8, cfg, XState.product_x())
        cs = np.linspace(0.01, dist.c_max * 0.99, 11)
        dens = dist.density(cs)
        assert dens.shape == cs.shape
        assert np.all(dens > 0.0)


class TestHistogramGrid:
    def test_columns_sum_to_one(self, cfg):
        grid = histogram_grid(XState.product_x(), cfg, [0.0, 0.3, 0.8, 1.4], 0.015)
        sums = grid.mass.sum(axis=1)
        assert np.allclose(sums, 1.0, atol=1e-6)

    def test_no_mass_above_cutoff(self, cfg):
        times = [0.3, 0.8, 1.4]
        grid = histogram_grid(XState.product_x(), cfg, times, 0.015)
        for row, t in enumerate(times):
            cm = c_max(t, cfg)
            above = grid.edges[:-1] >= cm
            assert np.all(grid.mass[row, above] == 0.0)

    def test_ridge_follows_the_bound(self, cfg):
        # before the zero-concurrence lobe takes over, the densest bin sits
        # just below the cutoff curve
        times = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
        grid = histogram_grid(XState.product_x(), cfg, times, 0.015)
        for row, t in enumerate(times):
            peak_bin = int(np.argmax(grid.mass[row]))
            bound_bin = int(c_max(t, cfg) / 0.015)
            assert abs(peak_bin - bound_bin) <= 2

    def test_normalized_mode(self, cfg):
        grid = histogram_grid(XState.product_x(), cfg, [0.4, 0.8], 0.015, normalize=True)
        assert np.allclose(grid.mass.max(axis=1), 1.0)

    def test_time_zero_row_is_degenerate(self, cfg):
        grid = histogram_grid(XState.product_x(), cfg, [0.0, 0.5], 0.015)
        assert grid.mass[0, 0] == 1.0
        assert grid.mass[0, 1:].sum() == 0.0

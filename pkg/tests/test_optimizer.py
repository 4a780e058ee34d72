import math

import numpy as np
import pytest

from swiptbeam.linalg import numerical_rank
from swiptbeam.model import (
    Scenario,
    generate_channels,
    harvested_all,
    polygon_topology,
    rates_all,
    rrh_powers,
    sinr_all,
)
from swiptbeam.optimizer import (
    OuterState,
    bisection_gamma_max,
    build_peak_power_program,
    gamma_upper_bound,
    h_of_gamma,
    max_min_beamforming,
    separate_beamforming_baseline,
    solve_max_energy,
    update_rates,
    update_weights,
)
from swiptbeam.options import SolverOptions


def make_scenario(seed=0, L=2, M=2, K=2, J=1, energy=2.0, capacity=np.inf,
                  q_min=0.0, radius=25.0):
    topo = polygon_topology(L, K, J, radius=radius, seed=seed)
    h, g = generate_channels(topo, M, 3.0, seed + 1000)
    return Scenario(L=L, M=M, K=K, J=J, h=h, g=g,
                    E=np.full(L, energy), C=np.full(L, capacity), q_min=q_min)


def single_user_scenario(seed=3, energy=1.0):
    """L=1, K=1, J=0: gamma_max and h(gamma) have closed forms."""
    topo = polygon_topology(1, 1, 0, radius=20.0, seed=seed)
    h, g = generate_channels(topo, 2, 3.0, seed)
    return Scenario(L=1, M=2, K=1, J=0, h=h, g=g, E=np.array([energy]),
                    C=np.array([np.inf]), q_min=0.0)


class TestSolveMaxEnergy:
    def test_single_rrh_single_er_matched_beam(self):
        topo = polygon_topology(1, 0, 1, radius=15.0, seed=4)
        h, g = generate_channels(topo, 2, 3.0, 4)
        scen = Scenario(L=1, M=2, K=0, J=1, h=h, g=g, E=np.array([2.0]),
                        C=np.array([np.inf]), q_min=0.0)
        q_max, v = solve_max_energy(scen)
        expected = scen.eta * 2.0 * np.linalg.norm(g[0]) ** 2
        assert q_max == pytest.approx(expected, rel=1e-5)
        # sampling oracle: no random unit beam at full power beats it
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            u = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            u *= math.sqrt(2.0) / np.linalg.norm(u)
            q = scen.eta * abs(np.vdot(g[0], u)) ** 2
            assert q <= q_max * (1 + 1e-6)

    def test_extracted_beams_achieve_q_max(self):
        scen = make_scenario(seed=6, L=2, M=2, K=0, J=2, energy=3.0)
        q_max, v = solve_max_energy(scen)
        achieved = harvested_all(scen, np.zeros((0, scen.n)), v).min()
        assert achieved >= (1 - 1e-3) * q_max

    def test_vanishing_energy_budget(self):
        # E must be positive in a Scenario; a vanishing budget stands in for
        # the no-transmit-power case and must drive q_max to zero
        scen = make_scenario(seed=7, L=2, M=2, K=0, J=1, energy=1e-12)
        q_max, _ = solve_max_energy(scen)
        assert q_max < 1e-15

    def test_no_ers(self):
        scen = make_scenario(seed=8, J=0)
        q_max, v = solve_max_energy(scen)
        assert q_max == 0.0 and v.shape == (0, scen.n)


class TestPeakPowerProgram:
    def test_single_user_closed_form(self):
        scen = single_user_scenario()
        gamma = 10.0
        h, _, _ = h_of_gamma(scen, gamma)
        expected = gamma * scen.sigma2 / (scen.E[0] * np.linalg.norm(scen.h[0]) ** 2)
        assert h == pytest.approx(expected, rel=1e-5)

    def test_constraint_count(self):
        scen = make_scenario(seed=9, L=2, M=2, K=2, J=1, capacity=10.0, q_min=1e-9)
        state = OuterState(beta=np.ones((2, 2)), rhat=np.ones(2))
        prog = build_peak_power_program(scen, 5.0, state)
        n_finite = int(np.isfinite(scen.C).sum())
        assert len(prog.constraints) == scen.J + n_finite + scen.K + scen.L
        assert len(prog.psd_blocks) == scen.K + scen.J
        assert prog.scalar_vars == [("rho", "free")]

    def test_small_gamma_small_h(self):
        scen = make_scenario(seed=10, q_min=0.0)
        h, _, _ = h_of_gamma(scen, 1e-8)
        assert h < 1e-6

    def test_monotone_in_gamma(self):
        for seed in range(4):
            scen = make_scenario(seed=seed, K=2, J=1, q_min=0.0)
            gammas = np.geomspace(1.0, gamma_upper_bound(scen) * 0.5, 5)
            values = []
            for gamma in gammas:
                h, _, _ = h_of_gamma(scen, gamma)
                values.append(h)
            diffs = np.diff(values)
            assert np.all(diffs >= -1e-8 * np.maximum(1.0, np.abs(values[1:])))

    def test_rejects_nonpositive_gamma(self):
        scen = make_scenario(seed=11)
        with pytest.raises(ValueError):
            build_peak_power_program(scen, 0.0)


class TestGammaUpperBound:
    def test_single_rrh_formula(self):
        scen = single_user_scenario(seed=5, energy=1.7)
        expected = 1.7 * np.linalg.norm(scen.h[0]) ** 2 / scen.sigma2
        assert gamma_upper_bound(scen) == pytest.approx(expected, rel=1e-12)

    def test_bound_dominates_bisection(self):
        scen = make_scenario(seed=12, K=2, J=1)
        res = bisection_gamma_max(scen)
        assert res.gamma <= gamma_upper_bound(scen)


class TestBisection:
    def test_single_user_hits_upper_bound(self):
        scen = single_user_scenario(seed=13)
        res = bisection_gamma_max(scen)
        expected = scen.E[0] * np.linalg.norm(scen.h[0]) ** 2 / scen.sigma2
        assert res.converged
        assert res.gamma == pytest.approx(expected, rel=5e-3)

    def test_h_at_gamma_max_in_band(self):
        for seed in range(5):
            scen = make_scenario(seed=20 + seed, K=2, J=1, q_min=1e-8)
            res = bisection_gamma_max(scen)
            assert res.converged
            h_final = [h for g, h in res.trace if g == res.gamma][-1]
            assert 1.0 - 1e-3 <= h_final <= 1.0

    def test_trace_monotone_when_sorted(self):
        scen = make_scenario(seed=26, K=2, J=1, q_min=1e-8)
        res = bisection_gamma_max(scen)
        pts = sorted(res.trace)
        hs = np.array([min(h, 1e12) for _, h in pts])
        assert np.all(np.diff(hs) >= -1e-8 * np.maximum(1.0, hs[1:]))

    def test_hint_matches_cold_start(self):
        scen = make_scenario(seed=27, K=2, J=1)
        cold = bisection_gamma_max(scen)
        warm = bisection_gamma_max(scen, gamma_hint=cold.gamma * 0.8)
        assert warm.gamma == pytest.approx(cold.gamma, rel=5e-3)
        assert warm.n_solves <= cold.n_solves + 3


class TestUpdates:
    def test_weights_at_zero(self):
        blocks = [np.zeros((4, 4), dtype=complex)]
        beta = update_weights(blocks, 1e-5, 2, 2)
        assert np.allclose(beta, 1e5)

    def test_weights_monotone_in_power(self):
        w = np.zeros(4, dtype=complex)
        w[0] = 1.0
        small = update_weights([np.outer(w, w.conj())], 1e-5, 2, 2)
        big = update_weights([4.0 * np.outer(w, w.conj())], 1e-5, 2, 2)
        assert big[0, 0] < small[0, 0]
        assert big[0, 1] == small[0, 1]  # untouched RRH stays at 1/tau

    def test_rates_match_vector_form_for_rank_one(self):
        scen = make_scenario(seed=30, K=2, J=1)
        rng = np.random.default_rng(31)
        w = rng.standard_normal((2, scen.n)) + 1j * rng.standard_normal((2, scen.n))
        v = rng.standard_normal((1, scen.n)) + 1j * rng.standard_normal((1, scen.n))
        w_blocks = [np.outer(b, b.conj()) for b in w]
        v_blocks = [np.outer(b, b.conj()) for b in v]
        rhat = update_rates(w_blocks, v_blocks, scen)
        assert np.allclose(rhat, rates_all(scen, w, v), rtol=1e-9)


class TestMaxMinBeamforming:
    def test_unlimited_fronthaul_single_outer_round(self):
        scen = make_scenario(seed=40, K=2, J=1, q_min=1e-8)
        sol, states = max_min_beamforming(scen)
        assert sol.status == "Optimal"
        assert len(states) == 1
        res = bisection_gamma_max(
            sol and _tighten_for_test(scen), None)
        assert sol.gamma == pytest.approx(res.gamma, rel=1e-4)

    def test_infeasible_gate(self):
        scen = make_scenario(seed=41, K=2, J=1)
        q_max, _ = solve_max_energy(scen)
        scen_hard = Scenario(L=scen.L, M=scen.M, K=scen.K, J=scen.J, h=scen.h,
                             g=scen.g, E=scen.E, C=scen.C, q_min=1.5 * q_max)
        sol, states = max_min_beamforming(scen_hard)
        assert sol.status == "Infeasible"
        assert sol.q_max == pytest.approx(q_max, rel=1e-6)
        assert states == []

    def test_constraints_hold_and_rank_one(self):
        # assignment-degenerate instance: the reweighting two-cycles, so the
        # run may come back flagged NotConverged, but the returned beams must
        # still satisfy every constraint
        scen = make_scenario(seed=42, K=2, J=1, q_min=2e-8, capacity=6.0)
        sol, _ = max_min_beamforming(scen)
        assert sol.status in ("Optimal", "NotConverged")
        # ER energy met
        assert np.all(sol.harvested >= scen.q_min - 1e-9)
        # power budgets met
        assert np.all(sol.powers <= scen.E * (1 + 1e-9))
        # fronthaul met with the l0 usage
        assert np.all(sol.usages <= scen.C + 1e-9)
        # achieved min SINR close to the bisection target
        assert sol.sinr.min() >= (1 - 1e-3) * sol.gamma

    def test_extracted_sinr_matches_gamma(self):
        scen = make_scenario(seed=43, K=3, J=1, q_min=1e-8)
        sol, _ = max_min_beamforming(scen)
        assert sol.sinr.min() >= (1 - 1e-3) * sol.gamma


def _tighten_for_test(scen):
    from swiptbeam.optimizer import _tightened
    from swiptbeam.options import DEFAULT_OPTIONS
    return _tightened(scen, DEFAULT_OPTIONS)


class TestSeparateBaseline:
    def test_no_ers_equals_joint(self):
        scen = make_scenario(seed=50, K=2, J=0)
        joint, _ = max_min_beamforming(scen)
        sep, _ = separate_beamforming_baseline(scen)
        assert sep.gamma == pytest.approx(joint.gamma, rel=1e-6)

    def test_stage1_meets_targets(self):
        scen = make_scenario(seed=51, K=2, J=2, q_min=3e-8, energy=3.0)
        sol, _ = separate_beamforming_baseline(scen)
        assert sol.status == "Optimal"
        assert np.all(sol.harvested >= scen.q_min - 1e-9)
        assert np.all(sol.powers <= scen.E * (1 + 1e-9))

    def test_joint_at_least_separate(self):
        wins = 0
        total = 0
        for seed in range(5):
            scen = make_scenario(seed=60 + seed, K=2, J=1, q_min=2e-8, energy=2.0)
            joint, _ = max_min_beamforming(scen)
            sep, _ = separate_beamforming_baseline(scen)
            if joint.status != "Optimal" or sep.status != "Optimal":
                continue
            total += 1
            if joint.min_rate >= sep.min_rate - 1e-6:
                wins += 1
        assert total >= 4
        assert wins >= total - 1

    def test_infeasible_gate(self):
        scen = make_scenario(seed=70, K=2, J=1)
        q_max, _ = solve_max_energy(scen)
        scen_hard = Scenario(L=scen.L, M=scen.M, K=scen.K, J=scen.J, h=scen.h,
                             g=scen.g, E=scen.E, C=scen.C, q_min=2.0 * q_max)
        sol, _ = separate_beamforming_baseline(scen_hard)
        assert sol.status == "Infeasible"


class TestRankOneProperty:
    def test_blocks_near_rank_one(self):
        ranks = []
        for seed in range(5):
            scen = make_scenario(seed=80 + seed, K=2, J=1, q_min=1e-8)
            res = bisection_gamma_max(scen)
            blocks = res.w_blocks + res.v_blocks
            top = max(np.real(np.trace(b)) for b in blocks)
            for block in blocks:
                # blocks carrying negligible power count as rank zero
                if np.real(np.trace(block)) > 1e-8 * top:
                    ranks.append(numerical_rank(block, 1e-4))
        assert ranks
        frac = np.mean([r <= 1 for r in ranks])
        assert frac >= 0.9

"""Max-min fair joint beamforming via SDR, bisection and reweighted l1.

The driver `max_min_beamforming` implements the two-step scheme: an outer
loop that refitsthe fronthaul weights beta_kl = 1/(power_kl + tau) and the
rate estimates, around an inner bisection on the common SINR target gamma.
Each bisection step solves the weighted peak-power minimization (epigraph
variable rho, h(gamma) = optimal rho); gamma is achievable iff h(gamma) <= 1.

Internally every solve runs against a slightly tightened copy of the
scenario (energy budgets deflated, RF target inflated, fronthaul capacity
deflated by the option margins) so the vectors recovered by rank-one
extraction still satisfy the *original* constraints strictly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from swiptbeam.linalg import principal_component
from swiptbeam.model import (
    BeamformingSolution,
    Scenario,
    fronthaul_usages,
    rates_all,
    rrh_powers,
    selection_matrix,
)
from swiptbeam.options import DEFAULT_OPTIONS, SolverOptions
from swiptbeam.sdp import ConicProgram, Constraint, SolveStatus, solve

__all__ = [
    "OuterState",
    "BisectionResult",
    "OptimizerError",
    "SolverNumericalError",
    "solve_max_energy",
    "build_peak_power_program",
    "h_of_gamma",
    "gamma_upper_bound",
    "bisection_gamma_max",
    "max_min_beamforming",
    "separate_beamforming_baseline",
    "update_weights",
    "update_rates",
]


class OptimizerError(RuntimeError):
    """Optimization failed in a way the caller cannot retry."""


class SolverNumericalError(OptimizerError):
    """The conic solver hit its numerical limits even after a relaxed retry."""


@dataclass(frozen=True)
class OuterState:
    """Reweighting state: fronthaul weights and rate estimates per iteration."""

    beta: np.ndarray      # (K, L) nonnegative
    rhat: np.ndarray      # (K,) nonnegative, bits/s/Hz
    iteration: int = 0

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        rhat = np.asarray(self.rhat, dtype=float)
        if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(rhat))):
            raise ValueError("outer state must be finite")
        if np.any(beta < 0) or np.any(rhat < 0):
            raise ValueError("outer state must be nonnegative")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "rhat", rhat)


@dataclass
class BisectionResult:
    gamma: float
    w_blocks: list            # K covariance matrices (complex, n x n)
    v_blocks: list            # J covariance matrices
    trace: list               # (gamma, h) pairs in evaluation order
    n_solves: int
    converged: bool
    bracket: tuple            # final (gamma_lo, gamma_hi)
    h_final: float = float("nan")
    capped: bool = False      # ended at a feasibility cap, not at h = 1


def _tightened(scenario: Scenario, options: SolverOptions) -> Scenario:
    c = np.where(np.isinf(scenario.C), np.inf,
                 scenario.C * (1.0 - options.capacity_margin))
    return Scenario(
        L=scenario.L, M=scenario.M, K=scenario.K, J=scenario.J,
        h=scenario.h, g=scenario.g,
        E=scenario.E * (1.0 - options.energy_margin),
        C=c,
        q_min=scenario.q_min * (1.0 + options.q_margin),
        sigma2=scenario.sigma2, eta=scenario.eta,
    )


def _gram(vec: np.ndarray) -> np.ndarray:
    return np.outer(vec, vec.conj())


def _block_trace(mat: np.ndarray, l: int, M: int) -> float:
    return float(np.real(np.trace(mat[l * M:(l + 1) * M, l * M:(l + 1) * M])))


def _solve_or_retry(program: ConicProgram, options: SolverOptions):
    sol = solve(program, options)
    if sol.status is SolveStatus.NUMERICAL_LIMIT:
        sol = solve(program, options.relaxed())
        if sol.status is SolveStatus.NUMERICAL_LIMIT:
            raise SolverNumericalError(
                f"conic solver stalled: {sol.certificate or 'no certificate'}")
    return sol


def _extract_beam(block: np.ndarray, psd_tol: float) -> np.ndarray:
    lam, u = principal_component(block, psd_tol=psd_tol)
    return math.sqrt(max(lam, 0.0)) * u


# ---------------------------------------------------------------------------
# feasibility analysis: maximum supportable RF energy target


def solve_max_energy(scenario: Scenario, options: SolverOptions = DEFAULT_OPTIONS):
    """Best achievable min-ER harvested power, with the energy beams reaching it.

    Energy-only problem: maximize min_j eta * sum_i tr(G_j V_i) under the
    per-RRH budgets; data beams and fronthaul limits do not appear.
    Returns (q_max watts, v beams (J, n)).
    """
    n = scenario.n
    if scenario.J == 0:
        return 0.0, np.zeros((0, n), dtype=complex)
    # objective scale: Cauchy-Schwarz bound on any single ER's harvest
    masks = [slice(l * scenario.M, (l + 1) * scenario.M) for l in range(scenario.L)]
    t_scale = 0.0
    for j in range(scenario.J):
        amp = sum(math.sqrt(scenario.E[l]) * np.linalg.norm(scenario.g[j, masks[l]])
                  for l in range(scenario.L))
        t_scale = max(t_scale, scenario.eta * amp ** 2)
    if t_scale <= 0.0:
        return 0.0, np.zeros((scenario.J, n), dtype=complex)

    # blocks are solved in budget units (V = e_scale * V') so iterates stay O(1)
    e_scale = float(scenario.E.max())
    grams = [_gram(scenario.g[j]) for j in range(scenario.J)]
    cons = []
    for j in range(scenario.J):
        cons.append(Constraint(
            blocks={f"V{i}": scenario.eta * e_scale * grams[j]
                    for i in range(scenario.J)},
            scalars={"t": -t_scale},
            relation=">=", rhs=0.0, name=f"er{j}",
        ))
    for l in range(scenario.L):
        a_l = selection_matrix(l, scenario.L, scenario.M)
        cons.append(Constraint(
            blocks={f"V{j}": a_l for j in range(scenario.J)},
            relation="<=", rhs=float(scenario.E[l] / e_scale), name=f"pw{l}",
        ))
    program = ConicProgram(
        psd_blocks=[(f"V{j}", n) for j in range(scenario.J)],
        scalar_vars=[("t", "nonneg")],
        sense="max",
        objective_scalars={"t": 1.0},
        constraints=cons,
    )
    sol = _solve_or_retry(program, options)
    if sol.status is not SolveStatus.OPTIMAL:
        raise OptimizerError(f"energy feasibility solve ended {sol.status.value}")
    q_max = t_scale * sol.objective_value
    v = np.stack([_extract_beam(e_scale * sol.blocks[f"V{j}"], options.psd_tol)
                  for j in range(scenario.J)])
    return float(q_max), v


# ---------------------------------------------------------------------------
# weighted peak-power minimization at a fixed SINR target (inverse problem)


def build_peak_power_program(scenario: Scenario, gamma: float,
                             state: OuterState | None = None,
                             extra_noise: np.ndarray | None = None,
                             killed: np.ndarray | None = None,
                             kill_cap: float = 1e-8) -> ConicProgram:
    """Epigraph form: min rho subject to the SINR, RF-energy, fronthaul and
    per-RRH power constraints at common SINR target `gamma`.

    Fronthaul rows use the frozen weights beta * rhat from `state`; rows
    whose capacity is unlimited or whose weights are all zero are omitted.
    `extra_noise` adds a per-DR constant to the interference floor (used by
    the separate baseline, where fixed energy beams interfere).  `killed`
    marks DR-RRH links forced out of service: each gets its own power cap
    row tr(W_k A_l) <= kill_cap and drops out of the fronthaul row.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    n = scenario.n
    K, J, L, M = scenario.K, scenario.J, scenario.L, scenario.M
    extra = np.zeros(K) if extra_noise is None else np.asarray(extra_noise, float)
    dead = np.zeros((K, L), dtype=bool) if killed is None else killed

    h_gram = [_gram(scenario.h[k]) for k in range(K)]
    g_gram = [_gram(scenario.g[j]) for j in range(J)]
    sel = [selection_matrix(l, L, M) for l in range(L)]
    w_names = [f"W{k}" for k in range(K)]
    v_names = [f"V{j}" for j in range(J)]

    cons = []
    for j in range(J):
        blocks = {name: g_gram[j] for name in w_names + v_names}
        cons.append(Constraint(blocks=blocks, relation=">=",
                               rhs=scenario.q_min / scenario.eta, name=f"er{j}"))
    if state is not None:
        coeff = state.beta * state.rhat[:, None]         # (K, L)
        for l in range(L):
            if not np.isfinite(scenario.C[l]):
                continue
            nonzero = {w_names[k]: coeff[k, l] * sel[l]
                       for k in range(K) if coeff[k, l] > 0.0 and not dead[k, l]}
            if not nonzero:
                continue
            cons.append(Constraint(blocks=nonzero, relation="<=",
                                   rhs=float(scenario.C[l]), name=f"fh{l}"))
    for k, l in zip(*np.nonzero(dead)):
        cons.append(Constraint(blocks={w_names[k]: sel[l]}, relation="<=",
                               rhs=kill_cap, name=f"kill{k}_{l}"))
    for k in range(K):
        blocks = {w_names[k]: h_gram[k] / gamma}
        for i in range(K):
            if i != k:
                blocks[w_names[i]] = -h_gram[k]
        for j in range(J):
            blocks[v_names[j]] = -h_gram[k]
        cons.append(Constraint(blocks=blocks, relation=">=",
                               rhs=scenario.sigma2 + float(extra[k]), name=f"sinr{k}"))
    for l in range(L):
        blocks = {name: sel[l] for name in w_names + v_names}
        cons.append(Constraint(blocks=blocks, scalars={"rho": -float(scenario.E[l])},
                               relation="<=", rhs=0.0, name=f"pw{l}"))

    return ConicProgram(
        psd_blocks=[(name, n) for name in w_names + v_names],
        scalar_vars=[("rho", "free")],
        sense="min",
        objective_scalars={"rho": 1.0},
        constraints=cons,
    )


def h_of_gamma(scenario: Scenario, gamma: float, state: OuterState | None = None,
               options: SolverOptions = DEFAULT_OPTIONS,
               extra_noise: np.ndarray | None = None,
               killed: np.ndarray | None = None):
    """Optimal weighted peak power at SINR target gamma; +inf when infeasible.

    Returns (h, w_blocks, v_blocks); the block lists are None when the
    problem is infeasible.  Non-decreasing in gamma for a fixed state.
    """
    program = build_peak_power_program(scenario, gamma, state, extra_noise,
                                       killed, kill_cap=1e-3 * options.tau)
    sol = _solve_or_retry(program, options)
    if sol.status is SolveStatus.INFEASIBLE:
        return np.inf, None, None
    if sol.status is not SolveStatus.OPTIMAL:
        raise OptimizerError(f"peak-power solve ended {sol.status.value}")
    w_blocks = [sol.blocks[f"W{k}"] for k in range(scenario.K)]
    v_blocks = [sol.blocks[f"V{j}"] for j in range(scenario.J)]
    return float(sol.objective_value), w_blocks, v_blocks


def gamma_upper_bound(scenario: Scenario) -> float:
    """Cauchy-Schwarz SINR bound: full power, matched beams, no interference."""
    best = 0.0
    for k in range(scenario.K):
        amp = 0.0
        for l in range(scenario.L):
            block = scenario.h[k, l * scenario.M:(l + 1) * scenario.M]
            amp += math.sqrt(scenario.E[l]) * float(np.linalg.norm(block))
        best = max(best, amp ** 2 / scenario.sigma2)
    return best


def bisection_gamma_max(scenario: Scenario, state: OuterState | None = None,
                        options: SolverOptions = DEFAULT_OPTIONS,
                        extra_noise: np.ndarray | None = None,
                        gamma_hint: float | None = None,
                        killed: np.ndarray | None = None) -> BisectionResult:
    """Bisection for the largest achievable common SINR target.

    Searches for gamma with h(gamma) in [1 - eps, 1]; the h <= 1 side is
    required so the returned covariances respect the power budgets.
    Infeasible probes (including numerically degenerate ones at a
    feasibility boundary) count as h = +inf and shrink the upper bound.

    When a fronthaul or RF-energy cap limits gamma before the power ratio
    reaches one, h jumps from below 1 - eps straight to +inf; the search
    then terminates once the bracket width falls below a relative
    resolution and returns the largest feasible probe, flagged `capped`.
    A `gamma_hint` (e.g. the previous outer iteration's result) narrows the
    initial bracket with a geometric expansion around the hint.
    """
    eps = options.eps_bisect
    resolution = 1e-6
    gamma_cap = gamma_upper_bound(scenario)
    if gamma_cap <= 0.0:
        raise OptimizerError("upper SINR bound is zero; no usable channels")

    trace = []
    n_solves = 0
    best = None          # (gamma, h, w, v) with h in [1-eps, 1]
    best_low = None      # largest achievable gamma seen (h <= 1)

    def probe(gamma):
        nonlocal n_solves, best, best_low
        try:
            h, w, v = h_of_gamma(scenario, gamma, state, options, extra_noise,
                                 killed)
        except SolverNumericalError:
            # boundary-degenerate program: treat like an infeasible probe
            h, w, v = np.inf, None, None
        n_solves += 1
        trace.append((gamma, h))
        if h <= 1.0:
            if best_low is None or gamma > best_low[0]:
                best_low = (gamma, h, w, v)
            if h >= 1.0 - eps and (best is None or gamma > best[0]):
                best = (gamma, h, w, v)
        return h

    lo, hi = 0.0, gamma_cap
    if gamma_hint is not None and 0.0 < gamma_hint < gamma_cap:
        h = probe(gamma_hint)
        if h <= 1.0:
            lo = gamma_hint
            step = gamma_hint
            while best is None and n_solves < options.max_bisect_iters:
                step *= 2.0
                cand = min(gamma_hint + step, gamma_cap)
                h = probe(cand)
                if h > 1.0:
                    hi = cand
                    break
                lo = cand
                if cand >= gamma_cap:
                    break
        else:
            hi = gamma_hint

    while best is None and n_solves < options.max_bisect_iters:
        if hi - lo <= resolution * max(hi, 1e-12):
            break
        h = probe(0.5 * (lo + hi))
        gamma = trace[-1][0]
        if h <= 1.0:
            lo = gamma
        else:
            hi = gamma

    if best is not None:
        gamma, h, w, v = best
        return BisectionResult(gamma, w, v, trace, n_solves, True, (lo, hi),
                               h_final=h)
    if best_low is not None:
        gamma, h, w, v = best_low
        resolved = hi - lo <= resolution * max(hi, 1e-12)
        return BisectionResult(gamma, w, v, trace, n_solves, resolved, (lo, hi),
                               h_final=h, capped=True)
    raise OptimizerError(
        f"bisection bracket collapsed to [{lo:.6g}, {hi:.6g}] with no "
        f"achievable SINR target found")


# ---------------------------------------------------------------------------
# reweighted-l1 outer loop


def update_weights(w_blocks, tau: float, L: int, M: int) -> np.ndarray:
    """beta_kl = 1 / (tr(W_k A_l) + tau)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    beta = np.empty((len(w_blocks), L))
    for k, block in enumerate(w_blocks):
        for l in range(L):
            beta[k, l] = 1.0 / (max(_block_trace(block, l, M), 0.0) + tau)
    return beta


def update_rates(w_blocks, v_blocks, scenario: Scenario,
                 extra_noise: np.ndarray | None = None) -> np.ndarray:
    """Rate estimates log2(1 + SINR) from the covariance (trace) forms."""
    K = len(w_blocks)
    extra = np.zeros(K) if extra_noise is None else np.asarray(extra_noise, float)
    rates = np.empty(K)
    for k in range(K):
        h_gram = _gram(scenario.h[k])
        signal = float(np.real(np.tensordot(h_gram.conj(), w_blocks[k], axes=2)))
        interf = scenario.sigma2 + float(extra[k])
        for i, block in enumerate(w_blocks):
            if i != k:
                interf += float(np.real(np.tensordot(h_gram.conj(), block, axes=2)))
        for block in v_blocks:
            interf += float(np.real(np.tensordot(h_gram.conj(), block, axes=2)))
        rates[k] = math.log2(1.0 + max(signal, 0.0) / interf)
    return rates


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    scale = np.maximum(np.maximum(np.abs(new), np.abs(old)), 1e-12)
    return float(np.max(np.abs(new - old) / scale)) if new.size else 0.0


def _truncate_small_blocks(w: np.ndarray, L: int, M: int, threshold: float) -> np.ndarray:
    """Zero out per-RRH blocks below the association threshold."""
    w = w.copy()
    for k in range(w.shape[0]):
        total = float(np.linalg.norm(w[k]) ** 2)
        if total == 0.0:
            continue
        for l in range(L):
            seg = slice(l * M, (l + 1) * M)
            if float(np.linalg.norm(w[k, seg]) ** 2) < threshold * total:
                w[k, seg] = 0.0
    return w


@dataclass
class _LoopOutput:
    gamma: float
    w_blocks: list
    v_blocks: list
    states: list
    n_bisect: int
    converged: bool


def _reweighted_loop(scen_eff: Scenario, options: SolverOptions,
                     extra_noise: np.ndarray | None = None) -> _LoopOutput:
    """Algorithm: bisection with fronthaul weights refit between rounds.

    Round 0 runs with fronthaul constraints omitted (the dense warm start);
    later rounds freeze beta/rhat from the previous solution.  Stops when
    both change by less than the configured per-entry relative thresholds.
    """
    has_fronthaul = bool(np.any(np.isfinite(scen_eff.C))) and scen_eff.K > 0
    state = None
    states: list = []
    history: list = []
    gamma_hint = None
    n_bisect = 0
    converged = False
    result = None

    max_rounds = options.max_outer_iters if has_fronthaul else 1
    for it in range(max_rounds):
        result = bisection_gamma_max(scen_eff, state, options, extra_noise,
                                     gamma_hint=gamma_hint)
        n_bisect += result.n_solves
        gamma_hint = result.gamma
        beta = update_weights(result.w_blocks, options.tau, scen_eff.L, scen_eff.M)
        rhat = update_rates(result.w_blocks, result.v_blocks, scen_eff, extra_noise)
        states.append(OuterState(beta=beta, rhat=rhat, iteration=it))
        if not result.converged:
            break
        if not has_fronthaul:
            converged = True
            break
        if history:
            if _rel_change(beta, history[-1][0]) <= options.eps_beta and \
                    _rel_change(rhat, history[-1][1]) <= options.eps_rate:
                converged = True
                break
        if len(history) >= 2:
            # reweighting can enter a two-cycle on assignment-degenerate
            # instances; stop early and let the kill phase settle the links
            if _rel_change(beta, history[-2][0]) <= options.eps_beta and \
                    _rel_change(rhat, history[-2][1]) <= options.eps_rate:
                break
        history.append((beta, rhat))
        state = OuterState(beta=beta, rhat=rhat, iteration=it + 1)

    return _LoopOutput(result.gamma, result.w_blocks, result.v_blocks,
                       states, n_bisect, converged)


def _extract_and_polish(scen_eff: Scenario, audit_scenario: Scenario,
                        loop: _LoopOutput, options: SolverOptions,
                        extra_noise: np.ndarray | None = None,
                        fixed_v: np.ndarray | None = None):
    """Extract rank-one beams; force any fronthaul-overweight links to zero.

    A link that survived above the association threshold but was undercounted
    by the frozen weights can leave the true per-RRH usage above capacity.
    Such links get the maximal reweighting pressure (beta = 1/tau) and the
    bisection is re-run, up to `max_kill_rounds` times.  `fixed_v` supplies
    energy beams solved outside this loop (separate baseline) so the usage
    check sees their interference.
    """
    K, L, M = scen_eff.K, scen_eff.L, scen_eff.M
    w_blocks, v_blocks = loop.w_blocks, loop.v_blocks
    last_state = loop.states[-1]
    gamma = loop.gamma
    n_bisect = loop.n_bisect
    usage_cap = audit_scenario.C * (1.0 - 0.1 * options.capacity_margin)
    killed = np.zeros((K, L), dtype=bool)
    w = np.zeros((0, scen_eff.n), dtype=complex)
    v = np.zeros((0, scen_eff.n), dtype=complex)

    for attempt in range(options.max_kill_rounds + 1):
        w = np.stack([_extract_beam(b, options.psd_tol) for b in w_blocks]) \
            if K else np.zeros((0, scen_eff.n), dtype=complex)
        v = np.stack([_extract_beam(b, options.psd_tol) for b in v_blocks]) \
            if v_blocks else np.zeros((0, scen_eff.n), dtype=complex)
        w = _truncate_small_blocks(w, L, M, 1e-2 * options.assoc_threshold)
        if not np.any(np.isfinite(audit_scenario.C)) or K == 0:
            break
        v_for_rates = fixed_v if fixed_v is not None else v
        usage = fronthaul_usages(audit_scenario, w, v_for_rates,
                                 options.assoc_threshold)
        if np.all(usage <= usage_cap) or attempt == options.max_kill_rounds:
            break
        # greedy packing per overloaded RRH: keep the heaviest links while
        # their rates fit under capacity, cut the rest for the re-solve
        rates = rates_all(audit_scenario, w, v_for_rates)
        total = np.linalg.norm(w, axis=1) ** 2
        new_kills = False
        for l in np.nonzero(usage > usage_cap)[0]:
            share = np.array([
                float(np.linalg.norm(w[k, l * M:(l + 1) * M]) ** 2) /
                total[k] if total[k] > 0 else 0.0
                for k in range(K)])
            assoc = share > options.assoc_threshold
            load = 0.0
            for k in np.argsort(-share):
                if not assoc[k] or killed[k, l]:
                    continue
                if load + rates[k] <= usage_cap[l]:
                    load += rates[k]
                elif not killed[k, l]:
                    killed[k, l] = True
                    new_kills = True
        if not new_kills:
            break
        last_state = OuterState(beta=last_state.beta, rhat=last_state.rhat,
                                iteration=last_state.iteration + 1)
        result = bisection_gamma_max(scen_eff, last_state, options, extra_noise,
                                     gamma_hint=gamma, killed=killed)
        n_bisect += result.n_solves
        w_blocks, v_blocks = result.w_blocks, result.v_blocks
        gamma = result.gamma

    return w, v, gamma, n_bisect


def max_min_beamforming(scenario: Scenario, options: SolverOptions = DEFAULT_OPTIONS):
    """Joint information/energy beamforming maximizing the minimum DR rate.

    Returns (BeamformingSolution, [OuterState per iteration]).  When the RF
    target is beyond the feasible maximum the solution comes back with
    status "Infeasible" and `q_max` filled in; when the outer loop hits its
    iteration cap the best iterate is returned flagged "NotConverged".
    """
    options.validate()
    if scenario.K < 1:
        raise ValueError("need at least one data receiver")
    q_max = float("nan")
    if scenario.J > 0:
        q_max, _ = solve_max_energy(scenario, options)
        if scenario.q_min > (1.0 - options.feasibility_margin) * q_max:
            empty = BeamformingSolution.from_vectors(
                scenario, np.zeros((scenario.K, scenario.n), dtype=complex),
                np.zeros((scenario.J, scenario.n), dtype=complex),
                assoc_threshold=options.assoc_threshold,
                status="Infeasible", q_max=q_max)
            return empty, []

    scen_eff = _tightened(scenario, options)
    loop = _reweighted_loop(scen_eff, options)
    w, v, gamma, n_bisect = _extract_and_polish(scen_eff, scenario, loop, options)
    status = "Optimal" if loop.converged else "NotConverged"
    solution = BeamformingSolution.from_vectors(
        scenario, w, v, assoc_threshold=options.assoc_threshold,
        status=status, gamma=gamma, q_max=q_max,
        bisect_iters=n_bisect, outer_iters=len(loop.states))
    return solution, loop.states


# ---------------------------------------------------------------------------
# separate (energy-first) baseline


def _min_power_energy_beams(scenario: Scenario, options: SolverOptions):
    """Stage 1: cheapest energy beams meeting the RF target at every ER."""
    n = scenario.n
    grams = [_gram(scenario.g[j]) for j in range(scenario.J)]
    cons = []
    for j in range(scenario.J):
        cons.append(Constraint(
            blocks={f"V{i}": scenario.eta * grams[j] for i in range(scenario.J)},
            relation=">=", rhs=scenario.q_min, name=f"er{j}"))
    for l in range(scenario.L):
        a_l = selection_matrix(l, scenario.L, scenario.M)
        cons.append(Constraint(
            blocks={f"V{j}": a_l for j in range(scenario.J)},
            relation="<=", rhs=float(scenario.E[l]), name=f"pw{l}"))
    program = ConicProgram(
        psd_blocks=[(f"V{j}", n) for j in range(scenario.J)],
        sense="min",
        objective_blocks={f"V{j}": np.eye(n, dtype=complex)
                          for j in range(scenario.J)},
        constraints=cons,
    )
    sol = _solve_or_retry(program, options)
    if sol.status is SolveStatus.INFEASIBLE:
        return None
    if sol.status is not SolveStatus.OPTIMAL:
        raise OptimizerError(f"stage-1 energy solve ended {sol.status.value}")
    return np.stack([_extract_beam(sol.blocks[f"V{j}"], options.psd_tol)
                     for j in range(scenario.J)])


def separate_beamforming_baseline(scenario: Scenario,
                                  options: SolverOptions = DEFAULT_OPTIONS):
    """Two-stage baseline: satisfy ERs first, then max-min the DR rates.

    Stage 1 minimizes total energy-beam power subject to the RF targets;
    stage 2 fixes those beams, charges their interference to every DR's
    noise floor, and runs the same reweighted bisection over the data beams
    with the leftover per-RRH budgets.
    """
    options.validate()
    if scenario.K < 1:
        raise ValueError("need at least one data receiver")
    if scenario.J == 0:
        return max_min_beamforming(scenario, options)

    q_max, _ = solve_max_energy(scenario, options)
    if scenario.q_min > (1.0 - options.feasibility_margin) * q_max:
        empty = BeamformingSolution.from_vectors(
            scenario, np.zeros((scenario.K, scenario.n), dtype=complex),
            np.zeros((scenario.J, scenario.n), dtype=complex),
            assoc_threshold=options.assoc_threshold,
            status="Infeasible", q_max=q_max)
        return empty, []

    scen_eff = _tightened(scenario, options)
    v = _min_power_energy_beams(scen_eff, options)
    if v is None:
        empty = BeamformingSolution.from_vectors(
            scenario, np.zeros((scenario.K, scenario.n), dtype=complex),
            np.zeros((scenario.J, scenario.n), dtype=complex),
            assoc_threshold=options.assoc_threshold,
            status="Infeasible", q_max=q_max)
        return empty, []

    spent = rrh_powers(np.zeros((0, scenario.n)), v, scenario.L, scenario.M)
    residual = np.maximum(scen_eff.E - spent, 1e-9 * scen_eff.E)
    extra_noise = (np.abs(scenario.h @ v.conj().T) ** 2).sum(axis=1)

    scen_stage2 = Scenario(
        L=scenario.L, M=scenario.M, K=scenario.K, J=0,
        h=scenario.h, g=np.zeros((0, scenario.n), dtype=complex),
        E=residual, C=scen_eff.C, q_min=0.0,
        sigma2=scenario.sigma2, eta=scenario.eta)

    loop = _reweighted_loop(scen_stage2, options, extra_noise)
    w, _, gamma, n_bisect = _extract_and_polish(
        scen_stage2, scenario, loop, options, extra_noise, fixed_v=v)
    status = "Optimal" if loop.converged else "NotConverged"
    solution = BeamformingSolution.from_vectors(
        scenario, w, v, assoc_threshold=options.assoc_threshold,
        status=status, gamma=gamma, q_max=q_max,
        bisect_iters=n_bisect, outer_iters=len(loop.states))
    return solution, loop.states

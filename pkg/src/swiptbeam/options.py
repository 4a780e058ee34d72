"""Tunables shared by the conic solver and the beamforming optimizer."""

from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class SolverOptions:
    """All solver knobs, with defaults sized for network-scale problems.

    Bisection / outer-loop fields follow the two-step algorithm: `eps_bisect`
    bounds |h(gamma) - 1| at termination, `eps_beta` / `eps_rate` are the
    per-entry relative convergence thresholds of the reweighting loop, and
    `tau` is the regularization constant in the weight update
    beta = 1 / (power + tau).

    The `*_margin` fields tighten constraints inside the optimizer (energy
    budgets deflated, RF target inflated, fronthaul capacity deflated) so
    that solutions rebuilt from extracted rank-one vectors still satisfy the
    original constraints with room to spare.
    """

    # reweighted-l1 outer loop
    tau: float = 1e-5                 # watts
    eps_beta: float = 1e-3            # relative, per entry
    eps_rate: float = 1e-3            # relative, per entry
    max_outer_iters: int = 20

    # bisection over the common SINR target
    eps_bisect: float = 1e-3
    max_bisect_iters: int = 50

    # association / feasibility gates
    assoc_threshold: float = 1e-6     # relative to ||w_k||^2
    feasibility_margin: float = 1e-3  # require Q_min <= (1 - margin) * q_max

    # interior-point solver
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_ipm_iters: int = 100
    psd_tol: float = 1e-7

    # internal constraint tightening (see class docstring)
    energy_margin: float = 1e-4
    q_margin: float = 1e-4
    capacity_margin: float = 1e-2

    # extra reweighting rounds forced when the returned solution would
    # otherwise leave dim fronthaul links above the association threshold
    max_kill_rounds: int = 3

    def validate(self) -> None:
        positive = {
            "tau": self.tau,
            "eps_beta": self.eps_beta,
            "eps_rate": self.eps_rate,
            "eps_bisect": self.eps_bisect,
            "gap_tol": self.gap_tol,
            "feas_tol": self.feas_tol,
            "psd_tol": self.psd_tol,
            "assoc_threshold": self.assoc_threshold,
            "feasibility_margin": self.feasibility_margin,
            "max_outer_iters": self.max_outer_iters,
            "max_bisect_iters": self.max_bisect_iters,
            "max_ipm_iters": self.max_ipm_iters,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        for name in ("eps_beta", "eps_rate", "eps_bisect", "assoc_threshold",
                     "feasibility_margin"):
            if not getattr(self, name) < 1:
                raise ValueError(f"{name} must be < 1")

    def relaxed(self, factor: float = 100.0) -> "SolverOptions":
        """Copy with loosened interior-point tolerances (retry policy)."""
        return replace(self, gap_tol=self.gap_tol * factor,
                       feas_tol=self.feas_tol * factor)


DEFAULT_OPTIONS = SolverOptions()

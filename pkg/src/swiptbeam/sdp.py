"""Dense primal-dual interior-point solver for small Hermitian-PSD conic programs.

A :class:`ConicProgram` carries complex Hermitian PSD matrix blocks,
nonnegative and free scalar variables, a linear objective, and linear
constraints over trace inner products.  `solve` runs an infeasible-start
path-following method with Nesterov-Todd scaling and a Mehrotra
predictor-corrector step on the real symmetric embedding of the complex
blocks (trace(T(A) T(B)) = 2 Re trace(A B), so embedded data is divided by
two to keep objective and constraint values unchanged).

Geared to problems with tens of unknowns; everything is dense and
deterministic (no randomized pivoting), so repeated solves of one program
return bit-identical results.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from swiptbeam.linalg import hermitian
from swiptbeam.options import DEFAULT_OPTIONS, SolverOptions

__all__ = [
    "SolveStatus",
    "Constraint",
    "ConicProgram",
    "ConicSolution",
    "ProgramError",
    "solve",
    "assemble_dual_slacks",
]

NONNEG = "nonneg"
FREE = "free"
_RELATIONS = ("<=", ">=", "==")


class ProgramError(ValueError):
    """Malformed conic program (bad dimensions, non-Hermitian data, ...)."""


class SolveStatus(Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_LIMIT = "NumericalLimit"


@dataclass
class Constraint:
    """Linear relation  sum_b tr(F_b X_b) + sum_s a_s x_s  {<=,>=,==}  rhs."""

    blocks: dict = field(default_factory=dict)    # name -> Hermitian ndarray
    scalars: dict = field(default_factory=dict)   # name -> float coefficient
    relation: str = "<="
    rhs: float = 0.0
    name: str = ""


@dataclass
class ConicProgram:
    """Linear objective over PSD blocks and scalars, trace-linear constraints."""

    psd_blocks: list = field(default_factory=list)    # (name, complex dim)
    scalar_vars: list = field(default_factory=list)   # (name, "nonneg"|"free")
    sense: str = "min"
    objective_blocks: dict = field(default_factory=dict)
    objective_scalars: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)

    def block_dims(self) -> dict:
        return dict(self.psd_blocks)

    def validate(self) -> None:
        if self.sense not in ("min", "max"):
            raise ProgramError(f"sense must be min or max, got {self.sense!r}")
        dims = {}
        for name, dim in self.psd_blocks:
            if name in dims:
                raise ProgramError(f"duplicate block name {name!r}")
            if dim < 1:
                raise ProgramError(f"block {name!r} has nonpositive dim {dim}")
            dims[name] = dim
        signs = {}
        for name, sign in self.scalar_vars:
            if name in signs or name in dims:
                raise ProgramError(f"duplicate variable name {name!r}")
            if sign not in (NONNEG, FREE):
                raise ProgramError(f"scalar {name!r} has unknown sign {sign!r}")
            signs[name] = sign

        def check_matrix(mat, name, where):
            m = np.asarray(mat, dtype=complex)
            if m.shape != (dims[name], dims[name]):
                raise ProgramError(f"{where}: matrix for block {name!r} has "
                                   f"shape {m.shape}, expected {dims[name]}")
            if not np.all(np.isfinite(m.view(float))):
                raise ProgramError(f"{where}: non-finite entries for {name!r}")
            if np.max(np.abs(m - m.conj().T)) > 1e-12 * max(1.0, np.max(np.abs(m))):
                raise ProgramError(f"{where}: matrix for block {name!r} is not Hermitian")

        for name, mat in self.objective_blocks.items():
            if name not in dims:
                raise ProgramError(f"objective references unknown block {name!r}")
            check_matrix(mat, name, "objective")
        for name, coeff in self.objective_scalars.items():
            if name not in signs:
                raise ProgramError(f"objective references unknown scalar {name!r}")
            if not np.isfinite(coeff):
                raise ProgramError(f"objective coefficient for {name!r} not finite")
        for idx, con in enumerate(self.constraints):
            where = f"constraint {idx} ({con.name or 'unnamed'})"
            if con.relation not in _RELATIONS:
                raise ProgramError(f"{where}: unknown relation {con.relation!r}")
            if not np.isfinite(con.rhs):
                raise ProgramError(f"{where}: rhs not finite")
            for name, mat in con.blocks.items():
                if name not in dims:
                    raise ProgramError(f"{where}: unknown block {name!r}")
                check_matrix(mat, name, where)
            for name, coeff in con.scalars.items():
                if name not in signs:
                    raise ProgramError(f"{where}: unknown scalar {name!r}")
                if not np.isfinite(coeff):
                    raise ProgramError(f"{where}: coefficient for {name!r} not finite")

    def dump_text(self) -> str:
        """Human-readable listing of the program, for bug reports."""
        out = io.StringIO()
        out.write(f"{self.sense} objective\n")
        for name, dim in self.psd_blocks:
            out.write(f"  psd block {name} (dim {dim})\n")
        for name, sign in self.scalar_vars:
            out.write(f"  scalar {name} ({sign})\n")
        for name, mat in self.objective_blocks.items():
            out.write(f"  obj[{name}] =\n{np.array_str(np.asarray(mat), precision=6)}\n")
        for name, coeff in self.objective_scalars.items():
            out.write(f"  obj[{name}] = {coeff!r}\n")
        for idx, con in enumerate(self.constraints):
            out.write(f"constraint {idx} {con.name!r}: {con.relation} {con.rhs!r}\n")
            for name, mat in con.blocks.items():
                out.write(f"  F[{name}] =\n{np.array_str(np.asarray(mat), precision=6)}\n")
            for name, coeff in con.scalars.items():
                out.write(f"  a[{name}] = {coeff!r}\n")
        return out.getvalue()


@dataclass
class ConicSolution:
    status: SolveStatus
    objective_value: float
    blocks: dict                 # name -> complex Hermitian ndarray
    scalars: dict                # name -> float
    duals: np.ndarray            # per user constraint; inequality duals >= 0
    gap: float
    primal_residual: float
    dual_residual: float
    n_iterations: int
    iteration_log: list = field(default_factory=list)
    certificate: str = ""

    @property
    def is_optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


def _embed_data(mat: np.ndarray) -> np.ndarray:
    """T(A)/2: real-symmetric embedding that preserves trace inner products."""
    m = np.asarray(mat, dtype=complex)
    re, im = 0.5 * m.real, 0.5 * m.imag
    return np.block([[re, -im], [im, re]])


def _unembed_variable(x: np.ndarray, n: int) -> np.ndarray:
    """Recover the complex block represented by an embedded iterate."""
    re = 0.5 * (x[:n, :n] + x[n:, n:])
    im = 0.5 * (x[n:, :n] - x[:n, n:])
    return hermitian(re + 1j * im)


class _Compiled:
    """Standard-form data: min <c,x>, A x = b, x in PSD^d1 x ... x R+^p x R^q."""

    def __init__(self, program: ConicProgram):
        program.validate()
        self.program = program
        self.sign = 1.0 if program.sense == "min" else -1.0

        self.block_names = [name for name, _ in program.psd_blocks]
        self.cdims = [dim for _, dim in program.psd_blocks]
        self.dims = [2 * d for d in self.cdims]

        nn_names = [n for n, s in program.scalar_vars if s == NONNEG]
        fr_names = [n for n, s in program.scalar_vars if s == FREE]
        self.nn_names, self.fr_names = nn_names, fr_names

        m = len(program.constraints)
        self.m = m
        n_slack = sum(1 for c in program.constraints if c.relation != "==")
        self.p = len(nn_names) + n_slack
        self.q = len(fr_names)

        nn_index = {n: i for i, n in enumerate(nn_names)}
        fr_index = {n: i for i, n in enumerate(fr_names)}

        # per-block stacked constraint matrices, embedded
        self.F = [np.zeros((m, d, d)) for d in self.dims]
        self.A_nn = np.zeros((m, self.p))
        self.A_fr = np.zeros((m, self.q))
        self.b = np.zeros(m)
        self.row_scale = np.ones(m)
        self.relations = [c.relation for c in program.constraints]

        slack = len(nn_names)
        self.slack_of_row = [-1] * m
        for c_idx, con in enumerate(program.constraints):
            norm = 0.0
            for name, mat in con.blocks.items():
                b_idx = self.block_names.index(name)
                emb = _embed_data(mat)
                self.F[b_idx][c_idx] = emb
                norm = max(norm, float(np.abs(mat).max(initial=0.0)))
            for name, coeff in con.scalars.items():
                if name in nn_index:
                    self.A_nn[c_idx, nn_index[name]] = coeff
                else:
                    self.A_fr[c_idx, fr_index[name]] = coeff
                norm = max(norm, abs(coeff))
            if norm == 0.0:
                norm = 1.0
            self.row_scale[c_idx] = norm
            for b_idx in range(len(self.dims)):
                self.F[b_idx][c_idx] /= norm
            self.A_nn[c_idx] /= norm
            self.A_fr[c_idx] /= norm
            self.b[c_idx] = con.rhs / norm
            if con.relation == "<=":
                self.A_nn[c_idx, slack] = 1.0
                self.slack_of_row[c_idx] = slack
                slack += 1
            elif con.relation == ">=":
                self.A_nn[c_idx, slack] = -1.0
                self.slack_of_row[c_idx] = slack
                slack += 1

        self.C = [np.zeros((d, d)) for d in self.dims]
        for name, mat in program.objective_blocks.items():
            b_idx = self.block_names.index(name)
            self.C[b_idx] = self.sign * _embed_data(mat)
        self.c_nn = np.zeros(self.p)
        self.c_fr = np.zeros(self.q)
        for name, coeff in program.objective_scalars.items():
            if name in nn_index:
                self.c_nn[nn_index[name]] = self.sign * coeff
            else:
                self.c_fr[fr_index[name]] = self.sign * coeff

        self.cone_dim = sum(self.dims) + self.p
        self.c_norm = max(
            [1.0] + [float(np.abs(c).max(initial=0.0)) for c in self.C]
            + [float(np.abs(self.c_nn).max(initial=0.0)),
               float(np.abs(self.c_fr).max(initial=0.0))]
        )
        self.b_norm = max(1.0, float(np.abs(self.b).max(initial=0.0)))

    def apply_A(self, X, u, f):
        out = self.A_nn @ u if self.p else np.zeros(self.m)
        if self.q:
            out = out + self.A_fr @ f
        for Fb, Xb in zip(self.F, X):
            out = out + np.tensordot(Fb, Xb, axes=([1, 2], [0, 1]))
        return out

    def apply_At_block(self, y, b_idx):
        return np.tensordot(y, self.F[b_idx], axes=(0, 0))

    def user_duals(self, y):
        """Lagrange multipliers of the minimization form, in user row scale.

        Inequality multipliers come out nonnegative: a "<=" row contributes
        +lambda * (lhs - rhs) to the Lagrangian, a ">=" row -mu * (lhs - rhs).
        """
        out = np.zeros(self.m)
        for c_idx, rel in enumerate(self.relations):
            val = y[c_idx] / self.row_scale[c_idx]
            out[c_idx] = -val if rel == "<=" else val
        return out

    def internal_duals(self, user_duals):
        y = np.zeros(self.m)
        for c_idx, rel in enumerate(self.relations):
            val = user_duals[c_idx]
            y[c_idx] = (-val if rel == "<=" else val) * self.row_scale[c_idx]
        return y


def _structure_project(x: np.ndarray) -> np.ndarray:
    """Symmetrize and re-impose the complex-embedding block pattern."""
    n = x.shape[0] // 2
    x = 0.5 * (x + x.T)
    a = 0.5 * (x[:n, :n] + x[n:, n:])
    bq = 0.5 * (x[n:, :n] - x[:n, n:])
    top = np.concatenate([a, -bq], axis=1)
    bot = np.concatenate([bq, a], axis=1)
    return np.concatenate([top, bot], axis=0)


def _max_step_psd(X: np.ndarray, dX: np.ndarray) -> float:
    """Largest alpha with X + alpha dX still PSD (X assumed PD)."""
    L = np.linalg.cholesky(X)
    Linv = np.linalg.inv(L)
    M = Linv @ dX @ Linv.T
    lam = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
    if lam >= -1e-14:
        return np.inf
    return -1.0 / lam


def _max_step_orthant(u: np.ndarray, du: np.ndarray) -> float:
    neg = du < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-u[neg] / du[neg]))


class _NTState:
    """Per-iteration Nesterov-Todd scaling data for the PSD blocks."""

    def __init__(self, X, S):
        self.G, self.Ginv, self.W, self.D = [], [], [], []
        for Xb, Sb in zip(X, S):
            Lx = np.linalg.cholesky(Xb)
            Ls = np.linalg.cholesky(Sb)
            U, sig, Vt = np.linalg.svd(Ls.T @ Lx)
            sqrt_sig = np.sqrt(sig)
            G = Lx @ (Vt.T / sqrt_sig)
            Ginv = (Vt * sqrt_sig[:, None]) @ np.linalg.inv(Lx)
            self.G.append(G)
            self.Ginv.append(Ginv)
            self.W.append(G @ G.T)
            self.D.append(sig)


def _initial_point(comp: _Compiled):
    """Mehrotra-style start: least-squares primal/dual shifted into the cone.

    x0 is the minimum-norm solution of A x = b and (y0, s0) the least-squares
    dual pair, each pushed inside the cone by a data-scaled multiple of the
    identity.  Falls back to the identity start if the Gram matrix is
    degenerate.
    """
    m = comp.m
    gram = np.zeros((m, m))
    for Fb in comp.F:
        gram += np.tensordot(Fb, Fb, axes=([1, 2], [1, 2]))
    if comp.p:
        gram += comp.A_nn @ comp.A_nn.T
    if comp.q:
        gram += comp.A_fr @ comp.A_fr.T
    reg = 1e-12 * max(1.0, float(np.max(np.diag(gram))))
    gram += reg * np.eye(m)

    X = [np.eye(d) for d in comp.dims]
    S = [np.eye(d) for d in comp.dims]
    u = np.ones(comp.p)
    su = np.ones(comp.p)
    y = np.zeros(m)
    f = np.zeros(comp.q)
    try:
        z = np.linalg.solve(gram, comp.b)
        ac = comp.apply_A(comp.C, comp.c_nn, comp.c_fr)
        y = np.linalg.solve(gram, ac)
    except np.linalg.LinAlgError:
        return X, S, u, su, np.zeros(m), f

    x_tilde = [comp.apply_At_block(z, b) for b in range(len(comp.dims))]
    s_tilde = [comp.C[b] - comp.apply_At_block(y, b) for b in range(len(comp.dims))]
    u_tilde = comp.A_nn.T @ z if comp.p else np.zeros(0)
    su_tilde = comp.c_nn - comp.A_nn.T @ y if comp.p else np.zeros(0)
    f = comp.A_fr.T @ z if comp.q else np.zeros(0)

    p_scale = 0.1 * (1.0 + max(
        [float(np.abs(xb).max(initial=0.0)) for xb in x_tilde]
        + [float(np.abs(u_tilde).max(initial=0.0)), comp.b_norm]))
    d_scale = 0.1 * (1.0 + max(
        [float(np.abs(sb).max(initial=0.0)) for sb in s_tilde]
        + [float(np.abs(su_tilde).max(initial=0.0)), comp.c_norm]))
    for b in range(len(comp.dims)):
        xb = _structure_project(x_tilde[b])
        sb = _structure_project(s_tilde[b])
        lam_x = float(np.linalg.eigvalsh(xb)[0])
        lam_s = float(np.linalg.eigvalsh(sb)[0])
        X[b] = xb + max(-1.5 * lam_x, p_scale) * np.eye(comp.dims[b])
        S[b] = sb + max(-1.5 * lam_s, d_scale) * np.eye(comp.dims[b])
    if comp.p:
        u = np.maximum(u_tilde, p_scale)
        su = np.maximum(su_tilde, d_scale)
    return X, S, u, su, y, f


def _presolve_unconstrained(comp: _Compiled) -> ConicSolution:
    """Handle m == 0 analytically (cone variables at zero unless unbounded)."""
    unbounded = any(np.linalg.eigvalsh(c).min() < -1e-12 for c in comp.C if c.size)
    unbounded = unbounded or np.any(comp.c_nn < 0) or np.any(comp.c_fr != 0)
    blocks = {name: np.zeros((d, d), dtype=complex)
              for (name, d) in comp.program.psd_blocks}
    scalars = {name: 0.0 for name, _ in comp.program.scalar_vars}
    if unbounded:
        return ConicSolution(SolveStatus.UNBOUNDED, -np.inf * comp.sign, blocks,
                             scalars, np.zeros(0), np.inf, 0.0, 0.0, 0,
                             certificate="objective decreases along a feasible ray")
    return ConicSolution(SolveStatus.OPTIMAL, 0.0, blocks, scalars,
                         np.zeros(0), 0.0, 0.0, 0.0, 0)


def solve(program: ConicProgram, options: SolverOptions = DEFAULT_OPTIONS,
          keep_log: bool = False) -> ConicSolution:
    """Solve a conic program; see module docstring for the method.

    Status is ``Optimal`` when relative duality gap and primal/dual residuals
    all fall below the configured tolerances, ``Infeasible``/``Unbounded``
    when a Farkas-type certificate is found, and ``NumericalLimit`` when the
    iteration cap is hit or the KKT system degenerates.
    """
    options.validate()
    comp = _Compiled(program)
    if comp.m == 0:
        return _presolve_unconstrained(comp)

    nb = len(comp.dims)
    m, p, q = comp.m, comp.p, comp.q

    X, S, u, su, y, f = _initial_point(comp)

    gap_tol, feas_tol = options.gap_tol, options.feas_tol
    log: list = []
    status = SolveStatus.NUMERICAL_LIMIT
    certificate = ""
    it = 0
    small_step_count = 0
    best_score = np.inf
    best_state = None
    best_age = 0

    def objective_pair():
        pobj = sum(float(np.tensordot(Cb, Xb)) for Cb, Xb in zip(comp.C, X))
        pobj += float(comp.c_nn @ u) + float(comp.c_fr @ f)
        dobj = float(comp.b @ y)
        return pobj, dobj

    def restore_best():
        nonlocal X, S, u, su, y, f
        if best_state is not None:
            X, S, u, su, y, f = [x.copy() for x in best_state[0]], \
                [s.copy() for s in best_state[1]], best_state[2].copy(), \
                best_state[3].copy(), best_state[4].copy(), best_state[5].copy()

    def finalize(final_status, cert=""):
        pobj, dobj = objective_pair()
        blocks = {name: _unembed_variable(Xb, cd)
                  for name, Xb, cd in zip(comp.block_names, X, comp.cdims)}
        scalars = {}
        for i, name in enumerate(comp.nn_names):
            scalars[name] = float(u[i])
        for i, name in enumerate(comp.fr_names):
            scalars[name] = float(f[i])
        gap_val = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        rp = comp.b - comp.apply_A(X, u, f)
        rp_norm = float(np.linalg.norm(rp)) / (1.0 + comp.b_norm)
        rd_sq = 0.0
        for b_idx in range(nb):
            rd_sq += float(np.linalg.norm(
                comp.C[b_idx] - comp.apply_At_block(y, b_idx) - S[b_idx]) ** 2)
        if p:
            rd_sq += float(np.linalg.norm(comp.c_nn - comp.A_nn.T @ y - su) ** 2)
        if q:
            rd_sq += float(np.linalg.norm(comp.c_fr - comp.A_fr.T @ y) ** 2)
        rd_norm = np.sqrt(rd_sq) / (1.0 + comp.c_norm)
        return ConicSolution(
            status=final_status,
            objective_value=comp.sign * pobj,
            blocks=blocks,
            scalars=scalars,
            duals=comp.user_duals(y),
            gap=gap_val,
            primal_residual=rp_norm,
            dual_residual=rd_norm,
            n_iterations=it,
            iteration_log=log,
            certificate=cert,
        )

    for it in range(1, options.max_ipm_iters + 1):
        rp = comp.b - comp.apply_A(X, u, f)
        rd_blocks = [comp.C[b] - comp.apply_At_block(y, b) - S[b] for b in range(nb)]
        rd_u = comp.c_nn - (comp.A_nn.T @ y) - su if p else np.zeros(0)
        rd_f = comp.c_fr - (comp.A_fr.T @ y) if q else np.zeros(0)

        gap_inner = sum(float(np.tensordot(Xb, Sb)) for Xb, Sb in zip(X, S))
        gap_inner += float(u @ su)
        mu = gap_inner / comp.cone_dim

        pobj, dobj = objective_pair()
        rel_gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        rp_norm = float(np.linalg.norm(rp)) / (1.0 + comp.b_norm)
        rd_norm = np.sqrt(
            sum(float(np.linalg.norm(r) ** 2) for r in rd_blocks)
            + (float(np.linalg.norm(rd_u) ** 2) if p else 0.0)
            + (float(np.linalg.norm(rd_f) ** 2) if q else 0.0)
        ) / (1.0 + comp.c_norm)

        if keep_log:
            log.append({"iter": it, "pobj": comp.sign * pobj, "dobj": comp.sign * dobj,
                        "mu": mu, "primal_residual": rp_norm, "dual_residual": rd_norm})

        if rel_gap <= gap_tol and rp_norm <= feas_tol and rd_norm <= feas_tol:
            status = SolveStatus.OPTIMAL
            return finalize(status)

        score = max(rel_gap / gap_tol, rp_norm / feas_tol, rd_norm / feas_tol)
        if score < 0.98 * best_score:
            best_score = score
            best_state = ([x.copy() for x in X], [s.copy() for s in S],
                          u.copy(), su.copy(), y.copy(), f.copy())
            best_age = 0
        else:
            best_age += 1
            if best_age >= 30:
                restore_best()
                return finalize(SolveStatus.NUMERICAL_LIMIT,
                                "stalled without meeting tolerances")

        # Farkas-type certificate of primal infeasibility: y with b'y > 0 and
        # A' y in the dual cone's negative (so no x >= 0 can satisfy Ax = b)
        bty = float(comp.b @ y)
        y_inf = float(np.abs(y).max(initial=0.0))
        if bty > 1e-6 * (1.0 + y_inf):
            yn = y / bty
            viol = 0.0
            for b_idx in range(nb):
                aty = comp.apply_At_block(yn, b_idx)
                if aty.size:
                    viol = max(viol, float(np.linalg.eigvalsh(aty)[-1]))
            if p:
                viol = max(viol, float((comp.A_nn.T @ yn).max(initial=0.0)))
            if q:
                viol = max(viol, float(np.abs(comp.A_fr.T @ yn).max(initial=0.0)))
            yn_scale = float(np.abs(yn).max(initial=0.0))
            if viol <= 1e-9 * (1.0 + yn_scale):
                status = SolveStatus.INFEASIBLE
                certificate = (
                    "Farkas certificate: scaled dual ray with b'y = 1, "
                    f"max cone violation {viol:.3e}, |y|_inf {yn_scale:.3e}"
                )
                return finalize(status, certificate)

        # certificate of unboundedness: improving primal ray
        cx = sum(float(np.tensordot(Cb, Xb)) for Cb, Xb in zip(comp.C, X))
        cx += float(comp.c_nn @ u) + float(comp.c_fr @ f)
        x_scale = max(float(np.abs(Xb).max(initial=0.0)) for Xb in X) if nb else 0.0
        x_scale = max(x_scale, float(np.abs(u).max(initial=0.0)) if p else 0.0)
        if cx < -1e-6 * (1.0 + x_scale) and x_scale > 1e6:
            ax = comp.apply_A(X, u, f) / (-cx)
            if float(np.abs(ax).max(initial=0.0)) <= 1e-9:
                status = SolveStatus.UNBOUNDED
                certificate = "improving ray: <c, x> < 0 with A x ~ 0 on the scaled iterate"
                return finalize(status, certificate)

        # divergence heuristic: dual objective exploding with tiny steps
        if bty > 1e8 * comp.b_norm and small_step_count >= 3:
            status = SolveStatus.INFEASIBLE
            certificate = "dual objective diverged past 1e8 with shrinking steps"
            return finalize(status, certificate)

        try:
            nt = _NTState(X, S)
        except np.linalg.LinAlgError:
            restore_best()
            return finalize(SolveStatus.NUMERICAL_LIMIT,
                            "cone iterate lost positive definiteness")
        w2 = u / su if p else np.zeros(0)

        # Schur complement M = A W A' over all cone variables
        M = np.zeros((m, m))
        WFW = []
        for b_idx in range(nb):
            Fb = comp.F[b_idx]
            Wb = nt.W[b_idx]
            wfw = Wb @ Fb @ Wb
            WFW.append(wfw)
            M += np.tensordot(Fb, wfw, axes=([1, 2], [2, 1]))
        if p:
            M += (comp.A_nn * w2) @ comp.A_nn.T

        if q:
            K = np.zeros((m + q, m + q))
            K[:m, :m] = M
            K[:m, m:] = comp.A_fr
            K[m:, :m] = comp.A_fr.T
        else:
            K = M
        try:
            K_lu = np.linalg.inv(K)
        except np.linalg.LinAlgError:
            K_lu = np.linalg.pinv(K)

        def kkt_solve(Rc_blocks, rc_u):
            """Return (dy, df, dX, dS, du, dsu) for the given complementarity targets.

            The reduced (Schur) system inherits the 1/mu conditioning of the
            scaling, so the search direction is polished with a couple of
            rounds of iterative refinement against the full Newton equations.
            """
            R1 = []
            ahat = np.zeros(m)
            for b_idx in range(nb):
                G = nt.G[b_idx]
                D = nt.D[b_idx]
                denom = 0.5 * (D[:, None] + D[None, :])
                R1b = G @ (Rc_blocks[b_idx] / denom) @ G.T
                R1.append(R1b)
                Wb = nt.W[b_idx]
                term = R1b - Wb @ rd_blocks[b_idx] @ Wb
                ahat += np.tensordot(comp.F[b_idx], term, axes=([1, 2], [0, 1]))
            if p:
                r1u = rc_u / su
                ahat += comp.A_nn @ (r1u - w2 * rd_u)
            g_vec = rp - ahat
            if q:
                rhs_vec = np.concatenate([g_vec, rd_f])
            else:
                rhs_vec = g_vec

            sol = K_lu @ rhs_vec
            dy = sol[:m]
            df = sol[m:] if q else np.zeros(0)

            def back_substitute(dy_v, rd_b_list, rd_u_vec, r1u_vec, R1_list):
                dS_l, dX_l = [], []
                for b in range(nb):
                    dSb = rd_b_list[b] - comp.apply_At_block(dy_v, b)
                    dSb = _structure_project(dSb)
                    Wb = nt.W[b]
                    dXb = R1_list[b] - Wb @ dSb @ Wb
                    dXb = _structure_project(dXb)
                    dS_l.append(dSb)
                    dX_l.append(dXb)
                if p:
                    dsu_v = rd_u_vec - comp.A_nn.T @ dy_v
                    du_v = r1u_vec - w2 * dsu_v
                else:
                    dsu_v = np.zeros(0)
                    du_v = np.zeros(0)
                return dX_l, dS_l, du_v, dsu_v

            r1u_loc = r1u if p else np.zeros(0)
            dX, dS, du, dsu = back_substitute(dy, rd_blocks, rd_u, r1u_loc, R1)

            # refinement: only the primal equality can be violated after
            # back-substitution; re-solve for the leftover and accumulate
            zero_blocks = [np.zeros_like(r) for r in R1]
            for _ in range(2):
                e1 = rp - comp.apply_A(dX, du, df)
                e3 = rd_f - (comp.A_fr.T @ dy) if q else np.zeros(0)
                err = float(np.linalg.norm(e1)) + (float(np.linalg.norm(e3)) if q else 0.0)
                if err <= 1e-13 * (1.0 + float(np.linalg.norm(rhs_vec))):
                    break
                rhs_ref = np.concatenate([e1, e3]) if q else e1
                sol_ref = K_lu @ rhs_ref
                ddy = sol_ref[:m]
                ddf = sol_ref[m:] if q else np.zeros(0)
                ddX, ddS, ddu, ddsu = back_substitute(
                    ddy, [np.zeros_like(r) for r in rd_blocks],
                    np.zeros(p), np.zeros(p), zero_blocks)
                dy = dy + ddy
                df = df + ddf
                du = du + ddu
                dsu = dsu + ddsu
                dX = [a + b for a, b in zip(dX, ddX)]
                dS = [a + b for a, b in zip(dS, ddS)]
            return dy, df, dX, dS, du, dsu

        # predictor (affine scaling) step
        Rc_aff = [-np.diag(D ** 2) for D in nt.D]
        rc_u_aff = -u * su if p else np.zeros(0)
        aff = kkt_solve(Rc_aff, rc_u_aff)
        dy_a, df_a, dX_a, dS_a, du_a, dsu_a = aff

        try:
            alpha_p_aff = min(
                min((_max_step_psd(X[b], dX_a[b]) for b in range(nb)), default=np.inf),
                _max_step_orthant(u, du_a) if p else np.inf, 1.0)
            alpha_d_aff = min(
                min((_max_step_psd(S[b], dS_a[b]) for b in range(nb)), default=np.inf),
                _max_step_orthant(su, dsu_a) if p else np.inf, 1.0)
        except np.linalg.LinAlgError:
            restore_best()
            return finalize(SolveStatus.NUMERICAL_LIMIT,
                            "cone iterate lost positive definiteness")

        gap_aff = sum(
            float(np.tensordot(X[b] + alpha_p_aff * dX_a[b],
                               S[b] + alpha_d_aff * dS_a[b]))
            for b in range(nb))
        if p:
            gap_aff += float((u + alpha_p_aff * du_a) @ (su + alpha_d_aff * dsu_a))
        mu_aff = max(gap_aff, 0.0) / comp.cone_dim
        sigma = min(1.0, max((mu_aff / mu) ** 3 if mu > 0 else 0.0, 1e-12))

        # corrector
        Rc_corr = []
        for b_idx in range(nb):
            G, Ginv, D = nt.G[b_idx], nt.Ginv[b_idx], nt.D[b_idx]
            dXhat = Ginv @ dX_a[b_idx] @ Ginv.T
            dShat = G.T @ dS_a[b_idx] @ G
            cross = dXhat @ dShat
            Rc = sigma * mu * np.eye(len(D)) - np.diag(D ** 2) - 0.5 * (cross + cross.T)
            Rc_corr.append(Rc)
        rc_u_corr = sigma * mu - u * su - du_a * dsu_a if p else np.zeros(0)

        dy, df, dX, dS, du, dsu = kkt_solve(Rc_corr, rc_u_corr)

        try:
            alpha_p = min(
                min((_max_step_psd(X[b], dX[b]) for b in range(nb)), default=np.inf),
                _max_step_orthant(u, du) if p else np.inf)
            alpha_d = min(
                min((_max_step_psd(S[b], dS[b]) for b in range(nb)), default=np.inf),
                _max_step_orthant(su, dsu) if p else np.inf)
        except np.linalg.LinAlgError:
            restore_best()
            return finalize(SolveStatus.NUMERICAL_LIMIT,
                            "cone iterate lost positive definiteness")
        # common step for both sides: keeps the pair balanced on badly
        # scaled problems where one side would otherwise sprint ahead
        alpha_c = min(1.0, 0.98 * min(alpha_p, alpha_d))
        alpha_p = alpha_d = alpha_c

        small_step_count = small_step_count + 1 if max(alpha_p, alpha_d) < 1e-2 else 0
        if small_step_count >= 20:
            restore_best()
            return finalize(SolveStatus.NUMERICAL_LIMIT,
                            "step sizes collapsed without meeting tolerances")

        if keep_log and log:
            log[-1].update({"alpha_p": alpha_p, "alpha_d": alpha_d,
                            "sigma": sigma})
        for b_idx in range(nb):
            X[b_idx] = _structure_project(X[b_idx] + alpha_p * dX[b_idx])
            S[b_idx] = _structure_project(S[b_idx] + alpha_d * dS[b_idx])
        if p:
            u = u + alpha_p * du
            su = su + alpha_d * dsu
        if q:
            f = f + alpha_p * df
        y = y + alpha_d * dy

    restore_best()
    return finalize(SolveStatus.NUMERICAL_LIMIT,
                    f"iteration cap {options.max_ipm_iters} reached")


def assemble_dual_slacks(program: ConicProgram, duals: np.ndarray) -> dict:
    """Dual slack blocks S_b = C_b - sum_c y_c F_cb (internal min form).

    `duals` follows the sign convention of :class:`ConicSolution` (inequality
    multipliers nonnegative).  At an optimal solution every block satisfies
    complementary slackness trace(X_b S_b) ~ 0.
    """
    comp = _Compiled(program)
    duals = np.asarray(duals, dtype=float)
    if duals.shape != (comp.m,):
        raise ProgramError(
            f"expected {comp.m} dual values, got shape {duals.shape}")
    y = np.array([-d if rel == "<=" else d
                  for d, rel in zip(duals, comp.relations)])
    out = {}
    for name, dim in program.psd_blocks:
        c_eff = comp.sign * np.asarray(
            program.objective_blocks.get(name, np.zeros((dim, dim))), dtype=complex)
        s = np.array(c_eff)
        for c_idx, con in enumerate(program.constraints):
            if name in con.blocks:
                s = s - y[c_idx] * np.asarray(con.blocks[name], dtype=complex)
        out[name] = hermitian(s)
    return out

"""Dense complex-Hermitian linear algebra used throughout the package.

All matrices here are small (network-sized, dim <= a few tens), so every
routine works on dense arrays.  Eigendecompositions are computed on the
real symmetric embedding of the Hermitian input, which keeps a single real
LAPACK kernel (`numpy.linalg.eigh`) behind every spectral operation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "HermitianMatrix",
    "EigenDecomposition",
    "hermitian",
    "hermitian_eig",
    "is_psd",
    "real_embed",
    "principal_component",
    "numerical_rank",
    "fix_global_phase",
]


@dataclass(frozen=True)
class HermitianMatrix:
    """Dense complex Hermitian matrix, symmetrized on construction.

    `entries` is always exactly equal to its own conjugate transpose; the
    constructor averages A and A^H so downstream code never sees asymmetric
    round-off.
    """

    entries: np.ndarray

    def __init__(self, entries):
        a = np.asarray(entries, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a.view(float))):
            raise ValueError("matrix entries must be finite")
        a = 0.5 * (a + a.conj().T)
        a.flags.writeable = False
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.entries
        return self.entries.astype(dtype)


def hermitian(entries) -> np.ndarray:
    """Symmetrize `entries` into an exact Hermitian ndarray."""
    return HermitianMatrix(entries).entries


def _as_matrix(a) -> np.ndarray:
    if isinstance(a, HermitianMatrix):
        return a.entries
    return hermitian(a)


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues sorted descending with column-aligned unit eigenvectors."""

    eigenvalues: np.ndarray   # (n,) real, descending
    eigenvectors: np.ndarray  # (n, n) complex, column i pairs with eigenvalue i

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.conj().T


def real_embed(a) -> np.ndarray:
    """Map Hermitian A to the real symmetric T(A) = [[Re A, -Im A], [Im A, Re A]].

    For Hermitian A, B: trace(T(A) T(B)) = 2 Re trace(A B), and T(A) is PSD
    iff A is.  Every eigenvalue of A appears twice in T(A).
    """
    a = _as_matrix(a)
    re, im = a.real, a.imag
    return np.block([[re, -im], [im, re]])


def fix_global_phase(u: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Rotate a complex vector so its first nonzero entry is real nonnegative."""
    u = np.asarray(u, dtype=complex)
    scale = np.max(np.abs(u)) if u.size else 0.0
    if scale == 0.0:
        return u.copy()
    idx = int(np.argmax(np.abs(u) > tol * scale))
    pivot = u[idx]
    if pivot == 0:
        return u.copy()
    return u * (pivot.conjugate() / abs(pivot))


def hermitian_eig(a) -> EigenDecomposition:
    """Eigendecomposition of a Hermitian matrix via its real embedding.

    The embedding doubles every eigenvalue; pairs are collapsed by grouping
    near-equal embedded eigenvalues and extracting an orthonormal complex
    basis of half the group size from the corresponding real eigenvectors.
    """
    a = _as_matrix(a)
    n = a.shape[0]
    if n == 0:
        return EigenDecomposition(np.zeros(0), np.zeros((0, 0), dtype=complex))
    t = real_embed(a)
    w, q = np.linalg.eigh(t)          # ascending
    w = w[::-1]
    q = q[:, ::-1]

    # group the doubled spectrum: each group of 2r embedded eigenpairs maps
    # to r complex eigenpairs
    scale = max(abs(w[0]), abs(w[-1]), 1e-300)
    gap_tol = 1e-9 * scale
    eigenvalues = np.empty(n)
    eigenvectors = np.empty((n, n), dtype=complex)
    col = 0
    start = 0
    for stop in range(1, 2 * n + 1):
        if stop < 2 * n and abs(w[stop] - w[start]) <= gap_tol:
            continue
        group = slice(start, stop)
        r = (stop - start) // 2
        if r * 2 != stop - start:
            # numerically split pair: merge with the next group
            if stop < 2 * n:
                continue
            raise np.linalg.LinAlgError("embedded spectrum failed to pair")
        # real embedded eigvec [x; y] represents the complex vector x + i y
        cand = q[:n, group] + 1j * q[n:, group]
        # the 2r candidates span an r-dimensional complex space; take the top
        # r left singular vectors as an orthonormal basis
        u_svd, _, _ = np.linalg.svd(cand, full_matrices=False)
        lam = float(np.mean(w[group]))
        for j in range(r):
            vec = fix_global_phase(u_svd[:, j])
            eigenvalues[col] = lam
            eigenvectors[:, col] = vec
            col += 1
        start = stop
    if col != n:
        raise np.linalg.LinAlgError("embedded spectrum failed to pair")
    order = np.argsort(-eigenvalues, kind="stable")
    return EigenDecomposition(eigenvalues[order], eigenvectors[:, order])


def is_psd(a, tol: float = 1e-9) -> bool:
    """True iff the minimum eigenvalue is >= -tol * max(1, max |eigenvalue|)."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    w = hermitian_eig(a).eigenvalues
    if w.size == 0:
        return True
    floor = tol * max(1.0, float(np.max(np.abs(w))))
    return bool(w[-1] >= -floor)


def principal_component(a, psd_tol: float = 1e-7):
    """Largest eigenpair (lambda1, u1) of a PSD matrix.

    sqrt(lambda1) * u1 is the beamformer extracted from a (numerically)
    rank-one covariance block.  The global phase of u1 is fixed so the first
    nonzero entry is real nonnegative.
    """
    a = _as_matrix(a)
    dec = hermitian_eig(a)
    w = dec.eigenvalues
    if w.size and w[-1] < -psd_tol * max(1.0, float(np.max(np.abs(w)))):
        raise ValueError(
            f"matrix is not PSD within tolerance (min eigenvalue {w[-1]:.3e})"
        )
    lam = float(max(w[0], 0.0)) if w.size else 0.0
    u = dec.eigenvectors[:, 0] if w.size else np.zeros(0, dtype=complex)
    return lam, u


def numerical_rank(a, rel_tol: float = 1e-4) -> int:
    """Count of eigenvalues above rel_tol times the largest one."""
    if not 0.0 < rel_tol < 1.0:
        raise ValueError("rel_tol must lie in (0, 1)")
    w = hermitian_eig(a).eigenvalues
    if w.size == 0 or w[0] <= 0.0:
        return 0
    return int(np.count_nonzero(w > rel_tol * w[0]))

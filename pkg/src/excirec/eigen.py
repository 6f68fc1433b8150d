"""Dense symmetric eigensolver and canonical eigenvector signs.

The solver is a cyclic Jacobi method with round-robin (tournament) ordering:
each round rotates ``n // 2`` disjoint index pairs at once, so a sweep is
``n - 1`` vectorized rounds. It is deterministic and accurate to a few ulps of
``||H||`` for the small matrices used here (n <= a few hundred).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError, InvalidInputError
from .exciton import Hamiltonian

DEGENERACY_TOL = 1e-12
TIE_RTOL = 1e-12


def _tournament(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Round-robin pairings of ``range(n)`` (circle method)."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p, q = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=int), np.array(q, dtype=int)))
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def jacobi_eigh(a, tol: float = 1e-15, max_sweeps: int = 60):
    """Eigen-decompose a real symmetric matrix.

    Returns ``(w, v)`` with ascending eigenvalues ``w`` and eigenvectors in the
    columns of ``v``, like :func:`numpy.linalg.eigh`.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    scale = np.linalg.norm(a)
    if scale == 0:
        return np.zeros(n), v
    rounds = _tournament(n)
    for sweep in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            tau = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            cc, ss = c[:, None], s[:, None]
            # A <- A J (columns), then A <- J^T A (rows), V <- V J
            colp, colq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = colp * c - colq * s
            a[:, q] = colp * s + colq * c
            rowp, rowq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = cc * rowp - ss * rowq
            a[q, :] = ss * rowp + cc * rowq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = vp * c - vq * s
            v[:, q] = vp * s + vq * c
    else:
        raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps", max_sweeps)
    w = a.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def canonicalize_sign(c) -> np.ndarray:
    """Flip the global sign so the largest-magnitude entry is positive.

    Entries within a relative ``1e-12`` of the maximum magnitude count as tied;
    the lowest such index decides.
    """
    c = np.asarray(c, dtype=float)
    mag = np.abs(c)
    peak = mag.max() if c.size else 0.0
    if peak == 0:
        raise DomainError("cannot canonicalize the sign of a zero vector")
    idx = int(np.argmax(mag >= peak * (1.0 - TIE_RTOL)))
    return -c if c[idx] < 0 else c.copy()


def canonicalize_rows(c) -> np.ndarray:
    """Vectorized :func:`canonicalize_sign` over the rows of a matrix."""
    c = np.asarray(c, dtype=float)
    mag = np.abs(c)
    peak = mag.max(axis=1, keepdims=True)
    if np.any(peak == 0):
        raise DomainError("cannot canonicalize the sign of a zero vector")
    idx = np.argmax(mag >= peak * (1.0 - TIE_RTOL), axis=1)
    sign = np.where(c[np.arange(len(c)), idx] < 0, -1.0, 1.0)
    return c * sign[:, None]


@dataclass(frozen=True)
class EigenSystem:
    """Ascending energies; row ``l`` of ``coefficients`` is eigenvector ``c^(l)``."""

    energies: np.ndarray
    coefficients: np.ndarray
    degenerate: bool = False

    @property
    def n(self) -> int:
        return len(self.energies)


def diagonalize(h, method: str = "jacobi") -> EigenSystem:
    """Diagonalize a Hamiltonian and return sign-canonical eigenvectors.

    ``method="lapack"`` delegates to :func:`numpy.linalg.eigh`; it exists as a
    cross-check and is not used by the pipelines.
    """
    m = h.matrix if isinstance(h, Hamiltonian) else np.asarray(h, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"matrix must be square, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("matrix has non-finite entries")
    scale = max(np.abs(m).max(), 1.0)
    if np.abs(m - m.T).max() > 1e-14 * scale:
        raise InvalidInputError("matrix is not symmetric")
    if method == "jacobi":
        w, v = jacobi_eigh(m)
    elif method == "lapack":
        w, v = np.linalg.eigh(m)
    else:
        raise InvalidInputError(f"unknown method {method!r}")
    coeffs = canonicalize_rows(v.T)
    degenerate = bool(len(w) > 1 and np.min(np.diff(w)) < DEGENERACY_TOL)
    if degenerate:
        warnings.warn("degenerate eigenvalues: coefficient targets are ill-defined",
                      RuntimeWarning, stacklevel=2)
    w.setflags(write=False)
    coeffs.setflags(write=False)
    return EigenSystem(w, coeffs, degenerate)

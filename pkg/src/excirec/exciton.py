"""Aggregate geometries, transition dipole couplings and disordered Hamiltonians.

Natural units throughout: lattice spacing ``a = 1``, dipole magnitude
``mu = 1`` and ``1/(4 pi eps0) = 1``, so energies are measured in
``mu**2 / a**3``. The monomer transition energy is zero unless shifted.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidConfigError, InvalidInputError
from .seeding import make_rng


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AggregateGeometry:
    """Monomer positions and unit transition-dipole orientations.

    ``positions`` and ``dipoles`` are ``(N, 3)`` arrays; the aggregate lies in
    the ``z = 0`` plane. ``mu`` is the common dipole magnitude.
    """

    positions: np.ndarray
    dipoles: np.ndarray
    mu: float = 1.0
    kind: str = "chain"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        pos = _frozen(self.positions)
        dip = _frozen(self.dipoles)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise InvalidInputError(f"positions must have shape (N, 3), got {pos.shape}")
        if dip.shape != pos.shape:
            raise InvalidInputError(f"dipoles shape {dip.shape} != positions shape {pos.shape}")
        norms = np.linalg.norm(dip, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise InvalidInputError("dipole orientations must be unit vectors")
        if not np.isfinite(self.mu) or self.mu <= 0:
            raise InvalidConfigError(f"mu must be positive, got {self.mu}")
        if len(pos) > 1:
            d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
            np.fill_diagonal(d, np.inf)
            if d.min() <= 0:
                raise InvalidInputError("monomer positions must be distinct")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "dipoles", dip)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def transition_dipoles(self) -> np.ndarray:
        """Dipole vectors including the magnitude ``mu``."""
        return self.mu * self.dipoles

    @property
    def center(self) -> np.ndarray:
        return self.positions.mean(axis=0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


def _unit_rows(vectors) -> np.ndarray:
    v = np.atleast_2d(np.asarray(vectors, dtype=float))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise InvalidConfigError("dipole vectors must be nonzero")
    return v / norms


def chain(n: int, spacing: float = 1.0, dipole=(1.0, 0.0, 0.0), dipoles=None, mu: float = 1.0):
    """Linear chain along x starting at the origin.

    By default every dipole points along the chain axis (head-to-tail).
    ``dipoles`` overrides orientations per site.
    """
    if int(n) != n or n < 1:
        raise InvalidConfigError(f"chain length must be a positive integer, got {n}")
    if not spacing > 0:
        raise InvalidConfigError(f"spacing must be positive, got {spacing}")
    n = int(n)
    pos = np.zeros((n, 3))
    pos[:, 0] = spacing * np.arange(n)
    if dipoles is None:
        dip = np.repeat(_unit_rows(dipole), n, axis=0)
    else:
        dip = _unit_rows(dipoles)
        if len(dip) != n:
            raise InvalidConfigError(f"expected {n} dipoles, got {len(dip)}")
    return AggregateGeometry(pos, dip, mu, "chain", {"n": n, "spacing": float(spacing)})


def array2d(nx: int, ny: int, spacing_x: float = 1.0, spacing_y: float = 1.0,
            theta_deg: float = 45.0, dipoles=None, mu: float = 1.0):
    """Rectangular ``nx * ny`` array; site index ``m = iy * nx + ix``.

    Default orientations alternate between in-plane angles ``+theta`` (even
    columns ``ix``) and ``-theta`` (odd columns), measured from the x axis.
    """
    for name, v in (("nx", nx), ("ny", ny)):
        if int(v) != v or v < 1:
            raise InvalidConfigError(f"{name} must be a positive integer, got {v}")
    if not (spacing_x > 0 and spacing_y > 0):
        raise InvalidConfigError("spacings must be positive")
    nx, ny = int(nx), int(ny)
    iy, ix = np.divmod(np.arange(nx * ny), nx)
    pos = np.zeros((nx * ny, 3))
    pos[:, 0] = spacing_x * ix
    pos[:, 1] = spacing_y * iy
    if dipoles is None:
        th = np.deg2rad(theta_deg) * np.where(ix % 2 == 0, 1.0, -1.0)
        dip = np.stack([np.cos(th), np.sin(th), np.zeros_like(th)], axis=1)
    else:
        dip = _unit_rows(dipoles)
        if len(dip) != nx * ny:
            raise InvalidConfigError(f"expected {nx * ny} dipoles, got {len(dip)}")
    params = {"nx": nx, "ny": ny, "spacing_x": float(spacing_x), "spacing_y": float(spacing_y),
              "theta_deg": float(theta_deg)}
    return AggregateGeometry(pos, dip, mu, "array2d", params)


def build_geometry(config: dict) -> AggregateGeometry:
    """Build a geometry from a config mapping (``kind`` = ``chain`` | ``array2d``)."""
    cfg = dict(config)
    kind = cfg.pop("kind", "chain")
    if kind == "chain":
        return chain(**cfg)
    if kind == "array2d":
        return array2d(**cfg)
    raise InvalidConfigError(f"unknown geometry kind {kind!r}")


def coupling(geometry: AggregateGeometry, m: int, n: int) -> float:
    """Transition dipole-dipole interaction ``V_mn``."""
    if m == n:
        raise DomainError("coupling is undefined for m == n")
    # evaluate in a fixed pair order so V_mn == V_nm bit for bit
    m, n = min(m, n), max(m, n)
    mu_m = geometry.transition_dipoles[m]
    mu_n = geometry.transition_dipoles[n]
    r = geometry.positions[n] - geometry.positions[m]
    dist = np.sqrt(r @ r)
    u = r / dist
    return float((mu_m @ mu_n - 3.0 * (mu_m @ u) * (mu_n @ u)) / dist**3)


def _pair_geometry(geometry):
    r = geometry.positions[None, :, :] - geometry.positions[:, None, :]
    dist = np.linalg.norm(r, axis=-1)
    np.fill_diagonal(dist, 1.0)
    return r / dist[..., None], dist


def coupling_matrix(geometry: AggregateGeometry) -> np.ndarray:
    """All couplings ``V_mn`` as an exactly symmetric matrix with zero diagonal."""
    mu = geometry.transition_dipoles
    u, dist = _pair_geometry(geometry)
    mu_u = np.einsum("mnk,mk->mn", u, mu)  # mu_m . u_mn
    nu_u = np.einsum("mnk,nk->mn", u, mu)  # mu_n . u_mn
    v = (mu @ mu.T - 3.0 * mu_u * nu_u) / dist**3
    np.fill_diagonal(v, 0.0)
    upper = np.triu(v, 1)
    return upper + upper.T


def max_coupling(geometry: AggregateGeometry) -> float:
    """``max_{m != n} |V_mn|`` of the clean geometry; 1 for a single monomer."""
    if geometry.n < 2:
        return 1.0
    return float(np.abs(coupling_matrix(geometry)).max())


@dataclass(frozen=True)
class DisorderSpec:
    """Disorder strengths in units of the largest clean coupling."""

    sigma_d: float = 0.0
    sigma_od: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_d", "sigma_od"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InvalidConfigError(f"{name} must be finite and non-negative, got {v}")


@dataclass(frozen=True)
class DisorderRealization:
    """One draw of site-energy shifts and coupling-bracket perturbations.

    ``delta_v`` holds the term added inside the dipole-dipole bracket; it is
    divided by ``R_mn**3`` when the Hamiltonian is assembled.
    """

    delta_eps: np.ndarray
    delta_v: np.ndarray

    @property
    def n(self) -> int:
        return len(self.delta_eps)

    @classmethod
    def zero(cls, n: int) -> "DisorderRealization":
        return cls(_frozen(np.zeros(n)), _frozen(np.zeros((n, n))))


def sample_disorder(spec: DisorderSpec, geometry: AggregateGeometry) -> DisorderRealization:
    """Draw Gaussian diagonal and off-diagonal disorder for ``geometry``.

    Site shifts come first from the stream, then the upper triangle of the
    coupling perturbation in row-major order. Both are always drawn so a
    seed fixes the underlying normals regardless of the strengths.
    """
    n = geometry.n
    scale = max_coupling(geometry)
    rng = make_rng(spec.seed)
    deps = rng.standard_normal(n) * (spec.sigma_d * scale)
    iu = np.triu_indices(n, 1)
    dv = np.zeros((n, n))
    dv[iu] = rng.standard_normal(len(iu[0])) * (spec.sigma_od * scale)
    dv = dv + dv.T
    return DisorderRealization(_frozen(deps), _frozen(dv))


@dataclass(frozen=True)
class Hamiltonian:
    matrix: np.ndarray

    def __post_init__(self):
        h = _frozen(self.matrix)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise InvalidInputError(f"Hamiltonian must be square, got {h.shape}")
        object.__setattr__(self, "matrix", h)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def build_hamiltonian(geometry: AggregateGeometry, disorder: DisorderRealization | None = None,
                      site_energy: float = 0.0) -> Hamiltonian:
    """Assemble the single-exciton Hamiltonian, stored exactly symmetric."""
    n = geometry.n
    if disorder is None:
        disorder = DisorderRealization.zero(n)
    if disorder.delta_eps.shape != (n,) or disorder.delta_v.shape != (n, n):
        raise InvalidInputError(
            f"disorder realization of size {disorder.n} does not match geometry of size {n}")
    h = coupling_matrix(geometry)
    if np.any(disorder.delta_v):
        _, dist = _pair_geometry(geometry)
        dv = disorder.delta_v / dist**3
        np.fill_diagonal(dv, 0.0)
        h = h + np.triu(dv, 1) + np.triu(dv, 1).T
    h[np.diag_indices(n)] = site_energy + disorder.delta_eps
    return Hamiltonian(h)

"""Coupled induced-dipole model of a polarizable tip over a molecular aggregate.

Physical units: lengths in nm, dipoles in Debye, frequencies in cm^-1.
Fields are in Debye/nm^3 and polarizabilities in nm^3 (Gaussian convention,
``4 pi eps0 = 1``). ``DEBYE2_PER_NM3_IN_CM`` converts an interaction energy
``Debye^2 / nm^3`` to wavenumbers.

Particle 0 is the tip sphere; particles ``1..N`` are the molecules. The
excitation dipole sits at the sphere center and does not act on the tip.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .errors import DomainError, InvalidConfigError, NumericalError, SingularityError
from .exciton import AggregateGeometry, coupling_matrix
from .nearfield import Spectrum, TipScan, hertz_field

# (1 D)^2 / (1 nm)^3 = 1e-22 J; divided by h c per cm^-1.
DEBYE2_PER_NM3_IN_CM = 1e-22 / (6.62607015e-34 * 2.99792458e10)
SPEED_OF_LIGHT_CM_S = 2.99792458e10


@dataclass(frozen=True)
class TipModel:
    """Drude sphere. Defaults are the published tip parameters."""

    radius: float = 2.5          # nm
    eps_b: float = 9.0
    eps_env: float = 1.0
    omega_p: float = 7.26e4      # cm^-1
    gamma_p: float = 400.0       # cm^-1
    v_f: float = 1.39e8          # cm/s

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidConfigError(f"tip radius must be positive, got {self.radius}")
        if not self.eps_env > 0:
            raise InvalidConfigError(f"eps_env must be positive, got {self.eps_env}")

    @property
    def surface_damping(self) -> float:
        """``v_F / a_r`` expressed in cm^-1."""
        return self.v_f / (self.radius * 1e-7) / (2 * np.pi * SPEED_OF_LIGHT_CM_S)


@dataclass(frozen=True)
class MolecularResonance:
    omega_m: float = 2.0e4       # cm^-1
    gamma_m: float = 1.0         # cm^-1
    mu: float = 7.4              # Debye

    def __post_init__(self):
        if not self.gamma_m > 0:
            raise InvalidConfigError(f"gamma_m must be positive, got {self.gamma_m}")


@dataclass(frozen=True)
class LocalFieldSystem:
    """Aggregate in physical units plus an optional polarizable tip.

    ``geometry`` is in lattice units; positions are scaled by ``spacing``
    (nm). ``tip=None`` switches the tip polarizability off. ``gap`` is the
    distance between the tip edge and the aggregate plane, so the excitation
    dipole sits at ``z_dip = gap + radius``.
    """

    geometry: AggregateGeometry
    resonance: MolecularResonance = field(default_factory=MolecularResonance)
    tip: TipModel | None = field(default_factory=TipModel)
    spacing: float = 1.25        # nm
    gap: float = 1.25            # nm

    def __post_init__(self):
        if not self.spacing > 0:
            raise InvalidConfigError("spacing must be positive")
        if not self.gap >= 0:
            raise InvalidConfigError("tip gap must be non-negative")

    @property
    def n(self) -> int:
        return self.geometry.n

    @property
    def positions(self) -> np.ndarray:
        return self.geometry.positions * self.spacing

    @property
    def dipoles(self) -> np.ndarray:
        """Transition dipoles in Debye."""
        return self.geometry.dipoles * self.resonance.mu

    @property
    def tip_radius(self) -> float:
        return 0.0 if self.tip is None else self.tip.radius

    @property
    def z_dip(self) -> float:
        return self.gap + self.tip_radius

    def physical_geometry(self) -> AggregateGeometry:
        return AggregateGeometry(self.positions, self.geometry.dipoles, self.resonance.mu,
                                 self.geometry.kind, dict(self.geometry.params))

    def exciton_frequencies(self) -> np.ndarray:
        """Eigenfrequencies (cm^-1) of the bare exciton Hamiltonian, ascending."""
        v = coupling_matrix(self.physical_geometry()) * DEBYE2_PER_NM3_IN_CM
        return self.resonance.omega_m + np.linalg.eigvalsh(v)

    def lattice_scan(self, scan: TipScan) -> TipScan:
        """Convert a scan given in lattice units to nm at this system's ``z_dip``."""
        pos = scan.positions * self.spacing
        pos[:, 2] = self.z_dip
        return TipScan(pos, self.z_dip, scan.dip_moment, scan.grid_shape)


def drude_epsilon(omega, tip: TipModel):
    """Drude dielectric function with a finite-size damping correction."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise DomainError("omega must be positive")
    wp2 = tip.omega_p**2
    bulk = wp2 / (omega * (omega - 1j * tip.gamma_p))
    small = wp2 / (omega * (omega - 1j * (tip.gamma_p + tip.surface_damping)))
    return tip.eps_b + bulk - small


def _tip_scalar(omega, tip: TipModel | None):
    if tip is None:
        return np.zeros_like(np.asarray(omega, dtype=float), dtype=complex)
    eps = drude_epsilon(omega, tip)
    denom = eps + 2 * tip.eps_env
    if np.any(np.abs(denom) < 1e-12 * np.abs(eps).max()):
        bad = np.atleast_1d(omega)[np.argmin(np.abs(np.atleast_1d(denom)))]
        raise SingularityError(f"tip plasmon pole (eps + 2 eps_env = 0) at omega = {bad}")
    return -tip.radius**3 * (eps - tip.eps_env) / denom


def tip_polarizability(omega: float, tip: TipModel | None) -> np.ndarray:
    """Isotropic sphere polarizability tensor (nm^3)."""
    return complex(_tip_scalar(omega, tip)) * np.eye(3)


def molecular_polarizability(omega: float, mu, omega_m: float, gamma_m: float) -> np.ndarray:
    """Rank-one Lorentzian polarizability ``-(mu (x) mu) / (omega - omega_m + i gamma_m)``.

    ``mu`` is in Debye; the result is in nm^3.
    """
    mu = np.asarray(mu, dtype=float)
    return -DEBYE2_PER_NM3_IN_CM * np.outer(mu, mu) / (omega - omega_m + 1j * gamma_m)


def dipole_tensor(r_m, r_n) -> np.ndarray:
    """Static dipole tensor ``(I - 3 R^ R^) / R^3``; the field at ``m`` is ``-T P_n``."""
    r = np.asarray(r_m, dtype=float) - np.asarray(r_n, dtype=float)
    d2 = r @ r
    if d2 == 0:
        raise SingularityError("dipole tensor of coincident points")
    return (np.eye(3) - 3.0 * np.outer(r, r) / d2) / d2**1.5


def _polarizabilities(omega, sys: LocalFieldSystem):
    alphas = [tip_polarizability(omega, sys.tip)]
    res = sys.resonance
    for mu in sys.dipoles:
        alphas.append(molecular_polarizability(omega, mu, res.omega_m, res.gamma_m))
    return alphas


def interaction_matrix(particles: np.ndarray) -> np.ndarray:
    """Block matrix of dipole tensors with zero diagonal blocks, ``(3K, 3K)``."""
    k = len(particles)
    t = np.zeros((3 * k, 3 * k))
    for m in range(k):
        for n in range(m + 1, k):
            tmn = dipole_tensor(particles[m], particles[n])
            t[3 * m:3 * m + 3, 3 * n:3 * n + 3] = tmn
            t[3 * n:3 * n + 3, 3 * m:3 * m + 3] = tmn
    return t


def external_fields(sys: LocalFieldSystem, r_dip, d) -> np.ndarray:
    """Excitation field at every particle, ``(N+1, 3)``; zero at the tip."""
    e = np.zeros((sys.n + 1, 3))
    e[1:] = hertz_field(sys.positions, np.asarray(r_dip, dtype=float), d)
    return e


def solve_induced_dipoles(omega: float, sys: LocalFieldSystem, r_dip, d=(0.0, 0.0, 1.0),
                          couple: bool = True) -> np.ndarray:
    """Self-consistent induced dipoles ``P_0..P_N`` (Debye), shape ``(N+1, 3)``.

    Solves ``P_m + alpha_m sum_{n != m} T_mn P_n = alpha_m E_m`` as one dense
    complex system by LU with partial pivoting. ``couple=False`` drops all
    ``T`` blocks.
    """
    r_dip = np.asarray(r_dip, dtype=float)
    particles = np.vstack([r_dip[None, :], sys.positions])
    size = 3 * len(particles)
    alpha = np.zeros((size, size), dtype=complex)
    for k, a in enumerate(_polarizabilities(omega, sys)):
        alpha[3 * k:3 * k + 3, 3 * k:3 * k + 3] = a
    t = interaction_matrix(particles) if couple else np.zeros((size, size))
    m = np.eye(size) + alpha @ t
    rhs = alpha @ external_fields(sys, r_dip, d).ravel()
    try:
        p = np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular induced-dipole system, cond ~ {np.linalg.cond(m):.3g}") from exc
    resid = np.linalg.norm(m @ p - rhs)
    if resid > 1e-10 * max(np.linalg.norm(rhs), 1e-300):
        raise NumericalError(
            f"induced-dipole residual {resid:.3g} too large, cond ~ {np.linalg.cond(m):.3g}")
    return p.reshape(-1, 3)


def absorption_at(omega: float, sys: LocalFieldSystem, r_dip, d=(0.0, 0.0, 1.0)) -> float:
    """``Im sum_m P_m . E_m^ext`` in Debye^2/nm^3."""
    p = solve_induced_dipoles(omega, sys, r_dip, d)
    e = external_fields(sys, r_dip, d)
    return float(np.imag(np.sum(p * e)))


def absorption_map(sys: LocalFieldSystem, scan: TipScan, omega) -> np.ndarray:
    """Absorption on a ``(N_omega, N_tip)`` grid.

    Uses that each molecular polarizability is rank one along its dipole:
    writing ``P_m = p_m mu^_m`` and eliminating the tip dipole leaves an
    ``N x N`` system per (omega, tip position) that is algebraically identical
    to the full ``3(N+1)`` one.
    """
    omega = np.asarray(omega, dtype=float)
    res = sys.resonance
    n = sys.n
    uhat = sys.geometry.dipoles
    pos = sys.positions
    # B_mn = mu^_m . T_mn mu^_n
    b = np.zeros((n, n))
    for m in range(n):
        for k in range(m + 1, n):
            b[m, k] = b[k, m] = uhat[m] @ dipole_tensor(pos[m], pos[k]) @ uhat[k]
    # 1/s_m with s_m = -K mu^2 / (omega - omega_m + i gamma)
    inv_s = -(omega - res.omega_m + 1j * res.gamma_m) / (DEBYE2_PER_NM3_IN_CM * res.mu**2)
    alpha_t = _tip_scalar(omega, sys.tip)
    eye = np.eye(n)
    out = np.empty((len(omega), scan.n_tip))
    for i, r_dip in enumerate(scan.positions):
        e = np.einsum("mk,mk->m", uhat, hertz_field(pos, r_dip, scan.dip_moment))
        if sys.tip is None:
            mats = inv_s[:, None, None] * eye + b
        else:
            r = pos - r_dip
            d2 = np.sum(r * r, axis=1)
            # u_m = T_0m mu^_m
            u = (uhat - 3.0 * r * (np.sum(r * uhat, axis=1) / d2)[:, None]) / d2[:, None] ** 1.5
            mats = inv_s[:, None, None] * eye + b - alpha_t[:, None, None] * (u @ u.T)
        rhs = np.broadcast_to(e, (len(omega), n))[..., None]
        p = np.linalg.solve(mats, rhs)[..., 0]
        out[:, i] = np.imag(p @ e)
    return out


def default_freq_grid(sys: LocalFieldSystem, n_omega: int = 2000, pad: float = 50.0) -> np.ndarray:
    """Uniform grid over the exciton band padded by ``pad * gamma_m``."""
    w = sys.exciton_frequencies()
    g = sys.resonance.gamma_m
    return np.linspace(w.min() - pad * g, w.max() + pad * g, n_omega)


@dataclass(frozen=True)
class PeakSlice:
    omega: float
    grid_index: int
    spectrum: Spectrum


def peak_slices_from_map(values: np.ndarray, omega, scan: TipScan, prominence: float = 1e-3,
                         min_separation: int = 2) -> list[PeakSlice]:
    """Spatially integrate, locate clear maxima, return the spatial slice at each.

    A maximum is kept when its prominence is at least ``prominence`` times
    the global maximum of the integrated spectrum.
    """
    omega = np.asarray(omega, dtype=float)
    total = values.sum(axis=1)
    top = total.max()
    if not top > 0:
        return []
    idx, _ = find_peaks(total, prominence=prominence * top, distance=min_separation)
    return [PeakSlice(float(omega[i]), int(i), Spectrum(values[i], scan)) for i in idx]


def extract_peak_slices(sys: LocalFieldSystem, scan: TipScan, omega=None, prominence: float = 1e-3,
                        min_separation: int = 2) -> list[PeakSlice]:
    """Full pipeline: absorption map over ``omega`` then peak slicing.

    ``scan`` must already be in nm at the system's ``z_dip`` (see
    :meth:`LocalFieldSystem.lattice_scan`).
    """
    if omega is None:
        omega = default_freq_grid(sys)
    values = absorption_map(sys, scan, omega)
    return peak_slices_from_map(values, omega, scan, prominence, min_separation)

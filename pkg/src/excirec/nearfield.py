"""Hertzian-dipole excitation and spatially resolved absorption spectra."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .eigen import EigenSystem
from .errors import InvalidConfigError, InvalidInputError, SingularityError
from .exciton import AggregateGeometry
from .seeding import make_rng

Z_HAT = (0.0, 0.0, 1.0)


@dataclass(frozen=True)
class TipScan:
    """Tip (excitation dipole) positions at a fixed height above the aggregate.

    Grid scans are stored row-major: ``grid_shape = (ny, nx)`` with x running
    fastest. Line scans have ``grid_shape = (n_tip,)``.
    """

    positions: np.ndarray
    z_dip: float
    dip_moment: np.ndarray = field(default_factory=lambda: np.array(Z_HAT))
    grid_shape: tuple = ()

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or len(pos) < 1:
            raise InvalidConfigError(f"scan positions must have shape (N_tip, 3), got {pos.shape}")
        if not self.z_dip > 0:
            raise InvalidConfigError(f"z_dip must be positive, got {self.z_dip}")
        if not np.allclose(pos[:, 2], self.z_dip, rtol=0, atol=1e-12):
            raise InvalidConfigError("all scan positions must lie at z = z_dip")
        d = np.array(self.dip_moment, dtype=float)
        if d.shape != (3,):
            raise InvalidConfigError("dip_moment must be a 3-vector")
        shape = tuple(self.grid_shape) or (len(pos),)
        if int(np.prod(shape)) != len(pos):
            raise InvalidConfigError(f"grid_shape {shape} does not match {len(pos)} positions")
        pos.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "dip_moment", d)
        object.__setattr__(self, "grid_shape", shape)

    @property
    def n_tip(self) -> int:
        return len(self.positions)


def line_scan(geometry: AggregateGeometry, n_tip: int = 512, span: float = 40.0,
              z_dip: float = 2.0, dip_moment=Z_HAT) -> TipScan:
    """Evenly spaced tip positions along x, centered on the aggregate."""
    if n_tip < 1 or not span > 0:
        raise InvalidConfigError("line scan needs n_tip >= 1 and span > 0")
    c = geometry.center
    x = c[0] + np.linspace(-span / 2, span / 2, n_tip)
    pos = np.column_stack([x, np.full(n_tip, c[1]), np.full(n_tip, float(z_dip))])
    return TipScan(pos, float(z_dip), np.asarray(dip_moment, dtype=float), (n_tip,))


def grid_scan(geometry: AggregateGeometry, nx: int = 256, ny: int = 256, margin: float = 5.0,
              z_dip: float = 2.0, dip_moment=Z_HAT) -> TipScan:
    """Rectangular tip grid covering the aggregate footprint plus ``margin``."""
    if nx < 1 or ny < 1 or margin < 0:
        raise InvalidConfigError("grid scan needs nx, ny >= 1 and margin >= 0")
    lo = geometry.positions[:, :2].min(axis=0) - margin
    hi = geometry.positions[:, :2].max(axis=0) + margin
    gx = np.linspace(lo[0], hi[0], nx)
    gy = np.linspace(lo[1], hi[1], ny)
    yy, xx = np.meshgrid(gy, gx, indexing="ij")
    pos = np.column_stack([xx.ravel(), yy.ravel(), np.full(nx * ny, float(z_dip))])
    return TipScan(pos, float(z_dip), np.asarray(dip_moment, dtype=float), (ny, nx))


def build_scan(geometry: AggregateGeometry, config: dict | None = None) -> TipScan:
    """Scan from a config mapping; defaults depend on the geometry kind."""
    cfg = dict(config or {})
    kind = cfg.pop("kind", "grid" if geometry.kind == "array2d" else "line")
    if kind == "line":
        return line_scan(geometry, **cfg)
    if kind == "grid":
        return grid_scan(geometry, **cfg)
    raise InvalidConfigError(f"unknown scan kind {kind!r}")


def hertz_field(r_obs, r_dip, d=Z_HAT) -> np.ndarray:
    """Near-zone field of a point dipole ``d`` at ``r_dip``, evaluated at ``r_obs``.

    Broadcasts over leading dimensions of ``r_obs`` and ``r_dip``.
    """
    r = np.asarray(r_obs, dtype=float) - np.asarray(r_dip, dtype=float)
    d = np.asarray(d, dtype=float)
    r2 = np.sum(r * r, axis=-1, keepdims=True)
    if np.any(r2 == 0):
        raise SingularityError("field evaluated at the dipole position")
    rd = np.sum(r * d, axis=-1, keepdims=True)
    inv_r3 = r2 ** -1.5
    return 3.0 * r * rd * inv_r3 / r2 - d * inv_r3


def field_projections(geometry: AggregateGeometry, scan: TipScan) -> np.ndarray:
    """``G[i, m] = mu_m . E(R_m; R_dip_i)`` with shape ``(N_tip, N)``."""
    e = hertz_field(geometry.positions[None, :, :], scan.positions[:, None, :], scan.dip_moment)
    return np.einsum("imk,mk->im", e, geometry.transition_dipoles)


def absorption_strength(c, geometry: AggregateGeometry, r_dip, d=Z_HAT) -> float:
    """Absorption into the state with coefficients ``c`` for one tip position."""
    c = np.asarray(c, dtype=float)
    if c.shape != (geometry.n,):
        raise InvalidInputError(f"coefficient vector of length {c.size} for {geometry.n} sites")
    e = hertz_field(geometry.positions, np.asarray(r_dip, dtype=float), d)
    amp = np.sum(c * np.einsum("mk,mk->m", geometry.transition_dipoles, e))
    return float(amp * amp)


@dataclass(frozen=True)
class Spectrum:
    values: np.ndarray
    scan: TipScan
    state_index: int | None = None
    noise_sigma: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.scan.n_tip,):
            raise InvalidInputError(f"{v.size} values for a scan of {self.scan.n_tip} positions")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("spectrum values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def scan_spectra(coefficients, geometry: AggregateGeometry, scan: TipScan,
                 projections: np.ndarray | None = None) -> np.ndarray:
    """Absorption of many states at once: ``(n_states, N_tip)``."""
    c = np.atleast_2d(np.asarray(coefficients, dtype=float))
    if c.shape[1] != geometry.n:
        raise InvalidInputError(f"coefficient vectors of length {c.shape[1]} for {geometry.n} sites")
    g = field_projections(geometry, scan) if projections is None else projections
    amp = c @ g.T
    return amp * amp


def scan_spectrum(c, geometry: AggregateGeometry, scan: TipScan,
                  state_index: int | None = None) -> Spectrum:
    return Spectrum(scan_spectra(c, geometry, scan)[0], scan, state_index, 0.0)


def add_noise(spectrum: Spectrum, sigma_n: float, seed: int) -> Spectrum:
    """Add Gaussian noise with std ``sigma_n * max(values)`` at every tip position."""
    if not np.isfinite(sigma_n) or sigma_n < 0:
        raise InvalidConfigError(f"sigma_n must be non-negative, got {sigma_n}")
    if sigma_n == 0:
        return spectrum
    noisy = noisy_values(spectrum.values, sigma_n, make_rng(seed))
    return replace(spectrum, values=noisy, noise_sigma=float(sigma_n))


def noisy_values(values: np.ndarray, sigma_n: float, rng: np.random.Generator) -> np.ndarray:
    """Row-wise relative noise for a 1D or 2D array of spectra."""
    values = np.asarray(values)
    peak = values.max(axis=-1, keepdims=True)
    return values + rng.standard_normal(values.shape) * (sigma_n * peak)


@dataclass(frozen=True)
class FrequencyMap:
    omega: np.ndarray
    values: np.ndarray  # (N_omega, N_tip)


def frequency_map(es: EigenSystem, geometry: AggregateGeometry, scan: TipScan, gamma: float,
                  n_omega: int = 1000, omega=None) -> FrequencyMap:
    """Lorentzian-dressed spatio-spectral map ``sum_l A_l(R) L_gamma(omega - E_l)``.

    The default frequency grid spans ``[min E - 5 gamma, max E + 5 gamma]``.
    """
    if not gamma > 0:
        raise InvalidConfigError(f"gamma must be positive, got {gamma}")
    if omega is None:
        omega = np.linspace(es.energies.min() - 5 * gamma, es.energies.max() + 5 * gamma, n_omega)
    omega = np.asarray(omega, dtype=float)
    spectra = scan_spectra(es.coefficients, geometry, scan)
    lor = (gamma / np.pi) / ((omega[:, None] - es.energies[None, :]) ** 2 + gamma**2)
    return FrequencyMap(omega, lor @ spectra)


def write_spectrum_csv(path, spectrum: Spectrum) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "value"])
        for p, v in zip(spectrum.scan.positions, spectrum.values):
            w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(v))])


def read_spectrum_csv(path) -> np.ndarray:
    """Return the ``value`` column of a spectrum CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "value" not in rows[0]:
        raise InvalidInputError(f"{path}: expected a CSV with a 'value' column")
    return np.array([float(r["value"]) for r in rows])


def write_map_csv(path, fmap: FrequencyMap) -> None:
    """One row per frequency: ``omega, v_0, ..., v_{N_tip-1}``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["omega"] + [f"tip_{i}" for i in range(fmap.values.shape[1])])
        for om, row in zip(fmap.omega, fmap.values):
            w.writerow([repr(float(om))] + [f"{x:.10g}" for x in row])

"""Black-box reconstruction of coefficients from a spectrum.

The cost of a candidate is the mean squared difference between its spectrum
(after normalizing it to unit length) and the target spectrum. Three
derivative-free minimizers are provided: Nelder-Mead, differential evolution
(rand/1/bin) and a Gaussian-process surrogate with expected improvement.
One cost evaluation counts as one iteration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .eigen import canonicalize_sign
from .errors import DegenerateCandidateError, InvalidConfigError, InvalidInputError
from .exciton import AggregateGeometry
from .nearfield import TipScan, field_projections
from .seeding import make_rng

METHODS = ("nelder_mead", "differential_evolution", "gp_surrogate")


@dataclass(frozen=True)
class BaselineProblem:
    target: np.ndarray
    geometry: AggregateGeometry
    scan: TipScan
    max_iterations: int = 1000
    target_cost: float = 1e-10
    lower: float = -1.0
    upper: float = 1.0
    projections: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        target = np.asarray(self.target, dtype=float)
        if target.shape != (self.scan.n_tip,):
            raise InvalidInputError(f"target of shape {target.shape} for a scan of {self.scan.n_tip} points")
        if self.max_iterations < 1:
            raise InvalidConfigError("max_iterations must be >= 1")
        if not self.lower < self.upper:
            raise InvalidConfigError("lower bound must be below the upper bound")
        object.__setattr__(self, "target", target)
        if self.projections is None:
            object.__setattr__(self, "projections", field_projections(self.geometry, self.scan))

    @property
    def dim(self) -> int:
        return self.geometry.n

    @classmethod
    def from_coefficients(cls, c, geometry, scan, **kw) -> "BaselineProblem":
        g = field_projections(geometry, scan)
        c = np.asarray(c, dtype=float)
        return cls((g @ c) ** 2, geometry, scan, projections=g, **kw)

    def evaluate(self, x) -> float:
        return cost(x, self)

    def finalize(self, x) -> np.ndarray:
        """Report form of a candidate: unit norm, canonical sign."""
        return canonicalize_sign(np.asarray(x, dtype=float) / np.linalg.norm(x))

    def spectrum(self, candidate) -> np.ndarray:
        x = np.asarray(candidate, dtype=float)
        norm = np.linalg.norm(x)
        if norm == 0:
            raise DegenerateCandidateError("zero candidate cannot be normalized")
        return (self.projections @ (x / norm)) ** 2


def cost(candidate, problem: BaselineProblem) -> float:
    """Mean squared spectrum mismatch of the normalized candidate."""
    x = np.asarray(candidate, dtype=float)
    if x.shape != (problem.dim,):
        raise InvalidInputError(f"candidate of shape {x.shape}, expected ({problem.dim},)")
    diff = problem.spectrum(x) - problem.target
    return float(diff @ diff / diff.size)


@dataclass(frozen=True)
class QuadraticProblem:
    """Toy problem ``sum_i w_i (x_i - x*_i)^2`` with a known minimum at ``x*``."""

    center: np.ndarray
    weights: np.ndarray = None
    max_iterations: int = 1000
    target_cost: float = 1e-10
    lower: float = -1.0
    upper: float = 1.0

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float)
        w = np.ones_like(center) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != center.shape or np.any(w <= 0):
            raise InvalidConfigError("weights must be positive and match the center")
        if np.any(center < self.lower) or np.any(center > self.upper):
            raise InvalidConfigError("quadratic center must lie inside the bounds")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.center.size

    def evaluate(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.center
        return float(np.sum(self.weights * d * d))

    def finalize(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float).copy()


@dataclass
class OptimizeResult:
    method: str
    seed: int
    candidate: np.ndarray
    cost: float
    iterations: int
    converged: bool
    restarts: int = 0
    # best cost after each evaluation
    trace: np.ndarray = field(default=None, repr=False)

    def to_record(self, truth=None) -> dict:
        from .nn.loss import loss

        rec = {"method": self.method, "seed": int(self.seed), "iterations": int(self.iterations),
               "best_cost": float(self.cost), "converged": bool(self.converged),
               "restarts": int(self.restarts), "candidate": [float(v) for v in self.candidate]}
        if truth is not None:
            rec["loss"] = float(loss(truth, self.candidate))
        return rec


class _Stop(Exception):
    pass


class _Budget:
    """Counts evaluations, tracks the incumbent and stops at the target or the cap."""

    def __init__(self, problem: BaselineProblem):
        self.problem = problem
        self.n = 0
        self.best_x = None
        self.best_f = np.inf
        self.trace = []
        self.restarts = 0

    @property
    def left(self) -> int:
        return self.problem.max_iterations - self.n

    def __call__(self, x) -> float:
        if self.left <= 0 or self.best_f <= self.problem.target_cost:
            raise _Stop
        x = np.clip(np.asarray(x, dtype=float), self.problem.lower, self.problem.upper)
        try:
            f = self.problem.evaluate(x)
        except DegenerateCandidateError:
            f = np.inf
        self.n += 1
        if f < self.best_f:
            self.best_f, self.best_x = f, x.copy()
        self.trace.append(self.best_f)
        if self.best_f <= self.problem.target_cost or self.left <= 0:
            raise _Stop
        return f


# -- Nelder-Mead -------------------------------------------------------------

def _flat(edges, ratio) -> bool:
    sv = np.linalg.svd(edges, compute_uv=False)
    return bool(sv[-1] <= ratio * sv[0])


def _nelder_mead(f, x0, step, lower, upper, xtol=1e-8, max_evals=None, flat=1e-14, clip_moves=True):
    """Standard Nelder-Mead (1, 2, 0.5, 0.5) on the box.

    Returns ``(x, fx, status)`` with status ``"converged"`` (simplex shrunk
    below ``xtol``), ``"degenerate"`` (vertices lost affine independence,
    smallest/largest edge singular value below ``flat``; ``flat=None`` skips
    the check) or ``"budget"``. With ``clip_moves=False`` vertices may leave
    the box and ``f`` is expected to handle that.
    """
    n = len(x0)
    if clip_moves:
        clip = lambda v: np.clip(v, lower, upper)  # noqa: E731
    else:
        clip = lambda v: v  # noqa: E731
    simplex = [clip(np.asarray(x0, dtype=float))]
    for i in range(n):
        v = simplex[0].copy()
        v[i] += step if v[i] + step <= np.broadcast_to(upper, v.shape)[i] else -step
        simplex.append(v)
    simplex = np.array(simplex)
    fs = np.array([f(v) for v in simplex])
    evals = n + 1
    while max_evals is None or evals < max_evals:
        order = np.argsort(fs, kind="stable")
        simplex, fs = simplex[order], fs[order]
        edges = simplex[1:] - simplex[0]
        if np.max(np.abs(edges)) <= xtol:
            return simplex[0], fs[0], "converged"
        if flat is not None and _flat(edges, flat):
            return simplex[0], fs[0], "degenerate"
        centroid = simplex[:-1].mean(axis=0)
        xr = clip(centroid + (centroid - simplex[-1]))
        fr = f(xr)
        evals += 1
        if fr < fs[0]:
            xe = clip(centroid + 2.0 * (centroid - simplex[-1]))
            fe = f(xe)
            evals += 1
            simplex[-1], fs[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if fr < fs[-2]:
            simplex[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = clip(centroid + 0.5 * (xr - centroid))
        else:
            xc = clip(centroid + 0.5 * (simplex[-1] - centroid))
        fc = f(xc)
        evals += 1
        if fc < min(fr, fs[-1]):
            simplex[-1], fs[-1] = xc, fc
            continue
        simplex[1:] = simplex[0] + 0.5 * (simplex[1:] - simplex[0])
        fs[1:] = [f(v) for v in simplex[1:]]
        evals += n
    i = int(np.argmin(fs))
    return simplex[i], fs[i], "budget"


def _run_nelder_mead(budget: _Budget, rng, step: float = 0.1) -> None:
    """Nelder-Mead from seeded uniform starts until the target or the budget.

    A simplex that shrinks onto a point short of the target has found a local
    minimum, so the search starts again from a fresh point. A degenerate
    simplex gets one fresh restart; a second one ends the run unconverged.
    Moves are not clipped (the budget evaluates the clipped point): clipping
    flattens the simplex onto a box face it can never leave.
    """
    p = budget.problem
    degenerate = 0
    while True:
        _, _, status = _nelder_mead(budget, rng.uniform(p.lower, p.upper, p.dim), step, p.lower, p.upper,
                                    clip_moves=False)
        if status == "degenerate":
            degenerate += 1
            if degenerate > 1:
                return
        budget.restarts += 1


# -- differential evolution --------------------------------------------------

def _run_differential_evolution(budget: _Budget, rng, pop_factor: int = 15, f_weight: float = 0.8,
                                crossover: float = 0.9, polish_fraction: float = 0.4) -> None:
    """rand/1/bin with greedy selection; the last ``polish_fraction`` of the
    budget refines the best member with Nelder-Mead."""
    p = budget.problem
    n = p.dim
    size = max(pop_factor * n, 4)
    de_evals = p.max_iterations - int(polish_fraction * p.max_iterations)
    pop = rng.uniform(p.lower, p.upper, (size, n))
    fit = np.array([budget(x) for x in pop])
    while budget.n + size <= de_evals:
        for i in range(size):
            others = [j for j in range(size) if j != i]
            a, b, c = pop[rng.choice(others, 3, replace=False)]
            mutant = np.clip(a + f_weight * (b - c), p.lower, p.upper)
            mask = rng.random(n) < crossover
            mask[rng.integers(n)] = True
            trial = np.where(mask, mutant, pop[i])
            ft = budget(trial)
            if ft <= fit[i]:
                pop[i], fit[i] = trial, ft
    best = pop[int(np.argmin(fit))]
    step = max(float(np.median(np.abs(pop - best))), 1e-3)
    _nelder_mead(budget, best, step, p.lower, p.upper, xtol=1e-12, flat=None)


# -- Gaussian-process surrogate ----------------------------------------------

class _GP:
    """Zero-mean GP with a squared-exponential ARD kernel on standardized targets."""

    def __init__(self, log_ls, log_sf=0.0, noise=1e-6):
        self.log_ls = np.array(log_ls, dtype=float)
        self.log_sf = float(log_sf)
        self.noise = noise

    def kernel(self, a, b):
        ls = np.exp(self.log_ls)
        d = (a[:, None, :] - b[None, :, :]) / ls
        return np.exp(2 * self.log_sf - 0.5 * np.sum(d * d, axis=-1))

    def _nll_grad(self, x, y):
        n = len(x)
        ls = np.exp(self.log_ls)
        diff2 = ((x[:, None, :] - x[None, :, :]) / ls) ** 2
        k0 = np.exp(2 * self.log_sf - 0.5 * diff2.sum(-1))
        k = k0 + self.noise * np.eye(n)
        chol = np.linalg.cholesky(k)
        alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, y))
        nll = 0.5 * y @ alpha + np.log(np.diag(chol)).sum() + 0.5 * n * math.log(2 * math.pi)
        kinv = np.linalg.solve(chol.T, np.linalg.solve(chol, np.eye(n)))
        w = np.outer(alpha, alpha) - kinv
        # dK/dlog(ls_d) = K0 * diff2_d ; dK/dlog(sf) = 2 K0
        g_ls = -0.5 * np.einsum("ij,ijd->d", w * k0, diff2)
        g_sf = -0.5 * np.sum(w * 2 * k0)
        return nll, np.append(g_ls, g_sf)

    def fit(self, x, y, steps=40, lr=0.05):
        """Marginal-likelihood ascent (Adam on log hyperparameters)."""
        theta = np.append(self.log_ls, self.log_sf)
        m = np.zeros_like(theta)
        v = np.zeros_like(theta)
        for t in range(1, steps + 1):
            self.log_ls, self.log_sf = theta[:-1], theta[-1]
            try:
                _, g = self._nll_grad(x, y)
            except np.linalg.LinAlgError:
                break
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            theta = theta - lr * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
            theta[:-1] = np.clip(theta[:-1], math.log(1e-4), math.log(10.0))
            theta[-1] = np.clip(theta[-1], math.log(1e-2), math.log(1e2))
        self.log_ls, self.log_sf = theta[:-1], theta[-1]

    def condition(self, x, y):
        self.x = x
        k = self.kernel(x, x) + self.noise * np.eye(len(x))
        chol = np.linalg.cholesky(k)
        linv = np.linalg.solve(chol, np.eye(len(x)))
        self.kinv = linv.T @ linv
        self.alpha = self.kinv @ y

    def predict(self, xs):
        ks = self.kernel(xs, self.x)
        mean = ks @ self.alpha
        var = np.maximum(np.exp(2 * self.log_sf) - np.sum((ks @ self.kinv) * ks, axis=1), 1e-18)
        return mean, np.sqrt(var)


def _expected_improvement(mean, sd, best):
    z = (best - mean) / sd
    return (best - mean) * ndtr(z) + sd * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


def _run_gp_surrogate(budget: _Budget, rng, n_init: int | None = None, window: int = 60,
                      n_random: int = 512, n_local: int = 64, n_starts: int = 2,
                      patience: int | None = None) -> None:
    """Bayesian optimization of log-cost on a local window of the evaluated points.

    Each trust region starts from fresh uniform points. When its best cost
    has not dropped by 1% for ``patience`` evaluations (default 20 per
    dimension) the region has settled in a local minimum and a new one opens.
    """
    p = budget.problem
    n = p.dim
    n_init = n_init or 2 * n + 1
    patience = patience or 20 * n
    gp = _GP(np.full(n, math.log(0.5)))
    floor = max(p.target_cost, 1e-20) * 1e-6
    scales = 10.0 ** -np.arange(0.5, 6.5, 0.5)
    while True:
        _gp_region(budget, rng, gp, n_init, window, n_random, n_local, n_starts, patience, floor, scales)
        budget.restarts += 1
        gp = _GP(np.full(n, math.log(0.5)))


def _gp_region(budget, rng, gp, n_init, window, n_random, n_local, n_starts, patience, floor, scales):
    p = budget.problem
    n = p.dim
    xs = list(rng.uniform(p.lower, p.upper, (n_init, n)))
    ys = [budget(x) for x in xs]
    region_best, last_gain = min(ys), len(ys)
    while len(ys) - last_gain < patience:
        X = np.array(xs)
        logf = np.log(np.array(ys) + floor)
        best_i = int(np.argmin(logf))
        center = X[best_i]
        near = np.argsort(np.linalg.norm(X - center, axis=1), kind="stable")[:window]
        # the GP works in window coordinates so length scales stay relative to
        # the spread of the local points however tightly they cluster
        radius = max(float(np.abs(X[near] - center).max()), 1e-12)
        zw = (X[near] - center) / radius
        yw = logf[near]
        mu, sigma = yw.mean(), yw.std() + 1e-12
        yn = (yw - mu) / sigma
        gp.fit(zw, yn)
        gp.condition(zw, yn)
        best = yn.min()
        # random multistart: global uniform draws plus shells around the incumbent
        cand = [rng.uniform(p.lower, p.upper, (n_random, n))]
        for s in scales:
            cand.append(center + s * radius * rng.standard_normal((n_local, n)))
        cand = np.clip(np.concatenate(cand), p.lower, p.upper)
        mean, sd = gp.predict((cand - center) / radius)
        ei = _expected_improvement(mean, sd, best)
        starts = (cand[np.argsort(-ei, kind="stable")[:n_starts]] - center) / radius
        lo, hi = (p.lower - center) / radius, (p.upper - center) / radius

        def neg_ei(z):
            m_, s_ = gp.predict(z[None])
            return -float(_expected_improvement(m_, s_, best)[0])

        picks = [_nelder_mead(neg_ei, z0, 0.05 * np.exp(gp.log_ls).min(), lo, hi,
                              xtol=1e-10, max_evals=20 * n, flat=None) for z0 in starts]
        x_next = np.clip(center + radius * min(picks, key=lambda r: r[1])[0], p.lower, p.upper)
        if np.min(np.linalg.norm(X - x_next, axis=1)) < 1e-12 * radius:
            x_next = np.clip(center + scales[-1] * radius * rng.standard_normal(n), p.lower, p.upper)
        ys.append(budget(x_next))
        xs.append(x_next)
        if ys[-1] < 0.99 * region_best:
            region_best, last_gain = ys[-1], len(ys)


_RUNNERS = {
    "nelder_mead": _run_nelder_mead,
    "differential_evolution": _run_differential_evolution,
    "gp_surrogate": _run_gp_surrogate,
}


def minimize(problem, method: str = "nelder_mead", seed: int = 0, **options) -> OptimizeResult:
    """Minimize ``problem.evaluate`` until ``target_cost`` or ``max_iterations`` evaluations.

    ``problem`` is a :class:`BaselineProblem` or any object with the same
    ``dim``/``lower``/``upper``/``max_iterations``/``target_cost``/``evaluate``/``finalize``
    interface, e.g. :class:`QuadraticProblem`.
    """
    if method not in _RUNNERS:
        raise InvalidConfigError(f"unknown method {method!r}; choose from {METHODS}")
    budget = _Budget(problem)
    rng = make_rng(seed)
    try:
        _RUNNERS[method](budget, rng, **options)
    except _Stop:
        pass
    return OptimizeResult(method, seed, problem.finalize(budget.best_x), budget.best_f, budget.n,
                          bool(budget.best_f <= problem.target_cost), budget.restarts,
                          np.array(budget.trace))

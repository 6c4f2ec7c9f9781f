"""Integrators for the paired non-tilde/tilde stochastic equations.

The four equations come in two groups:

* forward group: ``x`` forward in time with drift ``b``, ``x_tilde`` backward
  in time with drift ``b_tilde_star``;
* backward group: ``x`` backward with ``b_star``, ``x_tilde`` forward with
  ``b_tilde``.

Each group mixes time directions, so it cannot be marched in one direction
verbatim: the backward member, stepped the "wrong" way, has a repelling
drift (eigenvalues ``+-omega`` in equilibrium).  The steppers here march the
whole pair in one direction and realize the opposite-direction member
through the time-reversal relation of a diffusion with density ``P``,

    forward drift = backward drift + (hbar / m) grad ln P = backward drift + 2 u,

so the forward group advances ``x_tilde`` with ``b_tilde_star + 2 u_tilde =
b_tilde`` and the backward group retreats ``x_tilde`` with ``-b_tilde_star``.
Both realize one Markov process whose forward and backward drifts are the
full drift set.  Drifts are evaluated at the known point (explicit Euler),
which biases stationary variances by ``O(dt)``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numba
import numpy as np

from . import analytic
from .core import (PathDivergedError, PhysicalParams, ThermalPoint, coth_half, csch_half,
                   thermal_occupation)
from .rng import (INIT, NOISE, WienerStream, _first_attempt, _polar_finish, _split_seed,
                  normal_pairs, wiener_increment)
from .stats import MomentAccumulator, observables, summarize_accumulator, MOMENT_NAMES

__all__ = [
    "DriftSet",
    "Path",
    "Ensemble",
    "EnsembleConfig",
    "MomentSeries",
    "step_forward_group",
    "step_backward_group",
    "step_transformed",
    "transform_coordinates",
    "inverse_transform",
    "transformed_noise_rate",
    "classical_noise_rate",
    "sample_stationary",
    "simulate_ensemble",
    "simulate_transformed",
    "replay_path",
]

BURN = 2  # counter purpose for burn-in noise
CHUNK = 16384  # fixed so results never depend on the thread count
DIVERGENCE_FACTOR = 1e6

Field = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


def _zero(x, xt, t=0.0):
    return np.zeros(np.broadcast(np.asarray(x), np.asarray(xt)).shape)


@dataclass(frozen=True)
class DriftSet:
    """The four drift fields, each ``f(x, x_tilde, t) -> velocity``.

    Fields must accept arrays and evaluate elementwise.
    """

    b: Field
    b_star: Field
    b_tilde: Field
    b_tilde_star: Field
    # (omega, coth, csch) when these are the equilibrium drifts; lets the
    # ensemble integrator use a fused kernel with identical arithmetic
    harmonic: tuple | None = field(default=None, compare=False, repr=False)

    @classmethod
    def equilibrium(cls, params: PhysicalParams) -> "DriftSet":
        """Harmonic-oscillator thermal-equilibrium drifts."""
        c, s, w = coth_half(params), csch_half(params), params.omega
        return cls(
            b=lambda x, xt, t=0.0: -w * (x * c - xt * s),
            b_star=lambda x, xt, t=0.0: w * (x * c - xt * s),
            b_tilde=lambda x, xt, t=0.0: -w * (xt * c - x * s),
            b_tilde_star=lambda x, xt, t=0.0: w * (xt * c - x * s),
            harmonic=(w, c, s),
        )

    @classmethod
    def zero(cls) -> "DriftSet":
        return cls(_zero, _zero, _zero, _zero)

    def evaluate(self, x, xt, t=0.0):
        return (self.b(x, xt, t), self.b_star(x, xt, t),
                self.b_tilde(x, xt, t), self.b_tilde_star(x, xt, t))


def _check_finite(x, xt, params, where=""):
    limit = DIVERGENCE_FACTOR * params.length_scale
    bad = ~(np.isfinite(x) & np.isfinite(xt) & (np.abs(x) <= limit) & (np.abs(xt) <= limit))
    if np.any(bad):
        idx = int(np.flatnonzero(np.atleast_1d(bad))[0])
        raise PathDivergedError(f"path diverged; reduce dt ({where}, first bad path {idx})")


def _forward_update(x, xt, t, dt, drifts, sigma, dW, dWt):
    # x_tilde: time reversal of its backward equation, b_tilde_star + 2 u_tilde = b_tilde
    return (x + drifts.b(x, xt, t) * dt + sigma * dW,
            xt + drifts.b_tilde(x, xt, t) * dt + sigma * dWt)


def _backward_update(x, xt, t, dt, drifts, sigma, dW, dWt):
    # x: x(t - dt) = x(t) - b_star dt - sigma dW_star
    # x_tilde: reversed forward equation, -(b_tilde - 2 u_tilde) = -b_tilde_star
    return (x - drifts.b_star(x, xt, t) * dt - sigma * dW,
            xt - drifts.b_tilde_star(x, xt, t) * dt - sigma * dWt)


@numba.njit(cache=True)
def _harmonic_step(x, xt, paths, seed_lo, seed_hi, index, dt, w, c, s, sigma, forward, limit,
                   v1, v2):
    """In-place Euler step with the equilibrium drifts and fresh noise.

    Performs the same floating-point operations, in the same order, as
    :func:`wiener_increment` followed by :func:`_forward_update` or
    :func:`_backward_update`, so results are bit-identical to the generic
    path.  ``v1`` and ``v2`` are scratch buffers of the path count.  Returns
    the position of the first diverged path or ``-1``.
    """
    sqdt = math.sqrt(dt)
    purpose = np.uint64(NOISE)
    bad = -1
    _first_attempt(seed_lo, seed_hi, paths, purpose, index, v1, v2)
    for i in range(x.shape[0]):
        z0, z1 = _polar_finish(seed_lo, seed_hi, paths[i], purpose, index, v1[i], v2[i])
        dW = z0 * sqdt
        dWt = z1 * sqdt
        xi = x[i]
        xti = xt[i]
        if forward:
            b = -w * (xi * c - xti * s)
            bt = -w * (xti * c - xi * s)
            xi_new = xi + b * dt + sigma * dW
            xti_new = xti + bt * dt + sigma * dWt
        else:
            bs = w * (xi * c - xti * s)
            bts = w * (xti * c - xi * s)
            xi_new = xi - bs * dt - sigma * dW
            xti_new = xti - bts * dt - sigma * dWt
        x[i] = xi_new
        xt[i] = xti_new
        # comparisons are False for NaN, so this also catches non-finite values
        if bad < 0 and not (abs(xi_new) <= limit and abs(xti_new) <= limit):
            bad = i
    return bad


def _noise(rng, dt, noise):
    if noise is not None:
        return noise
    if rng is None:
        raise ValueError("need an rng stream or an explicit noise pair")
    return wiener_increment(rng, dt)


def step_forward_group(point: ThermalPoint, dt: float, drifts: DriftSet, rng=None,
                       params: PhysicalParams | None = None, *, noise=None) -> ThermalPoint:
    """Advance the forward group from ``t`` to ``t + dt``.

    ``x`` follows ``dx = b dt + sqrt(hbar/m) dW``.  ``x_tilde`` belongs to the
    backward equation ``dx_tilde = b_tilde_star dt + sqrt(hbar/m) dW_tilde_star``
    and is advanced with its time-reversed drift ``b_tilde``.

    ``noise`` may override the draw with an explicit ``(dW, dW_tilde)`` pair.

    Raises
    ------
    PathDivergedError
        If the new point is non-finite or beyond ``1e6`` oscillator lengths.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    params = params or PhysicalParams()
    dW, dWt = _noise(rng, dt, noise)
    x, xt = _forward_update(point.x, point.x_tilde, point.t, dt, drifts,
                            math.sqrt(params.noise_strength), dW, dWt)
    _check_finite(x, xt, params, "forward group")
    return ThermalPoint(x, xt, point.t + dt)


def step_backward_group(point: ThermalPoint, dt: float, drifts: DriftSet, rng=None,
                        params: PhysicalParams | None = None, *, noise=None) -> ThermalPoint:
    """Retreat the backward group from ``t`` to ``t - dt``.

    Mirror of :func:`step_forward_group`: ``x`` obeys its backward equation
    with ``b_star``; ``x_tilde`` (the forward member, drift ``b_tilde``) is
    stepped back with ``-b_tilde_star``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    params = params or PhysicalParams()
    dW, dWt = _noise(rng, dt, noise)
    x, xt = _backward_update(point.x, point.x_tilde, point.t, dt, drifts,
                             math.sqrt(params.noise_strength), dW, dWt)
    _check_finite(x, xt, params, "backward group")
    return ThermalPoint(x, xt, point.t - dt)


def transform_coordinates(point: ThermalPoint, params: PhysicalParams):
    """``X = sqrt(1+n) x - sqrt(n) xt`` and ``Xt = sqrt(1+n) xt - sqrt(n) x``."""
    n = thermal_occupation(params)
    a, q = math.sqrt(1.0 + n), math.sqrt(n)
    return a * point.x - q * point.x_tilde, a * point.x_tilde - q * point.x


def inverse_transform(X, X_tilde, params: PhysicalParams, t: float = 0.0) -> ThermalPoint:
    """Invert :func:`transform_coordinates` (its matrix has unit determinant)."""
    n = thermal_occupation(params)
    a, q = math.sqrt(1.0 + n), math.sqrt(n)
    return ThermalPoint(a * X + q * X_tilde, a * X_tilde + q * X, t)


def transformed_noise_rate(params: PhysicalParams) -> float:
    """Total noise variance rate of ``X``: ``(hbar/m)(1 + n) + (hbar/m) n``."""
    return params.noise_strength * (1.0 + 2.0 * thermal_occupation(params))


def classical_noise_rate(params: PhysicalParams) -> float:
    """Classical Langevin variance rate ``2 k T / (m omega)``."""
    if params.zero_temperature:
        return 0.0
    return 2.0 / (params.beta * params.m * params.omega)


def step_transformed(X, X_tilde, dt: float, params: PhysicalParams, rng=None, *, noise=None):
    """One step of the transformed-coordinate pair.

    ``dX = -omega X dt + sqrt(hbar(1+n)/m) dW - sqrt(hbar n/m) dW_tilde`` is
    marched forward.  ``X_tilde`` has drift ``+omega X_tilde`` in forward time,
    so it is marched in reversed time (drift ``-omega X_tilde``) with the roles
    of the two noises swapped; the returned ``X_tilde`` is one step earlier.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    dW, dWt = _noise(rng, dt, noise)
    n = thermal_occupation(params)
    ca = math.sqrt(params.noise_strength * (1.0 + n))
    cq = math.sqrt(params.noise_strength * n)
    w = params.omega
    X_new = X - w * X * dt + ca * dW - cq * dWt
    Xt_new = X_tilde - w * X_tilde * dt + ca * dWt - cq * dW
    _check_finite(X_new, Xt_new, params, "transformed")
    return X_new, Xt_new


def sample_stationary(params: PhysicalParams, rng: WienerStream) -> ThermalPoint:
    """Exact draw(s) from ``exp(2 R_eq)`` by Cholesky factorization.

    Uses the stream's seed and path indices under a dedicated counter
    purpose, so it never overlaps the Wiener noise.
    """
    chol = np.linalg.cholesky(analytic.stationary_covariance(params).matrix)
    z = normal_pairs(rng.seed, rng.paths, 0, purpose=INIT)
    x = chol[0, 0] * z[:, 0]
    xt = chol[1, 0] * z[:, 0] + chol[1, 1] * z[:, 1]
    if rng.scalar:
        return ThermalPoint(float(x[0]), float(xt[0]), 0.0)
    return ThermalPoint(x, xt, 0.0)


@dataclass
class Path:
    """One recorded sample path, stored in increasing time order."""

    t: np.ndarray
    x: np.ndarray
    x_tilde: np.ndarray
    seed: int
    path_index: int
    group: str
    dt: float

    def nondimensional(self, params: PhysicalParams):
        k = math.sqrt(params.m * params.omega / params.hbar)
        return self.x * k, self.x_tilde * k


@dataclass(frozen=True)
class EnsembleConfig:
    """Run description for :func:`simulate_ensemble`.

    ``dt``, ``horizon`` and ``burn_in`` default to ``1e-3/omega``,
    ``10/omega`` and ``10/omega``.  ``record_every`` (in steps) enables the
    moment time series, ``pool_every`` keeps snapshots for pooled
    histograms, ``dump_paths`` keeps full trajectories of the first paths.
    ``substeps = r`` builds each increment from ``r`` consecutive fine draws,
    coupling runs at ``dt`` and ``dt / r`` to the same Brownian path.
    """

    params: PhysicalParams = field(default_factory=PhysicalParams)
    n_paths: int = 100_000
    dt: float | None = None
    horizon: float | None = None
    base_seed: int = 0
    init: str = "stationary"
    x0: float = 0.0
    x_tilde0: float = 0.0
    burn_in: float | None = None
    group: str = "forward"
    drifts: DriftSet | None = None
    record_every: int = 0
    pool_every: int = 0
    dump_paths: int = 0
    dump_every: int = 1
    substeps: int = 1
    path_offset: int = 0
    threads: int | None = None

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.init not in ("stationary", "point", "burn-in"):
            raise ValueError(f"unknown initialization {self.init!r}")
        if self.group not in ("forward", "backward"):
            raise ValueError(f"group must be 'forward' or 'backward', got {self.group!r}")
        if not self.step > 0:
            raise ValueError("dt must be positive")
        if not self.T >= 0:
            raise ValueError("horizon must be non-negative")
        for name in ("record_every", "pool_every", "dump_paths", "path_offset"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.dump_every < 1 or self.substeps < 1:
            raise ValueError("dump_every and substeps must be >= 1")

    @property
    def step(self) -> float:
        return 1e-3 / self.params.omega if self.dt is None else float(self.dt)

    @property
    def T(self) -> float:
        return 10.0 / self.params.omega if self.horizon is None else float(self.horizon)

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.T / self.step * (1 + 1e-12)))

    @property
    def n_burn(self) -> int:
        if self.init != "burn-in":
            return 0
        b = 10.0 / self.params.omega if self.burn_in is None else float(self.burn_in)
        return int(math.floor(b / self.step * (1 + 1e-12)))

    def drift_set(self) -> DriftSet:
        return self.drifts or DriftSet.equilibrium(self.params)


@dataclass
class MomentSeries:
    """Tracked moments (``MOMENT_NAMES``) with standard errors over time."""

    t: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    names: tuple = MOMENT_NAMES


@dataclass
class Ensemble:
    """Result of :func:`simulate_ensemble`.

    ``x`` and ``x_tilde`` hold the last integrated slice (time
    ``final_time``); ``tail`` the last three slices in increasing time order,
    shape ``(3, 2, n_paths)``, for mean-derivative estimates.
    """

    config: EnsembleConfig
    x: np.ndarray
    x_tilde: np.ndarray
    final_time: float
    accumulator: MomentAccumulator
    record_times: np.ndarray
    record_accumulators: list
    tail: np.ndarray | None = None
    paths: list = field(default_factory=list)
    pooled: tuple | None = None
    transformed: bool = False

    @property
    def params(self) -> PhysicalParams:
        return self.config.params

    @property
    def n_paths(self) -> int:
        return int(self.x.size)

    @property
    def base_seed(self) -> int:
        return self.config.base_seed

    @property
    def dt(self) -> float:
        return self.config.step

    def moment_series(self) -> MomentSeries:
        """Recorded moments; a single-path ensemble reports means only (rest NaN)."""
        vals, errs = [], []
        for a in self.record_accumulators:
            if a.n < 2:
                nan = np.full(len(MOMENT_NAMES), np.nan)
                v = nan.copy()
                v[:2] = a.mean[:2]
                vals.append(v)
                errs.append(nan)
            else:
                v, e = summarize_accumulator(a)
                vals.append(v)
                errs.append(e)
        n = len(MOMENT_NAMES)
        return MomentSeries(self.record_times.copy(), np.array(vals).reshape(-1, n),
                            np.array(errs).reshape(-1, n))

    def merge(self, other: "Ensemble") -> "Ensemble":
        """Combine ensembles over disjoint path ranges of one run description."""
        if replace(self.config, path_offset=0, n_paths=1) != replace(other.config, path_offset=0, n_paths=1):
            raise ValueError("ensembles come from different run descriptions")
        tail = None
        if self.tail is not None and other.tail is not None:
            tail = np.concatenate([self.tail, other.tail], axis=2)
        pooled = None
        if self.pooled is not None and other.pooled is not None:
            pooled = (np.concatenate([self.pooled[0], other.pooled[0]]),
                      np.concatenate([self.pooled[1], other.pooled[1]]))
        return Ensemble(
            config=replace(self.config, n_paths=self.n_paths + other.n_paths,
                           path_offset=min(self.config.path_offset, other.config.path_offset)),
            x=np.concatenate([self.x, other.x]),
            x_tilde=np.concatenate([self.x_tilde, other.x_tilde]),
            final_time=self.final_time,
            accumulator=self.accumulator.merge(other.accumulator),
            record_times=self.record_times,
            record_accumulators=[a.merge(b) for a, b in zip(self.record_accumulators,
                                                            other.record_accumulators)],
            tail=tail,
            paths=self.paths + other.paths,
            pooled=pooled,
            transformed=self.transformed,
        )


def _initial_slice(cfg: EnsembleConfig, paths: np.ndarray, drifts, sigma):
    if cfg.init == "stationary":
        p = sample_stationary(cfg.params, WienerStream(cfg.base_seed, paths))
        return np.array(p.x, dtype=float), np.array(p.x_tilde, dtype=float)
    x = np.full(paths.size, float(cfg.x0))
    xt = np.full(paths.size, float(cfg.x_tilde0))
    if cfg.init == "burn-in":
        dt = cfg.step
        update = _forward_update if cfg.group == "forward" else _backward_update
        sign = 1.0 if cfg.group == "forward" else -1.0
        t0 = -sign * cfg.n_burn * dt
        for k in range(cfg.n_burn):
            z = normal_pairs(cfg.base_seed, paths, k, purpose=BURN) * math.sqrt(dt)
            x, xt = update(x, xt, t0 + sign * k * dt, dt, drifts, sigma, z[:, 0], z[:, 1])
            _check_finite(x, xt, cfg.params, f"burn-in step {k}")
    return x, xt


def _run_chunk(cfg: EnsembleConfig, paths: np.ndarray, transformed: bool):
    params = cfg.params
    drifts = cfg.drift_set()
    sigma = math.sqrt(params.noise_strength)
    dt = cfg.step
    n_steps = cfg.n_steps
    forward = cfg.group == "forward"

    if transformed:
        X0, Xt0 = transform_coordinates(ThermalPoint(cfg.x0, cfg.x_tilde0), params)
        x = np.full(paths.size, float(X0))
        xt = np.full(paths.size, float(Xt0))
        t = 0.0
        sign = 1.0
    else:
        x, xt = _initial_slice(cfg, paths, drifts, sigma)
        t = 0.0 if forward else n_steps * dt
        sign = 1.0 if forward else -1.0
    update = _forward_update if forward else _backward_update

    stream = WienerStream(cfg.base_seed, paths)
    record = cfg.record_every
    rec_acc = []
    pooled_x, pooled_xt = [], []
    n_dump = max(0, min(cfg.dump_paths - (int(paths[0]) - cfg.path_offset), paths.size))
    dump_t, dump_x, dump_xt = [], [], []
    tail = [(x.copy(), xt.copy())]

    def snapshot(k, t, x, xt):
        if record and (k % record == 0 or k == n_steps):
            rec_acc.append((t, MomentAccumulator.from_samples(observables(x, xt))))
        if cfg.pool_every and k % cfg.pool_every == 0:
            pooled_x.append(x.copy())
            pooled_xt.append(xt.copy())
        if n_dump and (k % cfg.dump_every == 0 or k == n_steps):
            dump_t.append(t)
            dump_x.append(x[:n_dump].copy())
            dump_xt.append(xt[:n_dump].copy())

    fused = drifts.harmonic is not None and cfg.substeps == 1 and not transformed
    if fused:
        seed_lo, seed_hi = _split_seed(cfg.base_seed)
        w, c, s = drifts.harmonic
        limit = DIVERGENCE_FACTOR * params.length_scale
        x, xt = np.array(x, dtype=float), np.array(xt, dtype=float)
        v1, v2 = np.empty(x.size), np.empty(x.size)
    snapshot(0, t, x, xt)
    for k in range(n_steps):
        if fused:
            bad = _harmonic_step(x, xt, stream.paths, seed_lo, seed_hi, np.uint64(stream.counter),
                                 dt, w, c, s, sigma, forward, limit, v1, v2)
            stream.counter += 1
            if bad >= 0:
                raise PathDivergedError(
                    f"path diverged; reduce dt (path {int(paths[bad])}, step {k})")
        elif transformed:
            dW, dWt = wiener_increment(stream, dt, cfg.substeps)
            x, xt = step_transformed(x, xt, dt, params, noise=(dW, dWt))
        else:
            dW, dWt = wiener_increment(stream, dt, cfg.substeps)
            x, xt = update(x, xt, t, dt, drifts, sigma, dW, dWt)
            try:
                _check_finite(x, xt, params, f"step {k}")
            except PathDivergedError as err:
                bad = np.flatnonzero(~np.isfinite(x) | ~np.isfinite(xt)
                                     | (np.abs(x) > DIVERGENCE_FACTOR * params.length_scale)
                                     | (np.abs(xt) > DIVERGENCE_FACTOR * params.length_scale))
                raise PathDivergedError(
                    f"path diverged; reduce dt (path {int(paths[bad[0]])}, step {k})") from err
        t = (k + 1) * dt if forward or transformed else (n_steps - k - 1) * dt
        snapshot(k + 1, t, x, xt)
        if k >= n_steps - 3:
            tail.append((x.copy(), xt.copy()))
    tail = tail[-3:]
    if not forward and not transformed:
        tail = tail[::-1]
    return dict(
        x=x, xt=xt, t=t, rec=rec_acc,
        tail=np.array([[a, b] for a, b in tail]) if len(tail) == 3 else None,
        pooled=(np.concatenate(pooled_x), np.concatenate(pooled_xt)) if pooled_x else None,
        dumps=(np.array(dump_t), np.array(dump_x), np.array(dump_xt)) if n_dump else None,
        paths=paths,
    )


def _resolve_threads(threads):
    if threads is None:
        env = os.environ.get("NELSON_TFD_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def _assemble(cfg: EnsembleConfig, chunks: list, transformed: bool) -> Ensemble:
    x = np.concatenate([c["x"] for c in chunks])
    xt = np.concatenate([c["xt"] for c in chunks])
    acc = MomentAccumulator.empty()
    for c in chunks:
        acc = acc.merge(MomentAccumulator.from_samples(observables(c["x"], c["xt"])))
    rec_times = np.array([t for t, _ in chunks[0]["rec"]])
    rec_acc = []
    for i in range(rec_times.size):
        a = MomentAccumulator.empty()
        for c in chunks:
            a = a.merge(c["rec"][i][1])
        rec_acc.append(a)
    tail = None
    if all(c["tail"] is not None for c in chunks):
        tail = np.concatenate([c["tail"] for c in chunks], axis=2)
    pooled = None
    if chunks[0]["pooled"] is not None:
        pooled = (np.concatenate([c["pooled"][0] for c in chunks]),
                  np.concatenate([c["pooled"][1] for c in chunks]))
    paths = []
    for c in chunks:
        if c["dumps"] is None:
            continue
        times, dx, dxt = c["dumps"]
        order = np.argsort(times, kind="stable")
        for j in range(dx.shape[1]):
            paths.append(Path(times[order], dx[order, j], dxt[order, j], cfg.base_seed,
                              int(c["paths"][j]), "transformed" if transformed else cfg.group,
                              cfg.step))
    return Ensemble(cfg, x, xt, chunks[-1]["t"], acc, rec_times, rec_acc, tail, paths,
                    pooled, transformed)


def _simulate(cfg: EnsembleConfig, transformed: bool) -> Ensemble:
    all_paths = np.arange(cfg.path_offset, cfg.path_offset + cfg.n_paths, dtype=np.uint64)
    pieces = [all_paths[i:i + CHUNK] for i in range(0, all_paths.size, CHUNK)]
    threads = min(_resolve_threads(cfg.threads), len(pieces))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            chunks = list(pool.map(lambda p: _run_chunk(cfg, p, transformed), pieces))
    else:
        chunks = [_run_chunk(cfg, p, transformed) for p in pieces]
    return _assemble(cfg, chunks, transformed)


def simulate_ensemble(config: EnsembleConfig) -> Ensemble:
    """Integrate ``config.n_paths`` independent paths of one group.

    Output is a deterministic function of the configuration: every path
    draws from its own counter-based stream keyed by ``(base_seed,
    path_index)``, and paths are processed in fixed-size chunks whose
    partial results merge in index order regardless of ``threads``.

    Raises
    ------
    PathDivergedError
        Naming the first offending path index and step.
    """
    return _simulate(config, transformed=False)


def simulate_transformed(config: EnsembleConfig) -> Ensemble:
    """Ensemble of the transformed-coordinate pair ``(X, X_tilde)``.

    Starts every path at the transform of ``(x0, x_tilde0)`` and applies
    :func:`step_transformed`; ``x``/``x_tilde`` of the result hold ``X`` and
    ``X_tilde``.
    """
    return _simulate(replace(config, init="point"), transformed=True)


def replay_path(config: EnsembleConfig, path_index: int) -> Path:
    """Re-integrate a single path of an ensemble, sample by sample."""
    cfg = replace(config, n_paths=1, path_offset=int(path_index), dump_paths=1,
                  dump_every=1, record_every=0, pool_every=0, threads=1)
    return simulate_ensemble(cfg).paths[0]

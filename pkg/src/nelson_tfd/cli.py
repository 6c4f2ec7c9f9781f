"""Command-line front end: ``nelson-tfd <simulate|histogram|uncertainty|residuals>``.

A run is described by a flat ``key = value`` file (``#`` starts a comment)
plus command-line overrides; ``--set KEY=VALUE`` reaches any key.  Every
output is a UTF-8 CSV whose leading ``#`` rows carry the tool version, the
seed and a hash of the resolved configuration, followed by a header row.
Output depends only on the configuration (not on ``threads`` or ``out``).

Exit codes: 0 success, 2 configuration error, 3 path divergence,
4 grid convergence failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import logging
import math
import sys
from dataclasses import dataclass, fields as dc_fields
from pathlib import Path as FsPath

import numpy as np
import scipy.stats as sps

from . import __version__
from .analytic import marginal_density, stationary_covariance
from .core import GridConvergenceError, PathDivergedError, PhysicalParams
from .fields import (
    Grid,
    continuity_residual,
    dynamical_residual,
    equilibrium_fields,
    fokker_planck_residual,
    kinematical_residual,
    osmotic_residual,
    velocities_from_rs,
)
from .sde import DriftSet, EnsembleConfig, simulate_ensemble
from .stats import MOMENT_NAMES, distribution_test, marginal_histogram, uncertainty_estimate

__all__ = ["main", "RunConfig", "ConfigError", "load_config", "resolve_config"]

log = logging.getLogger("nelson_tfd")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CONVERGENCE = 0, 2, 3, 4
COMMANDS = ("simulate", "histogram", "uncertainty", "residuals")
DEFAULT_SWEEP = "0.25,0.5,1,2,3,5,inf"


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass(frozen=True)
class RunConfig:
    """Resolved, validated run description shared by all commands."""

    m: float = 1.0
    omega: float = 1.0
    hbar: float = 1.0
    beta_bar: float = 1.0
    paths: int = 100_000
    dt: float | None = None
    horizon: float | None = None
    seed: int = 0
    init: str = "stationary"
    group: str = "forward"
    burn_in: float | None = None
    x0: float = 0.0
    x_tilde0: float = 0.0
    dump_paths: int = 1
    dump_every: int = 1
    record_every: int = 0
    bins: int = 101
    coordinate: str = "x"
    range: tuple | None = None
    pooled: bool = False
    pool_every: int = 0
    sweep: tuple = ()
    grid_L: float | None = None
    grid_h: float | None = None
    threads: int | None = None
    out: str = "."

    @property
    def params(self) -> PhysicalParams:
        return PhysicalParams.from_beta_bar(self.beta_bar, self.m, self.omega, self.hbar)

    def ensemble_config(self, beta_bar: float | None = None, **overrides) -> EnsembleConfig:
        params = self.params if beta_bar is None else self.params.with_beta_bar(beta_bar)
        kw = dict(params=params, n_paths=self.paths, dt=self.dt, horizon=self.horizon,
                  base_seed=self.seed, init=self.init, x0=self.x0, x_tilde0=self.x_tilde0,
                  burn_in=self.burn_in, group=self.group, threads=self.threads,
                  pool_every=self.pool_every)
        kw.update(overrides)
        return EnsembleConfig(**kw)

    def digest(self) -> str:
        """Hash of every field that can influence output."""
        items = [f"{f.name}={getattr(self, f.name)!r}" for f in dc_fields(self)
                 if f.name not in ("threads", "out")]
        return hashlib.sha256("\n".join(items).encode()).hexdigest()[:16]


_ALIASES = {"n_paths": "paths", "base_seed": "seed", "T": "horizon", "beta-bar": "beta_bar",
            "L": "grid_L", "h": "grid_h"}
_KEYS = {f.name for f in dc_fields(RunConfig)} | {"beta"}


def load_config(path) -> dict:
    """Parse a ``key = value`` file into a dict of raw strings."""
    raw = {}
    try:
        text = FsPath(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key] = value
    return raw


def _float(key, value, positive=False, allow_inf=False):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a number, got {value!r}") from None
    if math.isnan(v) or (math.isinf(v) and not allow_inf):
        raise ConfigError(f"{key} must be finite, got {value!r}")
    if positive and not v > 0:
        raise ConfigError(f"{key} must be positive, got {value!r}")
    return v


def _int(key, value, minimum=0):
    try:
        v = int(str(value), 0)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {value!r}") from None
    if v < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {v}")
    return v


def _bool(key, value):
    s = str(value).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key} must be a boolean, got {value!r}")


def resolve_config(raw: dict) -> RunConfig:
    """Validate raw ``key -> string`` settings into a :class:`RunConfig`."""
    raw = {_ALIASES.get(k, k): v for k, v in raw.items()}
    unknown = sorted(set(raw) - _KEYS)
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
    kw = {}
    for key in ("m", "omega", "hbar"):
        if key in raw:
            kw[key] = _float(key, raw[key], positive=True)
    if "beta_bar" in raw and "beta" in raw:
        log.warning("both beta and beta_bar given; using beta_bar")
    if "beta_bar" in raw:
        kw["beta_bar"] = _float("beta_bar", raw["beta_bar"], positive=True, allow_inf=True)
    elif "beta" in raw:
        beta = _float("beta", raw["beta"], positive=True, allow_inf=True)
        kw["beta_bar"] = beta * kw.get("hbar", 1.0) * kw.get("omega", 1.0)
    for key in ("dt", "horizon", "burn_in", "grid_L", "grid_h"):
        if key in raw:
            kw[key] = _float(key, raw[key], positive=key not in ("horizon", "burn_in"))
            if kw[key] < 0:
                raise ConfigError(f"{key} must be non-negative")
    for key in ("x0", "x_tilde0"):
        if key in raw:
            kw[key] = _float(key, raw[key])
    if "paths" in raw:
        kw["paths"] = _int("paths", raw["paths"], 1)
    if "seed" in raw:
        kw["seed"] = _int("seed", raw["seed"], 0)
        if kw["seed"] >= 2 ** 64:
            raise ConfigError("seed must fit in 64 bits")
    for key, lo in (("dump_paths", 0), ("dump_every", 1), ("record_every", 0),
                    ("bins", 2), ("pool_every", 0), ("threads", 1)):
        if key in raw:
            kw[key] = _int(key, raw[key], lo)
    if "pooled" in raw:
        kw["pooled"] = _bool("pooled", raw["pooled"])
    for key, allowed in (("init", ("stationary", "point", "burn-in")),
                         ("group", ("forward", "backward")),
                         ("coordinate", ("x", "x_tilde"))):
        if key in raw:
            if raw[key] not in allowed:
                raise ConfigError(f"{key} must be one of {', '.join(allowed)}, got {raw[key]!r}")
            kw[key] = raw[key]
    if "range" in raw:
        parts = [p for p in raw["range"].replace(":", ",").split(",") if p.strip()]
        if len(parts) != 2:
            raise ConfigError("range must be 'lo,hi'")
        lo, hi = (_float("range", p) for p in parts)
        if not hi > lo:
            raise ConfigError(f"empty histogram range {lo},{hi}")
        kw["range"] = (lo, hi)
    if "sweep" in raw:
        kw["sweep"] = tuple(_float("sweep", p, positive=True, allow_inf=True)
                            for p in raw["sweep"].split(",") if p.strip())
    if "out" in raw:
        kw["out"] = raw["out"]
    cfg = RunConfig(**kw)
    if cfg.dt is not None and cfg.horizon is not None and cfg.dt > cfg.horizon > 0:
        log.warning("dt exceeds the horizon; no steps will be taken")
    return cfg


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return "%.12g" % v


def _write_csv(path: FsPath, cfg: RunConfig, command: str, header, rows, footer=()):
    buf = io.StringIO()
    buf.write(f"# nelson-tfd {__version__}\n# command={command}\n# seed={cfg.seed}\n"
              f"# config_hash={cfg.digest()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    for line in footer:
        buf.write(f"# {line}\n")
    path.write_bytes(buf.getvalue().encode("utf-8"))


def cmd_simulate(cfg: RunConfig, out: FsPath) -> int:
    """Write ``paths.csv`` (dumped trajectories) and ``moments.csv``."""
    ec = cfg.ensemble_config(dump_paths=min(cfg.dump_paths, cfg.paths), dump_every=cfg.dump_every,
                             record_every=cfg.record_every or _default_record(cfg))
    ens = simulate_ensemble(ec)
    k = math.sqrt(cfg.m * cfg.omega / cfg.hbar)
    rows = []
    for p in ens.paths:
        for t, x, xt in zip(p.t, p.x, p.x_tilde):
            rows.append((p.path_index, t, x, xt, k * x, k * xt))
    _write_csv(out / "paths.csv", cfg, "simulate", ["path", "t", "x", "x_tilde", "X", "X_tilde"], rows)
    series = ens.moment_series()
    header = ["t"] + [c for name in MOMENT_NAMES for c in (name, "se_" + name)]
    mrows = []
    for i, t in enumerate(series.t):
        row = [t]
        for j in range(len(MOMENT_NAMES)):
            row += [series.values[i, j], series.errors[i, j]]
        mrows.append(row)
    _write_csv(out / "moments.csv", cfg, "simulate", header, mrows)
    return EXIT_OK


def _default_record(cfg: RunConfig) -> int:
    n = cfg.ensemble_config().n_steps
    return max(1, n // 100)


def cmd_histogram(cfg: RunConfig, out: FsPath) -> int:
    """Write ``histogram.csv`` (with chi-square footer) and ``overlay.csv``."""
    pool_every = cfg.pool_every or (_default_record(cfg) if cfg.pooled else 0)
    ens = simulate_ensemble(cfg.ensemble_config(pool_every=pool_every))
    hist = marginal_histogram(ens, cfg.coordinate, cfg.bins, cfg.range, pooled=cfg.pooled)
    params = cfg.params
    var = stationary_covariance(params).var_x
    law = sps.norm(0.0, math.sqrt(var))
    cdf = law.cdf(hist.edges)
    analytic_bins = np.diff(cdf) / hist.widths
    try:
        stat, p = distribution_test(hist, law)
        footer = [f"chi_square={stat:.12g}", f"p_value={p:.12g}"]
    except ValueError as exc:
        footer = ["chi_square=nan", "p_value=nan", f"note={exc}"]
    if cfg.pooled:
        footer.append("pooled=true")
    rows = [(hist.edges[i], hist.edges[i + 1], hist.centers[i], int(hist.counts[i]),
             hist.density[i], analytic_bins[i]) for i in range(hist.counts.size)]
    _write_csv(out / "histogram.csv", cfg, "histogram",
               ["bin_left", "bin_right", "center", "count", "density", "analytic_density"],
               rows, footer)
    grid = np.linspace(hist.edges[0], hist.edges[-1], 501)
    k = math.sqrt(cfg.m * cfg.omega / cfg.hbar)
    _write_csv(out / "overlay.csv", cfg, "histogram", [cfg.coordinate, "X", "analytic_density"],
               [(g, k * g, d) for g, d in zip(grid, marginal_density(grid, params))])
    return EXIT_OK


def cmd_uncertainty(cfg: RunConfig, out: FsPath) -> int:
    """Write ``uncertainty.csv``: one row per inverse temperature of the sweep."""
    sweep = cfg.sweep or tuple(float(s) for s in DEFAULT_SWEEP.split(","))
    rows = []
    for bb in sweep:
        ec = cfg.ensemble_config(beta_bar=bb)
        ens = simulate_ensemble(ec)
        rep = uncertainty_estimate(ens, DriftSet.equilibrium(ec.params), ec.params)
        rows.append((bb, rep.n_occupation, rep.std_x, rep.se_std_x, rep.std_halfdiff_p,
                     rep.se_std_halfdiff_p, rep.product, rep.se_product, rep.analytic_product,
                     rep.z_score))
    _write_csv(out / "uncertainty.csv", cfg, "uncertainty",
               ["beta_bar", "n_occupation", "std_x", "se_std_x", "std_halfdiff_p",
                "se_std_halfdiff_p", "product", "se_product", "analytic_product", "z_score"], rows)
    return EXIT_OK


def residual_table(params: PhysicalParams, grid: Grid):
    """Residual norms of the equilibrium solution: closed form, grid ``h``, grid ``2h``.

    Returns rows ``(name, closed_form, grid_h, grid_2h, ratio, floor, status)``.
    ``status`` is ``second-order`` when the norm drops at least 3.8x from
    ``2h`` to ``h``, ``rounding-floor`` when the norm at ``h`` sits below the
    estimated rounding level ``floor`` of the stencil chain (``R_eq`` is
    quadratic, so several stencils are exact and only rounding remains),
    otherwise ``not-converging``.  The ``cross_coupling`` row is the
    closed-form ``max |du/dx_tilde|``, exactly zero at zero temperature.
    """
    R, S, P = equilibrium_fields(params)
    exact = velocities_from_rs(R, S, params)
    # callers keep 2L/h even so that the coarse nodes are every other fine node
    coarse = Grid(grid.L, 2 * grid.h)
    sampled = {}
    for g in (grid, coarse):
        Rg, Sg, Pg = R.sample(g), S.sample(g), P.sample(g)
        sampled[g] = (velocities_from_rs(Rg, Sg, params), Pg)

    def evaluate(name, vel, P, g):
        if name == "osmotic":
            return osmotic_residual(vel, P, params, g)
        if name == "continuity":
            return continuity_residual(vel, P, params, g)
        if name == "fokker_planck_forward":
            return fokker_planck_residual(vel, P, params, "forward", g)
        if name == "fokker_planck_backward":
            return fokker_planck_residual(vel, P, params, "backward", g)
        if name == "kinematical":
            return kinematical_residual(vel, params, g)
        return dynamical_residual(vel, None, params, g)

    # Rounding level of each stencil chain: R and S enter through up to three
    # differences (velocities, then a second derivative), P through two.
    eps = np.finfo(float).eps
    D = 0.5 * params.hbar / params.m
    h = grid.h
    r_max = float(np.max(np.abs(R.on(grid))))
    p_max = float(np.max(P.on(grid)))
    ln_p = float(np.max(np.abs(P.log().on(grid))))
    v_max = float(np.max(np.abs(harmonic_potential_values(params, grid))))
    floors = {
        "osmotic": 100 * eps * D * ln_p / h,
        "continuity": 100 * eps * D * p_max * (1 + r_max) / h ** 2,
        "fokker_planck_forward": 100 * eps * D * p_max * (1 + r_max) / h ** 2,
        "fokker_planck_backward": 100 * eps * D * p_max * (1 + r_max) / h ** 2,
        "kinematical": 100 * eps * D * params.hbar / params.m * r_max / h ** 3,
        "dynamical": 100 * eps * (D * params.hbar / params.m * r_max / h ** 3
                                  + v_max / (params.m * h)),
    }
    rows = []
    for name, floor in floors.items():
        closed = evaluate(name, exact, P, grid)
        fine = evaluate(name, *sampled[grid], grid)
        rough = evaluate(name, *sampled[coarse], coarse)
        ratio = rough / fine if fine > 0 else math.inf
        if ratio >= 3.8 and fine > floor:
            status = "second-order"
        elif fine <= floor:
            status = "rounding-floor"
        else:
            status = "not-converging"
        rows.append((name, closed, fine, rough, ratio, floor, status))
    coupling = float(np.max(np.abs(exact.u.d(1).on(grid))))
    rows.append(("cross_coupling", coupling, coupling, coupling, math.nan, 0.0, "closed-form"))
    return rows


def harmonic_potential_values(params: PhysicalParams, grid: Grid) -> np.ndarray:
    c = grid.coords
    return 0.5 * params.m * params.omega ** 2 * c * c


def cmd_residuals(cfg: RunConfig, out: FsPath) -> int:
    """Write ``residuals.csv`` for the equilibrium solution at the configured grid."""
    params = cfg.params
    grid = Grid.default(params, cfg.grid_h)
    if cfg.grid_L is not None:
        cells = round(cfg.grid_L / grid.h)
        grid = Grid(cells * grid.h, grid.h)
    rows = residual_table(params, grid)
    _write_csv(out / "residuals.csv", cfg, "residuals",
               ["residual", "closed_form", "grid_h", "grid_2h", "ratio", "rounding_floor", "status"], rows,
               [f"h={grid.h:.12g}", f"L={grid.L:.12g}"])
    if any(r[-1] == "not-converging" for r in rows):
        log.error("grid residuals are not converging at second order; refine the grid")
        return EXIT_CONVERGENCE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nelson-tfd", description=__doc__.split("\n", 1)[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="key = value configuration file")
    ap.add_argument("--beta-bar", dest="beta_bar", help="dimensionless inverse temperature (inf allowed)")
    ap.add_argument("--paths", help="number of sample paths")
    ap.add_argument("--dt", help="time step")
    ap.add_argument("--horizon", help="integration horizon T")
    ap.add_argument("--seed", help="64-bit base seed")
    ap.add_argument("--threads", help="worker threads (default: NELSON_TFD_THREADS or CPU count)")
    ap.add_argument("--out", help="output directory (created if missing)")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override any configuration key; repeatable")
    ap.add_argument("--version", action="version", version=f"nelson-tfd {__version__}")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(format="nelson-tfd: %(levelname)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config) if args.config else {}
        for item in args.overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            raw[k.strip()] = v.strip()
        for key in ("beta_bar", "paths", "dt", "horizon", "seed", "threads", "out"):
            value = getattr(args, key)
            if value is not None:
                raw[key] = value
        if args.beta_bar is not None:
            raw.pop("beta", None)
        cfg = resolve_config(raw)
        if args.command == "uncertainty" and "sweep" in raw and not cfg.sweep:
            raise ConfigError("empty beta_bar sweep")
        out = FsPath(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        command = {"simulate": cmd_simulate, "histogram": cmd_histogram,
                   "uncertainty": cmd_uncertainty, "residuals": cmd_residuals}[args.command]
        return command(cfg, out)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except PathDivergedError as exc:
        log.error("%s", exc)
        return EXIT_DIVERGED
    except GridConvergenceError as exc:
        log.error("%s", exc)
        return EXIT_CONVERGENCE
    except ValueError as exc:
        # library validation of configured values (grid shape, density underflow)
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

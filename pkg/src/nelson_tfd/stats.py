"""Estimators turning ensembles into published-style numbers.

Standard errors of final-slice estimates use the delete-one jackknife over
paths, evaluated in closed form (no resampling loop): for a sum of squares
``SS`` the leave-one-out value is ``SS - d_i^2 n / (n - 1)`` with ``d_i`` the
deviation of sample ``i`` from the full mean.  Time series use mergeable
moment accumulators and the delta method.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from . import analytic
from .core import InsufficientSamplesError, PhysicalParams, thermal_occupation

__all__ = [
    "MomentAccumulator",
    "MomentEstimates",
    "Histogram",
    "UncertaintyReport",
    "marginal_histogram",
    "moment_estimates",
    "uncertainty_estimate",
    "distribution_test",
    "jackknife_variance",
    "summarize_accumulator",
]

OBSERVABLES = ("x", "x_tilde", "x2", "x_tilde2", "x_x_tilde")
MOMENT_NAMES = ("mean_x", "mean_x_tilde", "var_x", "var_x_tilde", "cov_x_x_tilde")


def observables(x, x_tilde) -> np.ndarray:
    """Stack ``(x, xt, x^2, xt^2, x xt)`` column-wise."""
    x = np.asarray(x, dtype=float)
    xt = np.asarray(x_tilde, dtype=float)
    return np.column_stack([x, xt, x * x, xt * xt, x * xt])


@dataclass
class MomentAccumulator:
    """Count, mean vector and co-moment matrix of a set of observables.

    Merging uses the pairwise update of Chan et al., so partial folds over
    disjoint path ranges can be combined in any grouping.
    """

    n: int
    mean: np.ndarray
    comoment: np.ndarray
    names: tuple = OBSERVABLES

    @classmethod
    def empty(cls, names=OBSERVABLES):
        k = len(names)
        return cls(0, np.zeros(k), np.zeros((k, k)), tuple(names))

    @classmethod
    def from_samples(cls, data, names=OBSERVABLES):
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[1] != len(names):
            raise ValueError("data must have one column per observable")
        n = data.shape[0]
        if n == 0:
            return cls.empty(names)
        mean = data.mean(axis=0)
        d = data - mean
        return cls(n, mean, d.T @ d, tuple(names))

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        if self.names != other.names:
            raise ValueError("cannot merge accumulators over different observables")
        if other.n == 0:
            return MomentAccumulator(self.n, self.mean.copy(), self.comoment.copy(), self.names)
        if self.n == 0:
            return MomentAccumulator(other.n, other.mean.copy(), other.comoment.copy(), other.names)
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.n / n)
        comoment = self.comoment + other.comoment + np.outer(delta, delta) * (self.n * other.n / n)
        return MomentAccumulator(n, mean, comoment, self.names)

    @property
    def covariance(self) -> np.ndarray:
        if self.n < 2:
            raise InsufficientSamplesError("need at least two samples")
        return self.comoment / (self.n - 1)


def summarize_accumulator(acc: MomentAccumulator):
    """Five tracked moments and delta-method standard errors.

    Returns ``(values, errors)``, each ordered as ``MOMENT_NAMES``.
    """
    n = acc.n
    if n < 2:
        raise InsufficientSamplesError("need at least two samples")
    m = acc.mean
    cov_means = acc.covariance / n
    bessel = n / (n - 1)
    values = np.array([
        m[0],
        m[1],
        bessel * (m[2] - m[0] ** 2),
        bessel * (m[3] - m[1] ** 2),
        bessel * (m[4] - m[0] * m[1]),
    ])
    grads = np.zeros((5, 5))
    grads[0, 0] = 1.0
    grads[1, 1] = 1.0
    grads[2, [0, 2]] = bessel * np.array([-2 * m[0], 1.0])
    grads[3, [1, 3]] = bessel * np.array([-2 * m[1], 1.0])
    grads[4, [0, 1, 4]] = bessel * np.array([-m[1], -m[0], 1.0])
    errors = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", grads, cov_means, grads), 0.0))
    return values, errors


def _jackknife_se(leave_one_out: np.ndarray) -> float:
    n = leave_one_out.size
    return math.sqrt((n - 1) / n * np.sum((leave_one_out - leave_one_out.mean()) ** 2))


def jackknife_variance(a, b=None):
    """Unbiased (co)variance of paired samples and its leave-one-out values.

    Returns ``(estimate, leave_one_out_array)``; the array is ``None`` for
    fewer than three samples.
    """
    a = np.asarray(a, dtype=float)
    b = a if b is None else np.asarray(b, dtype=float)
    n = a.size
    da = a - a.mean()
    db = b - b.mean()
    sp = np.dot(da, db)
    est = sp / (n - 1)
    if n < 3:
        return est, None
    loo = (sp - da * db * (n / (n - 1))) / (n - 2)
    return est, loo


@dataclass(frozen=True)
class MomentEstimates:
    """Final-slice moments with jackknife-over-paths standard errors."""

    mean_x: float
    mean_x_tilde: float
    var_x: float
    var_x_tilde: float
    cov_x_x_tilde: float
    se_mean_x: float
    se_mean_x_tilde: float
    se_var_x: float
    se_var_x_tilde: float
    se_cov_x_x_tilde: float
    n: int

    def as_rows(self):
        return [
            (name, getattr(self, name), getattr(self, "se_" + name)) for name in MOMENT_NAMES
        ]


def _sample_arrays(ensemble, pooled=False):
    if pooled:
        if ensemble.pooled is None:
            raise ValueError("ensemble was run without pooling (pool_every=0)")
        return ensemble.pooled
    return ensemble.x, ensemble.x_tilde


def moment_estimates(ensemble, pooled: bool = False) -> MomentEstimates:
    """Means, variances and cross moment of the final slice.

    Raises
    ------
    InsufficientSamplesError
        With fewer than two paths.
    """
    x, xt = _sample_arrays(ensemble, pooled)
    n = x.size
    if n < 2:
        raise InsufficientSamplesError("moment estimates need at least two paths")
    out = {}
    for name, arr in (("mean_x", x), ("mean_x_tilde", xt)):
        out[name] = float(arr.mean())
        out["se_" + name] = float(arr.std(ddof=1) / math.sqrt(n))
    for name, (a, b) in (("var_x", (x, None)), ("var_x_tilde", (xt, None)),
                         ("cov_x_x_tilde", (x, xt))):
        est, loo = jackknife_variance(a, b)
        out[name] = float(est)
        out["se_" + name] = math.nan if loo is None else _jackknife_se(loo)
    return MomentEstimates(n=n, **out)


@dataclass
class Histogram:
    """Uniform-bin histogram of one marginal."""

    edges: np.ndarray
    counts: np.ndarray
    mode: str = "density"
    pooled: bool = False
    total: int = field(default=-1)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.size != self.edges.size - 1:
            raise ValueError("need len(edges) == len(counts) + 1")
        if self.mode not in ("counts", "density"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.total < 0:
            self.total = int(self.counts.sum())

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def density(self) -> np.ndarray:
        """Counts normalized to unit area over the in-range samples."""
        in_range = self.counts.sum()
        if in_range == 0:
            return np.zeros(self.counts.shape)
        return self.counts / (in_range * self.widths)

    @property
    def values(self) -> np.ndarray:
        return self.density if self.mode == "density" else self.counts.astype(float)

    def merge(self, other: "Histogram") -> "Histogram":
        if not np.array_equal(self.edges, other.edges):
            raise ValueError("histograms must share bin edges to merge")
        return Histogram(self.edges.copy(), self.counts + other.counts, self.mode,
                         self.pooled and other.pooled, self.total + other.total)

    def to_csv(self, analytic_density=None, footer=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["bin_left", "bin_right", "center", "count", "density"]
        if analytic_density is not None:
            header.append("analytic_density")
        w.writerow(header)
        dens = self.density
        for i in range(self.counts.size):
            row = [_fmt(self.edges[i]), _fmt(self.edges[i + 1]), _fmt(self.centers[i]),
                   str(int(self.counts[i])), _fmt(dens[i])]
            if analytic_density is not None:
                row.append(_fmt(analytic_density[i]))
            w.writerow(row)
        for line in footer or ():
            buf.write(f"# {line}\n")
        return buf.getvalue()


def _fmt(v) -> str:
    return "%.12g" % v


def marginal_histogram(ensemble, coordinate: str = "x", bins: int = 101, range=None,
                       pooled: bool = False) -> Histogram:
    """Density histogram of the ``x`` or ``x_tilde`` marginal.

    The default range is ``+-5 sqrt(var_x)`` of the analytic equilibrium at the
    ensemble's parameters.
    """
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    if coordinate not in ("x", "x_tilde"):
        raise ValueError(f"coordinate must be 'x' or 'x_tilde', got {coordinate!r}")
    x, xt = _sample_arrays(ensemble, pooled)
    data = x if coordinate == "x" else xt
    if data.size == 0:
        raise ValueError("empty ensemble")
    if range is None:
        half = 5.0 * math.sqrt(analytic.stationary_covariance(ensemble.params).var_x)
        range = (-half, half)
    lo, hi = map(float, range)
    if not hi > lo:
        raise ValueError(f"empty histogram range {range}")
    counts, edges = np.histogram(data, bins=bins, range=(lo, hi))
    return Histogram(edges, counts, "density", pooled, int(data.size))


def distribution_test(histogram: Histogram, cdf, min_expected: float = 5.0):
    """Pearson chi-square of histogram counts against a reference law.

    ``cdf`` is a cumulative distribution function (a frozen scipy
    distribution works via its ``cdf`` method).  Expected counts are the
    in-range probability of each bin, renormalized to the in-range total;
    adjacent bins are merged until each expects at least ``min_expected``.

    Returns
    -------
    (statistic, p_value)
    """
    cdf = getattr(cdf, "cdf", cdf)
    cum = np.asarray(cdf(histogram.edges), dtype=float)
    probs = np.diff(cum)
    mass = cum[-1] - cum[0]
    n = histogram.counts.sum()
    if n == 0 or not mass > 0 or np.any(probs < 0):
        raise ValueError("degenerate histogram or reference distribution")
    expected = probs / mass * n
    obs_groups, exp_groups = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(histogram.counts, expected):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs_groups.append(o_acc)
            exp_groups.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if not exp_groups:
            raise ValueError("no bin group reaches the minimum expected count")
        obs_groups[-1] += o_acc
        exp_groups[-1] += e_acc
    if len(exp_groups) < 2:
        raise ValueError("fewer than two bins left after merging tails")
    obs = np.array(obs_groups)
    exp = np.array(exp_groups)
    stat = float(np.sum((obs - exp) ** 2 / exp))
    p = float(sps.chi2.sf(stat, obs.size - 1))
    return stat, p


@dataclass(frozen=True)
class UncertaintyReport:
    """Empirical position / osmotic-momentum spread versus the closed form."""

    std_x: float
    se_std_x: float
    std_halfdiff_p: float
    se_std_halfdiff_p: float
    product: float
    se_product: float
    analytic_product: float
    n_occupation: float
    hbar: float

    def __post_init__(self):
        if self.product < 0 or min(self.se_std_x, self.se_std_halfdiff_p, self.se_product) < 0:
            raise ValueError("uncertainty report fields must be non-negative")

    @property
    def z_score(self) -> float:
        return (self.product - self.analytic_product) / self.se_product

    def as_rows(self):
        return [
            ("std_x", self.std_x), ("se_std_x", self.se_std_x),
            ("std_halfdiff_p", self.std_halfdiff_p), ("se_std_halfdiff_p", self.se_std_halfdiff_p),
            ("product", self.product), ("se_product", self.se_product),
            ("analytic_product", self.analytic_product), ("n_occupation", self.n_occupation),
        ]

    def to_csv(self) -> str:
        lines = ["key,value"] + [f"{k},{_fmt(v)}" for k, v in self.as_rows()]
        return "\n".join(lines) + "\n"


def uncertainty_estimate(ensemble, drifts, params: PhysicalParams | None = None,
                         pooled: bool = False) -> UncertaintyReport:
    """``sqrt(Var[x]) sqrt(Var[(p - p_star)/2])`` with ``p = m b``, ``p_star = m b_star``.

    The momentum combination is evaluated pointwise from the drift fields at
    the sampled configurations, not from path increments.
    """
    params = params or ensemble.params
    x, xt = _sample_arrays(ensemble, pooled)
    if x.size < 3:
        raise InsufficientSamplesError("uncertainty estimate needs at least three paths")
    t = ensemble.final_time
    q = 0.5 * params.m * (drifts.b(x, xt, t) - drifts.b_star(x, xt, t))
    var_x, loo_x = jackknife_variance(x)
    var_q, loo_q = jackknife_variance(q)
    loo_sx = np.sqrt(loo_x)
    loo_sq = np.sqrt(loo_q)
    sx, sq = math.sqrt(var_x), math.sqrt(var_q)
    return UncertaintyReport(
        std_x=sx,
        se_std_x=_jackknife_se(loo_sx),
        std_halfdiff_p=sq,
        se_std_halfdiff_p=_jackknife_se(loo_sq),
        product=sx * sq,
        se_product=_jackknife_se(loo_sx * loo_sq),
        analytic_product=0.5 * params.hbar + params.hbar * thermal_occupation(params),
        n_occupation=thermal_occupation(params),
        hbar=params.hbar,
    )

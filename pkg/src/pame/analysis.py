"""Diagnostics on top of the engine: Monte-Carlo checks, rate fits, sweeps."""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from pame.engine import Problem, RunConfig, run
from pame.errors import InvalidSize, PameError, TooFewPoints
from pame.losses import Dataset, LossKind, LossSpec, gradient, loss_value
from pame.pme import aggregate, make_sparse_message, naive_average
from pame.rng import Purpose, stream

logger = logging.getLogger(__name__)

RATE_FLOOR = 1e-14
MIN_RATE_POINTS = 10
SWEEP_AXES = {
    "transmission_rate": "transmission_rate",
    "participation_rate": "nu",
    "comm_period": "kappa",
    "degree": None,
}
SWEEP_COLUMNS = ("axis_value", "seed", "final_objective", "iters", "total_bits", "mse_to_truth", "status")

__all__ = [
    "RateFit",
    "SweepResult",
    "UnbiasednessReport",
    "consensus_trajectory",
    "distance_to_final",
    "fit_linear_rate",
    "gradient_check",
    "srswor_enumeration",
    "surrogate_constant",
    "surrogate_merit",
    "sweep",
    "unbiasedness_test",
    "write_sweep",
]


@dataclass(frozen=True)
class UnbiasednessReport:
    target: np.ndarray
    cond_mean: np.ndarray
    cond_stderr: np.ndarray
    cond_counts: np.ndarray
    naive_mean: np.ndarray
    naive_stderr: np.ndarray
    ratio: float

    @staticmethod
    def _within(mean, stderr, target, k: float = 4.0) -> bool:
        slack = k * stderr + 1e-12 * np.maximum(1.0, np.abs(target))
        return bool(np.all(np.abs(mean - target) <= slack))

    @property
    def unbiased(self) -> bool:
        """Conditional mean of the lambda-count average matches the neighbor mean."""
        return self._within(self.cond_mean, self.cond_stderr, self.target)

    @property
    def naive_matches_scaled(self) -> bool:
        """Naive zero-filled average matches ``(s/n)`` times the neighbor mean."""
        return self._within(self.naive_mean, self.naive_stderr, self.ratio * self.target)

    @property
    def naive_matches_mean(self) -> bool:
        return self._within(self.naive_mean, self.naive_stderr, self.target)

    @property
    def passed(self) -> bool:
        return self.unbiased and self.naive_matches_scaled and (self.ratio == 1.0 or not self.naive_matches_mean)


def unbiasedness_test(
    q: int,
    n: int,
    s: int,
    w_vectors: Sequence[Sequence[float]],
    trials: int = 100_000,
    seed: int = 0,
) -> UnbiasednessReport:
    """Replay the sparse exchange from ``q`` senders ``trials`` times.

    Each trial draws fresh coordinate sets for every sender, aggregates with
    the production code and also forms the naive zero-filled average. Trials
    where a coordinate was sent by nobody are dropped from that coordinate's
    conditional mean.
    """
    if not 1 <= s <= n:
        raise InvalidSize(f"need 1 <= s <= n, got s={s}, n={n}")
    w = np.asarray(w_vectors, dtype=float)
    if w.shape != (q, n):
        raise InvalidSize(f"expected {q} vectors of length {n}, got shape {w.shape}")
    if trials < 1:
        raise InvalidSize("trials must be positive")
    rng = stream(seed, Purpose.MONTE_CARLO)
    own = np.zeros(n)
    cond_sum = np.zeros(n)
    cond_sq = np.zeros(n)
    counts = np.zeros(n, dtype=np.int64)
    naive_sum = np.zeros(n)
    naive_sq = np.zeros(n)
    for _ in range(trials):
        msgs = [make_sparse_message(w[j], s, rng, sender=j) for j in range(q)]
        agg = aggregate(own, msgs)
        hit = agg.counts > 0
        vals = np.where(hit, agg.vbar, 0.0)
        cond_sum += vals
        cond_sq += vals * vals
        counts += hit
        naive = naive_average(msgs, n)
        naive_sum += naive
        naive_sq += naive**2
    safe = np.maximum(counts, 1)
    cond_mean = cond_sum / safe
    cond_var = np.maximum(cond_sq / safe - cond_mean**2, 0.0)
    cond_stderr = np.sqrt(cond_var / np.maximum(counts - 1, 1))
    naive_mean = naive_sum / trials
    naive_var = np.maximum(naive_sq / trials - naive_mean**2, 0.0)
    naive_stderr = np.sqrt(naive_var / max(trials - 1, 1))
    return UnbiasednessReport(
        target=w.mean(axis=0),
        cond_mean=cond_mean,
        cond_stderr=cond_stderr,
        cond_counts=counts,
        naive_mean=naive_mean,
        naive_stderr=naive_stderr,
        ratio=s / n,
    )


def srswor_enumeration(x: Sequence, r: int) -> tuple:
    """Exact variance and second moment of a size-``r`` sample mean, by listing every sample."""
    q = len(x)
    if q < 1 or not 1 <= r <= q:
        raise InvalidSize(f"need q >= 1 and 1 <= r <= q, got q={q}, r={r}")
    means = [sum(Fraction(x[j]) for j in sub) / r for sub in itertools.combinations(range(q), r)]
    first = sum(means) / len(means)
    second = sum(v * v for v in means) / len(means)
    return second - first * first, second


@dataclass(frozen=True)
class GradCheck:
    max_rel_error: float
    trials: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < 1e-5


def gradient_check(kind: LossKind | str, trials: int = 100, seed: int = 0, n: int = 6, size: int = 12) -> GradCheck:
    """Central differences against ``gradient`` on random data and points.

    The error per trial is ``||g_fd - g||_inf / max(||g||_inf, 1)``.
    """
    spec = LossSpec(LossKind(kind))
    rng = stream(seed, Purpose.ORACLE)
    h = 1e-6
    worst = 0.0
    for _ in range(trials):
        a = rng.standard_normal((size, n))
        if spec.kind is LossKind.LINEAR_REGRESSION:
            b = rng.standard_normal(size)
        else:
            b = (rng.random(size) < 0.5).astype(float)
        ds = Dataset(a, b)
        w = rng.standard_normal(n)
        g = gradient(spec, ds, w)
        fd = np.empty(n)
        for c in range(n):
            step = np.zeros(n)
            step[c] = h
            fd[c] = (loss_value(spec, ds, w + step) - loss_value(spec, ds, w - step)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(fd - g)) / max(float(np.max(np.abs(g))), 1.0)))
    return GradCheck(max_rel_error=worst, trials=trials)


@dataclass(frozen=True)
class RateFit:
    slope: float
    r2: float
    window: tuple[int, int]
    degenerate: bool = False


def fit_linear_rate(
    values: Sequence[float],
    window: tuple[float, float] = (0.25, 0.75),
    floor: float = RATE_FLOOR,
) -> RateFit:
    """Least-squares line through ``log(values[k])`` against ``k``.

    ``window`` gives the start and end of the fitted range as fractions of
    the trajectory length; the default keeps the middle half. Points at or
    below ``floor`` are dropped. A flat trajectory has no explained variance,
    so it reports ``r2 = 0`` with ``degenerate`` set.
    """
    y = np.asarray(values, dtype=float)
    lo, hi = window
    if not 0 <= lo < hi <= 1:
        raise ValueError(f"window fractions must satisfy 0 <= lo < hi <= 1, got {window}")
    start, end = int(math.floor(lo * len(y))), int(math.ceil(hi * len(y)))
    ks = np.arange(start, end)
    seg = y[start:end]
    keep = np.isfinite(seg) & (seg > floor)
    if np.count_nonzero(keep) < MIN_RATE_POINTS:
        raise TooFewPoints(
            f"{np.count_nonzero(keep)} usable points in window [{start}, {end}), need {MIN_RATE_POINTS}"
        )
    x = ks[keep].astype(float)
    logs = np.log(seg[keep])
    xc = x - x.mean()
    yc = logs - logs.mean()
    slope = float(xc @ yc / (xc @ xc))
    total = float(yc @ yc)
    if total <= 1e-300:
        return RateFit(slope=0.0, r2=0.0, window=(start, end), degenerate=True)
    resid = yc - slope * xc
    r2 = 1.0 - float(resid @ resid) / total
    return RateFit(slope=slope, r2=min(max(r2, 0.0), 1.0), window=(start, end))


def distance_to_final(history: Sequence[np.ndarray]) -> np.ndarray:
    """``||W^k - W^K||_F^2`` for every stored iterate, ``W^K`` being the last."""
    final = np.asarray(history[-1])
    return np.array([float(np.sum((np.asarray(W) - final) ** 2)) for W in history])


def consensus_trajectory(history: Sequence[np.ndarray]) -> np.ndarray:
    """``||W^k - mean-replicated W^k||_F^2`` per iterate.

    Node rows are reduced in index order, then coordinates, so the summation
    order is fixed.
    """
    if len(history) == 0:
        raise ValueError("history is empty")
    out = np.empty(len(history))
    for k, W in enumerate(history):
        W = np.asarray(W, dtype=float)
        dev = W - W.mean(axis=0)
        out[k] = float(np.sum(np.sum(dev * dev, axis=1)))
    return out


def surrogate_constant(m: int, n: int, eps_hat: float, gamma: float, sigma0: float, t_min: int) -> float:
    """Weight of the ``gamma^-k`` term that makes the merit nonincreasing."""
    return 4.0 * m * n * eps_hat**2 * gamma / ((gamma - 1.0) * sigma0 * t_min)


def surrogate_merit(merits: Sequence[float], const: float, gamma: float) -> np.ndarray:
    """``H^k + const * gamma^-k`` along a trajectory starting at ``k = 0``."""
    h = np.asarray(merits, dtype=float)
    return h + const * gamma ** (-np.arange(len(h), dtype=float))


@dataclass
class SweepResult:
    axis: str
    values: list
    seeds: list[int]
    final_objectives: list[list[float]]
    iters_to_converge: list[list[int]]
    total_bits: list[list[int]]
    mse_to_truth: list[list[float]]
    status: list[list[str]]
    errors: list[dict] = field(default_factory=list)

    def rows(self) -> list[tuple]:
        out = []
        for a, value in enumerate(self.values):
            for b, seed in enumerate(self.seeds):
                out.append(
                    (
                        value,
                        seed,
                        self.final_objectives[a][b],
                        self.iters_to_converge[a][b],
                        self.total_bits[a][b],
                        self.mse_to_truth[a][b],
                        self.status[a][b],
                    )
                )
        return out

    def mean_objective(self, index: int) -> float:
        return float(np.nanmean(self.final_objectives[index]))

    def mean_bits(self, index: int) -> float:
        return float(np.mean(self.total_bits[index]))


ProblemFactory = Callable[[object, int], Problem]


def sweep(
    make_problem: ProblemFactory,
    cfg_template: RunConfig,
    axis: str,
    values: Sequence,
    seeds: Sequence[int],
    threads: int = 1,
) -> SweepResult:
    """Run the engine once per ``(value, seed)`` cell.

    ``make_problem(value, seed)`` builds the graph and data for a cell, so
    axes that change the graph (``degree``) are handled by the caller's
    factory. Engine-level axes are applied to a copy of ``cfg_template`` with
    the cell's seed. A failing cell is recorded and the sweep continues.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {sorted(SWEEP_AXES)}")
    if not values or not seeds:
        raise ValueError("values and seeds must be nonempty")
    field_name = SWEEP_AXES[axis]
    result = SweepResult(axis, list(values), list(seeds), [], [], [], [], [])
    for value in values:
        objs, iters, bits, mses, stats = [], [], [], [], []
        for seed in seeds:
            changes = {"seed": seed}
            if field_name is not None:
                changes[field_name] = value
            try:
                cfg = dataclasses.replace(cfg_template, **changes)
                problem = make_problem(value, seed)
                res = run(problem, cfg, threads=threads)
            except (PameError, ValueError, ArithmeticError) as exc:
                logger.warning("sweep cell %s=%s seed=%s failed: %s", axis, value, seed, exc)
                result.errors.append({"axis_value": value, "seed": seed, "error": f"{type(exc).__name__}: {exc}"})
                objs.append(math.nan)
                iters.append(0)
                bits.append(0)
                mses.append(math.nan)
                stats.append("error")
                continue
            truth = problem.truth
            mse = math.nan
            if truth is not None:
                mse = float(np.sum((res.average - truth.w_star) ** 2) / problem.n)
            objs.append(res.final_objective)
            iters.append(res.iters)
            bits.append(res.total_bits)
            mses.append(mse)
            stats.append(res.status)
        result.final_objectives.append(objs)
        result.iters_to_converge.append(iters)
        result.total_bits.append(bits)
        result.mse_to_truth.append(mses)
        result.status.append(stats)
    return result


def _cell(x) -> str:
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, (list, tuple)):
        return "-".join(str(v) for v in x)
    return str(x)


def write_sweep(directory: str | Path, result: SweepResult, manifest: dict | None = None) -> Path:
    """Write ``sweep_<axis>.csv`` and ``sweep_<axis>.json`` into ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"sweep_{result.axis}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in result.rows():
            writer.writerow([_cell(x) for x in row])
    doc = {
        "axis": result.axis,
        "values": result.values,
        "seeds": result.seeds,
        "csv": csv_path.name,
        "errors": result.errors,
    }
    if manifest:
        doc.update(manifest)
    (out / f"sweep_{result.axis}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return csv_path

"""Synchronous simulation of PaME and of the D-PSGD baseline.

All nodes advance one global iteration ``k`` together. Node ``i`` exchanges
messages only when ``k % kappa_i == 0``; in between it takes local penalty
steps. Every per-node update at iteration ``k`` reads the same immutable
snapshot ``W^k``, so the outcome never depends on the processing order or on
the number of worker threads.

Randomness is drawn from streams keyed by ``(seed, purpose, k, i[, j])``:
neighbor choice per receiver, coordinate choice per (receiver, sender) edge
and batch choice per node.
"""

from __future__ import annotations

import csv
import enum
import functools
import json
import logging
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from pame.errors import ConfigError, PameError, InvalidTopology, NonFiniteValue
from pame.losses import Dataset, GroundTruth, LossKind, LossSpec, gradient
from pame.pme import aggregate, bit_cost, dense_bit_cost, make_sparse_message, sample_coordinates
from pame.rng import Purpose, stream
from pame.topology import Graph, communication_matrix

logger = logging.getLogger(__name__)

METRICS_HEADER = ("iter", "objective", "consensus_err", "merit", "bits", "comm_round")

__all__ = [
    "METRICS_HEADER",
    "MetricsRecord",
    "Mode",
    "NetworkState",
    "Problem",
    "RunConfig",
    "RunResult",
    "SetupReport",
    "bits_ledger",
    "dpsgd_step",
    "initial_state",
    "pame_step",
    "resolve",
    "run",
    "validate_setup",
    "write_metrics_csv",
]


class Mode(str, enum.Enum):
    PAME = "PaME"
    DPSGD = "DPSGD"


@dataclass(frozen=True)
class RunConfig:
    """Algorithm parameters.

    ``nu`` and ``s`` may be scalars or per-node sequences. ``s`` takes
    precedence over ``transmission_rate`` (``s = round(rate * n)``). ``kappa``
    is either one period for every node or a ``(lo, hi)`` range from which
    each node draws its own period. ``k0`` defaults to the least common
    multiple of the periods.
    """

    nu: float | Sequence[float] = 0.2
    s: int | Sequence[int] | None = None
    transmission_rate: float = 0.2
    gamma: float = 1.005
    sigma0: float = 1.0
    kappa: int | Sequence[int] = (3, 7)
    k0: int | None = None
    delta: float = 1.0
    max_iters: int = 5000
    batch_fraction: float = 1.0
    seed: int = 0
    mode: Mode = Mode.PAME
    dpsgd_lr: float = 0.1
    tol: float = 1e-3

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.gamma > 1:
            raise ConfigError(f"gamma must exceed 1, got {self.gamma}")
        if not self.sigma0 > 0:
            raise ConfigError(f"sigma0 must be positive, got {self.sigma0}")
        if not self.delta > 0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if not 0 < self.transmission_rate <= 1:
            raise ConfigError(f"transmission_rate must lie in (0, 1], got {self.transmission_rate}")
        if not 0 < self.batch_fraction <= 1:
            raise ConfigError(f"batch_fraction must lie in (0, 1], got {self.batch_fraction}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be positive, got {self.max_iters}")
        if not self.tol >= 0:
            raise ConfigError(f"tol must be non-negative, got {self.tol}")
        if not self.dpsgd_lr > 0:
            raise ConfigError(f"dpsgd_lr must be positive, got {self.dpsgd_lr}")
        for nu in np.atleast_1d(self.nu):
            if not 0 < nu <= 1:
                raise ConfigError(f"nu must lie in (0, 1], got {nu}")
        kappa = np.atleast_1d(self.kappa)
        if kappa.size not in (1, 2) or np.any(kappa < 1):
            raise ConfigError(f"kappa must be a positive int or a [lo, hi] range, got {self.kappa}")
        if kappa.size == 2 and kappa[0] > kappa[1]:
            raise ConfigError(f"kappa range is empty: {self.kappa}")


@dataclass(frozen=True, eq=False)
class Problem:
    graph: Graph
    loss: LossSpec
    datasets: Sequence[Dataset]
    truth: GroundTruth | None = None

    def __post_init__(self) -> None:
        if len(self.datasets) != self.graph.m:
            raise InvalidTopology(f"{len(self.datasets)} datasets for {self.graph.m} nodes")
        dims = {ds.dim for ds in self.datasets}
        if len(dims) != 1:
            raise ConfigError(f"datasets disagree on dimension: {sorted(dims)}")

    @property
    def m(self) -> int:
        return self.graph.m

    @property
    def n(self) -> int:
        return self.datasets[0].dim

    @functools.cached_property
    def _stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        a = np.concatenate([ds.features for ds in self.datasets])
        b = np.concatenate([ds.targets for ds in self.datasets])
        weights = np.concatenate([np.full(ds.size, 1.0 / ds.size) for ds in self.datasets])
        owner = np.concatenate([np.full(ds.size, i) for i, ds in enumerate(self.datasets)])
        return a, b, weights, owner

    def _pointwise(self, z: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.loss.kind is LossKind.LINEAR_REGRESSION:
            return 0.5 * (z - b) ** 2
        return np.logaddexp(0.0, z) - b * z

    def objective(self, w: np.ndarray) -> float:
        """Global objective ``sum_i f_i(w)``."""
        a, b, weights, _ = self._stacked
        value = float(weights @ self._pointwise(a @ w, b))
        if self.loss.kind is LossKind.LOGISTIC:
            value += self.m * 0.5 * self.loss.ridge * float(w @ w)
        return value

    def local_objectives(self, W: np.ndarray) -> float:
        """``sum_i f_i(w_i)`` for per-node parameters ``W``."""
        a, b, weights, owner = self._stacked
        z = np.einsum("rj,rj->r", a, W[owner])
        value = float(weights @ self._pointwise(z, b))
        if self.loss.kind is LossKind.LOGISTIC:
            value += 0.5 * self.loss.ridge * float(np.sum(W * W))
        return value


@dataclass(frozen=True, eq=False)
class Resolved:
    """Per-node parameters derived from a config and a problem."""

    s: np.ndarray
    nu: np.ndarray
    t: np.ndarray
    kappa: np.ndarray
    k0: int
    batch_sizes: np.ndarray


def _per_node(value, m: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        return np.full(m, arr[0])
    if arr.size != m:
        raise ConfigError(f"{name} has {arr.size} entries for {m} nodes")
    return arr


def resolve(problem: Problem, cfg: RunConfig) -> Resolved:
    m, n = problem.m, problem.n
    if m < 2 or any(len(nb) == 0 for nb in problem.graph.neighbors):
        raise InvalidTopology("every node needs at least one neighbor (m >= 2)")
    if cfg.s is None:
        s = np.full(m, min(n, max(1, round(cfg.transmission_rate * n))))
    else:
        s = _per_node(cfg.s, m, "s").astype(int)
    if np.any(s < 1) or np.any(s > n):
        raise ConfigError(f"s must lie in [1, {n}]")
    nu = _per_node(cfg.nu, m, "nu")
    degrees = np.array(problem.graph.degrees)
    t = np.clip(np.floor(nu * degrees + 1e-9).astype(int), 1, degrees)
    kappa_cfg = np.atleast_1d(cfg.kappa).astype(int)
    if kappa_cfg.size == 1:
        kappa = np.full(m, kappa_cfg[0])
    else:
        kappa = stream(cfg.seed, Purpose.KAPPA).integers(kappa_cfg[0], kappa_cfg[1] + 1, size=m)
    k0 = cfg.k0 if cfg.k0 is not None else math.lcm(*kappa.tolist())
    sizes = np.array([ds.size for ds in problem.datasets])
    batch = np.maximum(1, np.ceil(cfg.batch_fraction * sizes - 1e-9)).astype(int)
    return Resolved(s=s, nu=nu, t=t, kappa=kappa, k0=int(k0), batch_sizes=batch)


@dataclass(eq=False)
class NetworkState:
    """Iterate ``W^k`` (one row per node) and penalties ``sigma^k``."""

    k: int
    W: np.ndarray
    sigma: np.ndarray

    def node(self, i: int) -> dict:
        return {"w": self.W[i], "sigma": float(self.sigma[i])}


def initial_state(problem: Problem, cfg: RunConfig) -> NetworkState:
    return NetworkState(k=0, W=np.zeros((problem.m, problem.n)), sigma=np.full(problem.m, cfg.sigma0))


@dataclass
class MetricsRecord:
    iter: int
    objective: float
    consensus_err: float
    merit: float
    bits: int
    comm_round: bool
    wallclock: float = 0.0
    max_gap: float = 0.0
    w_inf: float = 0.0
    vbar_inf: float = 0.0

    def csv_row(self) -> list[str]:
        return [
            str(self.iter),
            repr(self.objective),
            repr(self.consensus_err),
            repr(self.merit),
            str(self.bits),
            str(int(self.comm_round)),
        ]


def _batch(problem: Problem, res: Resolved, cfg: RunConfig, k: int, i: int):
    size = problem.datasets[i].size
    if res.batch_sizes[i] >= size:
        return None
    return sample_coordinates(size, int(res.batch_sizes[i]), stream(cfg.seed, Purpose.BATCH, k, i))


def _map_nodes(fn: Callable[[int], tuple], m: int, pool: ThreadPoolExecutor | None, order) -> list[tuple]:
    nodes = list(range(m)) if order is None else list(order)
    if sorted(nodes) != list(range(m)):
        raise ValueError("node order must be a permutation of range(m)")
    outputs = list(pool.map(fn, nodes)) if pool is not None else [fn(i) for i in nodes]
    by_node: list[tuple] = [()] * m
    for i, out in zip(nodes, outputs):
        by_node[i] = out
    return by_node


def _record(
    problem: Problem,
    state: NetworkState,
    V: np.ndarray,
    penalty_weights: np.ndarray,
    bits: int,
    comm: bool,
    started: float,
) -> MetricsRecord:
    W = state.W
    avg = W.mean(axis=0)
    dev = W - avg
    gaps = np.linalg.norm(W - V, axis=1)
    merit = problem.local_objectives(W) + float(np.sum(0.5 * penalty_weights * gaps**2))
    return MetricsRecord(
        iter=state.k,
        objective=problem.objective(avg),
        consensus_err=float(np.sum(dev * dev)),
        merit=float(merit),
        bits=int(bits),
        comm_round=bool(comm),
        wallclock=time.perf_counter() - started,
        max_gap=float(gaps.max()),
        w_inf=float(np.max(np.abs(W))),
        vbar_inf=float(np.max(np.abs(V))),
    )


def _check_finite(W: np.ndarray, k: int) -> None:
    if not np.all(np.isfinite(W)):
        bad = np.unique(np.argwhere(~np.isfinite(W))[:, 0]).tolist()
        raise NonFiniteValue(f"non-finite parameters at iteration {k + 1} on nodes {bad}")


def pame_step(
    problem: Problem,
    cfg: RunConfig,
    res: Resolved,
    state: NetworkState,
    pool: ThreadPoolExecutor | None = None,
    order: Sequence[int] | None = None,
) -> tuple[NetworkState, MetricsRecord, np.ndarray]:
    """One PaME iteration; returns ``(state^{k+1}, record^k, V^k)``."""
    started = time.perf_counter()
    k, W = state.k, state.W

    def update(i: int):
        w_i = W[i]
        bits = 0
        comm = k % res.kappa[i] == 0
        if comm:
            nbrs = problem.graph.neighbors[i]
            picks = sample_coordinates(len(nbrs), int(res.t[i]), stream(cfg.seed, Purpose.NEIGHBORS, k, i))
            msgs = []
            for j in (nbrs[p] for p in picks):
                rng = stream(cfg.seed, Purpose.COORDINATES, k, i, j)
                msgs.append(make_sparse_message(W[j], int(res.s[j]), rng, sender=j))
            vbar = aggregate(w_i, msgs).vbar
            bits = sum(bit_cost(msg) for msg in msgs)
        else:
            vbar = w_i
        g = gradient(problem.loss, problem.datasets[i], vbar, _batch(problem, res, cfg, k, i))
        return vbar - g / (state.sigma[i] * res.t[i]), vbar, bits, comm

    out = _map_nodes(update, problem.m, pool, order)
    W_next = np.stack([o[0] for o in out])
    V = np.stack([o[1] for o in out])
    _check_finite(W_next, k)
    bits = sum(o[2] for o in out)
    record = _record(problem, state, V, state.sigma * res.t, bits, any(o[3] for o in out), started)
    return NetworkState(k=k + 1, W=W_next, sigma=state.sigma * cfg.gamma), record, V


def dpsgd_step(
    problem: Problem,
    cfg: RunConfig,
    res: Resolved,
    state: NetworkState,
    pool: ThreadPoolExecutor | None = None,
    order: Sequence[int] | None = None,
) -> tuple[NetworkState, MetricsRecord, np.ndarray]:
    """One D-PSGD iteration: neighbor mean (no self weight) minus a gradient step."""
    started = time.perf_counter()
    k, W = state.k, state.W
    n = problem.n

    def update(i: int):
        nbrs = problem.graph.neighbors[i]
        mixed = W[list(nbrs)].sum(axis=0) / len(nbrs)
        g = gradient(problem.loss, problem.datasets[i], W[i], _batch(problem, res, cfg, k, i))
        return mixed - cfg.dpsgd_lr * g, mixed, len(nbrs) * dense_bit_cost(n)

    out = _map_nodes(update, problem.m, pool, order)
    W_next = np.stack([o[0] for o in out])
    V = np.stack([o[1] for o in out])
    _check_finite(W_next, k)
    record = _record(problem, state, V, np.zeros(problem.m), sum(o[2] for o in out), True, started)
    return NetworkState(k=k + 1, W=W_next, sigma=state.sigma), record, V


@dataclass(eq=False)
class RunResult:
    records: list[MetricsRecord]
    state: NetworkState
    status: str
    resolved: Resolved
    W_history: list[np.ndarray] = field(default_factory=list)
    V_history: list[np.ndarray] = field(default_factory=list)

    @property
    def iters(self) -> int:
        return len(self.records)

    @property
    def total_bits(self) -> int:
        return sum(r.bits for r in self.records)

    @property
    def final_objective(self) -> float:
        return self.records[-1].objective

    @property
    def average(self) -> np.ndarray:
        return self.state.W.mean(axis=0)


def _converged(records: list[MetricsRecord], tol: float) -> bool:
    if len(records) < 3:
        return False
    return statistics.pstdev(r.objective for r in records[-3:]) < tol


def run(
    problem: Problem,
    cfg: RunConfig,
    threads: int = 1,
    keep_history: bool = False,
    check_setup: bool = True,
) -> RunResult:
    """Iterate until the objective's 3-point population std drops below ``cfg.tol``.

    Reaching ``cfg.max_iters`` is reported as status ``"max_iters"``, not raised.
    """
    res = resolve(problem, cfg)
    if check_setup:
        try:
            communication_matrix(problem.graph)
        except PameError as exc:
            logger.warning("graph assumption check failed: %s", exc)
    step = pame_step if cfg.mode is Mode.PAME else dpsgd_step
    state = initial_state(problem, cfg)
    records: list[MetricsRecord] = []
    W_hist: list[np.ndarray] = []
    V_hist: list[np.ndarray] = []
    status = "max_iters"
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for _ in range(cfg.max_iters):
            prev = state
            state, record, V = step(problem, cfg, res, state, pool)
            records.append(record)
            if keep_history:
                W_hist.append(prev.W)
                V_hist.append(V)
            if _converged(records, cfg.tol):
                status = "converged"
                break
    finally:
        if pool is not None:
            pool.shutdown()
    if keep_history:
        W_hist.append(state.W)
    return RunResult(records=records, state=state, status=status, resolved=res, W_history=W_hist, V_history=V_hist)


def bits_ledger(records: Sequence[MetricsRecord]) -> tuple[int, list[int]]:
    """Total bits and the bits of each communication round, in order."""
    per_round = [r.bits for r in records if r.comm_round]
    return sum(r.bits for r in records), per_round


def write_metrics_csv(path: str | Path, records: Sequence[MetricsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for r in records:
            writer.writerow(r.csv_row())


@dataclass
class SetupReport:
    zeta: float
    p: float
    gamma: float
    k0: int
    gamma_interval: tuple[float, float]
    gamma_ok: bool
    p_ok: bool
    lhs: list[float]
    rhs: float
    node_pass: list[bool]
    alpha_max: float
    eps_hat: float
    t_min: int
    sigma_required: float
    sigma0: float
    sigma_ok: bool
    warnings: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.warnings

    @property
    def margins(self) -> list[float]:
        return [self.rhs - v for v in self.lhs]

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["gamma_interval"] = [self.gamma_interval[0], _json_float(self.gamma_interval[1])]
        doc["margins"] = self.margins
        doc["passed"] = self.passed
        return doc


def _json_float(x: float):
    return x if math.isfinite(x) else None


def validate_setup(
    problem: Problem,
    cfg: RunConfig,
    zeta: float,
    alpha_max: float,
    eps_hat: float,
) -> SetupReport:
    """Evaluate the sufficient parameter conditions for convergence.

    Report-only: failures become warnings and nothing is raised. Per node
    ``i`` the left side is ``(1-p)^t_i (1+zeta)^2 + 2p sum_{j in N_i} nu_j``
    and the right side is ``(gamma^(-k0/2) - zeta)^2``; ``sigma0`` should be at
    least ``max(4 alpha_max, eps_hat gamma / ((gamma-1) delta t_min))``.
    """
    res = resolve(problem, cfg)
    p = float(res.s.min()) / problem.n
    gamma = cfg.gamma
    k0 = res.k0
    upper = zeta ** (-2.0 / k0) if zeta > 0 else math.inf
    rhs = (gamma ** (-k0 / 2.0) - zeta) ** 2
    lhs = [
        (1 - p) ** int(res.t[i]) * (1 + zeta) ** 2 + 2 * p * float(sum(res.nu[j] for j in nbrs))
        for i, nbrs in enumerate(problem.graph.neighbors)
    ]
    node_pass = [v < rhs for v in lhs]
    t_min = int(res.t.min())
    sigma_required = max(4 * alpha_max, eps_hat * gamma / ((gamma - 1) * cfg.delta * t_min))
    report = SetupReport(
        zeta=zeta,
        p=p,
        gamma=gamma,
        k0=k0,
        gamma_interval=(1.0, upper),
        gamma_ok=1 < gamma < upper,
        p_ok=0 < p < 1,
        lhs=lhs,
        rhs=rhs,
        node_pass=node_pass,
        alpha_max=alpha_max,
        eps_hat=eps_hat,
        t_min=t_min,
        sigma_required=sigma_required,
        sigma0=cfg.sigma0,
        sigma_ok=cfg.sigma0 >= sigma_required,
    )
    if not report.gamma_ok:
        report.warnings.append(f"gamma={gamma} outside admissible interval (1, {upper:.6g})")
    if not report.p_ok:
        report.warnings.append(f"p=s/n={p:.4g} outside (0, 1)")
    failing = [i for i, ok in enumerate(node_pass) if not ok]
    if failing:
        report.warnings.append(
            f"participation/transmission condition fails on {len(failing)} of {problem.m} nodes "
            f"(max lhs {max(lhs):.4g} vs rhs {rhs:.4g})"
        )
    if not report.sigma_ok:
        report.warnings.append(f"sigma0={cfg.sigma0} below required {sigma_required:.6g}")
    for msg in report.warnings:
        logger.warning(msg)
    return report


def summary_json(result: RunResult, rate_slope: float | None, rate_r2: float | None) -> str:
    doc = {
        "status": result.status,
        "iters": result.iters,
        "total_bits": result.total_bits,
        "final_objective": result.final_objective,
        "rate_slope": rate_slope,
        "rate_r2": rate_r2,
    }
    return json.dumps(doc, indent=2) + "\n"

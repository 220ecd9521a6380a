"""Quantisation-error-versus-acceleration sweeps for the VQ and DL codebooks."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    KernelSet,
    LayerShape,
    SubspacePartition,
    aggregate_errors,
    partition_kernels,
    quantization_error,
)
from .dl import dl_approximate, solve
from .io import atomic_write_text, read_kernels
from .options import SolverOptions, subspace_seed
from .planner import gain_at_equal_error, plan
from .vq import kmeans_cluster, vq_approximate

log = logging.getLogger(__name__)

CSV_FIELDS = ("method", "rho_target", "rho_achieved", "seed", "subspace", "mse", "relfrob", "K", "L", "alpha", "T_muls")
SUMMARY_FIELDS = (
    "method", "rho_target", "rho_achieved", "K", "L", "alpha", "T_muls",
    "n_seeds", "relfrob_mean", "relfrob_std", "relfrob_min", "relfrob_max", "mse_mean",
)
METHODS = ("vq", "dl")


@dataclass(frozen=True)
class SyntheticKernelSpec:
    """Rank-``rank`` factor model plus i.i.d. Gaussian noise of std ``noise``."""

    rank: int = 8
    noise: float = 0.1
    scale: float = 1.0

    def validate(self, shape: LayerShape):
        if not 1 <= self.rank <= shape.N:
            raise ValueError(f"rank must lie in [1, N={shape.N}], got {self.rank}")
        if self.noise < 0:
            raise ValueError("noise level must be >= 0")


def generate_synthetic_kernels(spec: SyntheticKernelSpec, shape: LayerShape, seed: int) -> KernelSet:
    """Kernels whose cross-channel vectors ``w_{k,u,v}`` follow ``A z + noise``.

    ``A`` is ``N x rank`` and every ``z`` is standard normal, scaled so that
    the factor part has unit variance per coefficient before ``scale``.
    """
    spec.validate(shape)
    rng = np.random.default_rng(seed)
    n = shape.n_subvectors
    loadings = rng.standard_normal((shape.N, spec.rank))
    factors = rng.standard_normal((spec.rank, n))
    full = loadings @ factors / math.sqrt(spec.rank)
    if spec.noise > 0:
        full = full + spec.noise * rng.standard_normal((shape.N, n))
    full *= spec.scale
    weights = full.reshape(shape.N, shape.M, shape.p, shape.p).transpose(1, 0, 2, 3)
    kernels = KernelSet(shape, weights)
    log.debug("synthetic kernels seed=%d rank=%d numerical rank=%d", seed, spec.rank, kernel_rank(kernels))
    return kernels


def kernel_rank(kernels: KernelSet) -> int:
    """Numerical rank of the ``N x p^2 M`` matrix of cross-channel vectors."""
    s = kernels.shape
    # tolerance follows the 32-bit storage precision
    return int(np.linalg.matrix_rank(kernels.weights.transpose(1, 0, 2, 3).reshape(s.N, -1)))


@dataclass(frozen=True)
class SweepConfig:
    shape: LayerShape
    Nprime: int
    rho_grid: tuple
    c: float
    alpha: int
    seeds: tuple
    generator: dict = field(default_factory=lambda: {"type": "synthetic", "rank": 8, "noise": 0.1})
    methods: tuple = METHODS
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        grid = tuple(self.rho_grid)
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("rho_grid must be non-empty and strictly increasing")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        methods = tuple(self.methods)
        if not methods or any(m not in METHODS for m in methods):
            raise ValueError(f"methods must be drawn from {METHODS}")
        kind = self.generator.get("type")
        if kind == "synthetic":
            self.synthetic_spec().validate(self.shape)
        elif kind == "file":
            if "path" not in self.generator:
                raise ValueError("file generator needs a 'path'")
        else:
            raise ValueError(f"unknown generator type {kind!r}")
        object.__setattr__(self, "rho_grid", grid)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "methods", methods)

    def synthetic_spec(self) -> SyntheticKernelSpec:
        g = self.generator
        return SyntheticKernelSpec(int(g.get("rank", 8)), float(g.get("noise", 0.1)), float(g.get("scale", 1.0)))

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "SweepConfig":
        """Build from the JSON config schema.

        ``shape`` is ``"MxNxpxm"`` or a mapping; ``methods`` may be ``"both"``.
        Unknown keys are rejected.
        """
        known = {"shape", "nprime", "rho_grid", "c", "alpha", "seeds", "generator", "methods", "solver"}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        shape = doc["shape"]
        shape = LayerShape.parse(shape) if isinstance(shape, str) else LayerShape(**shape)
        methods = doc.get("methods", "both")
        methods = METHODS if methods == "both" else ((methods,) if isinstance(methods, str) else tuple(methods))
        generator = dict(doc.get("generator", {"type": "synthetic"}))
        if generator.get("type") == "file" and base_dir is not None:
            generator["path"] = str(Path(base_dir) / generator["path"])
        return cls(
            shape=shape,
            Nprime=int(doc["nprime"]),
            rho_grid=tuple(doc["rho_grid"]),
            c=doc["c"],
            alpha=int(doc["alpha"]),
            seeds=tuple(doc["seeds"]),
            generator=generator,
            methods=methods,
            solver=SolverOptions(**doc.get("solver", {})),
        )

    @classmethod
    def from_json(cls, path) -> "SweepConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)

    def kernels(self, seed: int) -> KernelSet:
        if self.generator["type"] == "file":
            kernels = read_kernels(self.generator["path"])
            if kernels.shape.kernel_extent != self.shape.kernel_extent:
                raise ValueError(f"kernel file shape {kernels.shape} differs from config shape {self.shape}")
            return kernels
        return generate_synthetic_kernels(self.synthetic_spec(), self.shape, seed)


@dataclass(frozen=True)
class SweepRow:
    method: str
    rho_target: float
    rho_achieved: float
    seed: int
    subspace: int
    mse: float
    relfrob: float
    K: int
    L: int
    alpha: int
    T_muls: int

    def as_strings(self):
        return [
            self.method, repr(float(self.rho_target)), repr(float(self.rho_achieved)), str(self.seed),
            str(self.subspace), repr(float(self.mse)), repr(float(self.relfrob)),
            str(self.K), str(self.L), str(self.alpha), str(self.T_muls),
        ]

    @classmethod
    def from_strings(cls, rec: dict) -> "SweepRow":
        return cls(
            rec["method"], float(rec["rho_target"]), float(rec["rho_achieved"]), int(rec["seed"]),
            int(rec["subspace"]), float(rec["mse"]), float(rec["relfrob"]),
            int(rec["K"]), int(rec["L"]), int(rec["alpha"]), int(rec["T_muls"]),
        )


@dataclass
class SweepResult:
    """Per-subspace rows plus layer-level errors keyed by ``(method, rho, seed)``."""

    config: SweepConfig
    rows: list
    layer: dict
    dl_objectives: dict = field(default_factory=dict)

    def layer_relfrob(self, method: str, rho) -> np.ndarray:
        return np.array([self.layer[(method, rho, s)].rel_frob for s in self.config.seeds])

    def summary(self) -> list[dict]:
        out = []
        for method in self.config.methods:
            for rho in self.config.rho_grid:
                first = next(r for r in self.rows if r.method == method and r.rho_target == float(rho))
                rel = self.layer_relfrob(method, rho)
                mse = np.array([self.layer[(method, rho, s)].mse for s in self.config.seeds])
                out.append({
                    "method": method,
                    "rho_target": float(rho),
                    "rho_achieved": first.rho_achieved,
                    "K": first.K,
                    "L": first.L,
                    "alpha": first.alpha,
                    "T_muls": first.T_muls,
                    "n_seeds": rel.size,
                    "relfrob_mean": float(rel.mean()),
                    "relfrob_std": float(rel.std()),
                    "relfrob_min": float(rel.min()),
                    "relfrob_max": float(rel.max()),
                    "mse_mean": float(mse.mean()),
                })
        return out

    def curve(self, method: str) -> list[tuple[float, float]]:
        """``(rho_achieved, mean layer relFrob)`` points of one method."""
        return [(r["rho_achieved"], r["relfrob_mean"]) for r in self.summary() if r["method"] == method]

    def gain(self):
        return gain_at_equal_error(self.curve("vq"), self.curve("dl"))


def _run_cell(cfg, acc_plan, method, W, seed, s):
    opts = cfg.solver.with_seed(subspace_seed(seed, s))
    if method == "vq":
        cb = kmeans_cluster(W, acc_plan.K_vq, opts)
        return quantization_error(W, vq_approximate(cb)), None
    cb, trace = solve(W, acc_plan.K_dl, acc_plan.L_dl, acc_plan.alpha, opts)
    return quantization_error(W, dl_approximate(cb)), (trace.objectives[0], trace.objectives[-1])


def run_sweep(cfg: SweepConfig, threads: int = 1) -> SweepResult:
    """Run both codebook methods for every ``(rho, seed, subspace)`` cell.

    Cells run on a pool of ``threads`` workers; results are ordered by key,
    so the output does not depend on the thread count.
    """
    plans = {rho: plan(cfg.shape, cfg.Nprime, rho, cfg.c, cfg.alpha) for rho in cfg.rho_grid}
    part = SubspacePartition.from_channels(cfg.shape.N, Nprime=cfg.Nprime)
    mats = {seed: partition_kernels(cfg.kernels(seed), part) for seed in cfg.seeds}
    keys = [
        (method, rho, seed, s)
        for method in cfg.methods
        for rho in cfg.rho_grid
        for seed in cfg.seeds
        for s in range(part.S)
    ]

    def work(key):
        method, rho, seed, s = key
        return key, _run_cell(cfg, plans[rho], method, mats[seed][s], seed, s)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = dict(pool.map(work, keys))
    else:
        results = dict(map(work, keys))

    rows, layer, dl_obj = [], {}, {}
    for method in cfg.methods:
        for rho in cfg.rho_grid:
            p = plans[rho]
            if method == "vq":
                T, K, L, alpha = p.costs.T_vq, p.K_vq, 0, 0
            else:
                T, K, L, alpha = p.costs.T_dl, p.K_dl, p.L_dl, p.alpha
            achieved = p.costs.T_o / T
            for seed in cfg.seeds:
                reports = []
                for s in range(part.S):
                    report, objs = results[(method, rho, seed, s)]
                    reports.append(report)
                    if objs is not None:
                        dl_obj[(rho, seed, s)] = objs
                    rows.append(SweepRow(method, float(rho), achieved, seed, s, report.mse, report.rel_frob, K, L, alpha, T))
                layer[(method, rho, seed)] = aggregate_errors(reports)
    return SweepResult(cfg, rows, layer, dl_obj)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for row in rows:
        writer.writerow(row.as_strings())
    return buf.getvalue()


def summary_to_csv(summary) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_FIELDS)
    for rec in summary:
        writer.writerow([repr(v) if isinstance(v, float) else str(v) for v in (rec[k] for k in SUMMARY_FIELDS)])
    return buf.getvalue()


def read_rows(path) -> list[SweepRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        return [SweepRow.from_strings(rec) for rec in reader]


def write_sweep(result: SweepResult, out_dir) -> dict:
    """Write ``sweep.csv``, ``summary.csv`` and one ``curve_<method>.dat`` per method."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"rows": out_dir / "sweep.csv", "summary": out_dir / "summary.csv"}
    atomic_write_text(paths["rows"], rows_to_csv(result.rows))
    atomic_write_text(paths["summary"], summary_to_csv(result.summary()))
    for method in result.config.methods:
        path = out_dir / f"curve_{method}.dat"
        lines = ["# rho_achieved relfrob_mean"] + [f"{r!r} {e!r}" for r, e in result.curve(method)]
        atomic_write_text(path, "\n".join(lines) + "\n")
        paths[f"curve_{method}"] = path
    return paths

"""CIO x HOM parameter sweeps and the resulting COP -> KPI dataset."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .scenario import CIO_RANGE, HOM_RANGE, KpiEvaluator, MobilityConfig, NetworkScenario

SCHEMA_VERSION = 1
MAX_ENUMERATION = 10**8
# Step-1 ranges (12,326,391 configs) are countable but not sweepable.
MAX_SWEEP = 2_000_000
COLUMNS = ["cio1", "cio2", "cio3", "hom1", "hom2", "hom3", "mean_sinr_db", "outage_count"]
GENE_COLUMNS = COLUMNS[:6]


class GridError(ValueError):
    pass


class DatasetError(ValueError):
    pass


def _axis(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(n), 10)


@dataclass(frozen=True)
class ParameterGrid:
    cio_min: float = -10.0
    cio_max: float = 10.0
    cio_step: float = 2.0
    hom_min: float = 0.0
    hom_max: float = 10.0
    hom_step: float = 2.0
    n_target_sectors: int = 3

    def __post_init__(self):
        if not (self.cio_step > 0 and self.hom_step > 0):
            raise GridError("grid steps must be positive")
        if self.cio_min > self.cio_max or self.hom_min > self.hom_max:
            raise GridError("grid min must not exceed max")
        if self.cio_min < CIO_RANGE[0] or self.cio_max > CIO_RANGE[1]:
            raise GridError(f"CIO grid must lie within {CIO_RANGE}")
        if self.hom_min < HOM_RANGE[0] or self.hom_max > HOM_RANGE[1]:
            raise GridError(f"HOM grid must lie within {HOM_RANGE}")
        if self.n_target_sectors != 3:
            raise GridError("only 3 target sectors are supported")

    @classmethod
    def with_steps(cls, cio_step: float, hom_step: float) -> "ParameterGrid":
        return cls(cio_step=cio_step, hom_step=hom_step)

    def cio_values(self) -> np.ndarray:
        return _axis(self.cio_min, self.cio_max, self.cio_step)

    def hom_values(self) -> np.ndarray:
        return _axis(self.hom_min, self.hom_max, self.hom_step)

    def axes(self) -> List[np.ndarray]:
        n = self.n_target_sectors
        return [self.cio_values()] * n + [self.hom_values()] * n

    @property
    def cardinality(self) -> int:
        n = self.n_target_sectors
        return len(self.cio_values()) ** n * len(self.hom_values()) ** n

    def project(self, genes: np.ndarray) -> np.ndarray:
        """Snap gene vectors (..., 6) to the nearest lattice point, per axis.

        Ties between two lattice values go to the lower one.
        """
        genes = np.asarray(genes, dtype=float)
        out = np.empty_like(genes)
        for j, ax in enumerate(self.axes()):
            # argmin returns the first (lowest) value on ties
            out[..., j] = ax[np.argmin(np.abs(genes[..., j, None] - ax), axis=-1)]
        return out

    def describe(self) -> str:
        return (
            f"cio:{self.cio_min:g}:{self.cio_max:g}:{self.cio_step:g},"
            f"hom:{self.hom_min:g}:{self.hom_max:g}:{self.hom_step:g}"
        )

    @classmethod
    def parse(cls, text: str) -> "ParameterGrid":
        parts = dict(p.split(":", 1) for p in text.split(","))
        c = [float(v) for v in parts["cio"].split(":")]
        h = [float(v) for v in parts["hom"].split(":")]
        return cls(c[0], c[1], c[2], h[0], h[1], h[2])


def lattice(grid: ParameterGrid) -> np.ndarray:
    """All grid points as an (N, 6) array in lexicographic order."""
    n = grid.cardinality
    if n > MAX_ENUMERATION:
        raise GridError(f"grid cardinality {n} exceeds enumeration limit {MAX_ENUMERATION}")
    mesh = np.meshgrid(*grid.axes(), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def enumerate_grid(grid: ParameterGrid) -> List[MobilityConfig]:
    return [MobilityConfig.from_vector(row) for row in lattice(grid)]


@dataclass(frozen=True)
class SweepRecord:
    config: MobilityConfig
    mean_sinr_db: float  # NaN when every gathered user is in outage
    outage_count: int = 0

    @property
    def full_outage(self) -> bool:
        return math.isnan(self.mean_sinr_db)


@dataclass
class SweepDataset:
    records: List[SweepRecord]
    scenario_seed: Optional[int] = None
    grid: Optional[ParameterGrid] = None
    schema_version: int = SCHEMA_VERSION
    _x: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    def features(self) -> np.ndarray:
        if self._x is None or len(self._x) != len(self.records):
            self._x = np.array([r.config.as_vector() for r in self.records], dtype=float).reshape(-1, 6)
        return self._x

    def targets(self) -> np.ndarray:
        return np.array([r.mean_sinr_db for r in self.records], dtype=float)

    def outages(self) -> np.ndarray:
        return np.array([r.outage_count for r in self.records], dtype=int)

    def same_content(self, other: "SweepDataset") -> bool:
        return (
            len(self) == len(other)
            and np.array_equal(self.features(), other.features())
            and np.array_equal(self.targets(), other.targets(), equal_nan=True)
            and np.array_equal(self.outages(), other.outages())
        )


# ---------------------------------------------------------------------------
# Sweeping

_worker_eval: Optional[KpiEvaluator] = None


def _init_worker(scenario: NetworkScenario) -> None:
    global _worker_eval
    _worker_eval = KpiEvaluator(scenario)


def _evaluate_rows(evaluator: KpiEvaluator, rows: np.ndarray) -> List[Tuple[float, int]]:
    return [evaluator.mean_sinr(MobilityConfig.from_vector(r)) for r in rows]


def _worker_chunk(rows: np.ndarray) -> List[Tuple[float, int]]:
    return _evaluate_rows(_worker_eval, rows)


def default_jobs() -> int:
    return max(1, int(os.environ.get("COPKIT_JOBS", "1")))


def run_sweep(scenario: NetworkScenario, grid: ParameterGrid, jobs: Optional[int] = None) -> SweepDataset:
    """Evaluate the KPI at every grid point.

    Records come back in :func:`lattice` order whatever ``jobs`` is; each
    config is computed by the same code path, so the output is identical
    across parallelism settings.
    """
    n = grid.cardinality
    if n > MAX_SWEEP:
        raise GridError(f"refusing to sweep {n} configs (limit {MAX_SWEEP})")
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    rows = lattice(grid)

    if jobs == 1:
        results = _evaluate_rows(KpiEvaluator(scenario), rows)
    else:
        chunks = np.array_split(rows, jobs * 4)
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(scenario,)) as pool:
            results = [r for part in pool.map(_worker_chunk, chunks) for r in part]

    records = [
        SweepRecord(MobilityConfig.from_vector(row), kpi, outages)
        for row, (kpi, outages) in zip(rows, results)
    ]
    return SweepDataset(records, scenario_seed=scenario.rng_seed, grid=grid)


def subsample(dataset: SweepDataset, fraction: float, seed: int) -> SweepDataset:
    """Seeded uniform sample of ``floor(fraction * n)`` records, original order kept."""
    if not 0 < fraction <= 1:
        raise DatasetError(f"fraction {fraction} outside (0, 1]")
    n = len(dataset)
    size = int(math.floor(fraction * n))
    if size < 1:
        raise DatasetError(f"fraction {fraction} of {n} records leaves nothing")
    if size == n:
        idx = np.arange(n)
    else:
        idx = np.sort(np.random.default_rng(seed).choice(n, size=size, replace=False))
    return SweepDataset(
        [dataset.records[i] for i in idx],
        scenario_seed=dataset.scenario_seed,
        grid=dataset.grid,
        schema_version=dataset.schema_version,
    )


# ---------------------------------------------------------------------------
# CSV


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.6f}"


def dumps_csv(dataset: SweepDataset) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version={dataset.schema_version}\n")
    if dataset.scenario_seed is not None:
        buf.write(f"# scenario_seed={dataset.scenario_seed}\n")
    if dataset.grid is not None:
        buf.write(f"# grid={dataset.grid.describe()}\n")
    buf.write(",".join(COLUMNS) + "\n")
    for r in dataset.records:
        genes = ",".join(_fmt(v) for v in r.config.cio_db + r.config.hom_db)
        buf.write(f"{genes},{_fmt(r.mean_sinr_db)},{r.outage_count}\n")
    return buf.getvalue()


def write_csv(dataset: SweepDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(dumps_csv(dataset))


def read_table(path, value_column: str = "mean_sinr_db", with_outage: bool = True):
    """Parse a dataset-schema CSV into (meta, genes, values, outages, first data line).

    ``with_outage=False`` reads the outage-less variant used for imported
    prediction tables.
    """
    meta = {}
    required = GENE_COLUMNS + [value_column] + (["outage_count"] if with_outage else [])
    genes, values, outages = [], [], []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    lineno = 0
    while lineno < len(lines) and lines[lineno].startswith("#"):
        body = lines[lineno][1:].strip()
        if "=" in body:
            k, v = body.split("=", 1)
            meta[k.strip()] = v.strip()
        lineno += 1
    if lineno >= len(lines):
        raise DatasetError(f"{path}: no header line")
    reader = csv.reader(lines[lineno:])
    header = [h.strip() for h in next(reader)]
    for col in required:
        if col not in header:
            raise DatasetError(f"{path}: line {lineno + 1}: missing column '{col}'")
    pos = [header.index(c) for c in required]
    for offset, row in enumerate(reader, start=lineno + 2):
        if not row:
            continue
        if len(row) != len(header):
            raise DatasetError(f"{path}: line {offset}: expected {len(header)} fields, got {len(row)}")
        try:
            g = [float(row[p]) for p in pos[:6]]
            v = float(row[pos[6]])
            o = int(row[pos[7]]) if with_outage else 0
        except ValueError as exc:
            raise DatasetError(f"{path}: line {offset}: {exc}") from exc
        genes.append(g)
        values.append(v)
        outages.append(o)
    return meta, np.array(genes, dtype=float).reshape(-1, 6), np.array(values), np.array(outages, dtype=int)


def read_csv(path) -> SweepDataset:
    meta, genes, values, outages = read_table(path)
    seen = set()
    records = []
    for i, (g, v, o) in enumerate(zip(genes, values, outages)):
        key = tuple(g)
        if key in seen:
            raise DatasetError(f"{path}: duplicate config {key}")
        seen.add(key)
        try:
            config = MobilityConfig.from_vector(g)
        except ValueError as exc:
            raise DatasetError(f"{path}: record {i + 1}: {exc}") from exc
        records.append(SweepRecord(config, float(v), int(o)))
    try:
        grid = ParameterGrid.parse(meta["grid"]) if "grid" in meta else None
        seed = int(meta["scenario_seed"]) if "scenario_seed" in meta else None
        version = int(meta.get("schema_version", SCHEMA_VERSION))
    except (ValueError, KeyError) as exc:
        raise DatasetError(f"{path}: bad metadata: {exc}") from exc
    return SweepDataset(records, scenario_seed=seed, grid=grid, schema_version=version)

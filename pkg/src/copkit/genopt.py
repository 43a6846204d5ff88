"""Genetic search over the 6-gene COP chromosome, plus the brute-force baseline.

The GA is elitist and steady-state: each generation the best ``elite_count``
members are paired in order (1-2, 3-4, ...), each pair produces two SBX
children, the children are mutated, and they replace the worst members.
One "iteration" is one fitness evaluation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .datagen import MAX_SWEEP, GridError, ParameterGrid, lattice
from .scenario import CIO_RANGE, HOM_RANGE, KpiEvaluator, MobilityConfig, NetworkScenario

N_GENES = 6


@dataclass(frozen=True)
class Bounds:
    lower: Tuple[float, ...] = (CIO_RANGE[0],) * 3 + (HOM_RANGE[0],) * 3
    upper: Tuple[float, ...] = (CIO_RANGE[1],) * 3 + (HOM_RANGE[1],) * 3

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("bounds length mismatch")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("lower bound above upper bound")

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=float)

    def contains(self, genes) -> bool:
        g = np.asarray(genes, dtype=float)
        return bool(np.all(g >= self.lo) and np.all(g <= self.hi))

    @classmethod
    def collapsed(cls, value: float = 0.0, n: int = N_GENES) -> "Bounds":
        return cls((value,) * n, (value,) * n)


@dataclass
class Chromosome:
    genes: np.ndarray
    fitness: Optional[float] = None

    def key(self) -> Tuple[float, ...]:
        return tuple(float(g) for g in self.genes)

    def config(self) -> MobilityConfig:
        return MobilityConfig.from_vector(self.genes)


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 100
    max_generations: int = 50
    elite_count: int = 10
    sbx_eta: float = 15.0
    mutation_eta: float = 20.0
    mutation_prob: float = 1.0 / 6.0
    seed: int = 0
    stagnation_patience: int = 20

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population_size must be positive")
        if self.max_generations < 0:
            raise ValueError("max_generations must be non-negative")
        if self.elite_count < 2 or self.elite_count % 2 or self.elite_count > self.population_size:
            raise ValueError("elite_count must be even, >= 2 and <= population_size")
        if not (self.sbx_eta > 0 and self.mutation_eta > 0):
            raise ValueError("distribution indices must be positive")
        if not 0 <= self.mutation_prob <= 1:
            raise ValueError("mutation_prob must be in [0, 1]")
        if self.stagnation_patience < 1:
            raise ValueError("stagnation_patience must be positive")


class FitnessError(RuntimeError):
    pass


class Fitness:
    """Memoising wrapper around a fitness function.

    ``func`` maps an (n, 6) gene array to n fitness values when
    ``vectorized`` is true, otherwise one gene vector to a float. Only gene
    vectors never seen before reach ``func``; ``evaluations`` counts them.
    """

    def __init__(self, func: Callable, vectorized: bool = False):
        self.func = func
        self.vectorized = vectorized
        self.cache: Dict[Tuple[float, ...], float] = {}

    @property
    def evaluations(self) -> int:
        return len(self.cache)

    def __call__(self, genes: np.ndarray) -> np.ndarray:
        genes = np.atleast_2d(np.asarray(genes, dtype=float))
        keys = [tuple(float(v) for v in row) for row in genes]
        fresh, fresh_keys, seen = [], [], set()
        for row, k in zip(genes, keys):
            if k not in self.cache and k not in seen:
                seen.add(k)
                fresh.append(row)
                fresh_keys.append(k)
        if fresh:
            try:
                if self.vectorized:
                    vals = np.asarray(self.func(np.array(fresh)), dtype=float)
                else:
                    vals = np.array([float(self.func(row)) for row in fresh])
            except Exception as exc:
                raise FitnessError(f"fitness evaluation failed on {len(fresh)} chromosome(s): {exc}") from exc
            for k, v in zip(fresh_keys, vals):
                if not math.isfinite(v):
                    raise FitnessError(f"non-finite fitness {v} at genes {list(k)}")
                self.cache[k] = float(v)
        return np.array([self.cache[k] for k in keys])


def as_fitness(F) -> Fitness:
    return F if isinstance(F, Fitness) else Fitness(F, vectorized=getattr(F, "vectorized", False))


def fresh_fitness(F) -> Fitness:
    """A new, empty-cache wrapper around the same underlying function."""
    fit = as_fitness(F)
    return Fitness(fit.func, fit.vectorized)


def surrogate_fitness(model) -> Fitness:
    """Fitness backed by a fitted surrogate's batch prediction."""
    return Fitness(model.predict_many, vectorized=True)


def simulator_fitness(scenario: NetworkScenario) -> Fitness:
    """Fitness backed by the snapshot simulator; full-outage configs score -1e9."""
    ev = KpiEvaluator(scenario)

    def f(genes):
        kpi, _ = ev.mean_sinr(MobilityConfig.from_vector(genes))
        return -1e9 if math.isnan(kpi) else kpi

    return Fitness(f)


# ---------------------------------------------------------------------------
# Operators


def init_population(config: GaConfig, bounds: Bounds, rng: np.random.Generator) -> List[Chromosome]:
    genes = rng.uniform(bounds.lo, bounds.hi, size=(config.population_size, len(bounds.lower)))
    return [Chromosome(g) for g in genes]


def evaluate(population: List[Chromosome], F: Fitness) -> List[Chromosome]:
    values = F(np.array([c.genes for c in population]))
    for c, v in zip(population, values):
        c.fitness = float(v)
    return population


def select_elites(population: List[Chromosome], elite_count: int) -> List[Chromosome]:
    order = sorted(range(len(population)), key=lambda i: (-population[i].fitness, i))
    return [population[i] for i in order[:elite_count]]


def sbx_crossover(
    parent_a: np.ndarray,
    parent_b: np.ndarray,
    eta: float,
    rng: np.random.Generator,
    bounds: Optional[Bounds] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Real-coded simulated binary crossover, one spread factor per gene."""
    a = np.asarray(parent_a, dtype=float)
    b = np.asarray(parent_b, dtype=float)
    u = rng.random(a.shape)
    beta = np.where(
        u <= 0.5,
        (2.0 * u) ** (1.0 / (eta + 1.0)),
        (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta + 1.0)),
    )
    # 0.5[(1 +- beta) a + (1 -+ beta) b], written around the midpoint so a == b is exact
    mid = 0.5 * (a + b)
    half = 0.5 * beta * (a - b)
    child_a = mid + half
    child_b = mid - half
    if bounds is not None:
        child_a = np.clip(child_a, bounds.lo, bounds.hi)
        child_b = np.clip(child_b, bounds.lo, bounds.hi)
    return child_a, child_b


def mutate(
    genes: np.ndarray,
    mutation_prob: float,
    mutation_eta: float,
    bounds: Bounds,
    rng: np.random.Generator,
) -> np.ndarray:
    """Polynomial mutation, perturbation scaled by each gene's range."""
    x = np.asarray(genes, dtype=float)
    hit = rng.random(x.shape) < mutation_prob
    u = rng.random(x.shape)
    p = 1.0 / (mutation_eta + 1.0)
    delta = np.where(u < 0.5, (2.0 * u) ** p - 1.0, 1.0 - (2.0 * (1.0 - u)) ** p)
    moved = x + delta * (bounds.hi - bounds.lo)
    return np.clip(np.where(hit, moved, x), bounds.lo, bounds.hi)


# ---------------------------------------------------------------------------
# Runs


@dataclass
class TraceEntry:
    generation: int
    evaluations: int
    best_fitness: float
    best_genes: Tuple[float, ...]


@dataclass
class GaRun:
    config: GaConfig
    trace: List[TraceEntry]
    best: Chromosome
    total_evaluations: int
    stopped_by: str = "max_generations"


def run_ga(
    F,
    config: GaConfig,
    bounds: Optional[Bounds] = None,
    grid: Optional[ParameterGrid] = None,
) -> GaRun:
    """Run the GA maximising ``F`` over ``bounds``.

    With ``grid`` set, every chromosome is snapped to the grid lattice before
    evaluation, so the search stays on-lattice and duplicates are free.
    """
    bounds = bounds or Bounds()
    fit = as_fitness(F)
    rng = np.random.default_rng(config.seed)

    def place(g):
        return grid.project(g) if grid is not None else g

    population = init_population(config, bounds, rng)
    for c in population:
        c.genes = place(c.genes)
    evaluate(population, fit)

    def best_of(pop):
        return select_elites(pop, 1)[0]

    top = best_of(population)
    best = Chromosome(top.genes.copy(), top.fitness)
    trace = [TraceEntry(0, fit.evaluations, best.fitness, best.key())]
    stale = 0
    stopped_by = "max_generations"

    for gen in range(1, config.max_generations + 1):
        parents = select_elites(population, config.elite_count)
        children = []
        for i in range(0, len(parents), 2):
            ca, cb = sbx_crossover(parents[i].genes, parents[i + 1].genes, config.sbx_eta, rng, bounds)
            for child in (ca, cb):
                child = mutate(child, config.mutation_prob, config.mutation_eta, bounds, rng)
                children.append(Chromosome(place(child)))
        evaluate(children, fit)

        keep = select_elites(population, len(population) - len(children))
        population = keep + children

        top = best_of(population)
        if top.fitness > best.fitness:
            best = Chromosome(top.genes.copy(), top.fitness)
            stale = 0
        else:
            stale += 1
        trace.append(TraceEntry(gen, fit.evaluations, best.fitness, best.key()))
        if stale >= config.stagnation_patience:
            stopped_by = "stagnation"
            break

    return GaRun(config, trace, best, fit.evaluations, stopped_by)


@dataclass
class BruteForceResult:
    best_config: MobilityConfig
    best_fitness: float
    evaluations: int
    # (evaluations, best-so-far) at every improvement, plus the final point
    trace: List[Tuple[int, float]] = field(default_factory=list)


def brute_force(F, grid: ParameterGrid, chunk: int = 65536) -> BruteForceResult:
    """Exhaustive scan of the grid; ties resolve to the first point in lattice order."""
    if grid.cardinality > MAX_SWEEP:
        raise GridError(f"refusing to brute-force {grid.cardinality} configs")
    points = lattice(grid)
    fit = as_fitness(F)
    values = np.empty(len(points))
    for start in range(0, len(points), chunk):
        block = points[start:start + chunk]
        if fit.vectorized:
            values[start:start + len(block)] = fit.func(block)
        else:
            values[start:start + len(block)] = [fit.func(row) for row in block]
    if not np.all(np.isfinite(values)):
        raise FitnessError("non-finite fitness during brute force")
    i = int(np.argmax(values))
    running = np.maximum.accumulate(values)
    improved = np.flatnonzero(np.r_[True, running[1:] > running[:-1]])
    trace = [(int(k) + 1, float(running[k])) for k in improved]
    if trace[-1][0] != len(values):
        trace.append((len(values), float(running[-1])))
    return BruteForceResult(MobilityConfig.from_vector(points[i]), float(values[i]), len(values), trace)


@dataclass
class Comparison:
    brute: BruteForceResult
    ga: GaRun
    ga_best_raw: float
    ga_best_projected: float
    ga_projected_genes: Tuple[float, ...]

    @property
    def gap(self) -> float:
        """Brute-force lattice max minus the GA's lattice-projected best."""
        return self.brute.best_fitness - self.ga_best_projected

    @property
    def speedup(self) -> float:
        return self.brute.evaluations / max(1, self.ga.total_evaluations)


def compare(F, grid: ParameterGrid, ga_config: GaConfig, on_lattice: bool = True) -> Comparison:
    """Run brute force and the GA on the same fitness and report both.

    ``on_lattice`` restricts the GA to the grid's lattice; otherwise it
    searches the continuous box and its best is also reported projected.
    """
    brute = brute_force(F, grid)
    run = run_ga(fresh_fitness(F), ga_config, grid=grid if on_lattice else None)
    projected = grid.project(run.best.genes)
    proj_val = float(fresh_fitness(F)(projected)[0])
    return Comparison(brute, run, run.best.fitness, proj_val, tuple(float(v) for v in projected))


# ---------------------------------------------------------------------------
# Output


GENE_HEADER = ["cio1", "cio2", "cio3", "hom1", "hom2", "hom3"]


def write_trace(run: GaRun, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generation", "evaluations", "best_fitness"] + GENE_HEADER)
        for t in run.trace:
            w.writerow([t.generation, t.evaluations, f"{t.best_fitness:.6f}"] + [f"{g:.6f}" for g in t.best_genes])


def write_convergence(points: Sequence[Tuple[int, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["evaluations", "best_fitness"])
        for e, f in points:
            w.writerow([e, f"{f:.6f}"])


def write_best(genes: Sequence[float], fitness: float, evaluations: int, path, extra: Optional[dict] = None) -> None:
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GENE_HEADER + ["fitness", "evaluations"] + list(extra))
        w.writerow([f"{g:.6f}" for g in genes] + [f"{fitness:.6f}", evaluations] + [
            f"{v:.6f}" if isinstance(v, float) else v for v in extra.values()
        ])

"""End-to-end run: scenario -> sweep -> train -> optimise.

Each stage writes its artifacts into one output directory and records a
key (hash of its parameters and input files) in ``manifest.json``. A rerun
skips a stage when its key and output hashes still match.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Optional

from . import datagen, genopt, surrogate
from .scenario import KpiEvaluator, generate_scenario
from .scenario_file import read_scenario, write_scenario

log = logging.getLogger(__name__)

# Per-stage seed offsets from the global seed.
SAMPLE_SEED_OFFSET = 1
GA_SEED_OFFSET = 2


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    out_dir: str
    scenario_file: Optional[str] = None
    scenario_seed: Optional[int] = None
    cio_step: float = 2.0
    hom_step: float = 2.0
    model: str = "gbrt"
    k: int = 5
    gbrt: Dict[str, float] = field(default_factory=dict)
    fraction: float = 1.0
    test_fraction: float = 0.2
    population: int = 100
    generations: int = 50
    elite_count: int = 10
    patience: int = 20
    on_lattice: bool = False
    seed: int = 42
    jobs: int = 1

    def validate(self) -> None:
        if self.scenario_file is None and self.scenario_seed is None:
            raise ConfigError("need a scenario file or a scenario seed")
        if self.scenario_file is not None and not Path(self.scenario_file).is_file():
            raise ConfigError(f"scenario file not found: {self.scenario_file}")
        if self.model not in ("linear", "knn", "gbrt"):
            raise ConfigError(f"pipeline model must be linear, knn or gbrt, not {self.model!r}")
        grid = self.grid()
        if grid.cardinality > datagen.MAX_SWEEP:
            raise ConfigError(f"grid of {grid.cardinality} configs is too large to sweep")
        if not 0 < self.fraction <= 1:
            raise ConfigError("fraction must be in (0, 1]")
        self.ga_config()

    def grid(self) -> datagen.ParameterGrid:
        return datagen.ParameterGrid.with_steps(self.cio_step, self.hom_step)

    def ga_config(self) -> genopt.GaConfig:
        return genopt.GaConfig(
            population_size=self.population,
            max_generations=self.generations,
            elite_count=self.elite_count,
            stagnation_patience=self.patience,
            seed=self.seed + GA_SEED_OFFSET,
        )

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        data = json.loads(Path(path).read_text())
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**data)


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _Manifest:
    def __init__(self, out: Path):
        self.path = out / "manifest.json"
        self.out = out
        self.data = json.loads(self.path.read_text()) if self.path.exists() else {}

    def key(self, *parts) -> str:
        return hashlib.sha256(json.dumps(parts, sort_keys=True, default=str).encode()).hexdigest()

    def fresh(self, stage: str, key: str) -> bool:
        entry = self.data.get(stage)
        if not entry or entry["key"] != key:
            return False
        for name, digest in entry["outputs"].items():
            p = self.out / name
            if not p.exists() or _sha(p) != digest:
                return False
        return True

    def record(self, stage: str, key: str, *names: str) -> None:
        self.data[stage] = {"key": key, "outputs": {n: _sha(self.out / n) for n in names}}
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")


def run_pipeline(cfg: PipelineConfig) -> Dict[str, Path]:
    """Run every stage, reusing up-to-date outputs. Returns artifact paths."""
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = _Manifest(out)
    paths = {
        "scenario": out / "scenario.txt",
        "dataset": out / "dataset.csv",
        "model": out / "model.bin",
        "report": out / "report.csv",
        "best": out / "best.csv",
        "trace": out / "trace.csv",
    }

    def stage(name, key, outputs, body):
        if man.fresh(name, key):
            log.info("stage %s: up to date", name)
            return
        log.info("stage %s: running", name)
        try:
            body()
        except Exception as exc:
            raise PipelineError(name, exc) from exc
        man.record(name, key, *outputs)

    src = cfg.scenario_file
    scen_key = man.key("scenario", _sha(Path(src)) if src else cfg.scenario_seed)

    def make_scenario():
        if src:
            shutil.copyfile(src, paths["scenario"])
        else:
            write_scenario(generate_scenario(cfg.scenario_seed), paths["scenario"])

    stage("scenario", scen_key, ["scenario.txt"], make_scenario)

    grid = cfg.grid()
    sweep_key = man.key("sweep", _sha(paths["scenario"]), asdict(grid))

    def sweep():
        ds = datagen.run_sweep(read_scenario(paths["scenario"]), grid, jobs=cfg.jobs)
        datagen.write_csv(ds, paths["dataset"])

    stage("sweep", sweep_key, ["dataset.csv"], sweep)

    train_key = man.key(
        "train", _sha(paths["dataset"]), cfg.model, cfg.k, cfg.gbrt, cfg.fraction, cfg.test_fraction, cfg.seed
    )

    def train():
        ds = datagen.read_csv(paths["dataset"])
        trained = surrogate.train_model(
            ds, cfg.model, cfg.fraction, cfg.seed + SAMPLE_SEED_OFFSET, cfg.test_fraction, cfg.k, cfg.gbrt
        )
        surrogate.save_model(trained, paths["model"])
        surrogate.write_reports([trained.report], paths["report"])

    stage("train", train_key, ["model.bin", "report.csv"], train)

    ga = cfg.ga_config()
    opt_key = man.key("optimize", _sha(paths["model"]), _sha(paths["scenario"]), asdict(ga), cfg.on_lattice, asdict(grid))

    def optimize():
        trained = surrogate.load_model(paths["model"])
        run = genopt.run_ga(genopt.surrogate_fitness(trained), ga, grid=grid if cfg.on_lattice else None)
        simulated, _ = KpiEvaluator(read_scenario(paths["scenario"])).mean_sinr(run.best.config())
        genopt.write_best(run.best.genes, run.best.fitness, run.total_evaluations, paths["best"],
                          {"simulated_sinr_db": simulated})
        genopt.write_trace(run, paths["trace"])

    stage("optimize", opt_key, ["best.csv", "trace.csv"], optimize)
    return paths

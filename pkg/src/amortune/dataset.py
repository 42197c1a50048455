"""Offline tuning databases: bundle I/O, the replay oracle, synthetic data.

A database records a complete grid of validation metrics over tasks x
configurations x epochs x seeds. Tuning experiments replay against it instead
of training real models, so the whole pipeline is deterministic and cheap.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import hpspace
from .errors import DataError
from .hpspace import HyperparameterSpace, RawConfiguration

MANIFEST_NAME = "manifest.json"
SPACE_NAME = "space.json"
CONFIGS_NAME = "configs.json"
OBSERVATIONS_NAME = "observations.csv"


@dataclass(frozen=True)
class Observation:
    """One recorded metric value at a (task, config, epoch) tuple."""

    task: int
    config: int
    epoch: int
    value: float


@dataclass(frozen=True)
class TaskSplit:
    """Train tasks plus a single held-out test task (all database indices)."""

    train: tuple[int, ...]
    test: int


@dataclass(frozen=True)
class SyntheticParams:
    """Knobs for the planted-structure synthetic database generator."""

    n_tasks: int
    n_clusters: int
    n_configs: int
    n_epochs: int
    noise: float
    feature_dim: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.n_tasks, self.n_clusters, self.n_configs, self.n_epochs) < 1:
            raise DataError("all synthetic counts must be at least 1")
        if self.n_clusters > self.n_tasks:
            raise DataError("cannot plant more clusters than tasks")
        if self.noise < 0:
            raise DataError("noise standard deviation must be nonnegative")
        if self.feature_dim < 1:
            raise DataError("feature dimension must be at least 1")


class TuningDatabase:
    """Dense grid of recorded metric values; immutable after construction."""

    def __init__(
        self,
        tasks: list[str],
        space: HyperparameterSpace,
        configs: list[RawConfiguration],
        n_epochs: int,
        seeds: list[int],
        values: np.ndarray,
        metric: str,
    ) -> None:
        self.tasks = list(tasks)
        self.space = space
        self.configs = list(configs)
        self.n_epochs = int(n_epochs)
        self.seeds = list(seeds)
        self.values = np.asarray(values, dtype=np.float64)
        self.metric = metric
        self._seed_mean: np.ndarray | None = None

        expected = (len(self.tasks), len(self.configs), self.n_epochs, len(self.seeds))
        if self.values.shape != expected:
            raise DataError(f"observation tensor shape {self.values.shape} != grid {expected}")
        if len(set(self.tasks)) != len(self.tasks):
            raise DataError("duplicate task names")
        if not np.all(np.isfinite(self.values)):
            t, c, e, s = (int(i[0]) for i in np.nonzero(~np.isfinite(self.values)))
            raise DataError(f"non-finite value at (task={t}, config={c}, epoch={e + 1}, seed={s})")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise DataError("metric values must lie within [0, 1]")
        for cfg in self.configs:
            hpspace.normalize_config(space, cfg)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def n_configs(self) -> int:
        return len(self.configs)

    @property
    def seed_mean(self) -> np.ndarray:
        """Seed-averaged metric grid of shape (tasks, configs, epochs)."""
        if self._seed_mean is None:
            self._seed_mean = self.values.mean(axis=3)
        return self._seed_mean

    def task_index(self, task: int | str) -> int:
        if isinstance(task, str):
            try:
                return self.tasks.index(task)
            except ValueError:
                raise DataError(f"unknown task '{task}'") from None
        if not (0 <= task < self.n_tasks):
            raise DataError(f"task index {task} outside [0, {self.n_tasks})")
        return int(task)


def load_database(path: str | Path) -> TuningDatabase:
    """Load a bundle directory (manifest, space, configs, observations)."""
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataError(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest is not valid JSON: {exc}") from exc
    for key in ("metric", "tasks", "epochs", "seeds", "space", "configs", "observations"):
        if key not in manifest:
            raise DataError(f"manifest is missing '{key}'")

    space_path = root / manifest["space"]
    if not space_path.exists():
        raise DataError(f"missing space schema: {space_path}")
    space = hpspace.load_space(space_path)

    configs_path = root / manifest["configs"]
    if not configs_path.exists():
        raise DataError(f"missing configs file: {configs_path}")
    raw_entries = json.loads(configs_path.read_text(encoding="utf-8"))
    configs: list[RawConfiguration] = []
    for i, entry in enumerate(raw_entries):
        if entry.get("id") != i:
            raise DataError(f"config ids must be contiguous from 0; entry {i} has id {entry.get('id')}")
        configs.append(RawConfiguration(values=dict(entry["values"])))

    tasks = list(manifest["tasks"])
    seeds = list(manifest["seeds"])
    n_epochs = int(manifest["epochs"])
    metric = manifest["metric"]
    seed_pos = {s: i for i, s in enumerate(seeds)}

    obs_path = root / manifest["observations"]
    if not obs_path.exists():
        raise DataError(f"missing observations file: {obs_path}")
    values = np.full((len(tasks), len(configs), n_epochs, len(seeds)), np.nan)
    with obs_path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        for col in ("task_id", "config_id", "seed", "epoch"):
            if col not in fields:
                raise DataError(f"observations file is missing column '{col}'")
        if metric not in fields:
            raise DataError(
                f"unknown metric column '{metric}' "
                f"(available: {[c for c in fields if c not in ('task_id', 'config_id', 'seed', 'epoch')]})"
            )
        for row in reader:
            t = int(row["task_id"])
            c = int(row["config_id"])
            s_id = int(row["seed"])
            e = int(row["epoch"])
            if not (0 <= t < len(tasks)) or not (0 <= c < len(configs)):
                raise DataError(f"row references unknown task/config: {row}")
            if s_id not in seed_pos:
                raise DataError(f"row references unknown seed {s_id}")
            if not (1 <= e <= n_epochs):
                raise DataError(f"row epoch {e} outside [1, {n_epochs}]")
            cell = values[t, c, e - 1, seed_pos[s_id]]
            if not math.isnan(cell):
                raise DataError(f"duplicate observation (task={t}, config={c}, epoch={e}, seed={s_id})")
            values[t, c, e - 1, seed_pos[s_id]] = float(row[metric])

    holes = np.nonzero(np.isnan(values))
    if holes[0].size:
        t, c, e, s = (int(h[0]) for h in holes)
        raise DataError(
            f"grid hole: missing observation (task={t}, config={c}, epoch={e + 1}, seed={seeds[s]})"
        )
    return TuningDatabase(tasks, space, configs, n_epochs, seeds, values, metric)


def save_database(db: TuningDatabase, path: str | Path) -> Path:
    """Write a bundle directory; the inverse of :func:`load_database`."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "metric": db.metric,
        "tasks": db.tasks,
        "epochs": db.n_epochs,
        "seeds": db.seeds,
        "space": SPACE_NAME,
        "configs": CONFIGS_NAME,
        "observations": OBSERVATIONS_NAME,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    (root / SPACE_NAME).write_text(
        json.dumps(hpspace.space_to_document(db.space), indent=2) + "\n", encoding="utf-8"
    )
    config_entries = [{"id": i, "values": dict(c.values)} for i, c in enumerate(db.configs)]
    (root / CONFIGS_NAME).write_text(json.dumps(config_entries, indent=2) + "\n", encoding="utf-8")
    with (root / OBSERVATIONS_NAME).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task_id", "config_id", "seed", "epoch", db.metric])
        for t in range(db.n_tasks):
            for c in range(db.n_configs):
                for s, seed_id in enumerate(db.seeds):
                    for e in range(db.n_epochs):
                        # repr round-trips float64 exactly, keeping bundles lossless
                        writer.writerow([t, c, seed_id, e + 1, repr(db.values[t, c, e, s])])
    return root


def query_oracle(
    db: TuningDatabase,
    task: int,
    config: int,
    epoch: int,
    rng: np.random.Generator | None = None,
) -> Observation:
    """Simulate evaluating (task, config, epoch).

    Returns the seed-averaged recorded value; pass ``rng`` to draw one of the
    recorded seeds instead (noisier replay for noise studies).
    """
    t = db.task_index(task)
    if not (0 <= config < db.n_configs):
        raise DataError(f"config {config} outside [0, {db.n_configs})")
    if not (1 <= epoch <= db.n_epochs):
        raise DataError(f"epoch {epoch} outside [1, {db.n_epochs}]")
    if rng is None:
        value = float(db.seed_mean[t, config, epoch - 1])
    else:
        value = float(db.values[t, config, epoch - 1, rng.integers(len(db.seeds))])
    return Observation(task=t, config=config, epoch=epoch, value=value)


def train_test_splits(db: TuningDatabase, n_pairs: int, seed: int) -> list[TaskSplit]:
    """Sample ``n_pairs`` splits of 4 train tasks plus 1 test task."""
    if db.n_tasks < 5:
        raise DataError(f"need at least 5 tasks to form 4+1 splits, have {db.n_tasks}")
    rng = np.random.default_rng(seed)
    splits = []
    for _ in range(n_pairs):
        picks = rng.choice(db.n_tasks, size=5, replace=False)
        splits.append(TaskSplit(train=tuple(int(i) for i in picks[:4]), test=int(picks[4])))
    return splits


def generate_synthetic(params: SyntheticParams) -> TuningDatabase:
    """Generate a database with planted inter-task cluster structure.

    Draw order from one ``numpy.random.default_rng(seed)`` stream, all as
    single block draws: cluster weights ``normal(0, 2, (n_clusters, d))``,
    per-task perturbations ``normal(0, 0.1, (n_tasks, d))``, config features
    ``uniform(-1, 1, (n_configs, d))``, saturation rates
    ``uniform(2, 8, n_configs)``, then observation noise
    ``normal(0, 1, (n_tasks, n_configs, n_epochs, 2))``. Task ``t`` belongs to
    cluster ``t % n_clusters`` (the task name records it) with weight vector
    ``w_t = w_cluster + perturbation_t``, and the noiseless value is
    ``sigmoid(w_t . phi_c) * (1 - exp(-r_c * e / n_epochs))``, clipped to
    [0, 1] after adding ``noise * z`` per recorded seed. Noiseless curves are
    therefore monotone in the epoch.
    """
    rng = np.random.default_rng(params.seed)
    d = params.feature_dim
    cluster_w = rng.normal(0.0, 2.0, size=(params.n_clusters, d))
    task_eps = rng.normal(0.0, 0.1, size=(params.n_tasks, d))
    features = rng.uniform(-1.0, 1.0, size=(params.n_configs, d))
    rates = rng.uniform(2.0, 8.0, size=params.n_configs)
    noise = rng.normal(0.0, 1.0, size=(params.n_tasks, params.n_configs, params.n_epochs, 2))

    clusters = np.arange(params.n_tasks) % params.n_clusters
    task_w = cluster_w[clusters] + task_eps
    logits = task_w @ features.T  # (T, C)
    plateau = 1.0 / (1.0 + np.exp(-logits))
    epochs = np.arange(1, params.n_epochs + 1, dtype=np.float64)
    growth = 1.0 - np.exp(-rates[:, None] * epochs[None, :] / params.n_epochs)  # (C, E)
    base = plateau[:, :, None] * growth[None, :, :]
    values = np.clip(base[:, :, :, None] + params.noise * noise, 0.0, 1.0)

    space = HyperparameterSpace(
        [
            hpspace.HyperparameterDef(name=f"feat_{i}", kind=hpspace.UNIFORM, low=-1.0, high=1.0)
            for i in range(d)
        ]
    )
    configs = [
        RawConfiguration(values={f"feat_{i}": float(features[c, i]) for i in range(d)})
        for c in range(params.n_configs)
    ]
    tasks = [f"task{t:02d}_c{clusters[t]}" for t in range(params.n_tasks)]
    return TuningDatabase(tasks, space, configs, params.n_epochs, [0, 1], values, "accuracy")


def landscape(db: TuningDatabase, task: int | str) -> tuple[np.ndarray, np.ndarray]:
    """Seed-averaged (configs x epochs) metric matrix and its zero-meaned form."""
    t = db.task_index(task)
    raw = db.seed_mean[t].copy()
    return raw, raw - raw.mean()


def landscape_l2(db: TuningDatabase, task_a: int | str, task_b: int | str) -> float:
    """Mean squared difference between two zero-meaned landscapes.

    Element-count normalization keeps the statistic comparable across
    databases with different grid sizes; zero-meaning makes it invariant to
    constant shifts of either task.
    """
    _, za = landscape(db, task_a)
    _, zb = landscape(db, task_b)
    return float(np.mean((za - zb) ** 2))


def topk_configs(db: TuningDatabase, task: int | str, k: int) -> list[int]:
    """Config ids of the k best max-over-epochs values; ties favor lower ids."""
    if not (1 <= k <= db.n_configs):
        raise DataError(f"k={k} outside [1, {db.n_configs}]")
    scores = db.seed_mean[db.task_index(task)].max(axis=1)
    order = np.argsort(-scores, kind="stable")
    return [int(i) for i in order[:k]]


def topk_overlap(db: TuningDatabase, task_a: int | str, task_b: int | str, k: int) -> int:
    """Size of the intersection of two tasks' top-k configuration sets."""
    return len(set(topk_configs(db, task_a, k)) & set(topk_configs(db, task_b, k)))


def warm_start_observations(
    db: TuningDatabase, tasks: tuple[int, ...] | list[int], config_fraction: float = 1.0, seed: int = 0
) -> list[Observation]:
    """Seed-averaged history for the given tasks, full epoch curve per config.

    ``config_fraction`` subsamples configurations per task (full curves are
    kept so incremental-fidelity closure holds); 1.0 replays the entire
    recorded grid.
    """
    if not (0.0 <= config_fraction <= 1.0):
        raise DataError("config_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    out: list[Observation] = []
    n_keep = int(round(config_fraction * db.n_configs))
    for task in tasks:
        t = db.task_index(task)
        if n_keep == db.n_configs:
            keep = np.arange(db.n_configs)
        else:
            keep = np.sort(rng.choice(db.n_configs, size=n_keep, replace=False))
        for c in keep:
            for e in range(1, db.n_epochs + 1):
                out.append(Observation(t, int(c), e, float(db.seed_mean[t, c, e - 1])))
    return out

"""Sequential tuning loop: acquisition, metrics, and in-repo baselines.

Each iteration picks the configuration whose best-over-epochs upper
confidence bound is largest and queries its next unqueried epoch, so every
iteration costs exactly one single-epoch evaluation. Simple regret tracks
the best observed value against the grid optimum of the test task; the
final-performance ranking tracks where the model's currently predicted best
configuration truly ranks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import dataset as ds
from . import kernels, svgp
from .errors import DataError, ExhaustedError
from .kernels import GridEncoding, KernelSpec, OptiLandContext
from .store import ObservationStore
from .svgp import SvgpModel, TrainSchedule


@dataclass(frozen=True)
class AcquisitionParams:
    """Exploration/exploitation trade-off of the upper confidence bound."""

    eta_ucb: float = 0.25

    def __post_init__(self) -> None:
        if not (np.isfinite(self.eta_ucb) and self.eta_ucb >= 0):
            raise DataError("eta_ucb must be finite and nonnegative")


@dataclass(frozen=True)
class OnlineUpdateConfig:
    """How the surrogate is refreshed while tuning.

    After every query the model gets a short warm-started update; every
    ``retrain_every`` queries it gets a full-length retrain (from the current
    parameters) to bound per-iteration cost without letting the model drift.
    """

    update_epochs: int = 20
    retrain_every: int = 25
    retrain_epochs: int = 200


@dataclass
class QueryRecord:
    config: int
    epoch: int
    value: float


@dataclass
class TunerState:
    """Mutable bookkeeping for one tuning session on a test task."""

    test_task: int
    budget: int
    n_configs: int
    n_epochs: int
    warm_descriptor: str = "full-grid"
    q: int = 0
    e_max: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    log: list[QueryRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.e_max.size == 0:
            self.e_max = np.zeros(self.n_configs, dtype=np.int64)


@dataclass
class MetricSeries:
    """Per-iteration metrics; smoothing is applied only at plot emission."""

    regret: list[float] = field(default_factory=list)
    ranking: list[float] = field(default_factory=list)
    configs: list[int] = field(default_factory=list)
    epochs: list[int] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    window: int = 10


def ucb(
    model: SvgpModel,
    ctx: OptiLandContext | None,
    x: tuple[int, int, int],
    params: AcquisitionParams,
) -> float:
    """Predictive mean plus eta times the predictive standard deviation."""
    points = kernels.as_points([x[0]], [x[1]], [x[2]])
    mean, var = svgp.predict(model, ctx, points)
    return float(mean[0] + params.eta_ucb * np.sqrt(var[0]))


def _grid_points(task: int, n_configs: int, n_epochs: int):
    configs = np.repeat(np.arange(n_configs), n_epochs)
    epochs = np.tile(np.arange(1, n_epochs + 1), n_configs)
    tasks = np.full(configs.shape, task)
    return kernels.as_points(tasks, configs, epochs)


def predicted_grid(
    model: SvgpModel, ctx: OptiLandContext | None, task: int
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance over a task's full (config, epoch) grid."""
    enc = model.enc
    points = _grid_points(task, enc.n_configs, enc.n_epochs)
    mean, var = svgp.predict(model, ctx, points)
    shape = (enc.n_configs, enc.n_epochs)
    return mean.reshape(shape), var.reshape(shape)


def ucb_grid(
    model: SvgpModel, ctx: OptiLandContext | None, task: int, params: AcquisitionParams
) -> np.ndarray:
    mean, var = predicted_grid(model, ctx, task)
    return mean + params.eta_ucb * np.sqrt(var)


def select_from_ucb(ucb_values: np.ndarray, e_max: np.ndarray, n_epochs: int) -> tuple[int, int]:
    """Argmax of the per-config best-over-epochs UCB, then the next epoch.

    Configurations already at full fidelity are excluded; ties go to the
    lower config id. Invariant under any strictly increasing transform
    applied uniformly to the UCB surface.
    """
    per_config = ucb_values.max(axis=1)
    open_configs = e_max < n_epochs
    if not open_configs.any():
        raise ExhaustedError("every configuration has been queried to the maximum epoch")
    per_config = np.where(open_configs, per_config, -np.inf)
    config = int(np.argmax(per_config))
    return config, int(e_max[config]) + 1


def select_next(
    model: SvgpModel,
    ctx: OptiLandContext | None,
    state: TunerState,
    params: AcquisitionParams,
) -> tuple[int, int, int]:
    """Next (task, config, epoch) query for the test task."""
    values = ucb_grid(model, ctx, state.test_task, params)
    config, epoch = select_from_ucb(values, state.e_max, state.n_epochs)
    return state.test_task, config, epoch


def true_config_ranks(db: ds.TuningDatabase, task: int) -> np.ndarray:
    """Rank (1 = best) of each config by max-over-epochs value; ties average."""
    scores = db.seed_mean[db.task_index(task)].max(axis=1)
    return rankdata(-scores, method="average")


def final_perf_ranking_from_means(
    db: ds.TuningDatabase, task: int, mean_table: np.ndarray
) -> float:
    """True rank of the config whose predicted best-over-epochs mean is largest."""
    best = int(np.argmax(mean_table.max(axis=1)))
    return float(true_config_ranks(db, task)[best])


def final_perf_ranking(
    db: ds.TuningDatabase,
    model: SvgpModel,
    ctx: OptiLandContext | None,
    state: TunerState,
) -> float:
    mean, _ = predicted_grid(model, ctx, state.test_task)
    return final_perf_ranking_from_means(db, state.test_task, mean)


def simple_regret(db: ds.TuningDatabase, state: TunerState) -> np.ndarray:
    """Series f(x*) - running max of observed values, one entry per query."""
    optimum = float(db.seed_mean[state.test_task].max())
    if not state.log:
        return np.zeros(0)
    running = np.maximum.accumulate([rec.value for rec in state.log])
    return optimum - running


def assert_incremental_closure(log: list[QueryRecord]) -> None:
    """Every queried epoch must be the direct successor of its predecessor."""
    seen: dict[int, int] = {}
    for rec in log:
        if rec.epoch != seen.get(rec.config, 0) + 1:
            raise DataError(
                f"incremental-fidelity closure violated: config {rec.config} queried at "
                f"epoch {rec.epoch} after {seen.get(rec.config, 0)}"
            )
        seen[rec.config] = rec.epoch


def _record_query(
    state: TunerState, store: ObservationStore, obs: ds.Observation
) -> None:
    store.add(obs.task, obs.config, obs.epoch, obs.value)
    state.e_max[obs.config] = obs.epoch
    state.log.append(QueryRecord(config=obs.config, epoch=obs.epoch, value=obs.value))
    state.q += 1


def step(
    state: TunerState,
    store: ObservationStore,
    model: SvgpModel,
    ctx: OptiLandContext | None,
    db: ds.TuningDatabase,
    acq: AcquisitionParams = AcquisitionParams(),
    online: OnlineUpdateConfig = OnlineUpdateConfig(),
    schedule: TrainSchedule = TrainSchedule(),
    oracle_rng: np.random.Generator | None = None,
) -> TunerState:
    """One tuning iteration: select, query the oracle, record, update the model."""
    if state.q >= state.budget:
        raise DataError(f"budget {state.budget} already spent")
    task, config, epoch = select_next(model, ctx, state, acq)
    obs = ds.query_oracle(db, task, config, epoch, rng=oracle_rng)
    _record_query(state, store, obs)
    epochs = (
        online.retrain_epochs if state.q % online.retrain_every == 0 else online.update_epochs
    )
    if epochs > 0:
        svgp.train(
            model,
            ctx,
            store.training_data(),
            TrainSchedule(epochs, schedule.learning_rate, schedule.momentum),
        )
    return state


def run(
    db: ds.TuningDatabase,
    split: ds.TaskSplit,
    spec: KernelSpec,
    budget: int,
    acq: AcquisitionParams = AcquisitionParams(),
    seed: int = 0,
    n_inducing: int = 100,
    schedule: TrainSchedule = TrainSchedule(),
    online: OnlineUpdateConfig = OnlineUpdateConfig(),
    warm_fraction: float = 1.0,
    seed_draw: bool = False,
) -> tuple[MetricSeries, TunerState]:
    """Full tuning session: warm-start on train tasks, cold-start the test task.

    The store begins with the recorded history of the train tasks (none on
    the test task) and the model is trained once in full before the first
    query. Iterates until the budget is spent or the grid is exhausted.
    """
    enc = GridEncoding.from_database(db)
    store = ObservationStore(db.n_tasks, db.n_configs, db.n_epochs)
    warm = ds.warm_start_observations(db, split.train, warm_fraction, seed)
    store.bulk_add((o.task, o.config, o.epoch, o.value) for o in warm)
    ctx = OptiLandContext(store)
    model = svgp.init_model(store, spec, enc, n_inducing, seed)
    if len(store):
        svgp.train(model, ctx, store.training_data(), schedule)

    descriptor = "empty" if warm_fraction == 0 else f"train-grid fraction {warm_fraction:g}"
    state = TunerState(
        test_task=split.test,
        budget=budget,
        n_configs=db.n_configs,
        n_epochs=db.n_epochs,
        warm_descriptor=descriptor,
    )
    oracle_rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD4A))) if seed_draw else None
    series = MetricSeries()
    optimum = float(db.seed_mean[split.test].max())
    best = -np.inf
    while state.q < budget:
        try:
            step(state, store, model, ctx, db, acq, online, schedule, oracle_rng)
        except ExhaustedError:
            break
        rec = state.log[-1]
        best = max(best, rec.value)
        series.regret.append(optimum - best)
        series.ranking.append(final_perf_ranking(db, model, ctx, state))
        series.configs.append(rec.config)
        series.epochs.append(rec.epoch)
        series.values.append(rec.value)
    assert_incremental_closure(state.log)
    return series, state


def baseline_random(
    db: ds.TuningDatabase, split: ds.TaskSplit, budget: int, seed: int = 0
) -> tuple[MetricSeries, TunerState]:
    """Uniformly random non-exhausted config each iteration, incremental epoch.

    The ranking metric substitutes the best observed value for a model: the
    predicted-best config is simply the one whose observations are highest.
    """
    rng = np.random.default_rng(seed)
    state = TunerState(
        test_task=split.test,
        budget=budget,
        n_configs=db.n_configs,
        n_epochs=db.n_epochs,
        warm_descriptor="none (random baseline)",
    )
    series = MetricSeries()
    optimum = float(db.seed_mean[split.test].max())
    ranks = true_config_ranks(db, split.test)
    best = -np.inf
    best_config = 0
    while state.q < budget:
        open_configs = np.nonzero(state.e_max < db.n_epochs)[0]
        if open_configs.size == 0:
            break
        config = int(rng.choice(open_configs))
        obs = ds.query_oracle(db, split.test, config, int(state.e_max[config]) + 1)
        state.e_max[obs.config] = obs.epoch
        state.log.append(QueryRecord(config=obs.config, epoch=obs.epoch, value=obs.value))
        state.q += 1
        if obs.value > best:
            best, best_config = obs.value, obs.config
        series.regret.append(optimum - best)
        series.ranking.append(float(ranks[best_config]))
        series.configs.append(obs.config)
        series.epochs.append(obs.epoch)
        series.values.append(obs.value)
    assert_incremental_closure(state.log)
    return series, state


def baseline_single_task(
    db: ds.TuningDatabase,
    split: ds.TaskSplit,
    spec: KernelSpec,
    budget: int,
    acq: AcquisitionParams = AcquisitionParams(),
    seed: int = 0,
    **run_kwargs,
) -> tuple[MetricSeries, TunerState]:
    """No-transfer ablation: the same surrogate and acquisition, empty history."""
    run_kwargs.pop("warm_fraction", None)
    return run(db, split, spec, budget, acq=acq, seed=seed, warm_fraction=0.0, **run_kwargs)


def hamming_smooth(series: np.ndarray | list[float], window: int = 10) -> np.ndarray:
    """Hamming-window smoothing for plots; stored series stay raw."""
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0 or window <= 1:
        return x.copy()
    w = np.hamming(min(window, x.size))
    return np.convolve(x, w / w.sum(), mode="same") / np.convolve(
        np.ones_like(x), w / w.sum(), mode="same"
    )

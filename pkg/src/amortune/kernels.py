"""Composite covariance over (task, configuration, epoch) grids.

The covariance factorizes into a task kernel, a configuration kernel, and a
fidelity kernel, multiplied pointwise. Four interchangeable choices per
factor give 64 composites; each choice carries its own learnable parameters,
stored unconstrained and mapped through softplus-style transforms so plain
gradient ascent respects every domain constraint.

Task kernels
    optiland    exp(-D / (xi * gamma)^2) with the data-dependent landscape
                distance D over matched queries and the matched-ratio scale
                gamma = U / (1 + (U - 1) R), gamma in [1, U]
    mtbo        free lookup table L L^T via a learnable Cholesky factor
    deeplinear  inner product of learnable per-task embeddings
    deeppoly    second-order polynomial of the same embeddings

Configuration kernels
    tree        per-dimension kernels composed along the dependency forest:
                branch kernels apply only when both configurations picked the
                same owning choice, otherwise only the learned choice
                similarity contributes
    flat        plain product of per-dimension kernels on the imputed
                fixed-length encoding (inactive numerics at 0.5, inactive
                categoricals at a dedicated extra index)
    deeplinear  inner product of a two-layer tanh network embedding
    deeppoly    second-order polynomial of the same network embedding

Fidelity kernels
    acccurve    1 + (b/(e+e'+b))^a - (b/(e+b))^a - (b/(e'+b))^a on raw
                epochs: the closed form of integrating saturating-exponential
                basis functions (1 - exp(-lambda e)) against a Gamma(a, b)
                mixing density, so it extrapolates learning-curve shapes
    fabolas     bilinear form phi(e)^T Sigma phi(e') with phi = (1, 1 - e/E)
                and Sigma = L L^T, encoding monotone fidelity trends
    rbf/matern  standard stationary kernels on the normalized epoch e/E
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Mapping

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, DataError, NumericalError
from .hpspace import HyperparameterSpace, RawConfiguration, flat_vector, normalize_config
from .store import ObservationStore

TASK_KINDS = ("optiland", "mtbo", "deeplinear", "deeppoly")
CONFIG_KINDS = ("tree", "flat", "deeplinear", "deeppoly")
FIDELITY_KINDS = ("acccurve", "fabolas", "rbf", "matern")

HIDDEN_WIDTH = 32
CONFIG_EMBED_WIDTH = 16
TASK_EMBED_WIDTH = 8
CAT_EMBED_WIDTH = 4

# Largest value the matched-query distance can take after min-max
# normalization and zero-meaning of both observation vectors.
DISTANCE_BOUND = 4.0
UNMATCHED_DISTANCE = 0.5

Params = Mapping[str, torch.Tensor]
Points = tuple[torch.Tensor, torch.Tensor, torch.Tensor]


@dataclass(frozen=True)
class KernelSpec:
    """One choice of task, configuration, and fidelity kernel."""

    task: str
    config: str
    fidelity: str

    def __post_init__(self) -> None:
        if self.task not in TASK_KINDS:
            raise ConfigError(f"unknown task kernel '{self.task}' (choices: {TASK_KINDS})")
        if self.config not in CONFIG_KINDS:
            raise ConfigError(f"unknown config kernel '{self.config}' (choices: {CONFIG_KINDS})")
        if self.fidelity not in FIDELITY_KINDS:
            raise ConfigError(
                f"unknown fidelity kernel '{self.fidelity}' (choices: {FIDELITY_KINDS})"
            )

    @property
    def identifier(self) -> str:
        return f"{self.task}/{self.config}/{self.fidelity}"

    @classmethod
    def parse(cls, text: str) -> "KernelSpec":
        parts = text.strip().lower().split("/")
        if len(parts) != 3:
            raise ConfigError(
                f"kernel spec '{text}' must have exactly three '/'-separated slots "
                "(task/config/fidelity)"
            )
        return cls(task=parts[0], config=parts[1], fidelity=parts[2])

    @staticmethod
    def all_specs() -> list["KernelSpec"]:
        return [KernelSpec(t, c, f) for t, c, f in product(TASK_KINDS, CONFIG_KINDS, FIDELITY_KINDS)]


AT2_SPEC = KernelSpec("optiland", "deeppoly", "acccurve")


@dataclass(frozen=True)
class FidelityValue:
    """An epoch index together with the grid size it normalizes against.

    Epoch 0 is accepted as an out-of-grid sentinel (useful for identity
    checks of curve kernels); grid operations require epoch >= 1.
    """

    epoch: int
    e_max: int

    def __post_init__(self) -> None:
        if self.e_max < 1:
            raise DataError("e_max must be at least 1")
        if not (0 <= self.epoch <= self.e_max):
            raise DataError(f"epoch {self.epoch} outside [0, {self.e_max}]")

    @property
    def normalized(self) -> float:
        return self.epoch / self.e_max


class GridEncoding:
    """Precomputed tensor views of a finite tuning grid.

    Holds the imputed flat encodings of every configuration, the dependency
    branch structure for the tree kernel, and the grid dimensions the kernels
    need. Construction is the only place configurations are validated against
    the space; evaluation afterwards is pure tensor work.
    """

    def __init__(
        self,
        space: HyperparameterSpace,
        configs: list[RawConfiguration],
        n_tasks: int,
        n_epochs: int,
    ) -> None:
        self.space = space
        self.n_tasks = int(n_tasks)
        self.n_configs = len(configs)
        self.n_epochs = int(n_epochs)
        if min(self.n_tasks, self.n_configs, self.n_epochs) < 1:
            raise DataError("grid dimensions must all be at least 1")

        nums, cats = [], []
        for cfg in configs:
            n, c = flat_vector(space, normalize_config(space, cfg))
            nums.append(n)
            cats.append(c)
        self.numeric = torch.from_numpy(np.stack(nums)).to(torch.float64)  # (C, n_num)
        self.cat = torch.from_numpy(np.stack(cats)).to(torch.int64)  # (C, n_cat)
        self.n_choices = tuple(len(space[name].choices) for name in space.categorical_names)

        num_col = {name: i for i, name in enumerate(space.numeric_names)}
        cat_col = {name: i for i, name in enumerate(space.categorical_names)}
        root = set(space.roots)
        self.root_numeric_cols = [num_col[n] for n in space.numeric_names if n in root]
        self.root_cat_cols = [cat_col[n] for n in space.categorical_names if n in root]
        # branches[root cat col][choice index] -> (numeric cols, categorical cols)
        self.branches: dict[int, dict[int, tuple[list[int], list[int]]]] = {
            g: {} for g in self.root_cat_cols
        }
        for (parent, choice), children in space.dependencies.items():
            g = cat_col[parent]
            v = space[parent].choices.index(choice)
            ncols = [num_col[ch] for ch in children if space[ch].is_numeric]
            ccols = [cat_col[ch] for ch in children if not space[ch].is_numeric]
            self.branches[g][v] = (ncols, ccols)

        self.epochs_raw = torch.arange(1, self.n_epochs + 1, dtype=torch.float64)
        self.epochs_bar = self.epochs_raw / self.n_epochs

    @classmethod
    def from_database(cls, db) -> "GridEncoding":
        return cls(db.space, db.configs, db.n_tasks, db.n_epochs)


# ---------------------------------------------------------------------------
# parameter construction


def softplus(x: torch.Tensor) -> torch.Tensor:
    return F.softplus(x)


def inv_softplus(y: float) -> float:
    """u such that softplus(u) = y, for y > 0."""
    if y <= 0:
        raise ValueError("inv_softplus requires a positive target")
    if y > 30:
        return float(y)
    return math.log(math.expm1(y))


def _scalar(value: float) -> torch.Tensor:
    return torch.tensor(float(value), dtype=torch.float64, requires_grad=True)


def _identity_chol_raw(n: int) -> torch.Tensor:
    raw = torch.zeros(n, n, dtype=torch.float64)
    raw.fill_diagonal_(inv_softplus(1.0))
    raw.requires_grad_(True)
    return raw


def _chol_from_raw(raw: torch.Tensor) -> torch.Tensor:
    """Lower-triangular factor with softplus-positive diagonal."""
    lower = torch.tril(raw, diagonal=-1)
    return lower + torch.diag_embed(softplus(torch.diagonal(raw)))


def _normalized_index_kernel(raw: torch.Tensor) -> torch.Tensor:
    """B = L L^T rescaled to unit diagonal (a learnable correlation matrix)."""
    factor = _chol_from_raw(raw)
    gram_b = factor @ factor.T
    d = torch.diagonal(gram_b).clamp_min(1e-12)
    return gram_b / torch.sqrt(d[:, None] * d[None, :])


def init_kernel_params(spec: KernelSpec, enc: GridEncoding, seed: int) -> dict[str, torch.Tensor]:
    """Fresh unconstrained parameters for every segment the spec needs.

    Network weights draw from N(0, 1/fan_in); embeddings from N(0, 1/width)
    so self-inner-products start near 1. Length scales start at 0.5 on the
    normalized ranges, xi at 1, U at 2, the curve kernel at (alpha, beta) =
    (1, 5), and all Cholesky factors at identity.
    """
    gen = torch.Generator().manual_seed(seed)

    def randn(*shape: int, scale: float) -> torch.Tensor:
        t = torch.randn(*shape, generator=gen, dtype=torch.float64) * scale
        t.requires_grad_(True)
        return t

    p: dict[str, torch.Tensor] = {}

    if spec.task == "optiland":
        p["task.xi_raw"] = _scalar(inv_softplus(1.0))
        p["task.u_raw"] = _scalar(inv_softplus(1.0))  # U = 1 + softplus -> 2
    elif spec.task == "mtbo":
        p["task.chol_raw"] = _identity_chol_raw(enc.n_tasks)
    else:
        p["task.embed"] = randn(enc.n_tasks, TASK_EMBED_WIDTH, scale=TASK_EMBED_WIDTH**-0.5)
        if spec.task == "deeppoly":
            p["task.c0_raw"] = _scalar(inv_softplus(1.0))

    n_num = enc.numeric.shape[1]
    if spec.config in ("tree", "flat"):
        if n_num:
            ls = torch.full((n_num,), inv_softplus(0.5), dtype=torch.float64)
            ls.requires_grad_(True)
            p["config.ls_raw"] = ls
        extra = 1 if spec.config == "flat" else 0
        for g, n_choices in enumerate(enc.n_choices):
            p[f"config.index{g}_raw"] = _identity_chol_raw(n_choices + extra)
    else:
        in_width = n_num + CAT_EMBED_WIDTH * len(enc.n_choices)
        for g, n_choices in enumerate(enc.n_choices):
            p[f"config.embed{g}"] = randn(n_choices + 1, CAT_EMBED_WIDTH, scale=CAT_EMBED_WIDTH**-0.5)
        p["config.w1"] = randn(in_width, HIDDEN_WIDTH, scale=in_width**-0.5)
        p["config.b1"] = torch.zeros(HIDDEN_WIDTH, dtype=torch.float64, requires_grad=True)
        # output layer additionally shrinks by the embedding width so that
        # self-inner-products of fresh embeddings start near 1
        p["config.w2"] = randn(
            HIDDEN_WIDTH, CONFIG_EMBED_WIDTH, scale=(HIDDEN_WIDTH * CONFIG_EMBED_WIDTH) ** -0.5
        )
        p["config.b2"] = torch.zeros(CONFIG_EMBED_WIDTH, dtype=torch.float64, requires_grad=True)
        if spec.config == "deeppoly":
            p["config.c0_raw"] = _scalar(inv_softplus(1.0))

    if spec.fidelity == "acccurve":
        p["fid.alpha_raw"] = _scalar(inv_softplus(1.0))
        p["fid.beta_raw"] = _scalar(inv_softplus(5.0))
    elif spec.fidelity == "fabolas":
        p["fid.chol_raw"] = _identity_chol_raw(2)
    else:
        p["fid.ls_raw"] = _scalar(inv_softplus(0.5))
    return p


# ---------------------------------------------------------------------------
# matched-query task distance


def optiland_distance(store: ObservationStore, task_a: int, task_b: int) -> tuple[float, int, float]:
    """Landscape distance over matched queries: (D, |matched|, matched ratio).

    Matched (config, epoch) tuples observed on both tasks are compared after
    min-max normalizing each observation vector to [0, 1] and shifting it to
    zero mean under a common tuple ordering, so one landscape equal to a
    shifted or scaled copy of the other yields D = 0. With at most one
    matched tuple there is nothing to compare and D defaults to the average
    distance 1/2. A constant vector (max = min) normalizes to all zeros.
    """
    curves_a = store.curves(task_a)
    curves_b = store.curves(task_b)
    keys = sorted(set(curves_a) & set(curves_b))
    matched = len(keys)
    ratio = matched / store.grid_cells
    if matched <= 1:
        return UNMATCHED_DISTANCE, matched, ratio

    def shaped(curves) -> np.ndarray:
        y = np.array([curves[k] for k in keys], dtype=np.float64)
        span = y.max() - y.min()
        y = np.zeros_like(y) if span == 0.0 else (y - y.min()) / span
        return y - y.mean()

    dist = float(np.mean((shaped(curves_a) - shaped(curves_b)) ** 2))
    assert dist <= DISTANCE_BOUND + 1e-12, f"distance {dist} exceeds algebraic bound"
    return dist, matched, ratio


class OptiLandContext:
    """Caches per-task-pair (D, |matched|, R) against a store snapshot.

    Entries carry the store versions of both tasks at computation time and
    are recomputed whenever either task has gained an observation since, so
    no explicit invalidation hook is needed. Not safe for use concurrently
    with store mutation.
    """

    def __init__(self, store: ObservationStore) -> None:
        self.store = store
        self._cache: dict[tuple[int, int], tuple[int, int, float, int, float]] = {}

    def pair_stats(self, task_a: int, task_b: int) -> tuple[float, int, float]:
        key = (min(task_a, task_b), max(task_a, task_b))
        va, vb = self.store.version(key[0]), self.store.version(key[1])
        hit = self._cache.get(key)
        if hit is not None and hit[0] == va and hit[1] == vb:
            return hit[2], hit[3], hit[4]
        dist, matched, ratio = optiland_distance(self.store, key[0], key[1])
        self._cache[key] = (va, vb, dist, matched, ratio)
        return dist, matched, ratio

    def distance_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense (D, R) matrices over all task pairs, including self-pairs."""
        n = self.store.n_tasks
        dist = np.empty((n, n))
        ratio = np.empty((n, n))
        for a in range(n):
            for b in range(a, n):
                d, _, r = self.pair_stats(a, b)
                dist[a, b] = dist[b, a] = d
                ratio[a, b] = ratio[b, a] = r
        return dist, ratio


# ---------------------------------------------------------------------------
# component tables


def task_table(kind: str, params: Params, ctx: OptiLandContext | None, n_tasks: int) -> torch.Tensor:
    if kind == "optiland":
        if ctx is None:
            raise ConfigError("the optiland task kernel needs an OptiLandContext")
        dist, ratio = ctx.distance_matrix()
        dist_t = torch.from_numpy(dist)
        ratio_t = torch.from_numpy(ratio)
        xi = softplus(params["task.xi_raw"])
        cap = 1.0 + softplus(params["task.u_raw"])
        gamma = cap / (1.0 + (cap - 1.0) * ratio_t)
        return torch.exp(-dist_t / (xi * gamma) ** 2)
    if kind == "mtbo":
        factor = _chol_from_raw(params["task.chol_raw"])
        return factor @ factor.T
    embed = params["task.embed"]
    lin = embed @ embed.T
    if kind == "deeplinear":
        return lin
    return (lin + softplus(params["task.c0_raw"])) ** 2


def _rbf_1d(col: torch.Tensor, ls: torch.Tensor) -> torch.Tensor:
    diff = col[:, None] - col[None, :]
    return torch.exp(-(diff**2) / (2.0 * ls**2))


def _deep_config_embed(params: Params, enc: GridEncoding) -> torch.Tensor:
    pieces = [enc.numeric]
    for g in range(len(enc.n_choices)):
        pieces.append(params[f"config.embed{g}"][enc.cat[:, g]])
    x = torch.cat(pieces, dim=1)
    hidden = torch.tanh(x @ params["config.w1"] + params["config.b1"])
    return hidden @ params["config.w2"] + params["config.b2"]


def config_table(kind: str, params: Params, enc: GridEncoding) -> torch.Tensor:
    n_cfg = enc.n_configs
    if kind in ("deeplinear", "deeppoly"):
        embed = _deep_config_embed(params, enc)
        lin = embed @ embed.T
        if kind == "deeplinear":
            return lin
        return (lin + softplus(params["config.c0_raw"])) ** 2

    ls = softplus(params["config.ls_raw"]) if "config.ls_raw" in params else None
    table = torch.ones(n_cfg, n_cfg, dtype=torch.float64)
    if kind == "flat":
        for d in range(enc.numeric.shape[1]):
            table = table * _rbf_1d(enc.numeric[:, d], ls[d])
        for g in range(len(enc.n_choices)):
            index_k = _normalized_index_kernel(params[f"config.index{g}_raw"])
            idx = enc.cat[:, g]
            table = table * index_k[idx][:, idx]
        return table

    # tree: root numerics multiply unconditionally; each root categorical
    # contributes its choice similarity times the branch product when both
    # configurations picked the same choice.
    for d in enc.root_numeric_cols:
        table = table * _rbf_1d(enc.numeric[:, d], ls[d])
    for g in enc.root_cat_cols:
        index_k = _normalized_index_kernel(params[f"config.index{g}_raw"])
        idx = enc.cat[:, g]
        table = table * index_k[idx][:, idx]
        for v, (ncols, ccols) in enc.branches.get(g, {}).items():
            picked = idx == v
            mask = picked[:, None] & picked[None, :]
            if not bool(mask.any()) or (not ncols and not ccols):
                continue
            branch = torch.ones(n_cfg, n_cfg, dtype=torch.float64)
            for d in ncols:
                branch = branch * _rbf_1d(enc.numeric[:, d], ls[d])
            for cg in ccols:
                child_k = _normalized_index_kernel(params[f"config.index{cg}_raw"])
                # inactive rows may carry the sentinel index; they are masked
                # out, so clamping keeps the gather in range without effect
                safe = enc.cat[:, cg].clamp(max=child_k.shape[0] - 1)
                branch = branch * child_k[safe][:, safe]
            table = table * torch.where(mask, branch, torch.ones((), dtype=torch.float64))
    return table


def _acccurve_pair(e1: torch.Tensor, e2: torch.Tensor, alpha: torch.Tensor, beta: torch.Tensor):
    return (
        1.0
        + (beta / (e1 + e2 + beta)) ** alpha
        - (beta / (e1 + beta)) ** alpha
        - (beta / (e2 + beta)) ** alpha
    )


def _matern52(r: torch.Tensor, ls: torch.Tensor) -> torch.Tensor:
    s = math.sqrt(5.0) * r / ls
    return (1.0 + s + s**2 / 3.0) * torch.exp(-s)


def fidelity_table(kind: str, params: Params, enc: GridEncoding) -> torch.Tensor:
    if kind == "acccurve":
        e = enc.epochs_raw
        return _acccurve_pair(
            e[:, None], e[None, :], softplus(params["fid.alpha_raw"]), softplus(params["fid.beta_raw"])
        )
    if kind == "fabolas":
        bar = enc.epochs_bar
        phi = torch.stack([torch.ones_like(bar), 1.0 - bar], dim=1)  # (E, 2)
        factor = _chol_from_raw(params["fid.chol_raw"])
        return phi @ (factor @ factor.T) @ phi.T
    bar = enc.epochs_bar
    ls = softplus(params["fid.ls_raw"])
    if kind == "rbf":
        return _rbf_1d(bar, ls)
    return _matern52((bar[:, None] - bar[None, :]).abs(), ls)


def component_tables(
    spec: KernelSpec, params: Params, ctx: OptiLandContext | None, enc: GridEncoding
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Dense per-factor kernel tables over the whole grid."""
    return (
        task_table(spec.task, params, ctx, enc.n_tasks),
        config_table(spec.config, params, enc),
        fidelity_table(spec.fidelity, params, enc),
    )


# ---------------------------------------------------------------------------
# gram assembly


def _as_index(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(torch.int64)
    return torch.as_tensor(np.asarray(x), dtype=torch.int64)


def as_points(tasks, configs, epochs) -> Points:
    return _as_index(tasks), _as_index(configs), _as_index(epochs)


def gram_from_tables(tables, x1: Points, x2: Points) -> torch.Tensor:
    tt, tc, te = tables
    t1, c1, e1 = x1
    t2, c2, e2 = x2
    return (
        tt[t1[:, None], t2[None, :]]
        * tc[c1[:, None], c2[None, :]]
        * te[(e1 - 1)[:, None], (e2 - 1)[None, :]]
    )


def diag_from_tables(tables, x: Points) -> torch.Tensor:
    tt, tc, te = tables
    t, c, e = x
    return tt[t, t] * tc[c, c] * te[e - 1, e - 1]


def gram(
    spec: KernelSpec,
    params: Params,
    ctx: OptiLandContext | None,
    enc: GridEncoding,
    x1: Points,
    x2: Points,
) -> torch.Tensor:
    """Kernel matrix between two point lists (no jitter; raw kernel values)."""
    return gram_from_tables(component_tables(spec, params, ctx, enc), x1, x2)


# ---------------------------------------------------------------------------
# scalar evaluation (single pairs, sentinel-friendly)


def task_eval(
    kind: str, params: Params, ctx: OptiLandContext | None, task_a: int, task_b: int
) -> float:
    if kind == "optiland":
        if ctx is None:
            raise ConfigError("the optiland task kernel needs an OptiLandContext")
        dist, _, ratio = ctx.pair_stats(task_a, task_b)
        with torch.no_grad():
            xi = softplus(params["task.xi_raw"]).item()
            cap = 1.0 + softplus(params["task.u_raw"]).item()
        gamma = cap / (1.0 + (cap - 1.0) * ratio)
        return math.exp(-dist / (xi * gamma) ** 2)
    with torch.no_grad():
        n_tasks = (
            params["task.chol_raw"].shape[0] if kind == "mtbo" else params["task.embed"].shape[0]
        )
        table = task_table(kind, params, ctx, n_tasks)
        return float(table[task_a, task_b])


def config_eval(kind: str, params: Params, enc: GridEncoding, config_a: int, config_b: int) -> float:
    if not (0 <= config_a < enc.n_configs and 0 <= config_b < enc.n_configs):
        raise ConfigError("config id outside the encoded grid")
    with torch.no_grad():
        return float(config_table(kind, params, enc)[config_a, config_b])


def fidelity_eval(kind: str, params: Params, f1: FidelityValue, f2: FidelityValue) -> float:
    with torch.no_grad():
        if kind == "acccurve":
            val = _acccurve_pair(
                torch.tensor(float(f1.epoch), dtype=torch.float64),
                torch.tensor(float(f2.epoch), dtype=torch.float64),
                softplus(params["fid.alpha_raw"]),
                softplus(params["fid.beta_raw"]),
            )
            return float(val)
        b1 = torch.tensor(f1.normalized, dtype=torch.float64)
        b2 = torch.tensor(f2.normalized, dtype=torch.float64)
        if kind == "fabolas":
            factor = _chol_from_raw(params["fid.chol_raw"])
            sigma = factor @ factor.T
            phi1 = torch.stack([torch.ones(()), 1.0 - b1]).to(torch.float64)
            phi2 = torch.stack([torch.ones(()), 1.0 - b2]).to(torch.float64)
            return float(phi1 @ sigma @ phi2)
        ls = softplus(params["fid.ls_raw"])
        if kind == "rbf":
            return float(torch.exp(-((b1 - b2) ** 2) / (2.0 * ls**2)))
        return float(_matern52((b1 - b2).abs(), ls))


def composite_eval(
    spec: KernelSpec,
    params: Params,
    ctx: OptiLandContext | None,
    enc: GridEncoding,
    x1: tuple[int, int, int],
    x2: tuple[int, int, int],
) -> float:
    """Kernel value for a single pair of (task, config, epoch) points."""
    t1, c1, e1 = x1
    t2, c2, e2 = x2
    return (
        task_eval(spec.task, params, ctx, t1, t2)
        * config_eval(spec.config, params, enc, c1, c2)
        * fidelity_eval(
            spec.fidelity,
            params,
            FidelityValue(e1, enc.n_epochs),
            FidelityValue(e2, enc.n_epochs),
        )
    )


def normalized_distance(
    spec: KernelSpec,
    params: Params,
    ctx: OptiLandContext | None,
    enc: GridEncoding,
    x1: tuple[int, int, int],
    x2: tuple[int, int, int],
) -> float:
    """(1 - correlation) / 2; lands in [0, 1] whenever the composite is PSD."""
    k11 = composite_eval(spec, params, ctx, enc, x1, x1)
    k22 = composite_eval(spec, params, ctx, enc, x2, x2)
    if k11 <= 0.0 or k22 <= 0.0:
        raise NumericalError(
            f"nonpositive self-kernel (k(x,x)={k11:.3g}, k(x',x')={k22:.3g}); "
            "cannot normalize degenerate kernel values"
        )
    k12 = composite_eval(spec, params, ctx, enc, x1, x2)
    return (1.0 - k12 / math.sqrt(k11 * k22)) / 2.0

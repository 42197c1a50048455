"""Sparse variational GP surrogate over the tuning grid.

The posterior is summarized by M inducing points drawn from the discrete
grid (fixed after seeded selection, since continuous inducing-point
gradients are undefined on a finite grid) with a Gaussian variational
distribution q(u) = N(m, S) against the standard-normal prior over inducing
values. Training maximizes the evidence lower bound with full-batch momentum
ascent and a linearly decaying step size; gradients come from reverse-mode
differentiation and are audited against central finite differences by
:func:`grad_check`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import kernels
from .errors import DataError, NumericalError
from .kernels import GridEncoding, KernelSpec, OptiLandContext, Points, softplus
from .store import ObservationStore

JITTER = 1e-6
JITTER_ESCALATED = 1e-4
VARIANCE_FLOOR = 1e-12
NOISE_FLOOR = 1e-8
LOG_2PI = math.log(2.0 * math.pi)

Dataset = tuple[Points, torch.Tensor]


@dataclass(frozen=True)
class TrainSchedule:
    """Momentum-ascent settings; the step size decays linearly to zero.

    ``clip_norm`` caps the global gradient norm before the momentum update.
    The inducing Gram of a smooth kernel is ill-conditioned no matter the
    jitter, which makes a few variational directions violently stiff;
    clipping turns would-be divergence along them into a bounded crawl while
    leaving the well-conditioned subspace untouched.
    """

    epochs: int = 200
    learning_rate: float = 0.02
    momentum: float = 0.8
    clip_norm: float | None = 10.0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise DataError("epochs must be nonnegative")
        if not self.learning_rate > 0:
            raise DataError("learning rate must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise DataError("momentum must lie in [0, 1)")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise DataError("clip_norm must be positive when set")


@dataclass
class TrainReport:
    initial_elbo: float
    final_elbo: float
    trace: list[float] = field(default_factory=list)
    restored_best: bool = False


class SvgpModel:
    """Kernel parameters, variational parameters, and fixed inducing points."""

    def __init__(
        self,
        spec: KernelSpec,
        enc: GridEncoding,
        params: dict[str, torch.Tensor],
        inducing: Points,
    ) -> None:
        self.spec = spec
        self.enc = enc
        self.params = params
        self.inducing = inducing

    @property
    def n_inducing(self) -> int:
        return int(self.inducing[0].shape[0])

    def noise_variance(self) -> torch.Tensor:
        return NOISE_FLOOR + softplus(self.params["svgp.noise_raw"])

    def prior_mean(self) -> torch.Tensor:
        return self.params["svgp.mean_const"]

    def variational_chol(self) -> torch.Tensor:
        return kernels._chol_from_raw(self.params["svgp.ls_raw"])

    def variational_cov(self) -> torch.Tensor:
        factor = self.variational_chol()
        return factor @ factor.T

    def trainable(self) -> dict[str, torch.Tensor]:
        return self.params


def init_model(
    store: ObservationStore,
    spec: KernelSpec,
    enc: GridEncoding,
    n_inducing: int,
    seed: int,
) -> SvgpModel:
    """Fresh model: seeded inducing selection, m = 0, S = I, noise 1e-2.

    The prior mean constant starts at the mean of the available observations
    (0.5 when the store is empty).
    """
    total = enc.n_tasks * enc.n_configs * enc.n_epochs
    if not (1 <= n_inducing <= total):
        raise DataError(f"n_inducing={n_inducing} outside [1, {total}] grid points")
    seeds = np.random.SeedSequence(seed).generate_state(2)
    flat = np.random.default_rng(int(seeds[0])).choice(total, size=n_inducing, replace=False)
    per_task = enc.n_configs * enc.n_epochs
    z_tasks = flat // per_task
    z_configs = (flat % per_task) // enc.n_epochs
    z_epochs = flat % enc.n_epochs + 1
    inducing = kernels.as_points(z_tasks, z_configs, z_epochs)

    params = kernels.init_kernel_params(spec, enc, int(seeds[1]))
    params["svgp.m"] = torch.zeros(n_inducing, dtype=torch.float64, requires_grad=True)
    params["svgp.ls_raw"] = kernels._identity_chol_raw(n_inducing)
    params["svgp.noise_raw"] = kernels._scalar(kernels.inv_softplus(1e-2 - NOISE_FLOOR))
    mean0 = store.mean_value()
    params["svgp.mean_const"] = kernels._scalar(0.5 if mean0 is None else mean0)
    return SvgpModel(spec, enc, params, inducing)


def _chol_with_escalation(gram_mm: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, float]:
    """Cholesky of the inducing Gram plus jitter, escalating once before failing."""
    eye = torch.eye(gram_mm.shape[0], dtype=torch.float64)
    for jitter in (JITTER, JITTER_ESCALATED):
        jittered = gram_mm + jitter * eye
        try:
            return torch.linalg.cholesky(jittered), jittered, jitter
        except torch.linalg.LinAlgError:
            continue
    raise NumericalError(
        f"inducing Gram not positive definite even with jitter {JITTER_ESCALATED:g}"
    )


def _predictive_terms(
    model: SvgpModel, tables, points: Points
) -> tuple[torch.Tensor, torch.Tensor]:
    """Differentiable predictive mean and (floored) variance at grid points."""
    chol_k, gram_k, _ = _chol_with_escalation(
        kernels.gram_from_tables(tables, model.inducing, model.inducing)
    )
    cross = kernels.gram_from_tables(tables, points, model.inducing)  # (N, M)
    coeff = torch.cholesky_solve(cross.T, chol_k).T  # A = k K^{-1}
    mean = model.prior_mean() + coeff @ model.params["svgp.m"]
    cov_gap = model.variational_cov() - gram_k
    var = kernels.diag_from_tables(tables, points) + ((coeff @ cov_gap) * coeff).sum(dim=1)
    return mean, var.clamp_min(VARIANCE_FLOOR)


def predict(
    model: SvgpModel, ctx: OptiLandContext | None, points: Points
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at the given grid points."""
    with torch.no_grad():
        tables = kernels.component_tables(model.spec, model.params, ctx, model.enc)
        mean, var = _predictive_terms(model, tables, points)
    return mean.numpy(), var.numpy()


def kl_divergence(model: SvgpModel) -> torch.Tensor:
    """KL[q(u) || N(0, I)] in closed form; zero exactly at m = 0, S = I."""
    factor = model.variational_chol()
    m = model.params["svgp.m"]
    trace = (factor**2).sum()
    logdet = 2.0 * torch.log(torch.diagonal(factor)).sum()
    return 0.5 * (trace + m @ m - model.n_inducing - logdet)


def elbo(model: SvgpModel, ctx: OptiLandContext | None, data: Dataset) -> torch.Tensor:
    """Evidence lower bound of the observations (differentiable).

    Sum over points of the expected Gaussian log-likelihood under the
    predictive marginal (a plain log-density at the predictive mean minus a
    variance correction), minus the KL of the variational distribution from
    its prior. Empty data leaves only the negated KL.
    """
    points, y = data
    kl = kl_divergence(model)
    if y.numel() == 0:
        return -kl
    tables = kernels.component_tables(model.spec, model.params, ctx, model.enc)
    mean, var = _predictive_terms(model, tables, points)
    noise = model.noise_variance()
    log_lik = (
        -0.5 * y.numel() * (LOG_2PI + torch.log(noise))
        - ((y - mean) ** 2).sum() / (2.0 * noise)
        - var.sum() / (2.0 * noise)
    )
    return log_lik - kl


def _snapshot(params: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    return {name: p.detach().clone() for name, p in params.items()}


def _restore(params: dict[str, torch.Tensor], snap: dict[str, torch.Tensor]) -> None:
    with torch.no_grad():
        for name, p in params.items():
            p.copy_(snap[name])


def _diagnose_nonfinite(model: SvgpModel) -> str:
    for name, p in model.params.items():
        if not bool(torch.isfinite(p).all()):
            return f"parameter segment '{name}' contains non-finite values"
        if p.grad is not None and not bool(torch.isfinite(p.grad).all()):
            return f"gradient of parameter segment '{name}' is non-finite"
    return "all parameter segments are finite; the objective itself overflowed"


def train(
    model: SvgpModel,
    ctx: OptiLandContext | None,
    data: Dataset,
    schedule: TrainSchedule = TrainSchedule(),
) -> TrainReport:
    """Full-batch momentum ascent on the ELBO.

    Gradient steps act on the per-observation average of the ELBO (the same
    maximizer; it keeps the stated step size meaningful regardless of data
    size), while reported values are the plain ELBO. The step size decays
    linearly to zero across the scheduled epochs. Momentum can overshoot
    within a run, so if the endpoint dips below the starting value the best
    parameters seen are restored; the reported final ELBO is never
    meaningfully below the initial one.
    """
    points, y = data
    if y.numel() == 0:
        raise DataError("train requires at least one observation")
    names = sorted(model.params)
    velocity = {n: torch.zeros_like(model.params[n]) for n in names}
    scale = 1.0 / float(y.numel())

    def objective() -> torch.Tensor:
        return elbo(model, ctx, data)

    current = objective()
    if not bool(torch.isfinite(current)):
        raise NumericalError(f"non-finite ELBO at initialization: {_diagnose_nonfinite(model)}")
    initial = float(current.detach())
    trace = [initial]
    best_value, best_snap = initial, _snapshot(model.params)

    for epoch in range(schedule.epochs):
        for n in names:
            model.params[n].grad = None
        (current * scale).backward()
        step = schedule.learning_rate * (1.0 - epoch / schedule.epochs)
        with torch.no_grad():
            if schedule.clip_norm is not None:
                total = torch.sqrt(
                    sum(
                        (model.params[n].grad**2).sum()
                        for n in names
                        if model.params[n].grad is not None
                    )
                )
                if float(total) > schedule.clip_norm:
                    shrink = schedule.clip_norm / float(total)
                    for n in names:
                        if model.params[n].grad is not None:
                            model.params[n].grad.mul_(shrink)
            for n in names:
                grad = model.params[n].grad
                if grad is None:
                    continue
                velocity[n].mul_(schedule.momentum).add_(grad)
                model.params[n].add_(velocity[n], alpha=step)
        current = objective()
        if not bool(torch.isfinite(current)):
            raise NumericalError(
                f"non-finite ELBO after epoch {epoch + 1}: {_diagnose_nonfinite(model)}"
            )
        value = float(current.detach())
        trace.append(value)
        if value > best_value:
            best_value, best_snap = value, _snapshot(model.params)

    final = trace[-1]
    restored = False
    if final < initial:
        _restore(model.params, best_snap)
        final = best_value
        restored = True
    return TrainReport(initial_elbo=initial, final_elbo=final, trace=trace, restored_best=restored)


def grad_check(
    model: SvgpModel,
    ctx: OptiLandContext | None,
    data: Dataset,
    eps: float = 1e-4,
    sample: int = 25,
    seed: int = 0,
) -> float:
    """Max relative error of reverse-mode gradients vs central differences.

    A random sample of unconstrained coordinates is perturbed by +/-eps; the
    relative error denominator is max(|analytic|, |numeric|, 1e-8).
    """
    names = sorted(model.params)
    for n in names:
        model.params[n].grad = None
    value = elbo(model, ctx, data)
    value.backward()
    grads = {
        n: (model.params[n].grad.detach().clone() if model.params[n].grad is not None
            else torch.zeros_like(model.params[n]))
        for n in names
    }
    sizes = [model.params[n].numel() for n in names]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    chosen = (
        np.arange(total) if sample >= total else rng.choice(total, size=sample, replace=False)
    )

    def locate(flat_index: int) -> tuple[str, int]:
        for n, size in zip(names, sizes):
            if flat_index < size:
                return n, flat_index
            flat_index -= size
        raise IndexError(flat_index)

    worst = 0.0
    with torch.no_grad():
        for flat_index in chosen:
            name, offset = locate(int(flat_index))
            view = model.params[name].view(-1)
            original = float(view[offset])
            view[offset] = original + eps
            plus = float(elbo(model, ctx, data))
            view[offset] = original - eps
            minus = float(elbo(model, ctx, data))
            view[offset] = original
            numeric = (plus - minus) / (2.0 * eps)
            analytic = float(grads[name].view(-1)[offset])
            denom = max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst


CHECKPOINT_VERSION = 1


def save_model(model: SvgpModel, path: str | Path) -> Path:
    """Write a checkpoint (named parameter segments, inducing ids, spec)."""
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(path.suffix + ".npz")
    meta = {
        "version": CHECKPOINT_VERSION,
        "spec": model.spec.identifier,
        "segments": sorted(model.params),
    }
    arrays = {
        "inducing": np.stack([p.numpy() for p in model.inducing]),
    }
    for i, name in enumerate(meta["segments"]):
        arrays[f"segment_{i}"] = model.params[name].detach().numpy()
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)
    return path


def load_model(path: str | Path, enc: GridEncoding) -> SvgpModel:
    with np.load(path) as blob:
        meta = json.loads(bytes(blob["meta"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {meta.get('version')}")
        spec = KernelSpec.parse(meta["spec"])
        inducing_arr = blob["inducing"]
        params: dict[str, torch.Tensor] = {}
        for i, name in enumerate(meta["segments"]):
            t = torch.from_numpy(blob[f"segment_{i}"].copy())
            t.requires_grad_(True)
            params[name] = t
    inducing = kernels.as_points(inducing_arr[0], inducing_arr[1], inducing_arr[2])
    return SvgpModel(spec, enc, params, inducing)

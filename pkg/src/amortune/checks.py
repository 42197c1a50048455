"""Verification oracles: independent recomputations of the core numerics.

Each check pits an implementation path against an independent reference
(adaptive quadrature, finite differences, brute-force recomputation, closed
forms) and reports its worst error. The `check` CLI subcommand runs the whole
battery; the test suite reuses individual oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy import integrate, stats

from . import dataset as ds
from . import kernels, svgp
from .kernels import (
    AT2_SPEC,
    FidelityValue,
    GridEncoding,
    KernelSpec,
    OptiLandContext,
    softplus,
)
from .store import ObservationStore

ACCCURVE_EPOCHS = (1.0, 5.0, 25.0, 75.0)
ACCCURVE_ALPHAS = (0.5, 2.0)
ACCCURVE_BETAS = (1.0, 10.0)


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{self.name}: max_error={self.value:.3e} threshold={self.threshold:.0e} {status}{extra}"


def acccurve_quadrature(epoch_a: float, epoch_b: float, alpha: float, beta: float) -> float:
    """Integrate the saturating-exponential basis product against Gamma(alpha, beta).

    Independent reference for the curve kernel's closed form; the Gamma
    density uses shape alpha and rate beta (scale 1/beta).
    """

    def integrand(lam: float) -> float:
        basis = (1.0 - np.exp(-lam * epoch_a)) * (1.0 - np.exp(-lam * epoch_b))
        return basis * stats.gamma.pdf(lam, a=alpha, scale=1.0 / beta)

    value, _ = integrate.quad(integrand, 0.0, np.inf, epsabs=1e-12, epsrel=1e-10, limit=200)
    return value


def check_acccurve_closed_form(threshold: float = 1e-5) -> CheckResult:
    """Closed form vs adaptive quadrature over the reference grid."""
    worst = 0.0
    for alpha in ACCCURVE_ALPHAS:
        for beta in ACCCURVE_BETAS:
            params = {
                "fid.alpha_raw": torch.tensor(kernels.inv_softplus(alpha), dtype=torch.float64),
                "fid.beta_raw": torch.tensor(kernels.inv_softplus(beta), dtype=torch.float64),
            }
            a_eff = float(softplus(params["fid.alpha_raw"]))
            b_eff = float(softplus(params["fid.beta_raw"]))
            for ea in ACCCURVE_EPOCHS:
                for eb in ACCCURVE_EPOCHS:
                    closed = kernels.fidelity_eval(
                        "acccurve",
                        params,
                        FidelityValue(int(ea), 75),
                        FidelityValue(int(eb), 75),
                    )
                    reference = acccurve_quadrature(ea, eb, a_eff, b_eff)
                    rel = abs(closed - reference) / max(abs(reference), 1e-12)
                    worst = max(worst, rel)
    return CheckResult("acccurve-quadrature", worst, threshold, worst <= threshold)


def _synthetic_store_model(n_obs: int = 50, seed: int = 0, spec: KernelSpec = AT2_SPEC):
    """Small tuning-shaped store plus a fresh model, for gradient audits."""
    db = ds.generate_synthetic(
        ds.SyntheticParams(n_tasks=4, n_clusters=2, n_configs=8, n_epochs=10, noise=0.02, seed=seed)
    )
    enc = GridEncoding.from_database(db)
    store = ObservationStore(db.n_tasks, db.n_configs, db.n_epochs)
    rng = np.random.default_rng(seed)
    added = 0
    while added < n_obs:
        t = int(rng.integers(db.n_tasks))
        c = int(rng.integers(db.n_configs))
        e = store.e_max(t, c) + 1
        if e > db.n_epochs:
            continue
        store.add(t, c, e, float(db.seed_mean[t, c, e - 1]))
        added += 1
    ctx = OptiLandContext(store)
    model = svgp.init_model(store, spec, enc, n_inducing=20, seed=seed)
    return model, ctx, store


def check_gradients(threshold: float = 1e-3, seed: int = 0) -> CheckResult:
    """Reverse-mode gradients vs central differences on a 50-observation store."""
    model, ctx, store = _synthetic_store_model(seed=seed)
    worst = svgp.grad_check(model, ctx, store.training_data(), eps=1e-4, sample=25, seed=seed)
    return CheckResult("gradient-finite-difference", worst, threshold, worst <= threshold)


def check_optiland_units(threshold: float = 1e-12) -> CheckResult:
    """Hand-computable matched-query distance and scale-function cases."""
    store = ObservationStore(2, 4, 4, strict_fidelity=False)
    ctx_err = 0.0

    # no matched tuples -> average distance, zero ratio
    d, m, r = kernels.optiland_distance(store, 0, 1)
    ctx_err = max(ctx_err, abs(d - 0.5), float(m != 0), abs(r))

    # affine-related curves on matched tuples -> zero distance
    for (c, e), y in {(0, 1): 0.2, (0, 2): 0.5, (1, 1): 0.9}.items():
        store.add(0, c, e, y)
        store.add(1, c, e, 2.0 * y + 0.1)
    d_affine, m_affine, _ = kernels.optiland_distance(store, 0, 1)
    ctx_err = max(ctx_err, abs(d_affine), float(m_affine != 3))

    # hand case: (0, 1) vs (1, 0) -> distance exactly 1
    store2 = ObservationStore(2, 2, 2, strict_fidelity=False)
    store2.add(0, 0, 1, 0.0)
    store2.add(0, 1, 1, 1.0)
    store2.add(1, 0, 1, 1.0)
    store2.add(1, 1, 1, 0.0)
    d_anti, _, _ = kernels.optiland_distance(store2, 0, 1)
    ctx_err = max(ctx_err, abs(d_anti - 1.0))

    # gamma endpoints: full overlap leaves the length scale alone, no overlap
    # scales it by the cap
    cap = 3.75
    gamma_full = cap / (1.0 + (cap - 1.0) * 1.0)
    gamma_none = cap / (1.0 + (cap - 1.0) * 0.0)
    ctx_err = max(ctx_err, abs(gamma_full - 1.0), abs(gamma_none - cap))
    return CheckResult("optiland-units", ctx_err, threshold, ctx_err <= threshold)


def check_kernel_symmetry(threshold: float = 0.0, seed: int = 0) -> CheckResult:
    """kappa(x, x') == kappa(x', x) exactly, sampled across all composites."""
    model, ctx, _ = _synthetic_store_model(seed=seed)
    enc = model.enc
    rng = np.random.default_rng(seed)
    worst = 0.0
    for spec in KernelSpec.all_specs():
        params = kernels.init_kernel_params(spec, enc, seed)
        for _ in range(3):
            x1 = (int(rng.integers(enc.n_tasks)), int(rng.integers(enc.n_configs)),
                  int(rng.integers(1, enc.n_epochs + 1)))
            x2 = (int(rng.integers(enc.n_tasks)), int(rng.integers(enc.n_configs)),
                  int(rng.integers(1, enc.n_epochs + 1)))
            forward = kernels.composite_eval(spec, params, ctx, enc, x1, x2)
            backward = kernels.composite_eval(spec, params, ctx, enc, x2, x1)
            worst = max(worst, abs(forward - backward))
    return CheckResult("kernel-symmetry", worst, threshold, worst <= threshold)


PSD_TASKS = ("mtbo", "deeplinear", "deeppoly")
PSD_CONFIGS = ("flat", "deeplinear", "deeppoly")


def check_gram_psd(threshold: float = 1e-8, seed: int = 0) -> CheckResult:
    """Minimum eigenvalue of jitter-free Grams on random 20-point sets.

    Covers the composites built purely from positive semidefinite parts; the
    matched-query task kernel is excluded because its data-dependent distance
    is not certified to be of negative type.
    """
    model, ctx, _ = _synthetic_store_model(seed=seed)
    enc = model.enc
    rng = np.random.default_rng(seed)
    worst = 0.0
    for task_kind in PSD_TASKS:
        for config_kind in PSD_CONFIGS:
            for fid_kind in kernels.FIDELITY_KINDS:
                spec = KernelSpec(task_kind, config_kind, fid_kind)
                params = kernels.init_kernel_params(spec, enc, seed + 1)
                pts = kernels.as_points(
                    rng.integers(enc.n_tasks, size=20),
                    rng.integers(enc.n_configs, size=20),
                    rng.integers(1, enc.n_epochs + 1, size=20),
                )
                with torch.no_grad():
                    gram_m = kernels.gram(spec, params, ctx, enc, pts, pts)
                min_eig = float(torch.linalg.eigvalsh(gram_m).min())
                worst = min(worst, min_eig)
    return CheckResult("gram-psd", -worst, threshold, -worst <= threshold)


def check_kl_nonnegative(threshold: float = 1e-10, seed: int = 0) -> CheckResult:
    """KL term is zero at the prior and nonnegative under random parameters."""
    model, ctx, _ = _synthetic_store_model(seed=seed)
    worst = abs(float(svgp.kl_divergence(model)))  # q = p at init
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for _ in range(20):
            model.params["svgp.m"].copy_(
                torch.randn(model.n_inducing, generator=gen, dtype=torch.float64)
            )
            model.params["svgp.ls_raw"].copy_(
                torch.randn(model.n_inducing, model.n_inducing, generator=gen, dtype=torch.float64)
            )
            worst = max(worst, -float(svgp.kl_divergence(model)))
    return CheckResult("kl-nonnegative", worst, threshold, worst <= threshold)


def check_predictive_variance(threshold: float = 1e-8, seed: int = 0) -> CheckResult:
    """Pre-floor predictive variance never dips below -1e-8 on a synthetic fit."""
    model, ctx, store = _synthetic_store_model(seed=seed)
    svgp.train(model, ctx, store.training_data(), svgp.TrainSchedule(epochs=50))
    enc = model.enc
    points = kernels.as_points(
        np.repeat(np.arange(enc.n_tasks), enc.n_configs),
        np.tile(np.arange(enc.n_configs), enc.n_tasks),
        np.full(enc.n_tasks * enc.n_configs, enc.n_epochs),
    )
    with torch.no_grad():
        tables = kernels.component_tables(model.spec, model.params, ctx, model.enc)
        chol_k, gram_k, _ = svgp._chol_with_escalation(
            kernels.gram_from_tables(tables, model.inducing, model.inducing)
        )
        cross = kernels.gram_from_tables(tables, points, model.inducing)
        coeff = torch.cholesky_solve(cross.T, chol_k).T
        cov_gap = model.variational_cov() - gram_k
        raw_var = kernels.diag_from_tables(tables, points) + ((coeff @ cov_gap) * coeff).sum(dim=1)
    worst = -float(raw_var.min())
    return CheckResult("predictive-variance", max(worst, 0.0), threshold, worst <= threshold)


def run_all(seed: int = 0) -> list[CheckResult]:
    return [
        check_acccurve_closed_form(),
        check_gradients(seed=seed),
        check_optiland_units(),
        check_kernel_symmetry(seed=seed),
        check_gram_psd(seed=seed),
        check_kl_nonnegative(seed=seed),
        check_predictive_variance(seed=seed),
    ]

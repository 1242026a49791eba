"""Stationarity analysis: how close is a network to a max-margin critical point.

At an exact stationary point of the margin-maximization problem the parameter
vector is a nonnegative combination of per-point output gradients,
theta = sum_i lambda_i y_i grad Phi(theta; x_i), with lambda_i = 0 off the
margin.  This module estimates the dual weights lambda by nonnegative least
squares restricted to near-margin points, reports the relative stationarity
residual, and evaluates per-point bounds on sum_j v_j^2 lambda_i sigma'_ij
that hold for near-orthogonal data.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DegenerateNetworkError
from .model import LabeledDataset, NetworkParams, forward_batch
from .nnls import nnls_normal

REPORT_FORMAT_VERSION = 1

DEFAULT_SUPPORT_SLACK = 0.1
ARGMIN_REL_SLACK = 1e-9

# A (point, neuron) pair whose pre-activation is this small relative to the
# neuron's largest pre-activation sits at the kink, where any subgradient in
# [0, 1] is admissible.  Networks near stationarity generically park kinks
# exactly on margin points, and the parameters are only explainable with
# interior subgradient values there.
KINK_REL_TOL = 1e-4
_REFINE_MAX_PASSES = 20

# Materialize the full gradient matrix for the residual only when it is small;
# otherwise fall back to the quadratic-form residual (adequate for the loose
# tolerances used on trained networks).
_MATERIALIZE_LIMIT = 4_000_000


@dataclass(frozen=True)
class DiagnosticBounds:
    """Near-orthogonality quantities and the per-point dual-sum bounds.

    ``upper_bound`` is m / (Delta + 1 - 2 (delta + 1)(n - 1)); every per-sign
    sum sum_{j in J+-} v_j^2 lambda_l sigma'_lj should stay below it, and for
    support points the sum on the side matching the label should exceed
    ``lower_bound``.  When the denominator is not positive the data is too
    correlated for the bounds to mean anything and both checks are vacuous.
    """

    max_abs_inner: float  # delta: max_{i != l} |x_i . x_l|
    delta_defined: bool
    min_sq_norm: float  # Delta
    max_sq_norm: float  # Delta_max
    bound_denominator_positive: bool
    upper_bound: float
    lower_bound: float
    pos_sums: np.ndarray  # per point: sum over v_j > 0 of v_j^2 lambda sigma'
    neg_sums: np.ndarray
    upper_bound_ok: bool
    lower_bound_ok: bool
    loss_value: float
    margin_lower_ok: bool  # margin > 1/e whenever loss < 1/(2e)


@dataclass(frozen=True)
class KktReport:
    """Estimated duals and stationarity residual for (network, dataset)."""

    margin: float
    support_indices: tuple[int, ...]
    lambdas: np.ndarray
    stationarity_residual: float
    sigma_primes: np.ndarray  # (n, k) in {0, 1}
    diagnostics: DiagnosticBounds | None = None


def margin(net: NetworkParams, data: LabeledDataset) -> tuple[float, tuple[int, ...]]:
    """Minimum |output| over the dataset and the indices attaining it.

    Raises :class:`DegenerateNetworkError` if the network outputs zero on
    every point.
    """
    a = np.abs(forward_batch(net, data.points))
    if float(np.max(a)) == 0.0:
        raise DegenerateNetworkError("network output is zero on every point")
    m = float(np.min(a))
    idx = np.nonzero(a - m <= ARGMIN_REL_SLACK * m)[0]
    return m, tuple(int(i) for i in idx)


def _gradient_column(net: NetworkParams, x: np.ndarray, sigma_row: np.ndarray,
                     act_row: np.ndarray) -> np.ndarray:
    sv = net.out_weights * sigma_row
    return np.concatenate([np.outer(sv, x).ravel(), sv, act_row])


def _refine_kink_subgradients(
    net: NetworkParams,
    xs: np.ndarray,
    s_y: np.ndarray,
    idx: np.ndarray,
    sigma_work: np.ndarray,
    kink: np.ndarray,
    act: np.ndarray,
    theta: np.ndarray,
) -> tuple[np.ndarray, float]:
    """Alternate between the dual NNLS and per-neuron kink subgradients.

    Each alternation minimizes the same objective over one block, so the
    residual is non-increasing; entries of sigma_work flagged as kinks move
    freely inside [0, 1].
    """
    theta_norm = float(np.linalg.norm(theta))
    v = net.out_weights
    lam = np.zeros(idx.size)
    residual = 1.0
    for _ in range(_REFINE_MAX_PASSES):
        cols = np.column_stack(
            [
                s_y[t] * _gradient_column(net, xs[i], sigma_work[t], act[i])
                for t, i in enumerate(idx)
            ]
        )
        lam = nnls_normal(cols.T @ cols, cols.T @ theta)
        new_residual = float(np.linalg.norm(theta - cols @ lam)) / theta_norm
        converged = new_residual >= residual * (1.0 - 1e-3)
        residual = new_residual
        if converged:
            break
        for j in range(net.width):
            rows = np.nonzero(kink[:, j])[0]
            if rows.size == 0 or v[j] == 0.0:
                continue
            target = np.concatenate([net.weights[j], [net.biases[j]]]) / v[j]
            fixed = np.zeros(net.input_dim + 1)
            for t, i in enumerate(idx):
                if kink[t, j]:
                    continue
                fixed += lam[t] * s_y[t] * sigma_work[t, j] * np.append(xs[i], 1.0)
            basis = np.column_stack(
                [lam[t] * s_y[t] * np.append(xs[idx[t]], 1.0) for t in rows]
            )
            sol, *_ = np.linalg.lstsq(basis, target - fixed, rcond=None)
            sigma_work[rows, j] = np.clip(sol, 0.0, 1.0)
    return lam, residual


def estimate_lambdas(
    net: NetworkParams, data: LabeledDataset, support_slack: float = DEFAULT_SUPPORT_SLACK
) -> KktReport:
    """Nonnegative dual estimate restricted to near-margin points.

    Support is {i : |y_i Phi(x_i) - m| <= support_slack * m}; off-support
    duals are fixed to zero.  The residual is ||theta - sum lambda_i y_i g_i||
    relative to ||theta||, minimized jointly over the duals and over the
    admissible subgradient values at (point, neuron) pairs whose
    pre-activation sits at a kink.  An empty support yields residual 1 and
    zero duals.  The reported sigma_primes matrix keeps the strict 0/1
    convention regardless of any kink refinement.
    """
    xs, ys = data.points, data.labels
    pre = xs @ net.weights.T + net.biases
    act = np.maximum(pre, 0.0)
    out = act @ net.out_weights
    sigma = (pre > 0.0)

    a = np.abs(out)
    if float(np.max(a)) == 0.0:
        raise DegenerateNetworkError("network output is zero on every point")
    m = float(np.min(a))

    support = np.abs(ys * out - m) <= support_slack * m
    sigma_int = sigma.astype(np.int8)
    lambdas = np.zeros(data.size)
    if not support.any():
        return KktReport(m, (), lambdas, 1.0, sigma_int)

    idx = np.nonzero(support)[0]
    s_sigma = sigma[idx].astype(float)
    s_act = act[idx]
    s_y = ys[idx]
    v = net.out_weights
    v2 = v * v

    # <g_i, g_l> = sum_j v_j^2 s_ij s_lj (x_i.x_l + 1) + sum_j act_ij act_lj
    inner_x = xs[idx] @ xs[idx].T + 1.0
    gram_g = ((s_sigma * v2) @ s_sigma.T) * inner_x + s_act @ s_act.T
    # <g_i, theta> = 2 sum_j v_j act_ij  (sigma' * pre == act for strict sigma')
    rhs_g = 2.0 * s_act @ v

    gram = gram_g * np.outer(s_y, s_y)
    rhs = s_y * rhs_g
    lam = nnls_normal(gram, rhs)

    theta = net.parameter_vector()
    theta_norm = float(np.linalg.norm(theta))
    materializable = idx.size * theta.size <= _MATERIALIZE_LIMIT
    if materializable:
        cols = np.column_stack(
            [
                s_y[t] * _gradient_column(net, xs[i], s_sigma[t], s_act[t])
                for t, i in enumerate(idx)
            ]
        )
        residual = float(np.linalg.norm(theta - cols @ lam)) / theta_norm
    else:
        res_sq = theta_norm**2 - 2.0 * lam @ rhs + lam @ gram @ lam
        residual = math.sqrt(max(res_sq, 0.0)) / theta_norm

    kink_scale = np.maximum(np.max(np.abs(pre), axis=0), np.finfo(float).tiny)
    kink = np.abs(pre[idx]) <= KINK_REL_TOL * kink_scale
    if materializable and kink.any():
        lam_ref, res_ref = _refine_kink_subgradients(
            net, xs, s_y, idx, s_sigma.copy(), kink, act, theta
        )
        if res_ref <= residual:
            lam, residual = lam_ref, res_ref

    lambdas[idx] = lam
    return KktReport(m, tuple(int(i) for i in idx), lambdas, residual, sigma_int)


def _mean_loss(net: NetworkParams, data: LabeledDataset, kind: str) -> float:
    z = data.labels * forward_batch(net, data.points)
    if kind == "exponential":
        with np.errstate(over="ignore"):
            return float(np.mean(np.exp(-z)))
    if kind == "logistic":
        return float(np.mean(np.logaddexp(0.0, -z)))
    raise ValueError(f"unknown loss kind {kind!r}")


def diagnostic_bounds(
    report: KktReport,
    net: NetworkParams,
    data: LabeledDataset,
    loss_kind: str = "logistic",
) -> DiagnosticBounds:
    """Evaluate per-point dual-sum bounds and the margin lower-bound check.

    ``report`` must have been produced from the same (net, data).  With fewer
    than two points the pairwise inner-product maximum is undefined and
    reported as 0 with ``delta_defined`` false.
    """
    xs, ys = data.points, data.labels
    n = data.size
    norms = np.einsum("ij,ij->i", xs, xs)
    dmin = float(np.min(norms))
    dmax = float(np.max(norms))

    if n >= 2:
        inner = xs @ xs.T
        np.fill_diagonal(inner, 0.0)
        delta = float(np.max(np.abs(inner)))
        delta_defined = True
    else:
        delta = 0.0
        delta_defined = False

    denom = dmin + 1.0 - 2.0 * (delta + 1.0) * (n - 1)
    denom_positive = denom > 0.0
    if denom_positive:
        upper = report.margin / denom
        lower = (report.margin - (delta + 1.0) * (n - 1) * upper) / (dmax + 1.0)
    else:
        upper = math.inf
        lower = -math.inf

    sigma = report.sigma_primes.astype(float)
    v = net.out_weights
    pos_weight = np.where(v > 0.0, v * v, 0.0)
    neg_weight = np.where(v < 0.0, v * v, 0.0)
    pos_sums = report.lambdas * (sigma @ pos_weight)
    neg_sums = report.lambdas * (sigma @ neg_weight)

    slack = 1e-9 * max(1.0, abs(upper) if math.isfinite(upper) else 1.0)
    upper_ok = bool(
        np.all(pos_sums <= upper + slack) and np.all(neg_sums <= upper + slack)
    )
    lower_ok = True
    if math.isfinite(lower):
        lslack = 1e-9 * max(1.0, abs(lower))
        for i in report.support_indices:
            side = pos_sums[i] if ys[i] > 0 else neg_sums[i]
            if side < lower - lslack:
                lower_ok = False
                break

    loss_value = _mean_loss(net, data, loss_kind)
    margin_lower_ok = not (loss_value < 1.0 / (2.0 * math.e)) or (
        report.margin > 1.0 / math.e
    )

    return DiagnosticBounds(
        max_abs_inner=delta,
        delta_defined=delta_defined,
        min_sq_norm=dmin,
        max_sq_norm=dmax,
        bound_denominator_positive=denom_positive,
        upper_bound=upper,
        lower_bound=lower,
        pos_sums=pos_sums,
        neg_sums=neg_sums,
        upper_bound_ok=upper_ok,
        lower_bound_ok=lower_ok,
        loss_value=loss_value,
        margin_lower_ok=margin_lower_ok,
    )


def analyze(
    net: NetworkParams,
    data: LabeledDataset,
    support_slack: float = DEFAULT_SUPPORT_SLACK,
    loss_kind: str = "logistic",
) -> KktReport:
    """Full report: dual estimate plus diagnostics."""
    report = estimate_lambdas(net, data, support_slack)
    return replace(report, diagnostics=diagnostic_bounds(report, net, data, loss_kind))


def write_report(report: KktReport, path) -> None:
    """Write the versioned report document (JSON)."""
    doc = {
        "format_version": REPORT_FORMAT_VERSION,
        "margin": report.margin,
        "support_indices": list(report.support_indices),
        "lambdas": [float(x) for x in report.lambdas],
        "stationarity_residual": report.stationarity_residual,
        "sigma_primes": report.sigma_primes.tolist(),
    }
    if report.diagnostics is not None:
        d = report.diagnostics
        doc["diagnostics"] = {
            "max_abs_inner": d.max_abs_inner,
            "delta_defined": d.delta_defined,
            "min_sq_norm": d.min_sq_norm,
            "max_sq_norm": d.max_sq_norm,
            "bound_denominator_positive": d.bound_denominator_positive,
            "upper_bound": d.upper_bound,
            "lower_bound": d.lower_bound,
            "pos_sums": [float(x) for x in d.pos_sums],
            "neg_sums": [float(x) for x in d.neg_sums],
            "upper_bound_ok": d.upper_bound_ok,
            "lower_bound_ok": d.lower_bound_ok,
            "loss_value": d.loss_value,
            "margin_lower_ok": d.margin_lower_ok,
        }
    Path(path).write_text(json.dumps(doc, indent=1, allow_nan=True) + "\n")

"""End-to-end experiment harness: margin-fraction sweeps and reconstruction runs.

The margin experiment trains one network per (dimension, seed) cell on data
from a balanced two-Gaussian mixture, then compares train and test outputs to
the margin: the fraction of training points within the slack band around m,
and the fraction of test points at or above (1 - slack) m.  Cells are fully
deterministic given their seed.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import kkt, reconstruct, training
from .errors import DegenerateNetworkError, FileFormatError, TrainingDivergedError
from .model import LabeledDataset, NetworkParams, forward_batch, to_piecewise_linear
from .distributions import label_by_component, sample, two_gaussian_mixture

RECONSTRUCTION_MATCH_TOL = 1e-3

MARGIN_CSV_COLUMNS = (
    "d",
    "seed",
    "frac_train_on_margin",
    "frac_test_on_or_above_margin",
    "final_loss",
    "margin",
    "kkt_residual",
    "diverged",
)

RECON_CSV_COLUMNS = (
    "seed",
    "n_candidates",
    "n_matched",
    "matched_fraction",
    "margin",
    "final_loss",
    "kkt_residual",
    "degenerate",
)


RECON_DATA_SCHEMES = ("uniform-random", "two-clusters")


@dataclass(frozen=True)
class ExperimentConfig:
    """Sweep settings; ``train.width`` is the hidden width for every cell.

    The margin experiment draws from the balanced mixture of two unit
    Gaussians at (+-mixture_mean_coord, 0, ..., 0), labeled by component.
    The reconstruction pipeline samples per ``recon_data_scheme``:
    uniform-random points on [-2, 2] with random labels, or two separated
    clusters labeled by side.
    """

    dims: tuple[int, ...]
    seeds: tuple[int, ...]
    train: training.TrainConfig
    n_train: int = 20
    n_test: int = 1000
    margin_slack: float = 0.1
    mixture_mean_coord: float = 1.0
    recon_data_scheme: str = "uniform-random"
    recon_require_convergence: bool = False
    out_dir: Path | None = None

    def __post_init__(self):
        if not self.dims or not self.seeds:
            raise ValueError("dims and seeds must be nonempty")
        if min(self.dims) < 1 or self.n_train < 1 or self.n_test < 1:
            raise ValueError("dims, n_train and n_test must be positive")
        if not 0 < self.margin_slack < 1:
            raise ValueError("margin_slack must be in (0, 1)")
        if self.recon_data_scheme not in RECON_DATA_SCHEMES:
            raise ValueError(f"recon_data_scheme must be one of {RECON_DATA_SCHEMES}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @property
    def width(self) -> int:
        return self.train.width


@dataclass(frozen=True)
class ExperimentRecord:
    """One (dimension, seed) cell of the margin experiment."""

    dim: int
    seed: int
    frac_train_on_margin: float
    frac_test_on_or_above_margin: float
    final_loss: float
    margin: float
    kkt_residual: float
    wall_time_s: float
    diverged: bool = False


@dataclass(frozen=True)
class AggregateRecord:
    """Per-dimension means and stds over non-diverged seeds."""

    dim: int
    n_cells: int
    frac_train_on_margin_mean: float
    frac_train_on_margin_std: float
    frac_test_on_or_above_margin_mean: float
    frac_test_on_or_above_margin_std: float
    final_loss_mean: float
    margin_mean: float
    kkt_residual_mean: float


@dataclass(frozen=True)
class MarginExperimentResult:
    records: tuple[ExperimentRecord, ...]
    aggregates: tuple[AggregateRecord, ...]


def _cell_seeds(seed: int) -> tuple[int, int, int]:
    base = 3 * int(seed)
    return base, base + 1, base + 2


def _sample_labeled(dim: int, n: int, mean_coord: float, seed: int) -> LabeledDataset:
    batch = sample(two_gaussian_mixture(dim, mean_coord, rng_seed=seed), n)
    return LabeledDataset(batch.points, label_by_component(batch.components))


def margin_fractions(
    net: NetworkParams, train_points: np.ndarray, test_points: np.ndarray, slack: float
) -> tuple[float, float, float]:
    """(margin, frac train within the slack band, frac test at or above it)."""
    train_abs = np.abs(forward_batch(net, train_points))
    m = float(np.min(train_abs))
    band = (train_abs >= (1.0 - slack) * m) & (train_abs <= (1.0 + slack) * m)
    test_abs = np.abs(forward_batch(net, test_points))
    above = test_abs >= (1.0 - slack) * m
    return m, float(np.mean(band)), float(np.mean(above))


def run_margin_cell(cfg: ExperimentConfig, dim: int, seed: int) -> ExperimentRecord:
    """Train and score one cell.

    A cell whose training diverges or never fits the data (even after the
    deterministic re-seeding retries) is recorded with the ``diverged`` flag
    and excluded from aggregation.
    """
    train_seed, test_seed, init_seed = _cell_seeds(seed)
    data = _sample_labeled(dim, cfg.n_train, cfg.mixture_mean_coord, train_seed)
    test = sample(
        two_gaussian_mixture(dim, cfg.mixture_mean_coord, rng_seed=test_seed), cfg.n_test
    ).points

    t0 = time.perf_counter()
    try:
        net, trace, _ = training.train_non_degenerate(
            data, replace(cfg.train, rng_seed=init_seed), max_retries=5
        )
    except (TrainingDivergedError, DegenerateNetworkError):
        return ExperimentRecord(
            dim, seed, math.nan, math.nan, math.nan, math.nan, math.nan,
            time.perf_counter() - t0, diverged=True,
        )
    m, frac_train, frac_test = margin_fractions(
        net, data.points, test, cfg.margin_slack
    )
    final = trace.final()
    return ExperimentRecord(
        dim=dim,
        seed=seed,
        frac_train_on_margin=frac_train,
        frac_test_on_or_above_margin=frac_test,
        final_loss=final.loss,
        margin=m,
        kkt_residual=final.kkt_residual,
        wall_time_s=time.perf_counter() - t0,
    )


def run_margin_experiment(cfg: ExperimentConfig, log=None) -> MarginExperimentResult:
    """All (dim, seed) cells, sorted by dimension then seed, plus aggregates."""
    records = []
    for dim in sorted(cfg.dims):
        for seed in sorted(cfg.seeds):
            rec = run_margin_cell(cfg, dim, seed)
            records.append(rec)
            if log is not None:
                log(
                    f"d={rec.dim} seed={rec.seed} "
                    f"frac_train={rec.frac_train_on_margin:.3f} "
                    f"frac_test={rec.frac_test_on_or_above_margin:.3f} "
                    f"loss={rec.final_loss:.3e} residual={rec.kkt_residual:.3e} "
                    f"({rec.wall_time_s:.1f}s)"
                    if not rec.diverged
                    else f"d={rec.dim} seed={rec.seed} DIVERGED"
                )

    aggregates = []
    for dim in sorted(cfg.dims):
        cells = [r for r in records if r.dim == dim and not r.diverged]
        if not cells:
            continue
        ft = np.array([r.frac_train_on_margin for r in cells])
        fx = np.array([r.frac_test_on_or_above_margin for r in cells])
        aggregates.append(
            AggregateRecord(
                dim=dim,
                n_cells=len(cells),
                frac_train_on_margin_mean=float(np.mean(ft)),
                frac_train_on_margin_std=float(np.std(ft)),
                frac_test_on_or_above_margin_mean=float(np.mean(fx)),
                frac_test_on_or_above_margin_std=float(np.std(fx)),
                final_loss_mean=float(np.mean([r.final_loss for r in cells])),
                margin_mean=float(np.mean([r.margin for r in cells])),
                kkt_residual_mean=float(np.mean([r.kkt_residual for r in cells])),
            )
        )
    return MarginExperimentResult(tuple(records), tuple(aggregates))


@dataclass(frozen=True)
class ReconstructionReport:
    """Candidate set and its match against the true training points."""

    seed: int
    candidates: reconstruct.CandidateSet
    true_points: tuple[float, ...]
    n_matched: int
    matched_fraction: float
    margin: float
    final_loss: float
    kkt_residual: float
    used_single_recovery: bool
    retries: int
    degenerate: bool


def _uniform_1d_dataset(n: int, seed: int) -> LabeledDataset:
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-2.0, 2.0, size=(n, 1))
    ys = rng.choice([-1.0, 1.0], size=n)
    return LabeledDataset(xs, ys)


def _two_cluster_1d_dataset(n: int, seed: int, gap: float = 1.5, spread: float = 0.4) -> LabeledDataset:
    rng = np.random.default_rng(seed)
    n_left = n // 2
    left = rng.uniform(-gap / 2 - spread, -gap / 2, size=n_left)
    right = rng.uniform(gap / 2, gap / 2 + spread, size=n - n_left)
    xs = np.concatenate([left, right]).reshape(-1, 1)
    ys = np.concatenate([-np.ones(n_left), np.ones(n - n_left)])
    return LabeledDataset(xs, ys)


def _recon_dataset(cfg: ExperimentConfig, seed: int) -> LabeledDataset:
    if cfg.recon_data_scheme == "two-clusters":
        return _two_cluster_1d_dataset(cfg.n_train, seed)
    return _uniform_1d_dataset(cfg.n_train, seed)


def match_candidates(
    points, true_points, tol: float = RECONSTRUCTION_MATCH_TOL
) -> int:
    """How many candidates sit within ``tol`` of some true point."""
    true_arr = np.asarray(true_points, dtype=float)
    return sum(
        1 for p in points if true_arr.size and float(np.min(np.abs(true_arr - p))) <= tol
    )


def run_reconstruction_pipeline(
    cfg: ExperimentConfig, seed: int | None = None, data: LabeledDataset | None = None
) -> ReconstructionReport:
    """Train on univariate data, self-derive the margin, run the attack.

    Default data is uniform on [-2, 2] with random labels.  For a one-point
    dataset and width 1 the closed-form single-neuron recovery is used.
    Dead random inits (possible at tiny widths) are retried with a shifted
    seed, deterministically.
    """
    if cfg.dims != (1,):
        raise ValueError("reconstruction pipeline needs dims == (1,)")
    if seed is None:
        seed = cfg.seeds[0]
    data_seed, _, init_seed = _cell_seeds(seed)
    if data is None:
        data = _recon_dataset(cfg, data_seed)
    if data.dim != 1:
        raise ValueError("reconstruction pipeline needs univariate data")

    net, trace, retries = training.train_non_degenerate(
        data,
        replace(cfg.train, rng_seed=init_seed),
        require_targets_met=cfg.recon_require_convergence,
    )
    m, _ = kkt.margin(net, data)
    true_points = tuple(float(x) for x in data.points[:, 0])
    final = trace.final()

    if data.size == 1 and cfg.train.width == 1:
        x_hat = reconstruct.recover_single(net, m)
        candidates = reconstruct.CandidateSet((x_hat,), ("crossing",))
        n_matched = match_candidates(candidates.points, true_points)
        return ReconstructionReport(
            seed=seed,
            candidates=candidates,
            true_points=true_points,
            n_matched=n_matched,
            matched_fraction=n_matched / 1.0,
            margin=m,
            final_loss=final.loss,
            kkt_residual=final.kkt_residual,
            used_single_recovery=True,
            retries=retries,
            degenerate=False,
        )

    pl = to_piecewise_linear(net)
    candidates = reconstruct.build_candidate_set(pl, m)
    n_matched = match_candidates(candidates.points, true_points)
    frac = n_matched / len(candidates) if len(candidates) else 0.0
    return ReconstructionReport(
        seed=seed,
        candidates=candidates,
        true_points=true_points,
        n_matched=n_matched,
        matched_fraction=frac,
        margin=m,
        final_loss=final.loss,
        kkt_residual=final.kkt_residual,
        used_single_recovery=False,
        retries=retries,
        degenerate=candidates.degenerate,
    )


def run_reconstruction_sweep(cfg: ExperimentConfig, log=None) -> list[ReconstructionReport]:
    reports = []
    for seed in sorted(cfg.seeds):
        rep = run_reconstruction_pipeline(cfg, seed)
        reports.append(rep)
        if log is not None:
            log(
                f"seed={rep.seed} candidates={len(rep.candidates)} "
                f"matched={rep.n_matched} fraction={rep.matched_fraction:.2f} "
                f"margin={rep.margin:.3e}"
            )
    return reports


def _fmt(x: float) -> str:
    return repr(float(x))


def write_margin_results_csv(
    result: MarginExperimentResult, path, metadata: str = ""
) -> None:
    """Cells sorted by (d, seed), then per-d aggregate rows with seed='mean'.

    Timestamps and timings appear only on the leading metadata comment line,
    so reruns with identical inputs produce byte-identical bodies.
    """
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# margin-experiment {metadata}\n")
        writer = csv.writer(fh)
        writer.writerow(MARGIN_CSV_COLUMNS)
        for r in result.records:
            writer.writerow(
                [r.dim, r.seed, _fmt(r.frac_train_on_margin),
                 _fmt(r.frac_test_on_or_above_margin), _fmt(r.final_loss),
                 _fmt(r.margin), _fmt(r.kkt_residual), int(r.diverged)]
            )
        for a in result.aggregates:
            writer.writerow(
                [a.dim, "mean", _fmt(a.frac_train_on_margin_mean),
                 _fmt(a.frac_test_on_or_above_margin_mean), _fmt(a.final_loss_mean),
                 _fmt(a.margin_mean), _fmt(a.kkt_residual_mean), 0]
            )


def write_margin_plot_csv(result: MarginExperimentResult, path, metadata: str = "") -> None:
    """Plot-ready CSV: x = d, mean fractions, std over seeds as y_err."""
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# margin-experiment-plot {metadata}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["d", "frac_train_on_margin_mean", "frac_train_on_margin_std",
             "frac_test_on_or_above_margin_mean", "frac_test_on_or_above_margin_std"]
        )
        for a in result.aggregates:
            writer.writerow(
                [a.dim, _fmt(a.frac_train_on_margin_mean),
                 _fmt(a.frac_train_on_margin_std),
                 _fmt(a.frac_test_on_or_above_margin_mean),
                 _fmt(a.frac_test_on_or_above_margin_std)]
            )


def write_reconstruction_csv(
    reports: list[ReconstructionReport], path, metadata: str = ""
) -> None:
    """Per-seed reconstruction outcomes plus a success-rate summary row."""
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# reconstruction-experiment {metadata}\n")
        writer = csv.writer(fh)
        writer.writerow(RECON_CSV_COLUMNS)
        for r in reports:
            writer.writerow(
                [r.seed, len(r.candidates), r.n_matched, _fmt(r.matched_fraction),
                 _fmt(r.margin), _fmt(r.final_loss), _fmt(r.kkt_residual),
                 int(r.degenerate)]
            )
        ok = [r for r in reports if r.matched_fraction >= reconstruct.GUARANTEED_FRACTION]
        writer.writerow(
            ["success-rate", len(reports), len(ok), _fmt(len(ok) / len(reports)),
             "", "", "", ""]
        )


# --- flat key=value config files -------------------------------------------

_INT_KEYS = ("width", "n_train", "n_test", "max_steps", "checkpoint_every")
_FLOAT_KEYS = (
    "margin_slack", "mixture_mean_coord", "init_scale", "learning_rate",
    "lr_growth", "loss_target", "kkt_residual_target",
)
_LIST_KEYS = ("dims", "seeds")
_STR_KEYS = ("loss_kind", "out_dir", "recon_data_scheme")
_BOOL_KEYS = ("ensure_active_neuron", "recon_require_convergence")
_ALL_KEYS = _INT_KEYS + _FLOAT_KEYS + _LIST_KEYS + _STR_KEYS + _BOOL_KEYS


def parse_flat_config(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment.

    Lists are comma-separated integers and may be wrapped in brackets.
    """
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FileFormatError(f"line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _ALL_KEYS:
            raise FileFormatError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise FileFormatError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _LIST_KEYS:
                val = val.strip("[]")
                values[key] = tuple(int(tok.strip()) for tok in val.split(",") if tok.strip())
            elif key in _INT_KEYS:
                values[key] = int(val)
            elif key in _FLOAT_KEYS:
                values[key] = float(val)
            elif key in _BOOL_KEYS:
                if val.lower() not in ("true", "false"):
                    raise ValueError(f"expected true/false, got {val!r}")
                values[key] = val.lower() == "true"
            else:
                values[key] = val
        except ValueError as exc:
            raise FileFormatError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return values


def config_from_file(path, overrides: dict | None = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a flat config file."""
    values = parse_flat_config(Path(path).read_text())
    if overrides:
        values.update(overrides)
    if "dims" not in values or "seeds" not in values:
        raise FileFormatError("config must set dims and seeds")
    if "width" not in values:
        raise FileFormatError("config must set width")

    train_kwargs = {"width": values["width"]}
    for key in ("loss_kind", "init_scale", "learning_rate", "lr_growth", "max_steps",
                "loss_target", "kkt_residual_target", "checkpoint_every",
                "ensure_active_neuron"):
        if key in values:
            train_kwargs[key] = values[key]
    try:
        train_cfg = training.TrainConfig(**train_kwargs)
        return ExperimentConfig(
            dims=values["dims"],
            seeds=values["seeds"],
            train=train_cfg,
            n_train=values.get("n_train", 20),
            n_test=values.get("n_test", 1000),
            margin_slack=values.get("margin_slack", 0.1),
            mixture_mean_coord=values.get("mixture_mean_coord", 1.0),
            recon_data_scheme=values.get("recon_data_scheme", "uniform-random"),
            recon_require_convergence=values.get("recon_require_convergence", False),
            out_dir=Path(values["out_dir"]) if "out_dir" in values else None,
        )
    except ValueError as exc:
        raise FileFormatError(f"invalid config: {exc}") from exc

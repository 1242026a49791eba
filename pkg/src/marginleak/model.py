"""Two-layer homogeneous ReLU networks and their univariate piecewise-linear form.

A network is x -> sum_j v_j * max(0, w_j . x + b_j).  Scaling every parameter
by a factor c scales the output by c**2, so the architecture is homogeneous of
degree 2.  For one-dimensional inputs the function is piecewise linear with
kinks at -b_j / w_j; this module exposes that structure explicitly because the
reconstruction attack operates on it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, FileFormatError

MODEL_FORMAT_VERSION = 1

# A neuron only defines a breakpoint when its input weight is meaningfully
# nonzero; below this (relative) threshold -b/w is numerically meaningless.
DEAD_WEIGHT_REL_TOL = 1e-12

# Breakpoints closer than this fraction of the total breakpoint range are
# collapsed into a single segment boundary.  Coinciding breakpoints are the
# generic outcome at stationarity, and exact float equality is unreliable.
BREAKPOINT_MERGE_REL_TOL = 1e-9

CONTINUITY_REL_TOL = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class NetworkParams:
    """Parameters of a width-k network on d-dimensional inputs.

    ``weights`` has shape (k, d); ``biases`` and ``out_weights`` have shape
    (k,).  Instances are immutable: the arrays are stored read-only.
    """

    weights: np.ndarray
    biases: np.ndarray
    out_weights: np.ndarray

    def __post_init__(self):
        w = _readonly(self.weights)
        if w.ndim != 2:
            raise ValueError(f"weights must be 2-d (k, d), got shape {w.shape}")
        b = _readonly(self.biases)
        v = _readonly(self.out_weights)
        k = w.shape[0]
        if b.shape != (k,) or v.shape != (k,):
            raise ValueError(
                f"biases/out_weights must have shape ({k},), got {b.shape} and {v.shape}"
            )
        if k < 1 or w.shape[1] < 1:
            raise ValueError("network needs width >= 1 and input_dim >= 1")
        for arr in (w, b, v):
            if not np.all(np.isfinite(arr)):
                raise ValueError("network parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "out_weights", v)

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def width(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def from_neurons(cls, neurons) -> "NetworkParams":
        """Build from an iterable of (w, b, v) triples."""
        ws, bs, vs = [], [], []
        for w, b, v in neurons:
            ws.append(np.atleast_1d(np.asarray(w, dtype=float)))
            bs.append(float(b))
            vs.append(float(v))
        return cls(np.array(ws, dtype=float), np.array(bs), np.array(vs))

    def neurons(self):
        """Iterate over (w, b, v) triples."""
        for j in range(self.width):
            yield self.weights[j], float(self.biases[j]), float(self.out_weights[j])

    def scaled(self, factor: float) -> "NetworkParams":
        """Multiply every parameter by ``factor`` (output scales by factor**2)."""
        return NetworkParams(
            self.weights * factor, self.biases * factor, self.out_weights * factor
        )

    def parameter_vector(self) -> np.ndarray:
        """Flatten to a single vector, ordered (weights, biases, out_weights)."""
        return np.concatenate([self.weights.ravel(), self.biases, self.out_weights])

    def parameter_norm(self) -> float:
        return float(np.linalg.norm(self.parameter_vector()))


def params_from_vector(vec: np.ndarray, input_dim: int, width: int) -> NetworkParams:
    """Inverse of :meth:`NetworkParams.parameter_vector`."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (width * (input_dim + 2),):
        raise ValueError(f"expected length {width * (input_dim + 2)}, got {vec.shape}")
    w = vec[: width * input_dim].reshape(width, input_dim)
    b = vec[width * input_dim : width * (input_dim + 1)]
    v = vec[width * (input_dim + 1) :]
    return NetworkParams(w, b, v)


@dataclass(frozen=True)
class LabeledDataset:
    """Binary-classification data: points (n, d), labels in {-1, +1}."""

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = _readonly(self.points)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"points must be a nonempty (n, d) array, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("points must be finite")
        y = np.array(self.labels, dtype=float)
        if y.shape != (x.shape[0],):
            raise ValueError(f"labels must have shape ({x.shape[0]},), got {y.shape}")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        y.setflags(write=False)
        object.__setattr__(self, "points", x)
        object.__setattr__(self, "labels", y)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def forward(net: NetworkParams, x) -> float:
    """Evaluate the network at a single point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (net.input_dim,):
        raise DimensionMismatchError(
            f"input has shape {x.shape}, network expects ({net.input_dim},)"
        )
    pre = net.weights @ x + net.biases
    return float(np.maximum(pre, 0.0) @ net.out_weights)


def forward_batch(net: NetworkParams, xs: np.ndarray) -> np.ndarray:
    """Evaluate the network at every row of ``xs`` (shape (n, d))."""
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 2 or xs.shape[1] != net.input_dim:
        raise DimensionMismatchError(
            f"inputs have shape {xs.shape}, network expects (n, {net.input_dim})"
        )
    pre = xs @ net.weights.T + net.biases
    return np.maximum(pre, 0.0) @ net.out_weights


def _require_univariate(net: NetworkParams) -> None:
    if net.input_dim != 1:
        raise DimensionMismatchError(
            f"operation requires a univariate network, got input_dim={net.input_dim}"
        )


def _live_weight_mask(net: NetworkParams) -> np.ndarray:
    w = net.weights[:, 0]
    return np.abs(w) > DEAD_WEIGHT_REL_TOL * max(1.0, float(np.max(np.abs(w))))


def breakpoints(net: NetworkParams) -> list[tuple[float, int]]:
    """Kink locations -b_j / w_j of a univariate network.

    Neurons whose input weight is numerically zero contribute no breakpoint.
    Returned sorted ascending by location (ties ordered by neuron index).
    """
    _require_univariate(net)
    live = _live_weight_mask(net)
    pairs = [
        (float(-net.biases[j] / net.weights[j, 0]), j)
        for j in range(net.width)
        if live[j]
    ]
    pairs.sort()
    return pairs


@dataclass(frozen=True)
class PiecewiseLinear:
    """A continuous piecewise-linear function on the real line.

    ``breakpoints`` is strictly increasing with B entries; ``slopes`` and
    ``intercepts`` have B + 1 entries, segment i covering
    (breakpoints[i-1], breakpoints[i]) with the two unbounded end segments.
    Segment values are slope * x + intercept in global coordinates.
    """

    breakpoints: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray

    def __post_init__(self):
        bp = _readonly(np.atleast_1d(self.breakpoints))
        sl = _readonly(np.atleast_1d(self.slopes))
        ic = _readonly(np.atleast_1d(self.intercepts))
        if sl.shape != ic.shape or sl.shape != (bp.shape[0] + 1,):
            raise ValueError(
                f"need len(slopes) == len(intercepts) == len(breakpoints) + 1, "
                f"got {sl.shape}, {ic.shape}, {bp.shape}"
            )
        if bp.size > 1 and not np.all(np.diff(bp) > 0):
            raise ValueError("breakpoints must be strictly increasing")
        for arr in (bp, sl, ic):
            if not np.all(np.isfinite(arr)):
                raise ValueError("piecewise-linear data must be finite")
        # The relative scale includes slope * span: a boundary that merged
        # several nearly coincident kinks carries a value mismatch up to
        # slope * merge-radius, which is CONTINUITY_REL_TOL * slope * span.
        span = float(bp[-1] - bp[0]) if bp.size > 1 else 0.0
        for i, x in enumerate(bp):
            left = sl[i] * x + ic[i]
            right = sl[i + 1] * x + ic[i + 1]
            scale = max(
                1.0, abs(left), abs(right),
                (abs(sl[i]) + abs(sl[i + 1])) * max(1.0, span),
            )
            if abs(left - right) > CONTINUITY_REL_TOL * scale:
                raise ValueError(
                    f"discontinuity at breakpoint {x}: {left} vs {right}"
                )
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "slopes", sl)
        object.__setattr__(self, "intercepts", ic)

    @property
    def n_segments(self) -> int:
        return self.slopes.shape[0]

    def segment_bounds(self, i: int) -> tuple[float, float]:
        """(left, right) endpoints of segment i; end segments are unbounded."""
        left = -np.inf if i == 0 else float(self.breakpoints[i - 1])
        right = np.inf if i == self.n_segments - 1 else float(self.breakpoints[i])
        return left, right

    def value(self, x):
        """Evaluate at scalar or array ``x``."""
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.breakpoints, x, side="right")
        out = self.slopes[idx] * x + self.intercepts[idx]
        return float(out) if out.ndim == 0 else out


def _merge_locations(locs: np.ndarray) -> np.ndarray:
    """Collapse locations closer than the merge tolerance into their mean."""
    if locs.size == 0:
        return locs
    locs = np.sort(locs)
    span = float(locs[-1] - locs[0])
    tol = BREAKPOINT_MERGE_REL_TOL * span
    merged = []
    cluster = [locs[0]]
    for x in locs[1:]:
        if x - cluster[-1] <= tol:
            cluster.append(x)
        else:
            merged.append(float(np.mean(cluster)))
            cluster = [x]
    merged.append(float(np.mean(cluster)))
    return np.array(merged)


def to_piecewise_linear(net: NetworkParams) -> PiecewiseLinear:
    """Exact piecewise-linear form of a univariate network.

    Breakpoints come from neurons with nonzero input weight and nonzero
    output weight; boundaries across which the function does not actually
    change (slope and intercept both equal) are dropped.
    """
    _require_univariate(net)
    live = _live_weight_mask(net) & (net.out_weights != 0.0)
    locs = _merge_locations(
        -net.biases[live] / net.weights[live, 0]
    )

    w = net.weights[:, 0]
    b = net.biases
    v = net.out_weights

    def segment_at(x_rep: float) -> tuple[float, float]:
        active = w * x_rep + b > 0.0
        return float(np.sum(v[active] * w[active])), float(np.sum(v[active] * b[active]))

    if locs.size == 0:
        slope, intercept = segment_at(0.0)
        return PiecewiseLinear(np.empty(0), np.array([slope]), np.array([intercept]))

    span = max(1.0, float(locs[-1] - locs[0]))
    reps = [float(locs[0]) - span]
    for a, c in zip(locs[:-1], locs[1:]):
        reps.append(float((a + c) / 2.0))
    reps.append(float(locs[-1]) + span)

    slopes, intercepts = zip(*(segment_at(r) for r in reps))
    slopes = np.array(slopes)
    intercepts = np.array(intercepts)

    # Drop boundaries with no actual change of linearity (e.g. neurons whose
    # contributions cancel); tolerance is relative to the overall scale.
    sl_tol = 1e-12 * max(1.0, float(np.max(np.abs(slopes))))
    ic_tol = 1e-12 * max(1.0, float(np.max(np.abs(intercepts))))
    keep_bp = [
        i
        for i in range(locs.size)
        if abs(slopes[i + 1] - slopes[i]) > sl_tol
        or abs(intercepts[i + 1] - intercepts[i]) > ic_tol
    ]
    seg_keep = [0] + [i + 1 for i in keep_bp]
    return PiecewiseLinear(locs[keep_bp], slopes[seg_keep], intercepts[seg_keep])


def save_network(net: NetworkParams, path) -> None:
    """Write the versioned model document (JSON, full round-trip precision)."""
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "input_dim": net.input_dim,
        "width": net.width,
        "neurons": [
            {"w": list(map(float, w)), "b": b, "v": v} for w, b, v in net.neurons()
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_network(path) -> NetworkParams:
    """Read a model document written by :func:`save_network`."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"not a valid model document: {exc}") from exc
    try:
        if doc["format_version"] != MODEL_FORMAT_VERSION:
            raise FileFormatError(
                f"unsupported model format_version {doc['format_version']!r}"
            )
        neurons = [(n["w"], n["b"], n["v"]) for n in doc["neurons"]]
        net = NetworkParams.from_neurons(neurons)
        if net.input_dim != doc["input_dim"] or net.width != doc["width"]:
            raise FileFormatError("declared input_dim/width do not match neurons")
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"malformed model document: {exc}") from exc
    return net

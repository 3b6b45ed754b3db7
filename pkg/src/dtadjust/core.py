"""Data model: datasets, covariate design matrices and threshold grids."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateColumnWarning,
    EmptyArm,
    EmptySpec,
    LabelOutOfRange,
    NonFinite,
    SingletonSupportWarning,
    UnknownColumn,
)

GRID_KINDS = ("discrete-support", "quantile-grid", "user-supplied")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Outcomes ``y``, integer arm labels ``w`` in ``0..n_arms-1`` and covariates ``x``."""

    y: np.ndarray
    w: np.ndarray
    x: np.ndarray
    n_arms: int
    covariate_names: tuple[str, ...]
    arm_labels: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def arm_counts(self) -> np.ndarray:
        return np.bincount(self.w, minlength=self.n_arms)

    @property
    def arm_shares(self) -> np.ndarray:
        return self.arm_counts / self.n

    def arm_mask(self, k: int) -> np.ndarray:
        return self.w == k


def validate_dataset(y, w, x=None, *, n_arms: int | None = None,
                     covariate_names: Sequence[str] | None = None,
                     arm_labels: Sequence[str] | None = None) -> Dataset:
    """Check raw columns and assemble an immutable :class:`Dataset`.

    ``n_arms`` defaults to ``max(w) + 1``.  Raises :class:`NonFinite`,
    :class:`LabelOutOfRange` or :class:`EmptyArm`.
    """
    y = np.array(y, dtype=np.float64).reshape(-1)
    n = y.shape[0]
    if n < 1:
        raise EmptyArm(0)
    w_raw = np.asarray(w).reshape(-1)
    if w_raw.shape[0] != n:
        raise ValueError(f"treatment column has {w_raw.shape[0]} rows, outcome has {n}")
    if x is None:
        x = np.empty((n, 0))
    x = np.array(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[0] != n:
        raise ValueError(f"covariate matrix has {x.shape[0]} rows, outcome has {n}")
    if covariate_names is None:
        covariate_names = [f"x{c + 1}" for c in range(x.shape[1])]
    covariate_names = tuple(str(c) for c in covariate_names)
    if len(covariate_names) != x.shape[1]:
        raise ValueError("covariate_names length does not match covariate columns")

    bad = ~np.isfinite(y)
    if bad.any():
        raise NonFinite(int(np.argmax(bad)), "y")
    bad = ~np.isfinite(x)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise NonFinite(int(row), covariate_names[col])

    w_float = np.asarray(w_raw, dtype=np.float64)
    not_int = ~np.isfinite(w_float) | (w_float != np.round(w_float)) | (w_float < 0)
    if not_int.any():
        row = int(np.argmax(not_int))
        raise LabelOutOfRange(row, w_raw[row], n_arms or 0)
    w_int = w_float.astype(np.int64)
    if n_arms is None:
        n_arms = int(w_int.max()) + 1
    over = w_int >= n_arms
    if over.any():
        row = int(np.argmax(over))
        raise LabelOutOfRange(row, w_raw[row], n_arms)
    counts = np.bincount(w_int, minlength=n_arms)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise EmptyArm(int(empty[0]))
    if arm_labels is None:
        arm_labels = [str(k) for k in range(n_arms)]
    return Dataset(
        y=_frozen(y),
        w=_frozen(w_int),
        x=_frozen(x),
        n_arms=int(n_arms),
        covariate_names=covariate_names,
        arm_labels=tuple(str(a) for a in arm_labels),
    )


@dataclass(frozen=True)
class TransformSpec:
    """Declarative covariate transform.

    ``linear`` lists the columns entering linearly (``None`` means all),
    ``poly`` maps a column to the highest power added on top of the linear
    term, and ``interactions`` adds every pairwise product of the linear
    columns.  Columns are given by name or position.
    """

    intercept: bool = True
    linear: tuple | None = None
    poly: Mapping = field(default_factory=dict)
    interactions: bool = False

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "linear": None if self.linear is None else list(self.linear),
            "poly": {str(k): int(v) for k, v in dict(self.poly).items()},
            "interactions": self.interactions,
        }

    @classmethod
    def from_dict(cls, spec: Mapping) -> "TransformSpec":
        linear = spec.get("linear")
        return cls(
            intercept=bool(spec.get("intercept", True)),
            linear=None if linear is None else tuple(linear),
            poly=dict(spec.get("poly", {})),
            interactions=bool(spec.get("interactions", False)),
        )

    @classmethod
    def intercept_only(cls) -> "TransformSpec":
        return cls(intercept=True, linear=())


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    t: np.ndarray
    transform_spec: TransformSpec
    column_names: tuple[str, ...]

    @property
    def d(self) -> int:
        return self.t.shape[1]

    def rows(self, mask: np.ndarray) -> np.ndarray:
        return self.t[mask]


def _resolve_column(ref, names: tuple[str, ...]) -> int:
    if isinstance(ref, (int, np.integer)) and not isinstance(ref, bool):
        if 0 <= ref < len(names):
            return int(ref)
        raise UnknownColumn(f"covariate index {ref} out of range (p={len(names)})")
    if ref in names:
        return names.index(ref)
    raise UnknownColumn(f"unknown covariate column {ref!r}; available: {list(names)}")


def build_design_matrix(data: Dataset, spec: TransformSpec | None = None) -> DesignMatrix:
    """Row-wise transform of the raw covariates, intercept first."""
    spec = spec or TransformSpec()
    names = data.covariate_names
    x = data.x
    linear = range(len(names)) if spec.linear is None else spec.linear
    lin_idx = [_resolve_column(c, names) for c in linear]

    cols: list[np.ndarray] = []
    labels: list[str] = []
    if spec.intercept:
        cols.append(np.ones(data.n))
        labels.append("1")
    for c in lin_idx:
        cols.append(x[:, c])
        labels.append(names[c])
    for ref, degree in dict(spec.poly).items():
        c = _resolve_column(ref, names)
        for power in range(2, int(degree) + 1):
            cols.append(x[:, c] ** power)
            labels.append(f"{names[c]}^{power}")
    if spec.interactions:
        for a, b in combinations(lin_idx, 2):
            cols.append(x[:, a] * x[:, b])
            labels.append(f"{names[a]}*{names[b]}")
    if not cols:
        raise UnknownColumn("transform produces an empty design")
    t = np.column_stack(cols).astype(np.float64)

    if data.n > 1:
        start = 1 if spec.intercept else 0
        for c in range(start, t.shape[1]):
            if np.ptp(t[:, c]) == 0.0:
                warnings.warn(f"design column {labels[c]!r} has zero variance",
                              DegenerateColumnWarning, stacklevel=2)
    d = t.shape[1]
    if d > int(data.arm_counts.min()) - 1:
        warnings.warn(f"design has d={d} columns but the smallest arm has "
                      f"{int(data.arm_counts.min())} rows", DegenerateColumnWarning,
                      stacklevel=2)
    return DesignMatrix(t=_frozen(t), transform_spec=spec, column_names=tuple(labels))


@dataclass(frozen=True, eq=False)
class ThresholdGrid:
    values: np.ndarray
    kind: str
    # true when the grid is the complete observed support (no truncation)
    covers_support: bool = False

    def __post_init__(self):
        v = self.values
        if v.ndim != 1 or v.size < 1:
            raise EmptySpec("threshold grid must contain at least one value")
        if not np.all(np.isfinite(v)):
            raise EmptySpec("threshold grid values must be finite")
        if v.size > 1 and not np.all(np.diff(v) > 0):
            raise EmptySpec("threshold grid must be strictly increasing")
        if self.kind not in GRID_KINDS:
            raise EmptySpec(f"unknown grid kind {self.kind!r}")

    def __len__(self) -> int:
        return self.values.size

    def same_as(self, other: "ThresholdGrid") -> bool:
        return self.values.shape == other.values.shape and bool(
            np.array_equal(self.values, other.values))


@dataclass(frozen=True)
class GridSpec:
    """How to place thresholds.

    ``kind="auto"`` picks discrete support for integer-valued outcomes or at
    most ``max_discrete`` distinct values and a quantile grid otherwise.
    """

    kind: str = "auto"
    n_points: int = 100
    bounds: tuple[float, float] = (0.02, 0.98)
    values: tuple[float, ...] | None = None
    lower: float | None = None
    upper: float | None = None
    max_discrete: int = 200

    @classmethod
    def from_dict(cls, spec: Mapping) -> "GridSpec":
        values = spec.get("values")
        return cls(
            kind=spec.get("kind", "auto"),
            n_points=int(spec.get("n_points", 100)),
            bounds=tuple(spec.get("bounds", (0.02, 0.98))),
            values=None if values is None else tuple(float(v) for v in values),
            lower=spec.get("lower"),
            upper=spec.get("upper"),
            max_discrete=int(spec.get("max_discrete", 200)),
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "n_points": self.n_points, "bounds": list(self.bounds),
            "values": None if self.values is None else list(self.values),
            "lower": self.lower, "upper": self.upper, "max_discrete": self.max_discrete,
        }


def empirical_quantile(sorted_y: np.ndarray, p) -> np.ndarray:
    """Left-continuous generalized inverse ``inf{y : F(y) >= p}`` of sorted data."""
    p = np.atleast_1d(np.asarray(p, dtype=np.float64))
    n = sorted_y.shape[0]
    # rounding guards against p*n landing just above an integer
    idx = np.ceil(np.round(p * n, 9)).astype(np.int64) - 1
    return sorted_y[np.clip(idx, 0, n - 1)]


def make_threshold_grid(data: Dataset | np.ndarray, spec: GridSpec | None = None) -> ThresholdGrid:
    spec = spec or GridSpec()
    y = data.y if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if y.size == 0:
        raise EmptySpec("no outcomes to build a grid from")
    kind = spec.kind
    if kind == "user-supplied":
        if not spec.values:
            raise EmptySpec("user-supplied grid needs values")
        return ThresholdGrid(np.unique(np.asarray(spec.values, dtype=np.float64)), kind)

    support = np.unique(y)
    if kind == "auto":
        integer_valued = bool(np.all(support == np.round(support)))
        kind = ("discrete-support" if integer_valued or support.size <= spec.max_discrete
                else "quantile-grid")
    if support.size == 1:
        warnings.warn("all outcomes are identical; grid has a single threshold",
                      SingletonSupportWarning, stacklevel=2)
        return ThresholdGrid(support.copy(), "discrete-support", covers_support=True)

    if kind == "discrete-support":
        lo = -math.inf if spec.lower is None else float(spec.lower)
        hi = math.inf if spec.upper is None else float(spec.upper)
        keep = (support >= lo) & (support <= hi)
        if not keep.any():
            raise EmptySpec(f"no observed outcomes inside [{lo}, {hi}]")
        return ThresholdGrid(support[keep], kind, covers_support=bool(keep.all()))
    if kind == "quantile-grid":
        if spec.n_points < 1:
            raise EmptySpec("quantile grid needs n_points >= 1")
        p_lo, p_hi = spec.bounds
        if not 0.0 < p_lo <= p_hi < 1.0 + 1e-12:
            raise EmptySpec(f"quantile bounds {spec.bounds} must lie in (0, 1]")
        probs = np.linspace(p_lo, p_hi, spec.n_points)
        values = np.unique(empirical_quantile(np.sort(y), probs))
        return ThresholdGrid(values, kind)
    raise EmptySpec(f"unknown grid kind {spec.kind!r}")

"""Curve datasets: time grid, labeled sets, CSV I/O, synthetic generator, folds.

CSV layout: the header's first cell names the label column (conventionally
``t``) and the remaining cells are the sampling instants; each data row is
``label, v_1, ..., v_m``.  Unlabeled files carry ``v_1, ..., v_m`` only.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from fmda.errors import ParseError, ValidationError


@dataclass(frozen=True)
class TimeGrid:
    """Shared, strictly increasing sampling instants ``t_1 < ... < t_m``."""

    times: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float).ravel()
        if t.size < 2:
            raise ValidationError("a time grid needs at least 2 points")
        if not np.all(np.isfinite(t)):
            raise ValidationError("time grid contains non-finite values")
        if np.any(np.diff(t) <= 0):
            bad = int(np.argmax(np.diff(t) <= 0))
            raise ValidationError(f"time grid not strictly increasing at position {bad + 1}")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @property
    def m(self) -> int:
        return self.times.size

    @classmethod
    def uniform(cls, m: int, start: float = 0.0, end: float = 1.0) -> "TimeGrid":
        return cls(np.linspace(start, end, m))

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.times, dtype="<f8").tobytes()).hexdigest()

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.times, other.times)

    def __hash__(self):
        return hash(self.digest())


@dataclass(frozen=True, eq=False)
class LabeledCurveSet:
    """Curves sampled on one grid, stored row-wise in ``values`` (n x m).

    ``labels`` holds class indices in ``1..G`` or is ``None`` for unlabeled
    data.  ``subclasses`` optionally records generator ground truth.
    """

    grid: TimeGrid
    values: np.ndarray
    labels: Optional[np.ndarray] = None
    n_classes: int = 0
    subclasses: Optional[np.ndarray] = None

    def __post_init__(self):
        m = self.grid.m
        vals = np.array(self.values, dtype=float)
        if vals.size == 0:
            vals = vals.reshape(0, m)
        if vals.ndim != 2 or vals.shape[1] != m:
            raise ValidationError(f"curves must be an n x {m} array, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("curve values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        G = int(self.n_classes)
        if self.labels is not None:
            lab = np.array(self.labels).ravel()
            if lab.size != vals.shape[0]:
                raise ValidationError(f"{lab.size} labels for {vals.shape[0]} curves")
            if lab.size and not np.all(lab == np.round(lab)):
                raise ValidationError("labels must be integers")
            lab = lab.astype(int)
            if G <= 0:
                G = int(lab.max()) if lab.size else 0
            if lab.size and (lab.min() < 1 or lab.max() > G):
                raise ValidationError(f"labels must lie in 1..{G}")
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "n_classes", G)
        if self.subclasses is not None:
            sub = np.array(self.subclasses, dtype=int).ravel()
            if sub.size != vals.shape[0]:
                raise ValidationError("subclass annotations must match the curve count")
            object.__setattr__(self, "subclasses", sub)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.grid.m

    @property
    def is_labeled(self) -> bool:
        return self.labels is not None

    def class_values(self, g: int) -> np.ndarray:
        return self.values[self.labels == g]

    def subset(self, index) -> "LabeledCurveSet":
        index = np.asarray(index, dtype=int)
        return LabeledCurveSet(
            self.grid,
            self.values[index],
            None if self.labels is None else self.labels[index],
            self.n_classes,
            None if self.subclasses is None else self.subclasses[index],
        )

    def __eq__(self, other):
        if not isinstance(other, LabeledCurveSet):
            return NotImplemented
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None and other.labels is not None and np.array_equal(self.labels, other.labels)
        )
        return (
            self.grid == other.grid
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
            and same_labels
        )

    __hash__ = None


# --------------------------------------------------------------------------- CSV


def _parse_float(cell: str, row: int, col: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"non-numeric cell {cell!r} at row {row}, column {col}") from None


def load_csv(path, has_labels: Optional[bool] = True) -> LabeledCurveSet:
    """Read a dataset CSV.

    ``has_labels=None`` infers the layout from the width of the first data row.
    Row numbers in error messages are 1-based file lines.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: missing header row")
    header = [c.strip() for c in rows[0]]
    try:
        float(header[0])
        time_cells = header
    except ValueError:
        time_cells = header[1:]
    times = [_parse_float(c, 1, j + 1 + (len(header) - len(time_cells))) for j, c in enumerate(time_cells)]
    grid = TimeGrid(np.array(times))
    m = grid.m
    body = rows[1:]
    if has_labels is None:
        has_labels = bool(body) and len(body[0]) == m + 1
    width = m + 1 if has_labels else m
    values = np.empty((len(body), m))
    labels = np.empty(len(body), dtype=int)
    for i, row in enumerate(body):
        lineno = i + 2
        if len(row) != width:
            raise ParseError(f"row {lineno} has {len(row)} cells, expected {width}")
        cells = [_parse_float(c.strip(), lineno, j + 1) for j, c in enumerate(row)]
        if has_labels:
            lab = cells[0]
            if lab != round(lab):
                raise ParseError(f"row {lineno}: label {row[0]!r} is not an integer")
            labels[i] = int(lab)
            values[i] = cells[1:]
        else:
            values[i] = cells
    if has_labels and len(body) and labels.min() < 1:
        raise ParseError("class labels must be >= 1")
    try:
        return LabeledCurveSet(grid, values, labels if has_labels else None)
    except ValidationError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def save_csv(dataset: LabeledCurveSet, path) -> None:
    """Write ``dataset`` in the :func:`load_csv` layout with round-trip float precision."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            lead = ["t"] if dataset.is_labeled else []
            writer.writerow(lead + [repr(float(t)) for t in dataset.grid.times])
            for i in range(dataset.n):
                cells = [repr(float(v)) for v in dataset.values[i]]
                if dataset.is_labeled:
                    cells.insert(0, str(int(dataset.labels[i])))
                writer.writerow(cells)
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc}") from exc


# ---------------------------------------------------------------------- generator


@dataclass(frozen=True)
class SubclassSpec:
    weight: float
    boundaries: tuple
    levels: tuple
    noise_std: tuple

    def __post_init__(self):
        b = tuple(float(x) for x in self.boundaries)
        lv = tuple(float(x) for x in self.levels)
        ns = self.noise_std
        if np.isscalar(ns):
            ns = (float(ns),) * len(lv)
        ns = tuple(float(x) for x in ns)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "levels", lv)
        object.__setattr__(self, "noise_std", ns)
        if not self.weight > 0:
            raise ValidationError("sub-class weight must be positive")
        if len(lv) != len(b) + 1 or len(ns) != len(lv):
            raise ValidationError("need len(levels) == len(noise_std) == len(boundaries) + 1")
        if any(not 0 < x < 1 for x in b) or any(np.diff(b) <= 0):
            raise ValidationError("regime boundaries must be strictly increasing in (0, 1)")
        if any(not s > 0 for s in ns):
            raise ValidationError("noise std must be > 0")


@dataclass(frozen=True)
class SyntheticSpec:
    classes: tuple  # per class: tuple of SubclassSpec
    curves_per_class: int = 100
    m: int = 200
    seed: int = 0
    t_start: float = 0.0
    t_end: float = 1.0

    def __post_init__(self):
        classes = tuple(tuple(c) for c in self.classes)
        object.__setattr__(self, "classes", classes)
        if not classes:
            raise ValidationError("at least one class required")
        for g, subs in enumerate(classes, start=1):
            if not subs:
                raise ValidationError(f"class {g} has no sub-classes")
            total = sum(s.weight for s in subs)
            if abs(total - 1.0) > 1e-9:
                raise ValidationError(f"class {g} sub-class weights sum to {total}, not 1")
        if self.curves_per_class < 1:
            raise ValidationError("curves_per_class must be >= 1")
        if self.m < 2 or not self.t_end > self.t_start:
            raise ValidationError("need m >= 2 and t_end > t_start")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        try:
            classes = [
                [
                    SubclassSpec(
                        weight=s["weight"],
                        boundaries=s["boundaries"],
                        levels=s["levels"],
                        noise_std=s["noise_std"],
                    )
                    for s in c["subclasses"]
                ]
                for c in d["classes"]
            ]
            return cls(
                classes=classes,
                curves_per_class=int(d.get("curves_per_class", 100)),
                m=int(d.get("m", 200)),
                seed=int(d.get("seed", 0)),
                t_start=float(d.get("t_start", 0.0)),
                t_end=float(d.get("t_end", 1.0)),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed synthetic spec: {exc!r}") from exc

    def to_dict(self) -> dict:
        return {
            "curves_per_class": self.curves_per_class,
            "m": self.m,
            "seed": self.seed,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "classes": [
                {
                    "subclasses": [
                        {
                            "weight": s.weight,
                            "boundaries": list(s.boundaries),
                            "levels": list(s.levels),
                            "noise_std": list(s.noise_std),
                        }
                        for s in subs
                    ]
                }
                for subs in self.classes
            ],
        }

    @classmethod
    def from_json(cls, path) -> "SyntheticSpec":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)


def default_synthetic_spec(seed: int = 0, curves_per_class: int = 100, m: int = 200) -> SyntheticSpec:
    """Two-class piecewise-constant benchmark: class 1 dispersed, class 2 homogeneous."""
    text = resources.files("fmda.data").joinpath("default_spec.json").read_text()
    d = json.loads(text)
    d.update(seed=seed, curves_per_class=curves_per_class, m=m)
    return SyntheticSpec.from_dict(d)


def generate_synthetic(spec: SyntheticSpec) -> LabeledCurveSet:
    """Draw ``curves_per_class`` step curves per class with Gaussian noise.

    Sub-class membership is kept in ``subclasses`` (1-based within the class).
    """
    rng = np.random.default_rng(spec.seed)
    grid = TimeGrid.uniform(spec.m, spec.t_start, spec.t_end)
    frac = (grid.times - grid.times[0]) / (grid.times[-1] - grid.times[0])
    rows, labels, subs = [], [], []
    for g, subclasses in enumerate(spec.classes, start=1):
        weights = np.array([s.weight for s in subclasses])
        draws = rng.choice(len(subclasses), size=spec.curves_per_class, p=weights / weights.sum())
        for k in draws:
            s = subclasses[k]
            seg = np.searchsorted(np.array(s.boundaries), frac, side="right")
            mean = np.array(s.levels)[seg]
            std = np.array(s.noise_std)[seg]
            rows.append(mean + std * rng.standard_normal(spec.m))
            labels.append(g)
            subs.append(int(k) + 1)
    return LabeledCurveSet(grid, np.array(rows), np.array(labels), len(spec.classes), np.array(subs))


# -------------------------------------------------------------------------- folds


def curve_keys(dataset: LabeledCurveSet) -> list:
    """Content hash per curve, independent of row order."""
    keys = []
    for i in range(dataset.n):
        h = hashlib.sha1(np.ascontiguousarray(dataset.values[i], dtype="<f8").tobytes())
        if dataset.labels is not None:
            h.update(str(int(dataset.labels[i])).encode())
        keys.append(h.hexdigest())
    return keys


def split_kfold(dataset: LabeledCurveSet, k: int, seed: int = 0) -> list:
    """Stratified k-fold split as a list of ``(train_idx, test_idx)`` arrays.

    Curves are put in a canonical content order before the seeded shuffle, so
    the assignment of a given curve to a fold does not depend on row order.
    """
    if k < 2:
        raise ValidationError("k must be >= 2")
    if dataset.labels is None:
        raise ValidationError("stratified split requires labels")
    keys = curve_keys(dataset)
    rng = np.random.default_rng(seed)
    order = []
    for g in range(1, dataset.n_classes + 1):
        members = np.flatnonzero(dataset.labels == g)
        if members.size == 0:
            continue
        if members.size < k:
            raise ValidationError(f"class {g} has {members.size} curves, fewer than k={k}")
        members = sorted(members, key=lambda i: (keys[i], i))
        order.extend(np.asarray(members)[rng.permutation(len(members))])
    fold_of = np.empty(dataset.n, dtype=int)
    for pos, idx in enumerate(order):
        fold_of[idx] = pos % k
    splits = []
    for f in range(k):
        test = np.flatnonzero(fold_of == f)
        train = np.flatnonzero(fold_of != f)
        splits.append((train, test))
    return splits


def canonical_order(dataset: LabeledCurveSet, index: Sequence[int]) -> np.ndarray:
    """Return ``index`` sorted by curve content."""
    keys = curve_keys(dataset)
    return np.array(sorted(index, key=lambda i: (keys[i], i)), dtype=int)

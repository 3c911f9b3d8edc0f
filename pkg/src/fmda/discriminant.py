"""Model-based discriminant analysis for curves.

Each class gets its own fitted MixRHLP density; a new curve goes to the class
with the largest prior-weighted density.  The six method tags below cover
the single-model (FLDA) and mixture (FMDA) variants.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from fmda.basis import BasisSpec, build_design, logistic_covariates
from fmda.curves import LabeledCurveSet, TimeGrid
from fmda.errors import FmdaError, ShapeMismatchError, ValidationError
from fmda.kernels import log_sum_exp
from fmda.mixrhlp import (
    FitConfig,
    ModelShape,
    curve_log_densities,
    em_fit,
    model_from_dict,
    model_to_dict,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = "fmda-clf-v1"

METHOD_TAGS = (
    "FLDA-poly",
    "FLDA-spline",
    "FLDA-RHLP",
    "FMDA-polymix",
    "FMDA-splinemix",
    "FMDA-MixRHLP",
)

# tag -> (mixture?, regimes?, basis kind)
_TAG_LAYOUT = {
    "FLDA-poly": (False, False, "polynomial"),
    "FLDA-spline": (False, False, "bspline"),
    "FLDA-RHLP": (False, True, "polynomial"),
    "FMDA-polymix": (True, False, "polynomial"),
    "FMDA-splinemix": (True, False, "bspline"),
    "FMDA-MixRHLP": (True, True, "polynomial"),
}


@dataclass(frozen=True)
class MethodSpec:
    """A discrimination method and its per-class model shapes.

    ``K`` is a single sub-class count or one per class; ``R`` the regime count
    of every sub-class.  FLDA tags force ``K = 1`` and non-RHLP tags ``R = 1``.
    """

    tag: str
    K: tuple = (1,)
    R: int = 1
    basis: BasisSpec = field(default_factory=BasisSpec)

    def __post_init__(self):
        if self.tag not in _TAG_LAYOUT:
            raise ValidationError(f"unknown method {self.tag!r}; choose from {', '.join(METHOD_TAGS)}")
        mixture, regimes, kind = _TAG_LAYOUT[self.tag]
        K = (int(self.K),) if np.isscalar(self.K) else tuple(int(k) for k in self.K)
        if not mixture and any(k != 1 for k in K):
            raise ValidationError(f"{self.tag} is a single-model method; K must be 1")
        if not regimes and self.R != 1:
            raise ValidationError(f"{self.tag} has no hidden regimes; R must be 1")
        if self.basis.kind != kind:
            raise ValidationError(f"{self.tag} requires a {kind} basis")
        if any(k < 1 for k in K) or self.R < 1:
            raise ValidationError("K and R must be >= 1")
        object.__setattr__(self, "K", K)

    def shape_for(self, g: int) -> ModelShape:
        """Model shape of class ``g`` (1-based)."""
        K = self.K[g - 1] if len(self.K) > 1 else self.K[0]
        return ModelShape(K, (self.R,) * K, self.basis)

    @classmethod
    def default(cls, tag: str) -> "MethodSpec":
        """Default benchmark configuration for ``tag``."""
        poly6 = BasisSpec.polynomial(6)
        cubic = BasisSpec.bspline(4, 8)
        const = BasisSpec.polynomial(0)
        return {
            "FLDA-poly": lambda: cls(tag, 1, 1, poly6),
            "FLDA-spline": lambda: cls(tag, 1, 1, cubic),
            "FLDA-RHLP": lambda: cls(tag, 1, 3, const),
            "FMDA-polymix": lambda: cls(tag, 3, 1, poly6),
            "FMDA-splinemix": lambda: cls(tag, 3, 1, cubic),
            "FMDA-MixRHLP": lambda: cls(tag, (3, 1), 3, const),
        }[tag]()

    def to_dict(self) -> dict:
        return {"tag": self.tag, "K": list(self.K), "R": self.R, "basis": self.basis.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "MethodSpec":
        return cls(d["tag"], tuple(d["K"]), int(d["R"]), BasisSpec.from_dict(d["basis"]))

    def label(self) -> str:
        return self.tag


@dataclass
class Classifier:
    params: list  # MixRhlpParams per class
    shapes: list  # ModelShape per class
    priors: np.ndarray
    grid: TimeGrid
    method: MethodSpec
    diagnostics: list = field(default_factory=list)  # FitDiagnostics or dict per class

    def __post_init__(self):
        self.priors = np.asarray(self.priors, dtype=float)
        if np.any(self.priors <= 0) or abs(self.priors.sum() - 1.0) > 1e-12:
            raise ValidationError("class priors must be positive and sum to 1")
        self._designs = {}

    @property
    def n_classes(self) -> int:
        return len(self.params)

    def _design(self, g: int):
        shape = self.shapes[g - 1]
        key = shape.basis
        if key not in self._designs:
            self._designs[key] = build_design(shape.basis, self.grid)
        return self._designs[key], logistic_covariates(self.grid)

    def class_log_scores(self, curves) -> np.ndarray:
        """``n x G`` matrix of ``log w_g + log p(x_i | g)``."""
        X = np.asarray(getattr(curves, "values", curves), dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.grid.m:
            raise ShapeMismatchError(f"curves have {X.shape[1]} points, classifier grid has {self.grid.m}")
        scores = np.empty((X.shape[0], self.n_classes))
        for g in range(1, self.n_classes + 1):
            design, cov = self._design(g)
            scores[:, g - 1] = np.log(self.priors[g - 1]) + curve_log_densities(self.params[g - 1], X, design, cov)
        return scores

    def to_dict(self) -> dict:
        blocks = []
        for g in range(self.n_classes):
            diag = self.diagnostics[g] if g < len(self.diagnostics) else None
            if isinstance(diag, dict):
                block = model_to_dict(self.params[g], self.shapes[g], self.grid)
                block["diagnostics"] = diag
            else:
                block = model_to_dict(self.params[g], self.shapes[g], self.grid, diag)
            blocks.append(block)
        return {
            "version": FORMAT_VERSION,
            "method": self.method.to_dict(),
            "priors": self.priors.tolist(),
            "grid": self.grid.times.tolist(),
            "classes": blocks,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Classifier":
        if d.get("version") != FORMAT_VERSION:
            raise ValidationError(f"expected {FORMAT_VERSION} document, got {d.get('version')!r}")
        grid = TimeGrid(np.array(d["grid"]))
        params, shapes, diags = [], [], []
        for block in d["classes"]:
            if block.get("grid_sha256") != grid.digest():
                raise ValidationError("class block was fitted on a different time grid")
            p, s = model_from_dict(block)
            params.append(p)
            shapes.append(s)
            diags.append(block.get("diagnostics"))
        return cls(params, shapes, np.array(d["priors"]), grid, MethodSpec.from_dict(d["method"]), diags)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "Classifier":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class TrainingError(FmdaError):
    def __init__(self, g: int, cause: Exception):
        super().__init__(f"training failed for class {g}: {cause}")
        self.class_index = g
        self.cause = cause


def class_fit_config(cfg: FitConfig, g: int) -> FitConfig:
    """Per-class config with a seed derived from ``cfg.seed`` and the class index."""
    d = cfg.to_dict()
    d["seed"] = int(cfg.seed) * 1000 + g
    return FitConfig(**d)


def train(dataset: LabeledCurveSet, method: MethodSpec, cfg: Optional[FitConfig] = None) -> Classifier:
    """Fit one class density per label and set empirical class priors."""
    cfg = cfg or FitConfig()
    if not dataset.is_labeled:
        raise ValidationError("training requires labeled curves")
    G = dataset.n_classes
    counts = np.bincount(dataset.labels, minlength=G + 1)[1:]
    if np.any(counts == 0):
        raise ValidationError(f"class {int(np.argmin(counts)) + 1} has no training curves")
    params, shapes, diags = [], [], []
    for g in range(1, G + 1):
        shape = method.shape_for(g)
        try:
            res = em_fit(dataset.class_values(g), shape, dataset.grid, class_fit_config(cfg, g))
        except Exception as exc:
            raise TrainingError(g, exc) from exc
        logger.info("class %d: loglik %.4f, %d iterations", g, res.diagnostics.log_likelihood, res.diagnostics.iterations)
        params.append(res.params)
        shapes.append(shape)
        diags.append(res.diagnostics)
    priors = counts / counts.sum()
    return Classifier(params, shapes, priors, dataset.grid, method, diags)


def predict_proba(clf: Classifier, curves) -> np.ndarray:
    """Posterior class probabilities; one row per curve (a 1-D curve gives a 1-D vector)."""
    single = np.ndim(getattr(curves, "values", curves)) == 1
    scores = clf.class_log_scores(curves)
    proba = np.exp(scores - log_sum_exp(scores, axis=1)[:, None])
    return proba[0] if single else proba


def predict(clf: Classifier, curves) -> np.ndarray:
    """MAP class labels (1-based); ties go to the smallest class index."""
    scores = clf.class_log_scores(curves)
    return np.argmax(scores, axis=1) + 1

"""Cross-validated misclassification rates and the multi-method benchmark."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from fmda.curves import LabeledCurveSet, canonical_order, split_kfold
from fmda.discriminant import MethodSpec, predict, train
from fmda.errors import ValidationError
from fmda.mixrhlp import FitConfig

logger = logging.getLogger(__name__)


def misclassification_rate(predicted, truth) -> float:
    predicted = np.asarray(predicted).ravel()
    truth = np.asarray(truth).ravel()
    if predicted.size != truth.size:
        raise ValidationError(f"{predicted.size} predictions for {truth.size} labels")
    if truth.size == 0:
        raise ValidationError("misclassification rate of an empty sequence")
    return float(np.count_nonzero(predicted != truth)) / truth.size


@dataclass
class CvResult:
    """Per-fold error rates of one method; ``std`` is the population std over folds."""

    method: str
    fold_errors: list
    mean: float
    std: float
    fold_diagnostics: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)  # fold -> message

    @property
    def partial(self) -> bool:
        return bool(self.failures)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "fold_errors": list(self.fold_errors),
            "mean": self.mean,
            "std": self.std,
            "std_kind": "population",
            "partial": self.partial,
            "failures": {str(k): v for k, v in self.failures.items()},
            "fold_diagnostics": self.fold_diagnostics,
        }


def _summarize(errors):
    ok = [e for e in errors if e is not None]
    if not ok:
        return float("nan"), float("nan")
    arr = np.array(ok)
    return float(np.mean(arr)), float(np.std(arr))


def cross_validate(
    dataset: LabeledCurveSet,
    method: MethodSpec,
    k: int = 5,
    cfg: Optional[FitConfig] = None,
    seed: int = 0,
    splits=None,
) -> CvResult:
    """Stratified k-fold misclassification rate of ``method``.

    Training subsets are passed to the fitter in content order, so the result
    does not depend on the row order of ``dataset``.  A fold whose training
    fails is recorded in ``failures`` and left out of the mean.
    """
    cfg = cfg or FitConfig()
    splits = splits if splits is not None else split_kfold(dataset, k, seed)
    errors, diags, failures = [], [], {}
    for f, (train_idx, test_idx) in enumerate(splits):
        try:
            clf = train(dataset.subset(canonical_order(dataset, train_idx)), method, cfg)
        except Exception as exc:  # one bad fold must not sink the whole run
            logger.warning("%s fold %d failed: %s", method.tag, f, exc)
            failures[f] = str(exc)
            errors.append(None)
            diags.append(None)
            continue
        test = dataset.subset(test_idx)
        errors.append(misclassification_rate(predict(clf, test.values), test.labels))
        diags.append(
            [
                {"log_likelihood": d.log_likelihood, "iterations": d.iterations, "converged": d.converged}
                for d in clf.diagnostics
            ]
        )
    mean, std = _summarize(errors)
    return CvResult(method.tag, errors, mean, std, diags, failures)


def benchmark_table(
    dataset: LabeledCurveSet,
    methods: Sequence[MethodSpec],
    k: int = 5,
    cfg: Optional[FitConfig] = None,
    seed: int = 0,
) -> list:
    """Cross-validate every method on one shared set of folds."""
    splits = split_kfold(dataset, k, seed)
    results = []
    for method in methods:
        try:
            res = cross_validate(dataset, method, k, cfg, seed, splits=splits)
        except Exception as exc:
            logger.warning("%s failed: %s", method.tag, exc)
            res = CvResult(method.tag, [None] * k, float("nan"), float("nan"), [], {-1: str(exc)})
        results.append(res)
    return results


def results_csv(results: Sequence[CvResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "fold", "error"])
    for res in results:
        for f, e in enumerate(res.fold_errors):
            w.writerow([res.method, f + 1, "" if e is None else repr(float(e))])
    return buf.getvalue()


def results_json(results: Sequence[CvResult], extra: Optional[dict] = None) -> str:
    doc = {"results": [r.to_dict() for r in results]}
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=1, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o).__name__)


def format_table(results: Sequence[CvResult]) -> str:
    width = max([len("Method")] + [len(r.method) for r in results])
    lines = [
        f"{'Method':<{width}}  Misclassification error rate (%)",
        "-" * (width + 36),
    ]
    for r in results:
        if np.isnan(r.mean):
            cell = "failed"
        else:
            cell = f"{100 * r.mean:5.2f} +/- {100 * r.std:.2f}"
            if r.partial:
                cell += " (partial)"
        lines.append(f"{r.method:<{width}}  {cell}")
    lines.append("(+/- is the population standard deviation over folds)")
    return "\n".join(lines)

"""Reconstruction and uncertainty-quality metrics over whole volumes."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .exceptions import DomainError, UsageError
from .volume import VolumeGrid, interpolation_error_field, local_variance

PSNR_EXACT = "exact"
NLL_VAR_FLOOR = 1e-12


def _same_dims(a: VolumeGrid, b: VolumeGrid):
    if a.dims != b.dims:
        raise UsageError(f"dims mismatch: {a.dims} vs {b.dims}")


def psnr(gt: VolumeGrid, pred: VolumeGrid):
    """``20 log10(range / rmse)`` with range = gt max - min; ``"exact"`` when rmse is 0."""
    _same_dims(gt, pred)
    err = np.mean((gt.data - pred.data) ** 2)
    if err == 0.0:
        return PSNR_EXACT
    rng = float(gt.data.max() - gt.data.min())
    return 20.0 * math.log10(rng / math.sqrt(err))


def corr_fields(a: VolumeGrid, b: VolumeGrid) -> float:
    """Pearson correlation over all voxels. Constant input is an error here."""
    _same_dims(a, b)
    x = a.data.ravel() - a.data.mean()
    y = b.data.ravel() - b.data.mean()
    sxx, syy = float(x @ x), float(y @ y)
    if sxx == 0.0 or syy == 0.0:
        raise DomainError("correlation undefined for a constant field")
    return max(-1.0, min(1.0, float(x @ y) / math.sqrt(sxx * syy)))


def nll_gaussian_field(gt: VolumeGrid, mean: VolumeGrid, var: VolumeGrid):
    """Voxel-mean Gaussian NLL; returns ``(nll, n_clamped)``.

    Variances below 1e-12 are clamped and counted.
    """
    _same_dims(gt, mean)
    _same_dims(gt, var)
    v = var.data
    clamped = int(np.count_nonzero(v < NLL_VAR_FLOOR))
    v = np.maximum(v, NLL_VAR_FLOOR)
    nll = 0.5 * np.log(2.0 * np.pi * v) + (gt.data - mean.data) ** 2 / (2.0 * v)
    return float(nll.mean()), clamped


@dataclass
class EvalReport:
    psnr_db: float | str | None = None
    corr_eu_error: float | None = None
    corr_au_locvar: float | None = None
    corr_au_interp: float | None = None
    corr_au_gradient: float | None = None
    nll_eu: float | None = None
    nll_au: float | None = None
    nll_eu_clamped: int = 0
    nll_au_clamped: int = 0
    reconstruction_seconds: float | None = None
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text) -> "EvalReport":
        return cls(**json.loads(text))

    def csv_row(self, header=False) -> str:
        names = [f.name for f in fields(self) if f.name != "config"]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if header:
            writer.writerow(names)
        writer.writerow([getattr(self, n) for n in names])
        return buf.getvalue()


def evaluate(
    gt: VolumeGrid,
    mean: VolumeGrid,
    au: VolumeGrid | None = None,
    eu: VolumeGrid | None = None,
    locvar_window=(2, 2, 2),
    interp_factors=(4, 4, 4),
    squared_error=False,
    grad_mag: VolumeGrid | None = None,
    reconstruction_seconds=None,
) -> EvalReport:
    """Full metric set.

    All inputs are expected in the same units. The NLL columns and the
    uncertainty correlations use the fields as given, so pass normalized
    ``gt``/``mean`` when AU/EU are in normalized units.
    """
    report = EvalReport(
        psnr_db=psnr(gt, mean),
        reconstruction_seconds=reconstruction_seconds,
        config={"locvar_window": list(locvar_window), "interp_factors": list(interp_factors), "squared_error": squared_error},
    )
    diff = gt.data - mean.data
    error = gt.with_data(diff**2 if squared_error else np.abs(diff), norm=None, field_kind="error")
    if eu is not None:
        report.corr_eu_error = corr_fields(eu, error)
        report.nll_eu, report.nll_eu_clamped = nll_gaussian_field(gt, mean, eu)
    if au is not None:
        report.corr_au_locvar = corr_fields(au, local_variance(gt, locvar_window))
        report.corr_au_interp = corr_fields(au, interpolation_error_field(gt, interp_factors))
        if grad_mag is not None:
            report.corr_au_gradient = corr_fields(au, grad_mag)
        report.nll_au, report.nll_au_clamped = nll_gaussian_field(gt, mean, au)
    return report


CORRELATIONS = ("corr_eu_error", "corr_au_locvar", "corr_au_interp")
COMPARED = ("psnr_db",) + CORRELATIONS + ("corr_au_gradient", "nll_eu", "nll_au")


def ablation_compare(with_reg: EvalReport, without_reg: EvalReport) -> dict:
    """Signed differences (regularized minus unregularized) per metric.

    ``regularized_dominates`` is true when the regularized run is at least as
    good on all three correlation columns.
    """
    def setup(r):
        return {k: v for k, v in r.config.items() if k != "weights"}

    if setup(with_reg) != setup(without_reg):
        raise UsageError("reports differ in more than the loss weights")
    deltas = {}
    for name in COMPARED:
        a, b = getattr(with_reg, name), getattr(without_reg, name)
        if a is None or b is None or isinstance(a, str) or isinstance(b, str):
            deltas[name] = None
        else:
            deltas[name] = a - b
    dominates = all(deltas[c] is not None and deltas[c] >= 0 for c in CORRELATIONS)
    return {"deltas": deltas, "regularized_dominates": dominates}

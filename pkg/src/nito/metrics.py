"""Compliance and volume-fraction errors, outlier filtering and summaries."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from nito.errors import ParameterError

OUTLIER_CE = 1000.0
CSV_COLUMNS = ("id", "ce_percent", "vfe_percent", "c_gen", "c_ref", "t_field_s", "t_opt_s", "outlier", "k_steps")


def compliance_error(c_gen: float, c_ref: float) -> float:
    """Percent excess compliance over the reference; negative when the design is stiffer."""
    if not c_ref > 0:
        raise ParameterError(f"reference compliance must be positive, got {c_ref}")
    return 100.0 * (c_gen - c_ref) / c_ref


def volume_fraction_error(vf_actual: float, vf_target: float) -> float:
    """Percent deviation from the target volume fraction, relative to the target."""
    if not 0.0 < vf_target < 1.0:
        raise ParameterError(f"target volume fraction must be in (0, 1), got {vf_target}")
    return 100.0 * abs(vf_actual - vf_target) / vf_target


@dataclass
class EvalRecord:
    id: str
    c_gen: float
    c_ref: float
    vfe_percent: float
    t_field_s: float = 0.0
    t_opt_s: float = 0.0
    t_fea_s: float = 0.0
    k_steps: int = 0

    @property
    def ce_percent(self) -> float:
        return compliance_error(self.c_gen, self.c_ref)

    @property
    def outlier(self) -> bool:
        return self.ce_percent > OUTLIER_CE

    @classmethod
    def from_volumes(cls, id, c_gen, c_ref, vf_actual, vf_target, **times):
        return cls(id, float(c_gen), float(c_ref), volume_fraction_error(vf_actual, vf_target), **times)


def _median(values):
    s = sorted(values)
    n = len(s)
    mid = n // 2
    return s[mid] if n % 2 else 0.5 * (s[mid - 1] + s[mid])


@dataclass
class Summary:
    count: int
    outliers: int
    ce_mean: float | None
    ce_median: float | None
    vfe_mean: float | None
    vfe_median: float | None
    t_field_mean: float
    t_opt_mean: float
    t_fea_mean: float


def aggregate(records) -> Summary:
    """Statistics over non-outlier records; outliers are only counted.

    If every record is an outlier the CE/VFE statistics are ``None``.
    """
    records = list(records)
    if not records:
        raise ParameterError("cannot aggregate an empty record list")
    kept = [r for r in records if not r.outlier]
    ce = [r.ce_percent for r in kept]
    vfe = [r.vfe_percent for r in kept]
    return Summary(
        count=len(records),
        outliers=len(records) - len(kept),
        ce_mean=float(np.mean(ce)) if kept else None,
        ce_median=_median(ce) if kept else None,
        vfe_mean=float(np.mean(vfe)) if kept else None,
        vfe_median=_median(vfe) if kept else None,
        t_field_mean=float(np.mean([r.t_field_s for r in records])),
        t_opt_mean=float(np.mean([r.t_opt_s for r in records])),
        t_fea_mean=float(np.mean([r.t_fea_s for r in records])),
    )


def write_csv(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([
                r.id, repr(r.ce_percent), repr(r.vfe_percent), repr(r.c_gen), repr(r.c_ref),
                repr(r.t_field_s), repr(r.t_opt_s), int(r.outlier), r.k_steps,
            ])


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

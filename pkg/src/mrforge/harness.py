"""Metamorphic test campaigns over both model variants."""

from __future__ import annotations

import csv
import json
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .algebra import AffineMR, FlatLayout, MRSet, apply_mr, flatten, unflatten
from .errors import MRForgeError, ValidationError
from .model import GridSpec, ModelInput, Variant, energy_pipeline, random_sea_level

DEVIATION_FLOOR = 1e-30
DEFAULT_TOLERANCE = 1e-9
VARIANTS = (Variant.CYCLIC, Variant.NONCYCLIC)


class ReportIOError(MRForgeError, OSError):
    def __init__(self, path, cause):
        self.path = str(path)
        super().__init__(f"cannot write {path}: {cause}")


@dataclass
class MRTestResult:
    mr_label: str
    variant: Variant
    deviations: list
    tolerance: float
    # energy series of the first input, kept for plotting only
    series: tuple | None = field(default=None, compare=False, repr=False)

    @property
    def passed(self) -> bool:
        return all(d < self.tolerance for d in self.deviations)

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    @property
    def max_deviation(self) -> float:
        return max(self.deviations)

    def to_json(self) -> dict:
        return {"mr": self.mr_label, "variant": self.variant.value,
                "deviations": list(self.deviations), "verdict": self.verdict}


def relative_deviation(e_source, e_morphed) -> float:
    e_source = np.asarray(e_source)
    return float(np.max(np.abs(np.asarray(e_morphed) - e_source) / (np.abs(e_source) + DEVIATION_FLOOR)))


def run_mr_test(mr: AffineMR, variant, inputs, tolerance: float = DEFAULT_TOLERANCE) -> MRTestResult:
    """Check ``f(g(x)) == f(x)`` for every input, up to a relative ``tolerance``."""
    variant = Variant.coerce(variant)
    inputs = list(inputs)
    if not inputs:
        raise ValidationError("run_mr_test needs at least one input")
    if not tolerance > 0:
        raise ValidationError("tolerance must be positive")
    deviations, series = [], None
    for inp in inputs:
        layout = FlatLayout.of(inp)
        if mr.layout != layout:
            raise ValidationError(f"MR {mr.label!r} acts on {mr.layout}, input has {layout}")
        source = energy_pipeline(inp, variant)
        try:
            morphed_input = unflatten(apply_mr(mr, flatten(inp, layout)), mr.out_layout)
            morphed = energy_pipeline(morphed_input, variant).e
            dev = relative_deviation(source.e, morphed)
        except ValidationError:
            # the morphed point is not a valid model input at all
            morphed, dev = np.full_like(source.e, np.nan), float("inf")
        deviations.append(dev if np.isfinite(dev) else float("inf"))
        if series is None:
            series = (np.asarray(inp.ts), np.asarray(source.e), np.asarray(morphed))
    return MRTestResult(mr.label, variant, deviations, float(tolerance), series)


@dataclass
class CampaignReport:
    manifest: dict
    results: list
    detection: list

    def result(self, label: str, variant) -> MRTestResult:
        variant = Variant.coerce(variant)
        for r in self.results:
            if r.mr_label == label and r.variant is variant:
                return r
        raise KeyError((label, variant.value))

    def defect_revealing(self) -> list[str]:
        return [d["mr"] for d in self.detection if d["defect_revealing"]]

    def to_json(self) -> dict:
        return {
            "manifest": self.manifest,
            "results": [r.to_json() for r in self.results],
            "detection": self.detection,
        }

    @classmethod
    def from_json(cls, data: dict) -> "CampaignReport":
        tol = float(data["manifest"]["tolerance"])
        results = [
            MRTestResult(r["mr"], Variant(r["variant"]), [float(d) for d in r["deviations"]], tol)
            for r in data["results"]
        ]
        for r, raw in zip(results, data["results"]):
            if r.verdict != raw["verdict"]:
                raise ValidationError(f"stored verdict for {r.mr_label}/{r.variant.value} "
                                      "disagrees with its deviations")
        return cls(manifest=data["manifest"], results=results, detection=data["detection"])

    def __eq__(self, other):
        if not isinstance(other, CampaignReport):
            return NotImplemented
        return self.to_json() == other.to_json()


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("MRFORGE_THREADS", "1")))
    except ValueError:
        return 1


def run_campaign(mrs, inputs, tolerance: float = DEFAULT_TOLERANCE, variants=VARIANTS,
                 manifest: dict | None = None, max_workers: int | None = None) -> CampaignReport:
    """Run every MR against every requested variant and summarise defect detection.

    ``mrs`` may mix :class:`MRSet` objects and individual MRs.  An MR is flagged
    defect-revealing when it passes on the cyclic variant and fails on the
    noncyclic one.
    """
    flat = []
    for item in mrs:
        flat.extend(item.members if isinstance(item, MRSet) else [item])
    inputs = list(inputs)
    if not flat:
        raise ValidationError("campaign needs at least one MR")
    if not inputs:
        raise ValidationError("campaign needs at least one input")
    labels = [m.label for m in flat]
    if len(set(labels)) != len(labels):
        raise ValidationError(f"duplicate MR labels in campaign: {labels}")
    variants = [Variant.coerce(v) for v in variants]

    jobs = [(m, v) for m in flat for v in variants]
    workers = max_workers or thread_cap()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: run_mr_test(job[0], job[1], inputs, tolerance), jobs))
    else:
        results = [run_mr_test(m, v, inputs, tolerance) for m, v in jobs]
    results.sort(key=lambda r: (r.mr_label, r.variant.value))

    by_key = {(r.mr_label, r.variant): r for r in results}
    detection = []
    for label in sorted(labels):
        cyc = by_key.get((label, Variant.CYCLIC))
        non = by_key.get((label, Variant.NONCYCLIC))
        revealing = bool(cyc is not None and non is not None and cyc.passed and not non.passed)
        detection.append({"mr": label, "defect_revealing": revealing})

    nt, ny, nx = inputs[0].shape
    base = {"grid": {"nt": nt, "ny": ny, "nx": nx}, "seeds": [], "tolerance": float(tolerance)}
    base.update(manifest or {})
    base["tolerance"] = float(tolerance)
    return CampaignReport(manifest=base, results=results, detection=detection)


def campaign_inputs(grid: GridSpec, seeds, amplitude: float = 1.0) -> list[ModelInput]:
    return [random_sea_level(grid, int(s), amplitude) for s in seeds]


def _safe_name(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", label)


def export_report(report: CampaignReport, path) -> list[Path]:
    """Write ``report.json`` and one series CSV per (MR, variant) under ``path``."""
    root = Path(path)
    written = []
    try:
        (root / "series").mkdir(parents=True, exist_ok=True)
        target = root / "report.json"
        target.write_text(json.dumps(report.to_json(), indent=1) + "\n")
        written.append(target)
        for r in report.results:
            if r.series is None:
                continue
            target = root / "series" / f"{_safe_name(r.mr_label)}__{r.variant.value}.csv"
            with open(target, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["t", "e_source", "e_morphed"])
                for t, es, em in zip(*r.series):
                    w.writerow([repr(float(t)), repr(float(es)), repr(float(em))])
            written.append(target)
    except OSError as exc:
        raise ReportIOError(getattr(exc, "filename", None) or root, exc) from exc
    return written


def load_report(path) -> CampaignReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return CampaignReport.from_json(json.loads(path.read_text()))

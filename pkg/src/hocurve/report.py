"""Curving reports: quality histograms, accuracy table and convergence summary."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .accuracy import AccuracyReport, accuracy_report
from .distortion import ElementQuality, element_qualities, quality_rule
from .mesh import HighOrderMesh

N_BINS = 20
ACCURACY_LABELS = ("SC", "SC/l_c", "d_2", "d_2/l_c", "d_inf", "d_inf/l_c")


def histogram(values, bins: int = N_BINS) -> list[int]:
    """Counts over ``bins`` equal bins of [0, 1].

    Values of exactly 1 fall in the last bin; nonpositive values (invalid
    elements) in the first.
    """
    v = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
    idx = np.minimum((v * bins).astype(np.int64), bins - 1)
    return np.bincount(idx, minlength=bins).tolist()


def bin_edges(bins: int = N_BINS) -> list[float]:
    return [k / bins for k in range(bins + 1)]


@dataclass
class QualitySummary:
    shape_hist: list
    sj_hist: list
    min_shape: float
    min_shape_element: int
    mean_shape: float
    min_sj: float
    min_sj_element: int
    mean_sj: float
    n_elements: int

    @classmethod
    def from_qualities(cls, qualities: list[ElementQuality]) -> "QualitySummary":
        qs = np.array([q.shape_quality for q in qualities])
        sj = np.array([q.scaled_jacobian for q in qualities])
        i, j = int(np.argmin(qs)), int(np.argmin(sj))
        return cls(histogram(qs), histogram(sj), float(qs[i]), qualities[i].element,
                   float(qs.mean()), float(sj[j]), qualities[j].element, float(sj.mean()),
                   len(qualities))

    @property
    def all_valid(self) -> bool:
        return self.min_shape > 0 and self.min_sj > 0

    def to_dict(self) -> dict:
        return {
            "bins": N_BINS, "bin_edges": bin_edges(), "scale_hint": "log",
            "q_S": {"histogram": self.shape_hist, "min": self.min_shape,
                    "min_element": self.min_shape_element, "mean": self.mean_shape},
            "q_SJ": {"histogram": self.sj_hist, "min": self.min_sj,
                     "min_element": self.min_sj_element, "mean": self.mean_sj},
            "n_elements": self.n_elements,
        }


@dataclass
class CurvingReport:
    quality: QualitySummary
    accuracy: AccuracyReport | None
    convergence: dict
    timings: dict
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "quality": self.quality.to_dict(),
            "accuracy": None if self.accuracy is None else self.accuracy.to_dict(),
            "accuracy_table": [] if self.accuracy is None else
            [{"label": k, "value": v} for k, v in self.accuracy.rows()],
            "convergence": self.convergence,
            "timings": self.timings,
        }


def convergence_summary(result) -> dict:
    """Compact, JSON-ready view of a curving result's trace."""
    degrees = {}
    for q, r in result.stages.items():
        degrees[str(q)] = {
            "converged": r.converged, "mu": r.mu, "stages": r.stages,
            "boundary_error": r.boundary_error, "gradient_norm": r.gradient_norm,
            "fixed_point_residual": r.fixed_point_residual,
            "newton_iterations": r.newton_iterations, "energy": r.energy,
            "warnings": list(r.warnings),
        }
    return {
        "converged": result.converged,
        "degrees": degrees,
        "stages": [s.__dict__ for s in result.trace.stages],
        "newton": [n.__dict__ for n in result.trace.newton],
        "problematic": result.problematic.to_dict(),
    }


def build_report(mesh: HighOrderMesh, model=None, classification=None, result=None,
                 config=None, timings: dict | None = None, y_plus: str = "") -> CurvingReport:
    """Quality, accuracy (when geometry is given) and convergence of a curved mesh."""
    extra = config.quality_extra if config is not None else 4
    base = config.quadrature_exactness if config is not None else None
    qualities = element_qualities(mesh, quality_rule(mesh, extra, base),
                                  level=config.sample_level if config is not None else 16)
    acc = None
    if model is not None and classification is not None:
        acc = accuracy_report(mesh, model, classification)
    meta = {
        "degree": mesh.degree, "n_elements": mesh.n_elements, "n_nodes": mesh.n_nodes,
        "n_boundary_faces": int(len(mesh.faces)),
        "characteristic_length": mesh.characteristic_length, "y_plus": y_plus,
    }
    return CurvingReport(QualitySummary.from_qualities(qualities), acc,
                         convergence_summary(result) if result is not None else {},
                         dict(timings or {}), meta)


def write_report(report: CurvingReport, json_path, csv_path=None) -> None:
    """JSON document plus a CSV table (accuracy rows, histograms, stages)."""
    json_path = Path(json_path)
    data = report.to_dict()
    json_path.write_text(json.dumps(data, indent=2, default=_json_default) + "\n",
                         encoding="utf-8")
    if csv_path is None:
        csv_path = json_path.with_suffix(".csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["section", "label", "value"])
        for row in data["accuracy_table"]:
            w.writerow(["accuracy", row["label"], repr(float(row["value"]))])
        edges = bin_edges()
        for key in ("q_S", "q_SJ"):
            for k, count in enumerate(data["quality"][key]["histogram"]):
                w.writerow([f"histogram_{key}", f"[{edges[k]:.2f},{edges[k + 1]:.2f})", count])
        for s in data["convergence"].get("stages", []):
            label = f"q={s['degree']} stage={s['stage']}"
            for f in ("mu", "newton_iterations", "boundary_error", "gradient_norm"):
                w.writerow([f"stage_{f}", label, repr(s[f]) if isinstance(s[f], float)
                            else s[f]])
        for k, v in data["timings"].items():
            w.writerow(["timing", k, repr(float(v))])


def read_report(json_path) -> dict:
    """Load a JSON report, checking histogram totals."""
    data = json.loads(Path(json_path).read_text(encoding="utf-8"))
    n = data["quality"]["n_elements"]
    for key in ("q_S", "q_SJ"):
        if sum(data["quality"][key]["histogram"]) != n:
            raise ValueError(f"{key} histogram does not sum to the element count")
    return data


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(f"not serializable: {type(o).__name__}")

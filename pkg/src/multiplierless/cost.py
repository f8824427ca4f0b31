"""Static arithmetic cost of one network application over a single receptive field.

Counting rules:

* exact model: one multiplication per matrix weight, and ``k - 1`` additions
  per weight matrix of ``k`` entries. Pooling-coefficient products are listed
  per layer as ``scalar_multiplications`` and kept out of the headline column.
* approximate model: no multiplications and the same additions. Every
  multiplicative constant (integer matrix entries, the per-matrix expansion
  factor, pooling coefficients) contributes its signed-digit additions to
  ``csd_additions`` and its nonzero-exponent digits to ``bit_shifts``.
  Biases are additive constants and cost nothing extra.

These rules give 882/843 for the face-finder shape and 183375/178110 for the
digit network.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .dyadic import csd_cost, csd_encode
from .model import ApproximateWeight, LayerKind, NetworkModel, weight_shape

__all__ = ["CostReport", "static_cost", "cost_table", "COLUMNS"]

COLUMNS = ("Mult.", "Add.", "CSD Add.", "Bit-shifting")


@dataclass
class CostReport:
    name: str
    precision: str
    multiplications: int = 0
    additions: int = 0
    csd_additions: int = 0
    bit_shifts: int = 0
    per_layer: list = field(default_factory=list)

    def row(self) -> list[str]:
        if self.precision == "exact":
            return [str(self.multiplications), str(self.additions), "-", "-"]
        return [str(self.multiplications), str(self.additions), str(self.csd_additions), str(self.bit_shifts)]

    def scaled(self, factor: int) -> "CostReport":
        """Totals for ``factor`` applications, e.g. every window of a full image."""
        return CostReport(
            self.name,
            self.precision,
            self.multiplications * factor,
            self.additions * factor,
            self.csd_additions * factor,
            self.bit_shifts * factor,
            [dict(layer) for layer in self.per_layer],
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "precision": self.precision,
            "multiplications": self.multiplications,
            "additions": self.additions,
            "csd_additions": self.csd_additions,
            "bit_shifts": self.bit_shifts,
            "per_layer": self.per_layer,
        }


_entry_cost_cache: dict[int, tuple[int, int]] = {}


def _entry_cost(v: int) -> tuple[int, int]:
    if v not in _entry_cost_cache:
        _entry_cost_cache[v] = csd_cost(csd_encode(v, 0))
    return _entry_cost_cache[v]


def static_cost(model: NetworkModel) -> CostReport:
    report = CostReport(model.meta.get("scheme") or model.name, model.precision)
    for pos, layer in enumerate(model.layers):
        entry = {
            "layer": pos,
            "kind": str(layer.kind),
            "multiplications": 0,
            "additions": 0,
            "csd_additions": 0,
            "bit_shifts": 0,
            "scalar_multiplications": 0,
        }
        for w in layer.weights:
            rows, cols = weight_shape(w)
            k = rows * cols
            entry["additions"] += k - 1
            if isinstance(w, ApproximateWeight):
                for v in w.numerators.ravel():
                    a, s = _entry_cost(int(v))
                    entry["csd_additions"] += a
                    entry["bit_shifts"] += s
                if w.numerators.any():
                    a, s = csd_cost(w.alpha_code)
                    entry["csd_additions"] += a
                    entry["bit_shifts"] += s
            else:
                entry["multiplications"] += k
        if layer.kind is LayerKind.AVERAGE_POOLING:
            for c in layer.pool_coefficients:
                if model.precision == "approximate":
                    a, s = csd_cost(c)
                    entry["csd_additions"] += a
                    entry["bit_shifts"] += s
                else:
                    entry["scalar_multiplications"] += 1
        report.per_layer.append(entry)
        report.multiplications += entry["multiplications"]
        report.additions += entry["additions"]
        report.csd_additions += entry["csd_additions"]
        report.bit_shifts += entry["bit_shifts"]
    return report


def cost_table(reports, fmt: str = "csv") -> str:
    """Render reports (or models) one row each with the columns Mult., Add., CSD Add., Bit-shifting."""
    reports = [r if isinstance(r, CostReport) else static_cost(r) for r in reports]
    if not reports:
        raise ValueError("need at least one model")
    header = ["Model", *COLUMNS]
    rows = [[r.name, *r.row()] for r in reports]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    if fmt in ("md", "markdown"):
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        lines += ["| " + " | ".join(row) + " |" for row in rows]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown table format {fmt!r}")

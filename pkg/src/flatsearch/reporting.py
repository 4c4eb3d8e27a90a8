"""Comparison tables and corruption-error curves."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corruptions import SEVERITIES, CorruptionReport
from .errors import EmptyArchive
from .nn.network import macs, param_count
from .objectives import EvalRecord
from .search_space import SearchSpaceDef, decode

COLUMNS = ("Model", "1-F_A(x)", "R(x,σ)", "mCE", "Params", "MACs")
ABSENT = "-"


@dataclass(frozen=True)
class ModelRow:
    """One table row; error terms in percent, sizes in millions."""

    name: str
    error_pct: float
    robustness_pct: float
    mce_pct: float | None
    params_m: float
    macs_m: float

    @classmethod
    def from_record(cls, name: str, record: EvalRecord, space: SearchSpaceDef,
                    corruption: CorruptionReport | None = None) -> "ModelRow":
        config = decode(space, record.gene)
        return cls(name, 100.0 * (1.0 - record.top1_accuracy), 100.0 * record.robustness,
                   None if corruption is None else 100.0 * corruption.mce,
                   param_count(config) / 1e6, macs(config) / 1e6)

    def cells(self) -> list[str]:
        mce = ABSENT if self.mce_pct is None else f"{self.mce_pct:.2f}"
        return [self.name, f"{self.error_pct:.2f}", f"{self.robustness_pct:.2f}", mce,
                f"{self.params_m:.2f}", f"{self.macs_m:.2f}"]


def render_table(rows: Sequence[ModelRow]) -> str:
    lines = ["| " + " | ".join(COLUMNS) + " |", "|" + "|".join("---" for _ in COLUMNS) + "|"]
    lines += ["| " + " | ".join(row.cells()) + " |" for row in rows]
    return "\n".join(lines) + "\n"


def per_type_rows(reports: Sequence[CorruptionReport]) -> list[tuple[str, str, int, float]]:
    return [row for rep in reports for row in rep.curve_rows()]


def mean_curve_rows(reports: Sequence[CorruptionReport]) -> list[tuple[str, int, float]]:
    """Error averaged over corruption types at each severity, per model."""
    out = []
    for rep in reports:
        for sev in SEVERITIES:
            vals = rep.errors[sev - 1]
            vals = vals[~np.isnan(vals)]
            if vals.size:
                out.append((rep.model_id, sev, float(vals.mean())))
    return out


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def report(records: Sequence[EvalRecord], corruption_reports: Sequence[CorruptionReport],
           out_dir: str | Path, space: SearchSpaceDef, names: Sequence[str] | None = None) -> dict[str, Path]:
    """Write the comparison table and the corruption curves for ``records``.

    A corruption report is matched to a row by ``model_id == name``; rows
    without one show the mCE column as absent.
    """
    if len(records) == 0:
        raise EmptyArchive("nothing to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(names) if names is not None else [
        "model-" + "-".join(map(str, r.gene)) for r in records]
    by_id = {rep.model_id: rep for rep in corruption_reports}
    rows = [ModelRow.from_record(n, r, space, by_id.get(n)) for n, r in zip(names, records)]

    paths = {"table": out / "table.md", "summary": out / "summary.json",
             "mean_curves": out / "mean_error_vs_severity.csv",
             "type_curves": out / "error_vs_severity_per_type.csv"}
    paths["table"].write_text(render_table(rows))
    paths["summary"].write_text(json.dumps(
        {"rows": [asdict(r) for r in rows], "corruption": [rep.to_dict() for rep in corruption_reports]},
        indent=2, sort_keys=True))
    _write_csv(paths["mean_curves"], ("model", "severity", "error"), mean_curve_rows(corruption_reports))
    _write_csv(paths["type_curves"], ("model", "type", "severity", "error"), per_type_rows(corruption_reports))
    return paths

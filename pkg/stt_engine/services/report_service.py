import logging
from pathlib import Path
from typing import Dict, List, Type, Union

import pandas as pd
from pydantic import BaseModel

from ..errors import StorageError
from ..models import (
    AccuracyRow,
    BenchReport,
    BenefitPoint,
    KSweepRow,
    LatencyRow,
    StorageRow,
    Strategy,
)

# Configure logging
logger = logging.getLogger(__name__)

STORAGE_ORDER = [Strategy.NM, Strategy.PAM, Strategy.PEM, Strategy.FM, Strategy.GREEDY]

README = """# Benchmark report

Files
- latency.csv: wall-clock milliseconds of plan + execute per (query, strategy), over `n` repetitions.
  `result_hash` digests the answer; exact-path answers agree across strategies.
- storage.csv: rows stored per strategy (base, extra materialized, total), ordered nm, pam, pem, fm.
- accuracy.csv: fraction of top-k positions of the pam ranking matching nm, averaged over repetitions.
  `min_delta` is the smallest guaranteed prefix seen; `boundary` flags k equal to the stored K.
- benefit_curve.csv: greedy picks in order with their benefit and the cumulative benefit.
- k_sweep.csv: latency distribution of top-k queries per stored K.
- linearity.csv: base-scan latency per row count (present when the cost model was measured).

Latencies depend on the machine; only their ordering across strategies is meaningful.
The baseline that queries a relational database directly without a cube is not measured here.
"""


def _frame(rows: List[BaseModel], model: Type[BaseModel]) -> pd.DataFrame:
    columns = list(model.model_fields)
    return pd.DataFrame([row.model_dump(mode="json") for row in rows], columns=columns)


def report_frames(report: BenchReport) -> Dict[str, pd.DataFrame]:
    """One frame per report file, rows in a fixed order."""
    storage = sorted(report.storage, key=lambda row: STORAGE_ORDER.index(row.strategy))
    latency = sorted(report.latency, key=lambda row: (row.query_id, STORAGE_ORDER.index(row.strategy)))
    frames = {
        "latency.csv": _frame(latency, LatencyRow),
        "storage.csv": _frame(storage, StorageRow),
        "accuracy.csv": _frame(sorted(report.accuracy, key=lambda row: (row.query_id, row.k)), AccuracyRow),
        "benefit_curve.csv": _frame(report.benefit_curve, BenefitPoint),
        "k_sweep.csv": _frame(sorted(report.k_sweep, key=lambda row: row.top_k), KSweepRow),
    }
    if report.linearity is not None:
        fit = report.linearity
        frames["linearity.csv"] = pd.DataFrame({"rows": fit.rows, "latency_ms": fit.latencies_ms})
    return frames


def _readme(report: BenchReport) -> str:
    if report.linearity is None:
        return README
    fit = report.linearity
    return README + (
        f"\nCost model fit: latency_ms = {fit.slope:.6g} * rows + {fit.intercept:.6g}, "
        f"R^2 = {fit.r_squared:.4f}{' (degenerate)' if fit.degenerate else ''}\n"
    )


def emit_report(report: BenchReport, out_dir: Union[str, Path]) -> List[Path]:
    """
    Write the report CSV files and a README

    Args:
        report: the benchmark report
        out_dir: directory to write into (created if missing)

    Returns:
        Paths of the written files
    """
    out_dir = Path(out_dir)
    logger.info(f"Writing benchmark report to {out_dir}...")
    written: List[Path] = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, frame in report_frames(report).items():
            path = out_dir / name
            written.append(path)
            frame.to_csv(path, index=False)
        readme = out_dir / "README.md"
        written.append(readme)
        readme.write_text(_readme(report), encoding="utf-8")
    except OSError as e:
        logger.error(f"Error writing benchmark report: {e}")
        for path in written:
            path.unlink(missing_ok=True)
        raise StorageError(f"could not write report to {out_dir}: {e}") from e

    logger.info(f"Report written: {len(written)} files")
    return written

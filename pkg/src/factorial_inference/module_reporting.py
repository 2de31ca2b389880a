"""
title: Factorial Inference - shared reporting module (aligned tables, JSON, output)
version: 0.1.0
license: MIT

Reusable rendering helpers for the CLI. Tables are fixed-width text, JSON is
produced by pydantic so identical reports serialize to identical bytes.
"""

import sys
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel

from factorial_inference.module_common import get_logger

logger = get_logger(__name__)


def format_number(value: Any) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, (int, np.integer)):
        return f"{int(value):,}"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return str(value)


def format_discrepancy(value: float) -> str:
    return f"{value:.3e}"


def render_table(headers: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    formatted_rows = [[cell if isinstance(cell, str) else format_number(cell) for cell in row] for row in rows]

    # Calculate column widths
    col_widths = [max(len(str(x)) for x in col) for col in zip(headers, *formatted_rows)]

    table = " | ".join(f"{header:<{width}}" for header, width in zip(headers, col_widths)).rstrip() + "\n"
    table += "-|-".join("-" * width for width in col_widths) + "\n"
    for row in formatted_rows:
        table += " | ".join(f"{cell:<{width}}" for cell, width in zip(row, col_widths)).rstrip() + "\n"
    return table


def render_matrix(labels: Sequence[str], matrix: Union[np.ndarray, Sequence[Sequence[float]]]) -> str:
    return render_table(["", *labels], ([label, *row] for label, row in zip(labels, matrix)))


def render_checks(checks: Iterable[Any]) -> str:
    return render_table(
        ["check", "discrepancy", "tolerance", "result"],
        (
            [
                check.name,
                format_discrepancy(check.discrepancy),
                f"{check.tolerance:.0e}",
                "PASS" if check.passed else "FAIL",
            ]
            for check in checks
        ),
    )


def section(title: str, body: str) -> str:
    return f"{title}\n{body}\n"


def dump_json(report: BaseModel) -> str:
    return report.model_dump_json(indent=2) + "\n"


def write_output(text: str, path: Optional[Union[str, Path]] = None) -> None:
    """Writes to `path`, or to stdout when no path is given."""
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return

    Path(path).write_text(text, encoding="utf-8")
    logger.debug(f"Wrote {len(text)} characters to {path}")

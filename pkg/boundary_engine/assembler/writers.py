"""
Atomic writers for CSV, JSON, plain-text tables and plot-ready .dat files.

CSV, table and .dat numbers use 6 significant digits; JSON keeps full precision.
Every file is written to a temporary sibling and renamed into place.
"""
import csv
import io
import json
import os
import tempfile
from typing import Any, Iterable, List, Sequence

NUMBER_FORMAT = "{:.6g}"


def format_number(value: Any) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (int, float)):
        return NUMBER_FORMAT.format(value)
    return str(value)


def write_atomic(path: str, text: str) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    return path


def write_csv(path: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_number(value) for value in row])
    return write_atomic(path, buffer.getvalue())


def write_json(path: str, data: Any) -> str:
    return write_atomic(path, json.dumps(data, indent=2, ensure_ascii=False) + "\n")


def write_dat(path: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    lines = ["# " + " ".join(columns)]
    lines += [" ".join(format_number(value) for value in row) for row in rows]
    return write_atomic(path, "\n".join(lines) + "\n")


def format_table(header: List[str], rows: Iterable[Sequence[Any]], digits: int = 4) -> str:
    """LaTeX tabular body: one `a & b & c \\\\` line per row, header first."""
    lines = [" & ".join(header) + r" \\", r"\hline"]
    for row in rows:
        lines.append(" & ".join(f"{value:.{digits}f}" for value in row) + r" \\")
    return "\n".join(lines) + "\n"

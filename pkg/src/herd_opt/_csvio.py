"""Minimal CSV emission shared by the export helpers."""
from __future__ import annotations

import csv
import io


def write_rows(header, rows, path_or_buf=None):
    """Write a header plus rows to a path or open text file; return the text if neither is given."""
    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)

    if path_or_buf is None:
        buf = io.StringIO()
        emit(buf)
        return buf.getvalue()
    if hasattr(path_or_buf, "write"):
        emit(path_or_buf)
        return None
    with open(path_or_buf, "w", newline="", encoding="utf-8") as fh:
        emit(fh)
    return None

"""CSV helpers shared by every writer: UTF-8, LF endings, 17 significant digits."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return f"{v:.17g}"
    return str(v)


def render(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render(header, rows), encoding="utf-8", newline="\n")


def read_csv(path):
    """Return (header, rows) with every cell left as a string."""
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    return text[0].split(","), [line.split(",") for line in text[1:]]

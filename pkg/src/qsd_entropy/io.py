"""CSV output with a units header and round-trip precision."""

from __future__ import annotations

import hashlib
import warnings
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

UNITS = "hbar = k_B = 1; time in units of 1/epsilon; entropy in units of k_B"
FMT = "%.17g"


def write_csv(path, columns: Mapping[str, Sequence], meta: Mapping[str, object] | None = None) -> Path:
    """Write equal-length columns with ``#`` comment lines for units and metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    arrays = [np.asarray(columns[k]) for k in names]
    n = {a.shape[0] for a in arrays}
    if len(n) > 1:
        raise ValueError(f"columns have unequal lengths: {sorted(n)}")
    lines = [f"# units: {UNITS}"]
    for k, v in (meta or {}).items():
        lines.append(f"# {k}: {v}")
    lines.append(",".join(names))
    with path.open("w") as fh:
        fh.write("\n".join(lines) + "\n")
        if arrays and arrays[0].shape[0]:
            fmts = ["%d" if np.issubdtype(a.dtype, np.integer) else FMT for a in arrays]
            data = np.column_stack([a.astype(object) if f == "%d" else a for a, f in zip(arrays, fmts)])
            np.savetxt(fh, data, fmt=fmts, delimiter=",")
    return path


def read_csv(path) -> dict[str, np.ndarray]:
    """Inverse of :func:`write_csv` (metadata lines are skipped)."""
    path = Path(path)
    with path.open() as fh:
        header = None
        for line in fh:
            if not line.startswith("#"):
                header = line.strip().split(",")
                break
        if header is None:
            raise ValueError(f"{path} has no header row")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # header-only files are legitimate
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        return {k: np.empty(0) for k in header}
    return {k: data[:, i] for i, k in enumerate(header)}


def sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()

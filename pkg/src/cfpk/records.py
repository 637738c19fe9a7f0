"""Per-time-step diagnostic records and their CSV emission."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Density

TRANSPORT_COLUMNS = ["t", "sigma", "ell", "M1", "M2", "F", "S", "E", "W2sq_step", "kkt_residual"]
FPSOLVER_COLUMNS = [
    "t", "sigma", "ell", "M1", "M2", "F", "S", "E",
    "D", "eb_residual", "Hrel_quasistatic", "Hrel_star",
]


@dataclass
class TrajectoryRecord:
    """One time-step of diagnostics; solver-specific fields stay NaN when
    the producing solver does not define them."""

    t: float
    sigma: float
    ell: float
    M1: float
    M2: float
    F: float
    S: float
    E: float
    W2sq_step: float = float("nan")
    kkt_residual: float = float("nan")
    D: float = float("nan")
    eb_residual: float = float("nan")
    Hrel_quasistatic: float = float("nan")
    Hrel_star: float = float("nan")
    # carried for in-process monitors, never serialized
    lam_ell: float = float("nan")
    l1_star: float = float("nan")
    density: Optional[Density] = field(default=None, repr=False, compare=False)
    quantile: Optional[np.ndarray] = field(default=None, repr=False, compare=False)


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_csv(records: list[TrajectoryRecord], path: str, columns: list[str]) -> None:
    """Fixed column order, 17 significant digits: byte-identical across runs."""
    lines = [",".join(columns)]
    for r in records:
        lines.append(",".join(_fmt(getattr(r, c)) for c in columns))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

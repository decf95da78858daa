"""Integer scoring tables derived from Cox coefficients on a categorical design."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import UninformativeModelError
from .survival import SurvivalDataset
from .transform import CutoffScheme, _per_variable, design_columns


def round_half_away(x):
    x = np.asarray(x, dtype=float)
    # |x| - trunc(|x|) is exact, unlike |x| + 0.5 just below a half
    a = np.abs(x)
    whole = np.trunc(a)
    return (np.sign(x) * (whole + (a - whole >= 0.5))).astype(int)


@dataclass(frozen=True)
class ScoredVariable:
    name: str
    labels: tuple
    points: tuple

    @property
    def max_points(self) -> int:
        return max(self.points)


@dataclass(frozen=True, eq=False)
class ScoringTable:
    variables: tuple  # of ScoredVariable
    scheme: CutoffScheme
    s_max: int
    scale: float
    source: str = ""

    @property
    def max_total(self) -> int:
        return sum(v.max_points for v in self.variables)

    def points_of(self, name: str) -> tuple:
        for v in self.variables:
            if v.name == name:
                return v.points
        raise KeyError(name)

    def score_subject(self, covariates: Mapping[str, float]) -> int:
        total = 0
        for v in self.variables:
            if v.name not in covariates:
                raise KeyError(f"missing variable {v.name!r}")
            k = int(self.scheme.assign(v.name, [covariates[v.name]])[0])
            total += v.points[k]
        return int(total)

    def score_dataset(self, data: SurvivalDataset) -> np.ndarray:
        total = np.zeros(data.n, dtype=int)
        for v in self.variables:
            if v.name not in data.variable_names:
                raise KeyError(f"missing variable {v.name!r}")
            total += np.asarray(v.points, dtype=int)[self.scheme.assign(v.name, data.column(v.name))]
        return total

    def __eq__(self, other):
        if not isinstance(other, ScoringTable):
            return NotImplemented
        return (self.variables == other.variables and self.scheme == other.scheme
                and self.s_max == other.s_max and self.scale == other.scale)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variable", "interval", "points"])
            for v in self.variables:
                for lab, pt in zip(v.labels, v.points):
                    w.writerow([v.name, lab, pt])

    @classmethod
    def from_csv(cls, path, scheme: CutoffScheme, s_max: int = 100, scale: float = float("nan"),
                 source: str = "") -> "ScoringTable":
        rows: dict[str, list] = {}
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                rows.setdefault(r["variable"], []).append((r["interval"], int(r["points"])))
        vars_ = tuple(ScoredVariable(name, tuple(l for l, _ in rs), tuple(p for _, p in rs))
                      for name, rs in rows.items())
        return cls(vars_, scheme, s_max, scale, source)

    def to_text(self) -> str:
        width = max([len("Variable")] + [len(v.name) for v in self.variables])
        iw = max([len("Interval")] + [len(l) for v in self.variables for l in v.labels])
        lines = [f"{'Variable':<{width}}  {'Interval':<{iw}}  Point",
                 "-" * (width + iw + 9)]
        for v in self.variables:
            for k, (lab, pt) in enumerate(zip(v.labels, v.points)):
                name = v.name if k == 0 else ""
                lines.append(f"{name:<{width}}  {lab:<{iw}}  {pt:>5d}")
        lines.append("-" * (width + iw + 9))
        lines.append(f"Maximum total score: {self.max_total} (S_max = {self.s_max})")
        return "\n".join(lines) + "\n"


def derive_scores(beta, scheme: CutoffScheme, variables: Sequence[str] | None = None,
                  s_max: int = 100, source: str = "") -> ScoringTable:
    """Turn coefficients on the dummy design into an integer points table.

    Each variable's category effects (reference = 0) are shifted so their
    minimum is 0, then one common scale maps the largest achievable total to
    ``s_max`` before rounding half away from zero.  If rounding pushes the
    achievable total above ``s_max``, the scale is lowered to the next
    rounding breakpoint until it fits.
    """
    variables = tuple(scheme.variables if variables is None else variables)
    coefs = _per_variable(beta, design_columns(scheme, variables), scheme, variables)
    shifted = {v: coefs[v] - coefs[v].min() for v in variables}
    denom = sum(float(s.max()) for s in shifted.values())
    if not denom > 0:
        raise UninformativeModelError()
    scale = s_max / denom
    while True:
        pts = {v: round_half_away(shifted[v] * scale) for v in variables}
        total = sum(int(p.max()) for p in pts.values())
        if total <= s_max:
            break
        # largest scale below the current one at which some variable's max rounds down
        cands = [(int(pts[v].max()) - 0.5) / float(shifted[v].max())
                 for v in variables if shifted[v].max() > 0 and pts[v].max() > 0]
        scale = min(math.nextafter(max(c for c in cands if c <= scale), 0.0),
                    math.nextafter(scale, 0.0))
    table_vars = tuple(
        ScoredVariable(v, tuple(scheme.labels(v)), tuple(int(x) for x in pts[v]))
        for v in variables
    )
    return ScoringTable(table_vars, scheme.restrict(variables), int(s_max), float(scale), source)

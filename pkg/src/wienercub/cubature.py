"""Cubature formulas: weighted path (or Lie-polynomial) support matching
Wiener iterated-integral expectations up to a graded degree.

A formula of degree m consists of positive weights lambda_1..lambda_n and
support omega_1..omega_n such that

    sum_j lambda_j * project(signature(omega_j), m)

agrees coefficient-wise with the expected Brownian signature at the same
horizon. Validation is a direct coefficient comparison, so failure is data
(a defect table), not an exception.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .tensor_algebra import GradedTensor, Word, exp
from .lie_structures import DYNKIN_TOL, LiePolynomial, NotLieElement, certify
from .path_signature import (
    PiecewiseLinearPath,
    brownian_expected_signature,
    brownian_rescale,
    log_signature,
    signature,
)

DEFAULT_TOL = 1e-10
_MASS_TOL = 1e-9


class CubatureLoadError(ValueError):
    """Raised when a formula file is malformed or fails basic checks."""


@dataclass(frozen=True)
class CubatureFormula:
    """Positive weights plus either path or Lie-polynomial support.

    Path support lives over [0, horizon]; Lie support is a list of certified
    log-signature-like elements, by convention also at the stated horizon.
    Weight positivity is enforced here; the moment-matching claim implied by
    `degree` is checked by validate(), never assumed.
    """

    dimension: int
    degree: int
    weights: tuple[float, ...]
    paths: tuple[PiecewiseLinearPath, ...] | None = None
    lie_polys: tuple[LiePolynomial, ...] | None = None
    horizon: float = 1.0

    def __post_init__(self):
        if (self.paths is None) == (self.lie_polys is None):
            raise ValueError("exactly one of paths / lie_polys must be given")
        if self.dimension < 1 or self.degree < 1:
            raise ValueError("dimension and degree must be >= 1")
        n = len(self.paths if self.paths is not None else self.lie_polys)
        if n == 0 or len(self.weights) != n:
            raise ValueError(
                f"{len(self.weights)} weights for {n} support points"
            )
        if any(not w > 0.0 for w in self.weights):
            raise ValueError(f"weights must be strictly positive: {self.weights!r}")
        if not self.horizon > 0.0:
            raise ValueError(f"horizon must be positive, got {self.horizon!r}")
        if self.paths is not None:
            for j, p in enumerate(self.paths):
                if p.dimension != self.dimension:
                    raise ValueError(
                        f"path {j} has dimension {p.dimension}, formula says {self.dimension}"
                    )
                if abs(p.horizon - self.horizon) > _MASS_TOL:
                    raise ValueError(
                        f"path {j} has horizon {p.horizon!r}, formula says {self.horizon!r}"
                    )
        else:
            for j, L in enumerate(self.lie_polys):
                if L.dimension != self.dimension:
                    raise ValueError(
                        f"Lie element {j} has dimension {L.dimension}, formula says {self.dimension}"
                    )
                if not L.certified:
                    raise ValueError(f"Lie element {j} is not certified")

    @property
    def n_points(self) -> int:
        return len(self.weights)

    @property
    def is_lie(self) -> bool:
        return self.lie_polys is not None

    def aggregate(self, truncation: int) -> GradedTensor:
        """sum_j lambda_j * (signature or exp of Lie element), truncated."""
        total = GradedTensor.zero(self.dimension, truncation)
        if self.paths is not None:
            for lam, p in zip(self.weights, self.paths):
                total = total + signature(p, truncation).scale(lam)
        else:
            for lam, L in zip(self.weights, self.lie_polys):
                total = total + exp(L.tensor.with_truncation(truncation)).scale(lam)
        return total

    def to_dict(self) -> dict:
        out = {
            "dimension": self.dimension,
            "degree": self.degree,
            "horizon": self.horizon,
            "weights": list(self.weights),
        }
        if self.paths is not None:
            out["support"] = {"paths": [p.to_dict() for p in self.paths]}
        else:
            out["support"] = {"lie_polys": [L.to_dict() for L in self.lie_polys]}
        return out


@dataclass(frozen=True)
class ValidationReport:
    dimension: int
    degree: int
    horizon: float
    tol: float
    max_defect: float
    worst_word: Word | None
    failures: tuple[tuple[Word, float], ...]
    ok: bool

    def table(self) -> str:
        """Human-readable defect table, one line per failing word."""
        head = (
            f"cubature check: d={self.dimension} degree={self.degree} "
            f"horizon={self.horizon:g} tol={self.tol:g} -> "
            f"{'PASS' if self.ok else 'FAIL'} (max defect {self.max_defect:.3e}"
        )
        head += ")" if self.ok else f" on word {self.worst_word})"
        lines = [head]
        for w, defect in self.failures:
            lines.append(f"  word {w}: defect {defect:.6e}")
        return "\n".join(lines)


def validate(
    formula: CubatureFormula,
    tol: float = DEFAULT_TOL,
    degree: int | None = None,
) -> ValidationReport:
    """Compare the weighted signature aggregate with the expected Brownian
    signature, coefficient by coefficient, up to `degree` (default: the
    formula's own claim)."""
    m = formula.degree if degree is None else degree
    target = brownian_expected_signature(formula.dimension, m, formula.horizon)
    agg = formula.aggregate(m)
    max_defect = 0.0
    worst: Word | None = None
    failures: list[tuple[Word, float]] = []
    seen = {w for w, _ in agg.items()} | {w for w, _ in target.items()}
    for w in sorted(seen, key=lambda w: (len(w), w)):
        defect = abs(agg.coeff(w) - target.coeff(w))
        if defect > max_defect:
            max_defect, worst = defect, w
        if defect > tol:
            failures.append((w, defect))
    failures.sort(key=lambda item: -item[1])
    return ValidationReport(
        dimension=formula.dimension,
        degree=m,
        horizon=formula.horizon,
        tol=tol,
        max_defect=max_defect,
        worst_word=worst,
        failures=tuple(failures),
        ok=max_defect <= tol,
    )


def degree3(dimension: int) -> CubatureFormula:
    """Degree-3 formula in any dimension: 2d straight lines with increments
    +-sqrt(d)*e_i, weights 1/(2d). Odd space moments vanish by the sign
    symmetry; the quadratic moment is calibrated by the sqrt(d) stretch."""
    if dimension < 1:
        raise ValueError(f"dimension must be >= 1, got {dimension}")
    root = math.sqrt(float(dimension))
    paths = []
    for i in range(dimension):
        for sign in (root, -root):
            z = [0.0] * dimension
            z[i] = sign
            paths.append(PiecewiseLinearPath.straight_line(z))
    lam = 1.0 / (2 * dimension)
    return CubatureFormula(
        dimension=dimension,
        degree=3,
        weights=(lam,) * (2 * dimension),
        paths=tuple(paths),
    )


# Space increments of the bent outer path of the degree-5 formula below.
# With durations (1/4, 1/2, 1/4) and increments (v, w, v), matching the
# log-signature target e_0 + sqrt(3) e_1 + (1/4)[e_1,[e_1,e_0]] through
# graded degree 4 forces 2v + w = sqrt(3) together with one quadratic
# condition; the root with positive w is
#   v = sqrt(3) (5 - sqrt(41)) / 8,   w = sqrt(3) (sqrt(41) - 1) / 4.
_D5_V = math.sqrt(3.0) * (5.0 - math.sqrt(41.0)) / 8.0
_D5_W = math.sqrt(3.0) * (math.sqrt(41.0) - 1.0) / 4.0
_D5_KNOTS = (0.0, 0.25, 0.75, 1.0)


def degree5_d1() -> CubatureFormula:
    """Degree-5 formula for d=1: three paths whose endpoint increments are
    the Gauss-Hermite nodes -sqrt(3), 0, +sqrt(3) with weights 1/6, 2/3, 1/6.

    Straight lines through those nodes match every pure-space moment up to
    degree 5 but leave defects (-1/12, +1/6, -1/12) on the mixed words
    (0,1,1), (1,0,1), (1,1,0): a line cannot produce the Lie correction
    (1/4)[e_1,[e_1,e_0]] that the time-space cross moments require. The two
    outer paths are therefore bent into three segments realizing exactly that
    log-signature through degree 4; the center point stays the zero path.
    Since the correction is quadratic in the space letter, mirroring the
    positive path gives the negative one, and the mirror symmetry cancels
    every odd-degree-5 residual in the aggregate.
    """
    up = PiecewiseLinearPath(
        _D5_KNOTS, ((0.0,), (_D5_V,), (_D5_V + _D5_W,), (2 * _D5_V + _D5_W,))
    )
    down = PiecewiseLinearPath(
        _D5_KNOTS, ((0.0,), (-_D5_V,), (-_D5_V - _D5_W,), (-2 * _D5_V - _D5_W,))
    )
    center = PiecewiseLinearPath.zero(1)
    return CubatureFormula(
        dimension=1,
        degree=5,
        weights=(1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0),
        paths=(up, center, down),
    )


def rescale(formula: CubatureFormula, horizon: float) -> CubatureFormula:
    """Carry a unit-horizon formula to [0, horizon]: Brownian-rescale the
    paths, or dilate Lie support by sqrt(horizon). Weights are unchanged."""
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon!r}")
    if abs(formula.horizon - 1.0) > _MASS_TOL:
        raise ValueError(
            f"rescale expects a unit-horizon formula, got horizon {formula.horizon!r}"
        )
    if formula.paths is not None:
        return CubatureFormula(
            dimension=formula.dimension,
            degree=formula.degree,
            weights=formula.weights,
            paths=tuple(brownian_rescale(p, horizon) for p in formula.paths),
            horizon=horizon,
        )
    root = math.sqrt(horizon)
    return CubatureFormula(
        dimension=formula.dimension,
        degree=formula.degree,
        weights=formula.weights,
        lie_polys=tuple(L.dilate(root) for L in formula.lie_polys),
        horizon=horizon,
    )


def lie_form(
    formula: CubatureFormula, truncation: int | None = None, tol: float = DYNKIN_TOL
) -> CubatureFormula:
    """Replace path support by certified truncated log-signatures.

    The flow-level solver consumes cubature through this form; the default
    truncation is the formula's degree.
    """
    if formula.paths is None:
        return formula
    m = formula.degree if truncation is None else truncation
    return CubatureFormula(
        dimension=formula.dimension,
        degree=formula.degree,
        weights=formula.weights,
        lie_polys=tuple(log_signature(p, m, tol) for p in formula.paths),
        horizon=formula.horizon,
    )


def to_file(formula: CubatureFormula, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(formula.to_dict(), fh, indent=1)
        fh.write("\n")


def from_file(path: str) -> CubatureFormula:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CubatureLoadError(f"{path}: {exc}") from exc
    return from_dict(data, where=path)


def from_dict(data: dict, where: str = "<dict>") -> CubatureFormula:
    try:
        dimension = int(data["dimension"])
        degree = int(data["degree"])
        horizon = float(data.get("horizon", 1.0))
        weights = tuple(float(w) for w in data["weights"])
        support = data["support"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CubatureLoadError(f"{where}: missing or malformed field: {exc}") from exc
    for j, w in enumerate(weights):
        if not w > 0.0:
            raise CubatureLoadError(f"{where}: weight {j} is {w!r}, must be > 0")
    paths = lie_polys = None
    if "paths" in support:
        try:
            paths = tuple(
                PiecewiseLinearPath.from_dict(p) for p in support["paths"]
            )
        except ValueError as exc:
            raise CubatureLoadError(f"{where}: bad path: {exc}") from exc
    elif "lie_polys" in support:
        polys = []
        for j, rec in enumerate(support["lie_polys"]):
            try:
                tensor = GradedTensor.from_dict(rec)
            except (KeyError, TypeError, ValueError) as exc:
                raise CubatureLoadError(
                    f"{where}: lie_polys[{j}] malformed: {exc}"
                ) from exc
            try:
                polys.append(certify(tensor))
            except NotLieElement as exc:
                raise CubatureLoadError(
                    f"{where}: lie_polys[{j}] is not a Lie element "
                    f"(bracket-expansion defect {exc.defect:.3e})"
                ) from exc
        lie_polys = tuple(polys)
    else:
        raise CubatureLoadError(f"{where}: support must hold 'paths' or 'lie_polys'")
    try:
        return CubatureFormula(
            dimension=dimension,
            degree=degree,
            weights=weights,
            paths=paths,
            lie_polys=lie_polys,
            horizon=horizon,
        )
    except ValueError as exc:
        raise CubatureLoadError(f"{where}: {exc}") from exc

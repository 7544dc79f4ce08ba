"""Vector fields on R^N, iterated brackets, and the flows they generate.

A system holds fields V_0, ..., V_d: V_0 is paired with the time coordinate
of a driving path, V_1..V_d with its space coordinates. Affine fields
(x -> Ax + b) are kept symbolic so brackets and flows stay exact; generic
callback fields fall back to finite differences and RK4 only.

Every certified Lie element corresponds to a concrete field: brackets of
letters become iterated field brackets, so the word-basis coefficients are
first re-expressed through right-nested bracketing (level k carries a factor
1/k) and only then mapped onto the system.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .lie_structures import LiePolynomial

# default finite-difference step scale: cube root of machine epsilon,
# the optimum for central differences
FD_STEP = float(np.cbrt(np.finfo(float).eps))


class FlowDivergence(RuntimeError):
    """A flow integration left the finite range."""

    def __init__(self, message: str, substep: int | None = None,
                 segment: int | None = None):
        super().__init__(message)
        self.substep = substep
        self.segment = segment


@dataclass(frozen=True, eq=False)
class AffineField:
    """x -> matrix @ x + offset, exact under brackets and flows."""

    matrix: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.matrix, dtype=float)
        b = np.asarray(self.offset, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"matrix must be square, got shape {a.shape}")
        if b.shape != (a.shape[0],):
            raise ValueError(
                f"offset shape {b.shape} does not match matrix {a.shape}"
            )
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "offset", b)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        # broadcasts over a leading batch axis
        return np.asarray(x, dtype=float) @ self.matrix.T + self.offset

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        return self.matrix

    def scaled(self, c: float) -> "AffineField":
        return AffineField(c * self.matrix, c * self.offset)

    @classmethod
    def zero(cls, dimension: int) -> "AffineField":
        return cls(np.zeros((dimension, dimension)), np.zeros(dimension))


@dataclass(frozen=True, eq=False)
class GenericField:
    """Callback field; jacobian callback optional (finite differences else).

    `note` carries accuracy advisories picked up by derived fields, e.g.
    brackets built from finite-difference jacobians.
    """

    func: Callable[[np.ndarray], np.ndarray]
    dimension: int
    jacobian_func: Callable[[np.ndarray], np.ndarray] | None = None
    fd_step: float = FD_STEP
    note: str = ""

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jacobian_func is not None:
            return np.asarray(self.jacobian_func(x), dtype=float)
        n = self.dimension
        jac = np.empty((n, n))
        for j in range(n):
            h = self.fd_step * (1.0 + abs(float(x[j])))
            e = np.zeros(n)
            e[j] = h
            jac[:, j] = (self(x + e) - self(x - e)) / (2.0 * h)
        return jac


Field = AffineField | GenericField


def bracket_field(v: Field, w: Field) -> Field:
    """Lie bracket [v, w] = Jw.v - Jv.w; exact in the affine case."""
    if v.dimension != w.dimension:
        raise ValueError(f"dimension mismatch: {v.dimension} vs {w.dimension}")
    if isinstance(v, AffineField) and isinstance(w, AffineField):
        a, b = v.matrix, w.matrix
        return AffineField(b @ a - a @ b, b @ v.offset - a @ w.offset)

    def func(x, v=v, w=w):
        return w.jacobian(x) @ v(x) - v.jacobian(x) @ w(x)

    notes = [f.note for f in (v, w) if isinstance(f, GenericField) and f.note]
    if any(
        isinstance(f, GenericField) and f.jacobian_func is None for f in (v, w)
    ):
        notes.append("finite-difference jacobian, O(h^2)")
    return GenericField(
        func, v.dimension, note="; ".join(dict.fromkeys(notes))
    )


@dataclass(frozen=True)
class VectorFieldSystem:
    """Fields V_0..V_d on a common state space."""

    fields: tuple[Field, ...]

    def __post_init__(self):
        if len(self.fields) < 2:
            raise ValueError("need at least V_0 and V_1")
        n = self.fields[0].dimension
        if any(f.dimension != n for f in self.fields):
            raise ValueError("all fields must share the state dimension")

    @property
    def dimension(self) -> int:
        """State-space dimension N."""
        return self.fields[0].dimension

    @property
    def n_controls(self) -> int:
        """Number of space coordinates d (excludes the time field V_0)."""
        return len(self.fields) - 1

    @property
    def is_affine(self) -> bool:
        return all(isinstance(f, AffineField) for f in self.fields)

    def combine(self, coefficients: np.ndarray) -> Field:
        """The field sum_i c_i V_i."""
        c = np.asarray(coefficients, dtype=float)
        if c.shape != (len(self.fields),):
            raise ValueError(
                f"need {len(self.fields)} coefficients, got shape {c.shape}"
            )
        return combine_fields(list(self.fields), c)


def combine_fields(fields: list[Field], coefficients: np.ndarray) -> Field:
    if all(isinstance(f, AffineField) for f in fields):
        n = fields[0].dimension
        a = np.zeros((n, n))
        b = np.zeros(n)
        for c, f in zip(coefficients, fields):
            if c != 0.0:
                a += c * f.matrix
                b += c * f.offset
        return AffineField(a, b)
    kept = [(float(c), f) for c, f in zip(coefficients, fields) if c != 0.0]

    def func(x, kept=tuple(kept)):
        out = 0.0
        for c, f in kept:
            out = out + c * f(x)
        return out

    def jac(x, kept=tuple(kept)):
        out = 0.0
        for c, f in kept:
            out = out + c * f.jacobian(x)
        return out

    note = "; ".join(
        dict.fromkeys(
            f.note for _, f in kept if isinstance(f, GenericField) and f.note
        )
    )
    return GenericField(func, fields[0].dimension, jacobian_func=jac, note=note)


# -- builtin systems -----------------------------------------------------------


def gbm(mu: float, sigma: float) -> VectorFieldSystem:
    """dX = mu X dt + sigma X dB (both fields linear in x; N = d = 1).

    The drift is the one appearing against dt in the Fisk-Stratonovich form,
    so the flow along a path (t, w) is x * exp(mu t + sigma w) exactly and
    E[X_T] = x * exp((mu + sigma^2/2) T).
    """
    return VectorFieldSystem(
        (AffineField([[mu]], [0.0]), AffineField([[sigma]], [0.0]))
    )


def ou(theta: float, sigma: float) -> VectorFieldSystem:
    """Mean-reverting dX = -theta X dt + sigma dB; additive noise (N = d = 1)."""
    return VectorFieldSystem(
        (AffineField([[-theta]], [0.0]), AffineField([[0.0]], [sigma]))
    )


def affine_from_file(path: str) -> VectorFieldSystem:
    """Load {"fields": [{"matrix": [[..]], "offset": [..]}, ...]}."""
    with open(path) as fh:
        data = json.load(fh)
    try:
        fields = tuple(
            AffineField(rec["matrix"], rec["offset"]) for rec in data["fields"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: malformed affine system: {exc}") from exc
    return VectorFieldSystem(fields)


# -- the Lie-element-to-field correspondence -----------------------------------


def nested_bracket_field(sys: VectorFieldSystem, word: tuple[int, ...]) -> Field:
    """[V_{w1}, [V_{w2}, [..., V_{wk}]]] built from bracket_field."""
    if not word:
        raise ValueError("empty word has no bracket field")
    if any(a < 0 or a > sys.n_controls for a in word):
        raise ValueError(f"word {word} outside field range 0..{sys.n_controls}")
    f = sys.fields[word[-1]]
    for letter in reversed(word[:-1]):
        f = bracket_field(sys.fields[letter], f)
    return f


def gamma_field(poly: LiePolynomial, sys: VectorFieldSystem) -> Field:
    """The field corresponding to a certified Lie element.

    Word coefficients are re-expressed through right-nested brackets (the
    level-k identity carries a factor 1/k), so only genuine field brackets
    and linear combinations are ever formed.
    """
    if not poly.certified:
        raise ValueError("gamma_field requires a certified Lie element")
    if poly.dimension != sys.n_controls:
        raise ValueError(
            f"Lie element over {poly.dimension} space letters, "
            f"system has {sys.n_controls}"
        )
    terms: list[tuple[float, Field]] = []
    for w, c in poly.tensor.sorted_items():
        # Dynkin: on a level-k Lie element, right-nested bracketing of each
        # word scales the element by k, so dividing by len(w) restores it.
        terms.append((c / len(w), nested_bracket_field(sys, w)))
    if not terms:
        return AffineField.zero(sys.dimension)
    return combine_fields([f for _, f in terms],
                          np.array([c for c, _ in terms]))


# -- flows ---------------------------------------------------------------------


@dataclass(frozen=True)
class FlowConfig:
    """substeps: RK4 steps per unit flow parameter (and per path segment);
    fd_step: finite-difference scale for generic jacobians;
    exact_affine: replace RK4 by the closed-form affine flow when available."""

    substeps: int = 32
    fd_step: float = FD_STEP
    exact_affine: bool = False

    def __post_init__(self):
        if self.substeps < 1:
            raise ValueError(f"substeps must be >= 1, got {self.substeps}")
        if not self.fd_step > 0:
            raise ValueError(f"fd_step must be positive, got {self.fd_step}")


DEFAULT_FLOW = FlowConfig()


def affine_flow_exact(v: AffineField, t: float, x: np.ndarray) -> np.ndarray:
    """Exp(tV)(x) for affine V via the (N+1)-square augmented exponential."""
    n = v.dimension
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = v.matrix
    aug[:n, n] = v.offset
    big = expm(t * aug)
    return np.asarray(x, dtype=float) @ big[:n, :n].T + big[:n, n]


def flow_exp(
    v: Field, t: float, x: np.ndarray, cfg: FlowConfig = DEFAULT_FLOW
) -> np.ndarray:
    """Exp(tV)(x): the time-t value of y' = V(y), y(0) = x.

    Classical RK4 with cfg.substeps steps per unit |t|; negative t runs the
    reversed flow. Batches flow together when x has a leading batch axis.
    """
    x = np.asarray(x, dtype=float)
    if not np.isfinite(t):
        raise ValueError(f"flow time must be finite, got {t!r}")
    if t == 0.0:
        return x.copy()
    if cfg.exact_affine and isinstance(v, AffineField):
        y = affine_flow_exact(v, t, x)
        if not np.all(np.isfinite(y)):
            raise FlowDivergence("affine flow left the finite range")
        return y
    n_steps = max(1, math.ceil(cfg.substeps * abs(t)))
    h = t / n_steps
    y = x.copy()
    for step in range(n_steps):
        k1 = v(y)
        k2 = v(y + (0.5 * h) * k1)
        k3 = v(y + (0.5 * h) * k2)
        k4 = v(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise FlowDivergence(
                f"state left the finite range at substep {step + 1}/{n_steps}",
                substep=step + 1,
            )
    return y


def flow_along_path(
    path, sys: VectorFieldSystem, x: np.ndarray, cfg: FlowConfig = DEFAULT_FLOW
) -> np.ndarray:
    """Solve dY = V_0 dt + sum_i V_i dw^i along a piecewise-linear control.

    Each linear segment contributes the autonomous field
    dt*V_0 + sum_i dw^i*V_i flowed over unit parameter; segments chain.
    """
    if path.dimension != sys.n_controls:
        raise ValueError(
            f"path has {path.dimension} space coordinates, "
            f"system expects {sys.n_controls}"
        )
    y = np.asarray(x, dtype=float)
    for seg, (dt, dx) in enumerate(path.increments()):
        field = sys.combine(np.concatenate(([dt], dx)))
        try:
            y = flow_exp(field, 1.0, y, cfg)
        except FlowDivergence as exc:
            raise FlowDivergence(
                f"segment {seg + 1}/{path.n_segments}: {exc}",
                substep=exc.substep,
                segment=seg + 1,
            ) from exc
    return y

"""Closed-form catenary with flexural rigidity.

A single span is solved in a vertical plane through its two anchors.  The local
coordinate ``x`` runs horizontally from anchor A (``x = 0``) to anchor B
(``x = span``); ``y`` is the vertical offset from the straight chord, positive
upward, so a sagging span has ``y < 0`` between the anchors.  The linearized
equilibrium

    H y'' - EI y'''' = q,      q = m g sec(theta)

is solved exactly for the given horizontal force ``H``.  Slopes reported and
prescribed at the ends are physical slopes ``dz/dx`` along the direction A->B.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

H_MIN = 1e-6
"""Lower bound on the horizontal reaction force (N)."""

EPS_SPAN = 1e-9
"""Shortest horizontal span that defines a local frame (m)."""

DEFAULT_NPT = 151

#: above this value of lambda*span the exponential basis is used
_SERIES_LIMIT = 2.0
_SERIES_TERMS = 16


class CatenaryError(Exception):
    """Base class for catenary failures."""


class DegenerateSpan(CatenaryError):
    pass


class SingularSystem(CatenaryError):
    pass


class InactiveVariable(CatenaryError):
    pass


@dataclass(frozen=True)
class Material:
    """Ply strip properties.

    Attributes:
        m: mass per unit length (kg/m)
        g: gravitational acceleration (m/s^2)
        E: elastic modulus (Pa)
        I: second moment of area (m^4)
    """

    m: float
    g: float
    E: float
    I: float  # noqa: E741

    def __post_init__(self) -> None:
        if not (self.m >= 0 and self.g > 0 and self.E > 0 and self.I >= 0):
            raise ValueError(f"invalid material {self}")

    @property
    def EI(self) -> float:
        return self.E * self.I

    @property
    def weight(self) -> float:
        """Weight per unit length ``m*g`` (N/m)."""
        return self.m * self.g


@dataclass(frozen=True)
class LocalFrame:
    origin: np.ndarray
    u: np.ndarray
    span: float
    dz: float
    end: np.ndarray = field(repr=False)

    @classmethod
    def from_anchors(cls, a, b) -> LocalFrame:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        horizontal = np.array([b[0] - a[0], b[1] - a[1], 0.0])
        span = math.hypot(horizontal[0], horizontal[1])
        if span < EPS_SPAN:
            raise DegenerateSpan(f"horizontal span {span:.3e} m below {EPS_SPAN} m")
        return cls(origin=a, u=horizontal / span, span=span, dz=float(b[2] - a[2]), end=b)

    @property
    def chord_slope(self) -> float:
        return self.dz / self.span

    @property
    def theta(self) -> float:
        return math.atan2(self.dz, self.span)

    @property
    def chord_length(self) -> float:
        return math.hypot(self.span, self.dz)


@dataclass(frozen=True)
class BoundaryCondition:
    """End condition: ``free`` (zero moment) or ``prescribed`` slope ``s_pre``."""

    kind: Literal["free", "prescribed"]
    s_pre: float | None = None

    @classmethod
    def free(cls) -> BoundaryCondition:
        return FREE

    @classmethod
    def prescribed(cls, s_pre: float) -> BoundaryCondition:
        return cls("prescribed", float(s_pre))

    @property
    def is_free(self) -> bool:
        return self.kind == "free"


FREE = BoundaryCondition("free")


class SagLevel(enum.IntEnum):
    OK = 0
    NOTE = 1  # sag/span above 1/8
    WARNING = 2  # sag/span above 1/4


def _series(u: np.ndarray, first: int) -> np.ndarray:
    """Sum of u**k / (2k + first)! for k >= 0, by Horner's rule."""
    coeffs = [1.0 / math.factorial(2 * k + first) for k in range(_SERIES_TERMS)]
    acc = np.full_like(u, coeffs[-1])
    for c in reversed(coeffs[:-1]):
        acc = acc * u + c
    return acc


class _Basis:
    """Derivatives 0..4 of the four homogeneous functions and the particular part."""

    def __init__(self, kind: str, lam: float, lam2: float, span: float, q: float, H: float, EI: float):
        self.kind = kind
        self.lam = lam
        self.lam2 = lam2
        self.span = span
        self.q = q
        self.H = H
        self.EI = EI

    def eval(self, x: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (B, p): B[..., k] is the order-th derivative of basis k, p the particular."""
        x = np.asarray(x, dtype=float)
        lam, lam2 = self.lam, self.lam2
        B = np.zeros(x.shape + (4,))
        if self.kind == "series":
            t = lam * x
            cosh = np.cosh(t)
            sinh_l = x * _series(t * t, 1)  # sinh(t)/lam
            phi2 = x * x * _series(t * t, 2)  # (cosh t - 1)/lam^2
            phi3 = x**3 * _series(t * t, 3)  # (sinh t - t)/lam^3
            scale = -self.q / self.EI
            if order == 0:
                B[..., 0] = 1.0
                B[..., 1] = x
                B[..., 2] = phi2
                B[..., 3] = phi3
                p = scale * x**4 * _series(t * t, 4)
            elif order == 1:
                B[..., 1] = 1.0
                B[..., 2] = sinh_l
                B[..., 3] = phi2
                p = scale * phi3
            elif order == 2:
                B[..., 2] = cosh
                B[..., 3] = sinh_l
                p = scale * phi2
            elif order == 3:
                B[..., 2] = lam2 * sinh_l
                B[..., 3] = cosh
                p = scale * sinh_l
            elif order == 4:
                B[..., 2] = lam2 * cosh
                B[..., 3] = lam2 * sinh_l
                p = scale * cosh
            else:
                raise ValueError(order)
            return B, p
        ea = np.exp(-lam * x)
        eb = np.exp(-lam * (self.span - x))
        qh = self.q / self.H
        sign = -1.0 if order % 2 else 1.0
        lk = lam**order
        B[..., 2] = sign * lk * ea
        B[..., 3] = lk * eb
        if order == 0:
            B[..., 0] = 1.0
            B[..., 1] = x
            p = 0.5 * qh * x * x
        elif order == 1:
            B[..., 1] = 1.0
            p = qh * x
        elif order == 2:
            p = np.full_like(x, qh)
        else:
            p = np.zeros_like(x)
        return B, p


@dataclass(frozen=True)
class CatenarySolution:
    """A solved span; evaluate with :meth:`y`, :meth:`derivative` or :func:`sample`."""

    frame: LocalFrame
    H: float
    q: float
    lam: float
    coeffs: tuple[float, float, float, float]
    bc_a: BoundaryCondition
    bc_b: BoundaryCondition
    material: Material
    basis: str

    @property
    def EI(self) -> float:
        return self.material.EI

    @property
    def _b(self) -> _Basis:
        return _Basis(self.basis, self.lam, self.H / self.EI, self.frame.span, self.q, self.H, self.EI)

    def derivative(self, x, order: int = 0) -> np.ndarray:
        """order-th derivative of the chord-relative offset y at local x."""
        B, p = self._b.eval(np.asarray(x, dtype=float), order)
        return B @ np.asarray(self.coeffs) + p

    def y(self, x) -> np.ndarray:
        return self.derivative(x, 0)

    def slope(self, x) -> np.ndarray:
        """Physical slope dz/dx along A->B."""
        return self.frame.chord_slope + self.derivative(x, 1)

    def moment(self, x) -> np.ndarray:
        return self.EI * self.derivative(x, 2)

    def sag(self, n: int = 401) -> float:
        """Largest downward offset from the chord (m)."""
        xs = np.linspace(0.0, self.frame.span, n)
        return float(max(0.0, -np.min(self.y(xs))))

    @property
    def sag_ratio(self) -> float:
        return self.sag() / self.frame.span

    @property
    def sag_level(self) -> SagLevel:
        return sag_level(self.sag_ratio)


def sag_level(ratio: float) -> SagLevel:
    """Classify a sag-to-span ratio against the small-sag validity limits."""
    if ratio > 0.25:
        return SagLevel.WARNING
    if ratio > 0.125:
        return SagLevel.NOTE
    return SagLevel.OK


def solve_catenary(
    frame: LocalFrame,
    H: float,
    bc_a: BoundaryCondition,
    bc_b: BoundaryCondition,
    mat: Material,
) -> CatenarySolution:
    """Solve the span for horizontal force ``H`` and the two end conditions."""
    if not H >= H_MIN:
        raise ValueError(f"H={H!r} below H_min={H_MIN}")
    span = frame.span
    if span < EPS_SPAN:
        raise DegenerateSpan(f"span {span:.3e} m")
    EI = mat.EI
    if EI <= 0:
        raise ValueError("flexural rigidity must be positive")
    H = float(H)
    q = mat.weight * math.sqrt(1.0 + frame.chord_slope**2)
    lam2 = H / EI
    lam = math.sqrt(lam2)
    kind = "series" if lam * span <= _SERIES_LIMIT else "exp"
    basis = _Basis(kind, lam, lam2, span, q, H, EI)

    ends = np.array([0.0, span])
    B0, p0 = basis.eval(ends, 0)
    A = np.empty((4, 4))
    rhs = np.empty(4)
    A[0], rhs[0] = B0[0], -p0[0]
    A[1], rhs[1] = B0[1], -p0[1]
    for row, (bc, idx) in enumerate(((bc_a, 0), (bc_b, 1)), start=2):
        if bc.is_free:
            B, p = basis.eval(ends[idx : idx + 1], 2)
            A[row], rhs[row] = B[0], -p[0]
        else:
            B, p = basis.eval(ends[idx : idx + 1], 1)
            A[row], rhs[row] = B[0], bc.s_pre - frame.chord_slope - p[0]
    scale = np.max(np.abs(A), axis=0)
    scale[scale == 0.0] = 1.0
    try:
        c = np.linalg.solve(A / scale, rhs) / scale
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(c)):
        raise SingularSystem("non-finite coefficients")
    return CatenarySolution(
        frame=frame,
        H=H,
        q=q,
        lam=lam,
        coeffs=tuple(float(v) for v in c),
        bc_a=bc_a,
        bc_b=bc_b,
        material=mat,
        basis=kind,
    )


def sample(sol: CatenarySolution, n_pt: int = DEFAULT_NPT) -> np.ndarray:
    """Equispaced points along the span as an (n_pt, 3) array in global coordinates."""
    if n_pt < 2:
        raise ValueError("n_pt must be >= 2")
    fr = sol.frame
    t = np.linspace(0.0, 1.0, n_pt)
    y = sol.y(t * fr.span)
    pts = fr.origin + np.outer(t, fr.end - fr.origin)
    pts[:, 2] += y
    pts[0] = fr.origin
    pts[-1] = fr.end
    return pts


def straight(a, b, n_pt: int = DEFAULT_NPT) -> np.ndarray:
    """Straight polyline between two points."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pts = a + np.outer(np.linspace(0.0, 1.0, n_pt), b - a)
    pts[-1] = b
    return pts


def polyline_length(points) -> float:
    """Sum of Euclidean distances between consecutive points."""
    p = np.asarray(points, dtype=float)
    if len(p) < 2:
        return 0.0
    d = np.diff(p, axis=0)
    return float(np.sum(np.sqrt(np.einsum("ij,ij->i", d, d))))


def end_values(sol: CatenarySolution, end: Literal["A", "B"]) -> tuple[float, float]:
    """(physical slope, bending moment EI*y'') at end A or B."""
    x = 0.0 if end == "A" else sol.frame.span
    slope = float(sol.slope(x))
    moment = float(sol.moment(x))
    return slope, moment


def ode_residual(sol: CatenarySolution, x) -> np.ndarray:
    """``H y'' - EI y'''' - q`` from the analytic derivatives."""
    return sol.H * sol.derivative(x, 2) - sol.EI * sol.derivative(x, 4) - sol.q


def catenary_length(
    frame: LocalFrame,
    H: float,
    bc_a: BoundaryCondition,
    bc_b: BoundaryCondition,
    mat: Material,
    n_pt: int = DEFAULT_NPT,
) -> float:
    return polyline_length(sample(solve_catenary(frame, H, bc_a, bc_b, mat), n_pt))


def h_step(H: float) -> float:
    """Forward-difference step for dL/dH."""
    return 1e-6 * max(abs(H), H_MIN)


SLOPE_STEP = 1e-6


def length_sensitivity(
    sol: CatenarySolution,
    var: Literal["H", "slope_A", "slope_B"],
    n_pt: int = DEFAULT_NPT,
    base_length: float | None = None,
) -> float:
    """Forward-difference dL/dvar by re-solving the closed form at the perturbed value."""
    L0 = polyline_length(sample(sol, n_pt)) if base_length is None else base_length
    H, bc_a, bc_b = sol.H, sol.bc_a, sol.bc_b
    if var == "H":
        step = h_step(H)
        H = H + step
    elif var == "slope_A":
        if bc_a.is_free:
            raise InactiveVariable("end A has a free slope")
        step = SLOPE_STEP
        bc_a = BoundaryCondition.prescribed(bc_a.s_pre + step)
    elif var == "slope_B":
        if bc_b.is_free:
            raise InactiveVariable("end B has a free slope")
        step = SLOPE_STEP
        bc_b = BoundaryCondition.prescribed(bc_b.s_pre + step)
    else:
        raise InactiveVariable(f"unknown variable {var!r}")
    L1 = catenary_length(sol.frame, H, bc_a, bc_b, sol.material, n_pt)
    return (L1 - L0) / step


def estimate_H(frame: LocalFrame, L_set: float, mat: Material) -> float:
    """Parabolic-cable starting value for H."""
    span = frame.span
    q = mat.weight * math.sqrt(1.0 + frame.chord_slope**2)
    slack = max(L_set - frame.chord_length, 0.0)
    d0 = max(0.05 * span, math.sqrt(3.0 * span * slack / 8.0))
    return max(q * span * span / (8.0 * d0), H_MIN)


def solve_for_length(
    frame: LocalFrame,
    L_set: float,
    bc_a: BoundaryCondition,
    bc_b: BoundaryCondition,
    mat: Material,
    n_pt: int = DEFAULT_NPT,
    H0: float | None = None,
    tol: float = 1e-12,
    max_iter: int = 100,
) -> CatenarySolution:
    """Find H with polyline length equal to ``L_set``.

    Safeguarded Newton on log(H) inside a bracket that is grown as needed.
    Raises ValueError when the span is taut (no finite H reaches ``L_set``).
    """
    if L_set <= frame.chord_length:
        raise ValueError("taut span: chord not shorter than set length")

    def resid(h: float) -> tuple[float, CatenarySolution]:
        s = solve_catenary(frame, h, bc_a, bc_b, mat)
        return polyline_length(sample(s, n_pt)) - L_set, s

    h = max(H0 if H0 else estimate_H(frame, L_set, mat), H_MIN)
    lo, hi = math.log(H_MIN), None  # f(lo) assumed > 0 (too long)
    r, sol = resid(h)
    for _ in range(max_iter):
        if abs(r) <= tol:
            return sol
        u = math.log(h)
        if r > 0:
            lo = u
        else:
            hi = u
        step_h = h_step(h)
        r1, _ = resid(h + step_h)
        dLdu = (r1 - r) / step_h * h
        u_new = u - r / dLdu if dLdu < 0 else math.nan
        upper = hi if hi is not None else lo + 60.0
        if not (math.isfinite(u_new) and lo < u_new < upper):
            u_new = 0.5 * (lo + hi) if hi is not None else u + 2.0
        if hi is None:
            u_new = min(u_new, u + 3.0)
        h = math.exp(u_new)
        if h < H_MIN:
            h = H_MIN
        r, sol = resid(h)
    if abs(r) <= 1e3 * tol:
        return sol
    raise ValueError(f"length solve did not converge (residual {r:.3e} m)")

"""Ellipsometer forward model and linear Mueller-matrix estimation.

A capture sends unpolarized light ``[L, 0, 0, 0]`` through the generator
``P``, reflects it off the sample ``M`` and detects the first Stokes
component after the analyzer ``A``::

    f = [A @ M @ P @ s]_0

Since ``f`` is linear in ``M`` it can be written ``f = w · vec(M)`` with
``w = outer(A[0], P @ s)`` flattened row-major. Stacking ``w`` over captures
gives the design matrix used for least-squares estimation.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .mueller import canonical_angle, linear_polarizer, quarter_wave_plate, unpolarized

REFERENCE_ANGLE = 0.0
RANK_RTOL = 1e-10
ANGLE_FIELDS = ("theta_lg", "theta_qg", "theta_qa", "theta_la")


class Condition(enum.Enum):
    LP = "LP"
    QWP = "QWP"
    LP_QWP = "LP+QWP"

    @property
    def free_angles(self) -> tuple[str, ...]:
        """Names of the capture angles this condition rotates."""
        return _FREE[self]

    @property
    def has_waveplates(self) -> bool:
        return self is not Condition.LP

    @classmethod
    def parse(cls, text: "str | Condition") -> "Condition":
        if isinstance(text, cls):
            return text
        key = str(text).strip().upper().replace("_", "+")
        for c in cls:
            if c.value == key:
                return c
        raise ValueError(f"unknown condition {text!r}; expected one of LP, QWP, LP+QWP")


_FREE = {
    Condition.LP: ("theta_lg", "theta_la"),
    Condition.QWP: ("theta_qg", "theta_qa"),
    Condition.LP_QWP: ("theta_lg", "theta_qg", "theta_qa", "theta_la"),
}


@dataclass(frozen=True)
class CaptureConfig:
    """Element angles (radians) for one capture, canonicalized to [0, π)."""

    theta_lg: float = REFERENCE_ANGLE
    theta_qg: float = REFERENCE_ANGLE
    theta_qa: float = REFERENCE_ANGLE
    theta_la: float = REFERENCE_ANGLE

    def __post_init__(self):
        for name in ANGLE_FIELDS:
            object.__setattr__(self, name, canonical_angle(float(getattr(self, name))))

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in ANGLE_FIELDS])


@dataclass(frozen=True)
class MeasurementPlan:
    condition: Condition
    captures: tuple[CaptureConfig, ...]
    source_intensity: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "condition", Condition.parse(self.condition))
        caps = tuple(self.captures)
        if len(caps) < 1:
            raise ValueError("a measurement plan needs at least one capture")
        if not self.source_intensity > 0:
            raise ValueError("source intensity must be positive")
        # angles the condition does not rotate sit at the reference orientation
        fixed = {n: REFERENCE_ANGLE for n in ANGLE_FIELDS if n not in self.condition.free_angles}
        object.__setattr__(self, "captures", tuple(replace(c, **fixed) if fixed else c for c in caps))
        object.__setattr__(self, "source_intensity", float(self.source_intensity))

    @property
    def K(self) -> int:
        return len(self.captures)

    @classmethod
    def from_free_angles(cls, condition, angles, source_intensity: float = 1.0) -> "MeasurementPlan":
        """Build a plan from a ``(K, n_free)`` array ordered as ``condition.free_angles``."""
        condition = Condition.parse(condition)
        angles = np.atleast_2d(np.asarray(angles, dtype=float))
        names = condition.free_angles
        if angles.shape[1] != len(names):
            raise ValueError(f"{condition.value} needs {len(names)} angles per capture, got {angles.shape[1]}")
        caps = [CaptureConfig(**dict(zip(names, map(float, row)))) for row in angles]
        return cls(condition, tuple(caps), source_intensity)

    def free_angle_array(self) -> np.ndarray:
        names = self.condition.free_angles
        return np.array([[getattr(c, n) for n in names] for c in self.captures])

    def angle_array(self) -> np.ndarray:
        """All four angles per capture, shape (K, 4), in ``ANGLE_FIELDS`` order."""
        return np.array([c.as_array() for c in self.captures])

    def to_dict(self) -> dict:
        return {
            "condition": self.condition.value,
            "captures": [
                {f"{n}_deg": float(np.degrees(getattr(c, n))) for n in ANGLE_FIELDS} for c in self.captures
            ],
            "source_intensity": self.source_intensity,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MeasurementPlan":
        try:
            caps = [
                CaptureConfig(**{n: np.radians(float(c.get(f"{n}_deg", 0.0))) for n in ANGLE_FIELDS})
                for c in d["captures"]
            ]
            return cls(Condition.parse(d["condition"]), tuple(caps), float(d.get("source_intensity", 1.0)))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed plan: {exc}") from exc

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "MeasurementPlan":
        return cls.from_dict(json.loads(text))


def generator_matrix(c: CaptureConfig, tag: Condition) -> np.ndarray:
    tag = Condition.parse(tag)
    if tag is Condition.LP:
        return linear_polarizer(c.theta_lg)
    lp = REFERENCE_ANGLE if tag is Condition.QWP else c.theta_lg
    return quarter_wave_plate(c.theta_qg) @ linear_polarizer(lp)


def analyzer_matrix(c: CaptureConfig, tag: Condition) -> np.ndarray:
    tag = Condition.parse(tag)
    if tag is Condition.LP:
        return linear_polarizer(c.theta_la)
    lp = REFERENCE_ANGLE if tag is Condition.QWP else c.theta_la
    return linear_polarizer(lp) @ quarter_wave_plate(c.theta_qa)


def intensity(m: np.ndarray, c: CaptureConfig, tag: Condition, L: float = 1.0) -> float:
    """Simulated sensor reading for one capture."""
    if not L > 0:
        raise ValueError("source intensity must be positive")
    s = unpolarized(L)
    return float((analyzer_matrix(c, tag) @ np.asarray(m) @ generator_matrix(c, tag) @ s)[0])


def probe_vectors(plan: MeasurementPlan) -> tuple[np.ndarray, np.ndarray]:
    """Analyzer first rows and generated Stokes vectors, each of shape (K, 4)."""
    s = unpolarized(plan.source_intensity)
    a = np.array([analyzer_matrix(c, plan.condition)[0] for c in plan.captures])
    p = np.array([generator_matrix(c, plan.condition) @ s for c in plan.captures])
    return a, p


def simulate(plan: MeasurementPlan, m: np.ndarray) -> np.ndarray:
    """Intensities for one Mueller matrix (shape (K,)) or a batch (shape (B, K))."""
    a, p = probe_vectors(plan)
    return np.einsum("ki,...ij,kj->...k", a, np.asarray(m), p)


def build_design_matrix(plan: MeasurementPlan) -> np.ndarray:
    """K x 16 matrix ``W`` with ``W @ M.ravel() == simulate(plan, M)``."""
    a, p = probe_vectors(plan)
    return np.einsum("ki,kj->kij", a, p).reshape(plan.K, 16)


def _min_norm_solve(w: np.ndarray, f: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    u, sv, vt = np.linalg.svd(w, full_matrices=False)
    keep = sv > rtol * sv[0] if sv.size and sv[0] > 0 else np.zeros_like(sv, dtype=bool)
    coef = (u[:, keep].T @ f) / sv[keep]
    return vt[keep].T @ coef


def estimate_mueller(plan: MeasurementPlan, f: Sequence[float]) -> tuple[np.ndarray, float]:
    """Minimum-norm least-squares Mueller matrix and residual 2-norm.

    Rank-deficient plans are not an error: unobservable components of ``M``
    come back as zero.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (plan.K,):
        raise ValueError(f"expected {plan.K} intensities, got shape {f.shape}")
    w = build_design_matrix(plan)
    x = _min_norm_solve(w, f)
    return x.reshape(4, 4), float(np.linalg.norm(w @ x - f))


@dataclass(frozen=True)
class PlanDiagnostics:
    rank: int
    condition_number: float
    singular_values: np.ndarray = field(repr=False)


def plan_diagnostics(plan: MeasurementPlan, rtol: float = RANK_RTOL) -> PlanDiagnostics:
    """Numerical rank and conditioning of the plan's design matrix.

    ``singular_values`` always has 16 entries, zero-padded when K < 16.
    """
    sv = np.linalg.svd(build_design_matrix(plan), compute_uv=False)
    padded = np.zeros(16)
    padded[: min(16, sv.size)] = sv[:16]
    nonzero = sv[sv > rtol * sv[0]] if sv[0] > 0 else sv[:0]
    cond = float(nonzero[0] / nonzero[-1]) if nonzero.size else float("inf")
    return PlanDiagnostics(rank=int(nonzero.size), condition_number=cond, singular_values=padded)


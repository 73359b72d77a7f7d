"""State preparation for the protected subspace span{|01>, |10>}."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .opalgebra import basis_ket
from .qlinalg import projector

NAMED = ("01", "10", "singlet", "triplet")


class InvalidAngles(ValueError):
    pass


@dataclass(frozen=True)
class Fixture:
    """One row of the published random-state table.

    ``theta_deg``/``phi_deg`` are the listed angles; they do not reproduce
    the amplitudes under ``cos(t/2)|01> + e^{-i p} sin(t/2)|10>`` and are
    kept for labelling only. The amplitudes are authoritative.
    """

    label: str
    alpha: complex
    beta: complex
    theta_deg: float
    phi_deg: float

    @property
    def norm2(self) -> float:
        return abs(self.alpha) ** 2 + abs(self.beta) ** 2


FIXTURES = {
    f.label: f
    for f in (
        Fixture("RS-1", 0.2869, 0.9403 + 0.1828j, 147, 57),
        Fixture("RS-2", 0.1474, -(0.7586 + 0.6346j), 163, 349),
        Fixture("RS-3", 0.9802, 0.1079 - 0.1662j, 23, 345),
        Fixture("RS-4", 0.1356, 0.3646 - 0.9212j, 164, 175),
        Fixture("RS-5", 0.9883, 0.1048 + 0.1109j, 18, 51),
        Fixture("RS-6", 0.9058, 0.2153 + 0.3648j, 50, 152),
        Fixture("RS-7", 0.0667, -0.7693 + 0.6353j, 172, 285),
        Fixture("RS-8", 0.0551, 0.9861 - 0.1570j, 174, 346),
    )
}
FIXTURE_NORM_TOL = 5e-4


@dataclass(frozen=True)
class StateSpec:
    """Which subspace state to prepare.

    ``kind`` is one of ``named``, ``angles`` (degrees), ``random`` or ``fixture``.
    """

    kind: str
    name: Optional[str] = None
    theta: Optional[float] = None
    phi: Optional[float] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind == "named":
            if self.name not in NAMED:
                raise ValueError(f"unknown named state {self.name!r}; choose from {NAMED}")
        elif self.kind == "angles":
            if self.theta is None or self.phi is None:
                raise InvalidAngles("angles need theta and phi")
            if not 0 <= self.theta <= 180 or not 0 <= self.phi < 360:
                raise InvalidAngles(f"theta={self.theta}, phi={self.phi} outside [0,180] x [0,360)")
        elif self.kind == "random":
            if self.seed is None:
                raise ValueError("random states need a seed")
        elif self.kind == "fixture":
            if self.name not in FIXTURES:
                raise ValueError(f"unknown fixture {self.name!r}")
        else:
            raise ValueError(f"unknown state kind {self.kind!r}")

    @classmethod
    def named(cls, name: str) -> "StateSpec":
        return cls("named", name=name)

    @classmethod
    def angles(cls, theta: float, phi: float) -> "StateSpec":
        return cls("angles", theta=float(theta), phi=float(phi))

    @classmethod
    def random(cls, seed: int) -> "StateSpec":
        return cls("random", seed=int(seed))

    @classmethod
    def fixture(cls, label: str) -> "StateSpec":
        return cls("fixture", name=label)

    @classmethod
    def from_dict(cls, d) -> "StateSpec":
        if not isinstance(d, dict) or len(d) != 1:
            raise ValueError(f"state must be a one-key object, got {d!r}")
        (key, val), = d.items()
        if key == "named":
            return cls.named(val)
        if key == "angles":
            extra = set(val) - {"theta", "phi"}
            if extra:
                raise ValueError(f"unknown angle fields {sorted(extra)}")
            return cls.angles(val["theta"], val["phi"])
        if key == "random":
            return cls.random(val)
        if key == "fixture":
            return cls.fixture(val)
        raise ValueError(f"unknown state kind {key!r}")

    def to_dict(self) -> dict:
        if self.kind in ("named", "fixture"):
            return {self.kind: self.name}
        if self.kind == "angles":
            return {"angles": {"theta": self.theta, "phi": self.phi}}
        return {"random": self.seed}

    @property
    def label(self) -> str:
        if self.kind in ("named", "fixture"):
            return self.name
        if self.kind == "angles":
            return f"theta{self.theta:g}_phi{self.phi:g}"
        return f"random{self.seed}"


def random_angles(seed: int) -> tuple[float, float]:
    """Uniform point on the subspace Bloch sphere, as (theta, phi) in degrees."""
    rng = np.random.default_rng(seed)
    cos_theta = rng.uniform(-1.0, 1.0)
    phi = rng.uniform(0.0, 360.0)
    return math.degrees(math.acos(cos_theta)), phi


def subspace_ket(alpha: complex, beta: complex) -> np.ndarray:
    return alpha * basis_ket("01") + beta * basis_ket("10")


def angles_ket(theta_deg: float, phi_deg: float) -> np.ndarray:
    t = math.radians(theta_deg) / 2
    return subspace_ket(math.cos(t), cmath.exp(-1j * math.radians(phi_deg)) * math.sin(t))


def state_vector(spec: StateSpec) -> np.ndarray:
    if spec.kind == "named":
        r = 1 / math.sqrt(2)
        return {
            "01": subspace_ket(1, 0),
            "10": subspace_ket(0, 1),
            "singlet": subspace_ket(r, -r),
            "triplet": subspace_ket(r, r),
        }[spec.name]
    if spec.kind == "angles":
        return angles_ket(spec.theta, spec.phi)
    if spec.kind == "random":
        return angles_ket(*random_angles(spec.seed))
    fx = FIXTURES[spec.name]
    psi = subspace_ket(fx.alpha, fx.beta)
    return psi / np.linalg.norm(psi)


def prepare_state(spec: StateSpec, pseudopure_epsilon: float = 0.0) -> np.ndarray:
    """Density matrix of the state; ``epsilon > 0`` gives ``(1-e)/4 I + e|psi><psi|``."""
    if not 0 <= pseudopure_epsilon <= 1:
        raise ValueError("pseudopure_epsilon must lie in [0, 1]")
    rho = projector(state_vector(spec))
    if pseudopure_epsilon == 0:
        return rho
    return (1 - pseudopure_epsilon) / 4 * np.eye(4) + pseudopure_epsilon * rho


def subspace_angles(psi: np.ndarray) -> tuple[float, float]:
    """(theta, phi) in degrees of a subspace ket, with the |01> amplitude made real."""
    a, b = psi[1], psi[2]
    theta = 2 * math.degrees(math.acos(min(abs(a) / math.hypot(abs(a), abs(b)), 1.0)))
    if abs(a) < 1e-15 or abs(b) < 1e-15:
        return theta, 0.0
    phi = (-math.degrees(cmath.phase(b / a))) % 360.0
    return theta, phi

"""Decoherence backends and the rotating-frame system Hamiltonian.

Two noise models are provided:

* a sampled system-bath Hamiltonian (unitary evolution of qubits plus a few
  bath spins, arbitrary coupling), and
* a Markovian T1/T2 model as a Lindblad superoperator on the 4x4 system.

Superoperators act on row-major vectorised density matrices,
``vec(A rho B) = kron(A, B.T) @ vec(rho)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .qlinalg import random_hermitian, tensor

TWO_PI = 2.0 * math.pi
MAX_TOTAL_DIM = 64

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)
IZ = SZ / 2
# |0><1|: qubit relaxes towards |0>
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
PAULIS = (SX, SY, SZ)


class DimensionTooLarge(ValueError):
    pass


class Unphysical(ValueError):
    pass


def on_qubit(op: np.ndarray, qubit: int) -> np.ndarray:
    """Embed a single-qubit operator on qubit 1 or 2 of the pair."""
    return tensor(op, I2) if qubit == 1 else tensor(I2, op)


@dataclass(frozen=True)
class SystemParams:
    """Rotating-frame offsets and scalar coupling, all in Hz."""

    nu_h: float = 0.0
    nu_c: float = 0.0
    j12: float = 215.0


@dataclass(frozen=True)
class LindbladConfig:
    """Per-qubit relaxation times in seconds; ``math.inf`` disables a channel."""

    t1_q1: float
    t1_q2: float
    t2_q1: float
    t2_q2: float

    def __post_init__(self):
        for name in ("t1_q1", "t1_q2", "t2_q1", "t2_q2"):
            if not getattr(self, name) > 0:
                raise Unphysical(f"{name} must be positive")
        for q in (1, 2):
            t1 = getattr(self, f"t1_q{q}")
            t2 = getattr(self, f"t2_q{q}")
            if t2 > 2 * t1:
                raise Unphysical(f"qubit {q}: T2 = {t2} exceeds 2*T1 = {2 * t1}")

    def rates(self, qubit: int) -> tuple[float, float]:
        """(amplitude damping rate, pure dephasing rate) for one qubit."""
        t1 = getattr(self, f"t1_q{qubit}")
        t2 = getattr(self, f"t2_q{qubit}")
        gamma_amp = 1.0 / t1
        gamma_phi = max(1.0 / t2 - 0.5 / t1, 0.0)
        return gamma_amp, gamma_phi


@dataclass(frozen=True)
class SpinBathConfig:
    """Random bath of ``2 * bath_spins_per_qubit`` spins; scales in rad/s."""

    bath_spins_per_qubit: int = 1
    coupling_scale: float = 1.0
    bath_internal_scale: float = 1.0
    qubit_qubit_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.bath_spins_per_qubit < 1:
            raise ValueError("bath_spins_per_qubit must be >= 1")
        for name in ("coupling_scale", "bath_internal_scale", "qubit_qubit_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def bath_dim(self) -> int:
        return 2 ** (2 * self.bath_spins_per_qubit)

    @property
    def total_dim(self) -> int:
        return 4 * self.bath_dim


def rotating_frame_hamiltonian(p: SystemParams) -> np.ndarray:
    """``-2 pi (nu_h Iz1 + nu_c Iz2) + 2 pi J Iz1 Iz2`` in rad/s."""
    iz1 = on_qubit(IZ, 1)
    iz2 = on_qubit(IZ, 2)
    return -TWO_PI * (p.nu_h * iz1 + p.nu_c * iz2) + TWO_PI * p.j12 * (iz1 @ iz2)


def _unit_norm_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    h = random_hermitian(dim, rng)
    return h / np.linalg.norm(h, 2)


def sample_bath_hamiltonian(cfg: SpinBathConfig, p: SystemParams | None = None) -> np.ndarray:
    """Draw a system-bath Hamiltonian, system as the leading tensor factor.

    ``H = H_S x I_B + I_S x H_B + sum_{j,a} g_ja sigma_a^j x B_ja
    + sum_{a,b} c_ab sigma_a^1 sigma_b^2 x C_ab`` with Gaussian ``g`` and
    ``c`` and unit-spectral-norm random Hermitian bath operators.
    """
    if cfg.total_dim > MAX_TOTAL_DIM:
        raise DimensionTooLarge(f"total dimension {cfg.total_dim} exceeds {MAX_TOTAL_DIM}")
    p = SystemParams(j12=0.0) if p is None else p
    rng = np.random.default_rng(cfg.seed)
    db = cfg.bath_dim
    ib = np.eye(db, dtype=complex)
    h = tensor(rotating_frame_hamiltonian(p), ib)

    hb = _unit_norm_hermitian(db, rng)
    h = h + cfg.bath_internal_scale * tensor(np.eye(4), hb)

    for qubit in (1, 2):
        for sigma in PAULIS:
            g = rng.normal(0.0, 1.0) * cfg.coupling_scale
            h = h + g * tensor(on_qubit(sigma, qubit), _unit_norm_hermitian(db, rng))

    for sa in PAULIS:
        for sb in PAULIS:
            c = rng.normal(0.0, 1.0) * cfg.qubit_qubit_scale
            h = h + c * tensor(sa, sb, _unit_norm_hermitian(db, rng))
    return 0.5 * (h + h.conj().T)


def hamiltonian_superoperator(h: np.ndarray) -> np.ndarray:
    """Generator of ``-i[h, rho]``."""
    eye = np.eye(h.shape[0])
    return -1j * (np.kron(h, eye) - np.kron(eye, h.T))


def dissipator(op: np.ndarray) -> np.ndarray:
    """Generator of ``op rho op^dag - {op^dag op, rho}/2``."""
    eye = np.eye(op.shape[0])
    ll = op.conj().T @ op
    return np.kron(op, op.conj()) - 0.5 * np.kron(ll, eye) - 0.5 * np.kron(eye, ll.T)


def lindblad_superoperator(cfg: LindbladConfig, hamiltonian: np.ndarray | None = None) -> np.ndarray:
    """16x16 generator with amplitude damping ``1/T1`` and dephasing ``1/T2 - 1/(2 T1)``."""
    gen = np.zeros((16, 16), dtype=complex)
    if hamiltonian is not None:
        gen += hamiltonian_superoperator(np.asarray(hamiltonian, dtype=complex))
    for q in (1, 2):
        g_amp, g_phi = cfg.rates(q)
        if g_amp > 0:
            gen += g_amp * dissipator(on_qubit(SIGMA_MINUS, q))
        if g_phi > 0:
            gen += 0.5 * g_phi * dissipator(on_qubit(SZ, q))
    return gen


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho, dtype=complex).reshape(-1)


def unvec(v: np.ndarray) -> np.ndarray:
    d = int(round(math.sqrt(v.size)))
    return v.reshape(d, d)


def choi_matrix(superop: np.ndarray) -> np.ndarray:
    """Choi matrix ``sum_ij |i><j| x E(|i><j|)`` of a superoperator."""
    d = int(round(math.sqrt(superop.shape[0])))
    choi = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        for j in range(d):
            e = np.zeros((d, d), dtype=complex)
            e[i, j] = 1.0
            choi += np.kron(e, unvec(superop @ vec(e)))
    return choi

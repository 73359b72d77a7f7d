"""Two-qubit Pauli tomography with a maximum-likelihood reconstruction.

Records hold expectation values of the fifteen non-identity Pauli strings
(NMR observables are ensemble averages, so a Gaussian noise model is used
and the likelihood reduces to a least-squares residual). The estimate is
parameterised as ``rho = T^dag T / tr(T^dag T)`` with lower-triangular
``T``, which keeps every iterate physical.
"""

from __future__ import annotations

import csv
import io
import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .noise_models import I2, SX, SY, SZ
from .qlinalg import check_density_matrix, fidelity

_SINGLE = {"I": I2, "X": SX, "Y": SY, "Z": SZ}

OBSERVABLES = tuple(a + b for a, b in itertools.product("IXYZ", repeat=2) if a + b != "II")
PAULI_MATRICES = np.array([np.kron(_SINGLE[s[0]], _SINGLE[s[1]]) for s in OBSERVABLES])
# row k maps row-major vec(rho) to tr(P_k rho)
_FORWARD = np.array([p.T.reshape(-1) for p in PAULI_MATRICES])

MAX_ITER = 10_000
GRAD_TOL = 1e-8
DECREASE_TOL = 1e-12


class DidNotConverge(RuntimeWarning):
    pass


@dataclass(frozen=True)
class MeasurementRecord:
    observables: tuple
    values: np.ndarray
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if tuple(self.observables) != OBSERVABLES:
            raise ValueError("records must list the 15 Pauli strings in canonical order")
        if np.shape(self.values) != (15,):
            raise ValueError("records hold exactly 15 values")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["observable", "value"])
        for name, v in zip(self.observables, self.values):
            w.writerow([name, f"{v:.12g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, noise_sigma: float = 0.0, seed: int = 0) -> "MeasurementRecord":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if rows and rows[0][0].strip().lower() == "observable":
            rows = rows[1:]
        found = {name.strip().upper(): float(v) for name, v in rows}
        missing = [o for o in OBSERVABLES if o not in found]
        extra = sorted(set(found) - set(OBSERVABLES))
        if missing or extra:
            raise ValueError(f"record file: missing {missing}, unexpected {extra}")
        return cls(OBSERVABLES, np.array([found[o] for o in OBSERVABLES]), noise_sigma, seed)


@dataclass(frozen=True)
class ReconstructionResult:
    rho: np.ndarray
    residual: float
    iterations: int
    converged: bool


def expectation_values(rho: np.ndarray) -> np.ndarray:
    return np.real(_FORWARD @ np.asarray(rho, dtype=complex).reshape(-1))


def simulate_measurements(rho: np.ndarray, noise_sigma: float = 0.0, seed: int = 0) -> MeasurementRecord:
    rho = check_density_matrix(rho, herm_tol=1e-9)
    if rho.shape != (4, 4):
        raise ValueError("tomography is defined for two-qubit (4x4) states")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    values = expectation_values(rho)
    if noise_sigma > 0:
        values = values + np.random.default_rng(seed).normal(0.0, noise_sigma, size=values.shape)
    return MeasurementRecord(OBSERVABLES, values, float(noise_sigma), int(seed))


def linear_inversion(values: np.ndarray) -> np.ndarray:
    return (np.eye(4) + np.tensordot(values, PAULI_MATRICES, axes=1)) / 4


def project_psd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    w = np.clip(w, 0.0, None)
    if w.sum() <= 0:
        return np.eye(4, dtype=complex) / 4
    rho = (v * w) @ v.conj().T
    return rho / np.trace(rho).real


def _factor(rho: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Lower-triangular T with ``T^dag T`` proportional to ``rho`` (regularised)."""
    m = rho + floor * np.eye(4)
    j = np.eye(4)[::-1]
    lower = np.linalg.cholesky(j @ m @ j)
    return j @ lower.conj().T @ j


def _state(t: np.ndarray) -> np.ndarray:
    m = t.conj().T @ t
    return m / np.trace(m).real


_LOWER = np.tril(np.ones((4, 4), dtype=bool))


def _objective(t: np.ndarray, values: np.ndarray) -> tuple[float, np.ndarray]:
    rho = _state(t)
    r = expectation_values(rho) - values
    return float(r @ r), r


def _gradient(t: np.ndarray, r: np.ndarray) -> np.ndarray:
    rho = _state(t)
    g = 2.0 * np.tensordot(r, PAULI_MATRICES, axes=1)
    gm = (g - np.trace(g @ rho).real * np.eye(4)) / np.trace(t.conj().T @ t).real
    grad = 2.0 * t @ gm
    grad = np.where(_LOWER, grad, 0.0)
    return grad - 1j * np.diag(np.diag(grad).imag)


def _descend(t: np.ndarray, values: np.ndarray, max_iter: int) -> tuple[np.ndarray, float, int, bool]:
    t = t / np.sqrt(np.trace(t.conj().T @ t).real)
    f, r = _objective(t, values)
    step = 1.0
    for it in range(1, max_iter + 1):
        grad = _gradient(t, r)
        if np.linalg.norm(grad) < GRAD_TOL:
            return t, f, it, True
        while True:
            cand = t - step * grad
            cand = cand / np.sqrt(np.trace(cand.conj().T @ cand).real)
            f_new, r_new = _objective(cand, values)
            if f_new <= f:
                break
            step *= 0.5
            if step < 1e-14:
                # no descent direction left at machine precision
                return t, f, it, True
        decrease = f - f_new
        t, f, r = cand, f_new, r_new
        if decrease < DECREASE_TOL:
            return t, f, it, True
        step *= 1.5
    return t, f, max_iter, False


def mle_reconstruct(record: MeasurementRecord, max_iter: int = MAX_ITER) -> ReconstructionResult:
    """Least-squares maximum-likelihood estimate over physical states.

    Descent starts from the linear-inversion estimate projected onto the
    PSD cone. If that run fails the convergence test it is restarted once
    from the maximally mixed state and the better of the two is kept.
    """
    values = np.asarray(record.values, dtype=float)
    start = _factor(project_psd(linear_inversion(values)))
    t, f, its, ok = _descend(start, values, max_iter)
    if not ok:
        t2, f2, its2, ok = _descend(np.eye(4, dtype=complex) / 2, values, max_iter)
        its += its2
        if f2 <= f:
            t, f = t2, f2
    if not ok:
        warnings.warn(f"MLE did not converge within {max_iter} iterations", DidNotConverge)
    rho = _state(t)
    rho = 0.5 * (rho + rho.conj().T)
    return ReconstructionResult(rho, f, its, ok)


def fidelity_report(rho_hat: np.ndarray, rho_ref: np.ndarray) -> float:
    return fidelity(check_density_matrix(rho_hat, 1e-9), check_density_matrix(rho_ref, 1e-9))


def matrix_to_text(rho: np.ndarray) -> str:
    """Sixteen ``row,col,re,im`` lines."""
    return "".join(f"{i},{j},{rho[i, j].real:.12g},{rho[i, j].imag:.12g}\n"
                   for i in range(4) for j in range(4))


def matrix_from_text(text: str) -> np.ndarray:
    rho = np.zeros((4, 4), dtype=complex)
    seen = set()
    for line in text.strip().splitlines():
        i, j, re, im = line.split(",")
        rho[int(i), int(j)] = float(re) + 1j * float(im)
        seen.add((int(i), int(j)))
    if len(seen) != 16:
        raise ValueError("matrix file must define all 16 entries")
    return rho

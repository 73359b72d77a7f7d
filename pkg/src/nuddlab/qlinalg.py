"""Small dense complex linear algebra used throughout the package.

Matrices are plain ``numpy.ndarray`` objects of dtype ``complex128``. The
helpers here validate the structural contracts (hermiticity, positivity,
unit trace) and implement matrix functions through the Hermitian
eigen-decomposition, which is exact enough at the dimensions we care about
(at most 64).
"""

from __future__ import annotations

import numpy as np

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-10
PSD_TOL = 1e-10
PSD_REJECT = 1e-6
SUPPORT_TOL = 1e-13


class LinalgError(ValueError):
    """Base class for kernel errors."""


class NotHermitian(LinalgError):
    pass


class NotPSD(LinalgError):
    pass


class NotUnitary(LinalgError):
    pass


class DimMismatch(LinalgError):
    pass


class InvalidState(LinalgError):
    pass


def as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimMismatch(f"expected a square matrix, got shape {a.shape}")
    return a


def adjoint(m) -> np.ndarray:
    """Conjugate transpose."""
    return as_matrix(m).conj().T


def hermitian_defect(m) -> float:
    a = as_matrix(m)
    return float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0


def is_hermitian(m, tol: float = HERMITIAN_TOL) -> bool:
    return hermitian_defect(m) <= tol


def require_hermitian(m, tol: float = HERMITIAN_TOL) -> np.ndarray:
    a = as_matrix(m)
    defect = hermitian_defect(a)
    if defect > tol:
        raise NotHermitian(f"max|A - A^dag| = {defect:.3e} exceeds {tol:.1e}")
    return a


def is_unitary(u, tol: float = 1e-9) -> bool:
    a = as_matrix(u)
    return bool(np.max(np.abs(a.conj().T @ a - np.eye(a.shape[0]))) <= tol)


def hermitian_eig(m, tol: float = HERMITIAN_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and unitary eigenvector matrix of a Hermitian matrix.

    The input is symmetrised before the LAPACK call so that roundoff below
    ``tol`` cannot leak into the eigenvectors.
    """
    a = require_hermitian(m, tol)
    a = 0.5 * (a + a.conj().T)
    w, v = np.linalg.eigh(a)
    return w, v


def _apply_spectral(w: np.ndarray, v: np.ndarray, fw: np.ndarray) -> np.ndarray:
    return (v * fw) @ v.conj().T


def expm_herm_generator(h, t: float, tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Return ``exp(-i h t)`` for Hermitian ``h``."""
    w, v = hermitian_eig(h, tol)
    return _apply_spectral(w, v, np.exp(-1j * w * t))


def sqrtm_psd(m, tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Principal square root of a positive semidefinite Hermitian matrix.

    Negative eigenvalues down to ``-PSD_REJECT`` are treated as roundoff and
    clamped to zero.
    """
    w, v = hermitian_eig(m, tol)
    if w.size and w[0] < -PSD_REJECT:
        raise NotPSD(f"minimum eigenvalue {w[0]:.3e} below -{PSD_REJECT:.0e}")
    return _apply_spectral(w, v, np.sqrt(np.clip(w, 0.0, None)))


def tensor(*ops) -> np.ndarray:
    """Kronecker product, leftmost argument is the leading factor."""
    out = np.ones((1, 1), dtype=complex)
    for op in ops:
        out = np.kron(out, as_matrix(op))
    return out


def ket(amplitudes) -> np.ndarray:
    """Validate and return a normalised state vector."""
    psi = np.asarray(amplitudes, dtype=complex).reshape(-1)
    norm = np.vdot(psi, psi).real
    if abs(norm - 1.0) > 1e-12:
        raise InvalidState(f"state norm^2 = {norm!r}, expected 1")
    return psi


def projector(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    return np.outer(psi, psi.conj())


def check_density_matrix(rho, herm_tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Validate a density matrix and return it as a complex array.

    Raises ``InvalidState`` for trace or positivity violations.
    """
    a = require_hermitian(rho, herm_tol)
    tr = np.trace(a).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise InvalidState(f"trace {tr!r} differs from 1 by more than {TRACE_TOL}")
    wmin = np.linalg.eigvalsh(0.5 * (a + a.conj().T))[0]
    if wmin < -PSD_TOL:
        raise InvalidState(f"minimum eigenvalue {wmin:.3e} below -{PSD_TOL:.0e}")
    return a


def is_density_matrix(rho, herm_tol: float = HERMITIAN_TOL) -> bool:
    try:
        check_density_matrix(rho, herm_tol)
    except LinalgError:
        return False
    return True


def _support(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a PSD matrix with eigenvalue above ``SUPPORT_TOL``."""
    w, v = hermitian_eig(m, tol=1e-9)
    if w.size and w[0] < -PSD_REJECT:
        raise NotPSD(f"minimum eigenvalue {w[0]:.3e} below -{PSD_REJECT:.0e}")
    keep = w > SUPPORT_TOL
    return w[keep], v[:, keep]


def fidelity(a, b) -> float:
    """Uhlmann-Jozsa fidelity ``(tr sqrt(sqrt(a) b sqrt(a)))**2`` clamped to [0, 1].

    The kernel is evaluated on the support of whichever argument has the
    lower rank. Square roots of roundoff-level eigenvalues (about 1e-17 for
    rank-deficient states) would otherwise put an error near 1e-8 on the
    result; for a pure argument this reduces to ``<psi|other|psi>``.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise DimMismatch(f"fidelity between {a.shape} and {b.shape}")
    wa, va = _support(a)
    wb, vb = _support(b)
    if wb.size < wa.size:
        wa, va, b = wb, vb, a
    s = va * np.sqrt(wa)
    inner = s.conj().T @ b @ s
    w = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    f = float(np.sum(np.sqrt(np.clip(w, 0.0, None))) ** 2)
    return min(max(f, 0.0), 1.0)


def partial_trace_bath(rho, bath_dim: int) -> np.ndarray:
    """Trace out the trailing ``bath_dim`` factor of a system-bath operator."""
    a = as_matrix(rho)
    n = a.shape[0]
    if bath_dim < 1 or n % bath_dim:
        raise DimMismatch(f"dimension {n} is not divisible by bath_dim={bath_dim}")
    d = n // bath_dim
    return np.einsum("iaja->ij", a.reshape(d, bath_dim, d, bath_dim))


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    """GUE-style random Hermitian matrix (unnormalised)."""
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return 0.5 * (g + g.conj().T)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary via QR with phase fix."""
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def random_density_matrix(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_pure_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return psi / np.linalg.norm(psi)

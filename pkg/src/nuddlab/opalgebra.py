"""Operator algebra for protecting the {|01>, |10>} subspace.

The computational basis is ordered ``|00>, |01>, |10>, |11>`` everywhere in
this package. Qubit 1 is the leftmost tensor factor.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .qlinalg import DimMismatch, as_matrix

COMMUTATION_TOL = 1e-10

BASIS_LABELS = ("00", "01", "10", "11")


def basis_ket(label: str) -> np.ndarray:
    v = np.zeros(4, dtype=complex)
    v[BASIS_LABELS.index(label)] = 1.0
    return v


def ketbra(a: str, b: str) -> np.ndarray:
    return np.outer(basis_ket(a), basis_ket(b).conj())


class ControlId(str, enum.Enum):
    X0 = "X0"
    X1 = "X1"
    XPHI = "Xphi"

    def __str__(self) -> str:
        return self.value


class Relation(str, enum.Enum):
    COMMUTE = "Commute"
    ANTICOMMUTE = "Anticommute"
    NEITHER = "Neither"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class YBasis:
    """The sixteen subspace-adapted two-qubit operators, indexed from 1."""

    operators: tuple

    def __post_init__(self):
        if len(self.operators) != 16:
            raise ValueError("YBasis holds exactly 16 operators")

    def __getitem__(self, index: int) -> np.ndarray:
        if not 1 <= index <= 16:
            raise IndexError(f"Y index {index} outside 1..16")
        return self.operators[index - 1]

    def __len__(self) -> int:
        return 16

    def __iter__(self):
        return iter(self.operators)

    def gram_rank(self, tol: float = 1e-10) -> int:
        vecs = np.array([op.reshape(-1) for op in self.operators])
        return int(np.linalg.matrix_rank(vecs @ vecs.conj().T, tol=tol))


def build_y_basis() -> YBasis:
    kb = ketbra
    ops = (
        np.eye(4, dtype=complex),
        kb("01", "01") + kb("10", "10"),
        kb("00", "11"),
        kb("00", "00") - kb("11", "11"),
        kb("11", "00"),
        kb("01", "01") - kb("10", "10"),
        kb("10", "00"),
        kb("00", "10"),
        kb("10", "11"),
        kb("11", "10"),
        kb("01", "00"),
        kb("00", "01"),
        kb("01", "11"),
        kb("11", "01"),
        kb("01", "10") + kb("10", "01"),
        -1j * (kb("10", "01") - kb("01", "10")),
    )
    for op in ops:
        op.setflags(write=False)
    return YBasis(ops)


@dataclass(frozen=True)
class ControlOp:
    id: ControlId
    matrix: np.ndarray

    def __post_init__(self):
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > 1e-12 or np.max(np.abs(m @ m - np.eye(4))) > 1e-12:
            raise ValueError(f"{self.id} is not a Hermitian involution")


def build_control(cid) -> ControlOp:
    """Control involution ``I - 2|chi><chi|`` for the requested layer."""
    cid = ControlId(cid)
    eye = np.eye(4, dtype=complex)
    if cid is ControlId.X0:
        m = eye - 2 * ketbra("01", "01")
    elif cid is ControlId.X1:
        m = eye - 2 * ketbra("10", "10")
    else:
        s = basis_ket("01") + basis_ket("10")
        m = eye - np.outer(s, s.conj())
    m.setflags(write=False)
    return ControlOp(cid, m)


def classify_commutation(x, y, tol: float = COMMUTATION_TOL) -> Relation:
    x = as_matrix(x)
    y = as_matrix(y)
    if x.shape != y.shape:
        raise DimMismatch(f"cannot compare {x.shape} with {y.shape}")
    xy = x @ y
    yx = y @ x
    if np.max(np.abs(xy - yx)) <= tol:
        return Relation.COMMUTE
    if np.max(np.abs(xy + yx)) <= tol:
        return Relation.ANTICOMMUTE
    return Relation.NEITHER


_SURVIVORS = {1: frozenset(range(1, 11)), 2: frozenset(range(1, 7)), 3: frozenset(range(1, 6))}

# layer -> control locking that layer
LAYER_CONTROL = {1: ControlId.X0, 2: ControlId.X1, 3: ControlId.XPHI}


def predicted_surviving_set(layer: int) -> frozenset:
    """Indices of Y operators left in the effective Hamiltonian after ``layer``."""
    try:
        return _SURVIVORS[layer]
    except KeyError:
        raise ValueError(f"layer must be 1, 2 or 3, got {layer!r}") from None


def commutation_table(basis: YBasis | None = None) -> dict:
    """Full 3x16 relation table keyed by control id, values indexed 1..16."""
    basis = build_y_basis() if basis is None else basis
    table = {}
    for cid in ControlId:
        x = build_control(cid).matrix
        table[cid] = {i: classify_commutation(x, basis[i]) for i in range(1, 17)}
    return table


def layer_reduction_mismatches(table: dict) -> list[str]:
    """Compare a commutation table against the nested-layer reductions.

    Each layer's control must anticommute with exactly the operators it
    removes and commute with the survivors, considering only operators that
    reached that layer. Returns a list of human-readable discrepancies.
    """
    problems = []
    reaching = frozenset(range(1, 17))
    for layer in (1, 2, 3):
        cid = LAYER_CONTROL[layer]
        survivors = predicted_surviving_set(layer)
        for i in sorted(reaching):
            want = Relation.COMMUTE if i in survivors else Relation.ANTICOMMUTE
            got = table[cid][i]
            if got is not want:
                problems.append(f"{cid} vs Y{i}: expected {want}, got {got}")
        reaching = survivors
    return problems


def format_commutation_table(table: dict) -> str:
    short = {Relation.COMMUTE: "C", Relation.ANTICOMMUTE: "A", Relation.NEITHER: "-"}
    header = "      " + " ".join(f"Y{i:<3d}" for i in range(1, 17))
    lines = [header]
    for cid, row in table.items():
        lines.append(f"{cid.value:<5s} " + " ".join(f"{short[row[i]]:<4s}" for i in range(1, 17)))
    return "\n".join(lines)

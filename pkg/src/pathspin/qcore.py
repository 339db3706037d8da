"""Dense linear algebra on labeled products of two-level systems.

Basis conventions are fixed: for a path label, index 0 is arm 1 and index 1
is arm 2; for a spin label, index 0 is up-z and index 1 is down-z. A state on
labels ``(a, b)`` stores amplitudes in Kronecker order, ``a`` most
significant. At most four subsystems (dimension 16) are supported.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt

import numpy as np

MAX_SUBSYSTEMS = 4
STRUCT_TOL = 1e-12
UNIT_TOL = 1e-9
IMAG_TOL = 1e-10

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)
PAULIS = (SIGMA_X, SIGMA_Y, SIGMA_Z)

KINDS = ("unitary", "hermitian", "projector", "general")


def _frozen(a):
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BlochVector:
    x: float
    y: float
    z: float

    @classmethod
    def of(cls, v) -> "BlochVector":
        if isinstance(v, BlochVector):
            return v
        x, y, z = (float(c) for c in v)
        return cls(x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))

    def is_unit(self, tol: float = UNIT_TOL) -> bool:
        return abs(self.norm() - 1.0) <= tol

    def __neg__(self) -> "BlochVector":
        return BlochVector(-self.x, -self.y, -self.z)

    def __iter__(self):
        return iter((self.x, self.y, self.z))


XHAT = BlochVector(1.0, 0.0, 0.0)
YHAT = BlochVector(0.0, 1.0, 0.0)
ZHAT = BlochVector(0.0, 0.0, 1.0)


def _require_unit(n) -> BlochVector:
    n = BlochVector.of(n)
    if not np.all(np.isfinite(n.as_array())) or not n.is_unit():
        raise ValueError(f"direction {tuple(n)} is not a unit vector")
    # absorb the admitted 1e-9 slack so derived projectors stay exactly idempotent
    return BlochVector.of(n.as_array() / n.norm())


def _check_labels(labels):
    labels = tuple(labels)
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate subsystem labels in {labels}")
    if len(labels) > MAX_SUBSYSTEMS:
        raise ValueError(f"at most {MAX_SUBSYSTEMS} subsystems supported, got {len(labels)}")
    return labels


@dataclass(frozen=True)
class StateVector:
    labels: tuple
    amps: np.ndarray = field(repr=False)

    def __post_init__(self):
        labels = _check_labels(self.labels)
        amps = _frozen(self.amps).reshape(-1)
        if amps.size != 2 ** len(labels):
            raise ValueError(
                f"{amps.size} amplitudes do not fit {len(labels)} two-level subsystems"
            )
        if not np.all(np.isfinite(amps)):
            raise ValueError("amplitudes must be finite")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "amps", amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def normalize(self) -> "StateVector":
        n = self.norm()
        if n == 0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.labels, self.amps / n)

    def canonical(self) -> "StateVector":
        """Same ray, with the first nonzero amplitude made real and positive."""
        nz = np.flatnonzero(np.abs(self.amps) > STRUCT_TOL)
        if nz.size == 0:
            return self
        a = self.amps[nz[0]]
        return StateVector(self.labels, self.amps * (abs(a) / a))

    def inner(self, other: "StateVector") -> complex:
        if self.labels != other.labels:
            raise ValueError(f"label mismatch {self.labels} vs {other.labels}")
        return complex(np.vdot(self.amps, other.amps))

    def tensor(self) -> np.ndarray:
        return self.amps.reshape((2,) * len(self.labels))


@dataclass(frozen=True)
class Operator:
    matrix: np.ndarray = field(repr=False)
    targets: tuple
    kind: str = "general"

    def __post_init__(self):
        targets = _check_labels(self.targets)
        m = _frozen(self.matrix)
        d = 2 ** len(targets)
        if m.shape != (d, d):
            raise ValueError(f"matrix shape {m.shape} does not match targets {targets}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "matrix", m)
        if self.kind == "unitary" and not is_unitary(m):
            raise ValueError("matrix is not unitary")
        if self.kind in ("hermitian", "projector") and not is_hermitian(m):
            raise ValueError("matrix is not Hermitian")
        if self.kind == "projector" and np.max(np.abs(m @ m - m)) > STRUCT_TOL:
            raise ValueError("matrix is not idempotent")

    @property
    def dagger(self) -> "Operator":
        return Operator(self.matrix.conj().T, self.targets, self.kind)

    def __matmul__(self, other: "Operator") -> "Operator":
        if self.targets != other.targets:
            raise ValueError(f"target mismatch {self.targets} vs {other.targets}")
        kind = "unitary" if self.kind == other.kind == "unitary" else "general"
        return Operator(self.matrix @ other.matrix, self.targets, kind)


def is_unitary(m, tol: float = STRUCT_TOL) -> bool:
    m = np.asarray(m)
    return bool(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))) <= tol)


def is_hermitian(m, tol: float = STRUCT_TOL) -> bool:
    m = np.asarray(m)
    return bool(np.max(np.abs(m - m.conj().T)) <= tol)


def ket(label: str, index: int) -> StateVector:
    amps = np.zeros(2, dtype=complex)
    amps[index] = 1.0
    return StateVector((label,), amps)


def spin_state(label: str, n, sign: int = +1) -> StateVector:
    """Eigenstate of ``n . sigma`` with eigenvalue ``sign``, canonical phase."""
    P = projector_along(n, sign, label).matrix
    # columns of a rank-1 projector are multiples of its range vector
    col = P[:, int(np.argmax(np.linalg.norm(P, axis=0)))]
    return StateVector((label,), col).normalize().canonical()


def tensor(a, b):
    """Kronecker product of two states or two operators on disjoint labels."""
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        return StateVector(a.labels + b.labels, np.kron(a.amps, b.amps))
    if isinstance(a, Operator) and isinstance(b, Operator):
        if set(a.targets) & set(b.targets):
            raise ValueError(f"overlapping targets {a.targets} and {b.targets}")
        if a.kind == b.kind:
            kind = a.kind
        elif {a.kind, b.kind} <= {"hermitian", "projector"}:
            kind = "hermitian"
        else:
            kind = "general"
        return Operator(np.kron(a.matrix, b.matrix), a.targets + b.targets, kind)
    raise TypeError("tensor needs two StateVectors or two Operators")


def apply(op: Operator, s: StateVector) -> StateVector:
    """Return ``op`` applied to ``s``, acting as identity on non-target labels."""
    missing = [t for t in op.targets if t not in s.labels]
    if missing:
        raise ValueError(f"operator targets {missing} not present in state {s.labels}")
    k = len(op.targets)
    axes = [s.labels.index(t) for t in op.targets]
    psi = np.moveaxis(s.tensor(), axes, range(k))
    shape = psi.shape
    out = (op.matrix @ psi.reshape(2 ** k, -1)).reshape(shape)
    return StateVector(s.labels, np.moveaxis(out, range(k), axes))


def expect(op: Operator, s: StateVector) -> float:
    if not is_hermitian(op.matrix):
        raise ValueError("expectation values need a Hermitian operator")
    val = s.inner(apply(op, s))
    if abs(val.imag) > IMAG_TOL:
        raise ArithmeticError(f"imaginary residue {val.imag:.3e} in expectation value")
    return val.real


def fidelity(a: StateVector, b: StateVector) -> float:
    """Phase-insensitive overlap |<a|b>|^2."""
    return abs(a.inner(b)) ** 2


def pauli_along(n, label: str = "spin") -> Operator:
    n = _require_unit(n)
    m = n.x * SIGMA_X + n.y * SIGMA_Y + n.z * SIGMA_Z
    return Operator(m, (label,), "hermitian")


def projector_along(n, sign: int, label: str = "spin") -> Operator:
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    n = _require_unit(n)
    m = 0.5 * (IDENTITY + sign * (n.x * SIGMA_X + n.y * SIGMA_Y + n.z * SIGMA_Z))
    return Operator(m, (label,), "projector")


def bloch_of(m) -> BlochVector:
    """Pauli coefficients of a traceless 2x2 Hermitian matrix."""
    m = np.asarray(m)
    return BlochVector(*(0.5 * np.trace(p @ m).real for p in PAULIS))


def unit(v) -> BlochVector:
    v = np.asarray(v, dtype=float)
    return BlochVector.of(v / sqrt(float(v @ v)))


def identity(labels) -> Operator:
    labels = _check_labels(labels)
    return Operator(np.eye(2 ** len(labels)), labels, "unitary")


def embed(op: Operator, labels) -> Operator:
    """Extend ``op`` to act on ``labels`` (a superset of its targets)."""
    labels = _check_labels(labels)
    d = 2 ** len(labels)
    cols = []
    for j in range(d):
        e = np.zeros(d, dtype=complex)
        e[j] = 1.0
        cols.append(apply(op, StateVector(labels, e)).amps)
    return Operator(np.column_stack(cols), labels, op.kind)

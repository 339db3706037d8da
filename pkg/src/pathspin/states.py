"""Singlet source, wing-1 collapse, wing-2 subensembles and entanglement.

Mixtures are always kept as weighted lists of pure :class:`Subensemble`
members. Averaging them into one density matrix would discard the
outcome-conditioned selection that the NRI tests are run on.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import cos, sin, sqrt
from typing import NamedTuple

import numpy as np

from .qcore import (
    STRUCT_TOL,
    XHAT,
    ZHAT,
    BlochVector,
    StateVector,
    _require_unit,
    apply,
    projector_along,
    spin_state,
    tensor,
)

SPIN1 = "spin1"
SPIN2 = "spin2"
PATH = "path"
WING2 = (PATH, SPIN2)


def make_singlet() -> StateVector:
    r = 1 / sqrt(2)
    return StateVector((SPIN1, SPIN2), [0, r, -r, 0])


class Outcome(NamedTuple):
    outcome: int
    probability: float
    state: StateVector


def measure_wing1(s: StateVector, n) -> list:
    """Projective measurement of ``n . sigma`` on spin 1.

    Returns one :class:`Outcome` per eigenvalue (+1 first) with the
    conditional, renormalized spin-2 state in canonical phase.
    """
    n = _require_unit(n)
    if s.labels != (SPIN1, SPIN2):
        raise ValueError(f"expected a state on {(SPIN1, SPIN2)}, got {s.labels}")
    out = []
    for sign in (1, -1):
        post = apply(projector_along(n, sign, SPIN1), s)
        p = post.norm() ** 2
        # spin1 part of the collapsed state is the known eigenvector; contract it out
        e = spin_state(SPIN1, n, sign).amps
        cond = np.conj(e) @ post.tensor()
        if p > STRUCT_TOL:
            state = StateVector((SPIN2,), cond).normalize().canonical()
        else:
            state = StateVector((SPIN2,), cond)
        out.append(Outcome(sign, p, state))
    return out


def wing1_direction(setting) -> BlochVector:
    """Measurement axis for a wing-1 setting.

    ``"A"`` is z, ``"B"`` is x; a float is an angle in the x-z plane measured
    from x toward z.
    """
    if setting == "A":
        return ZHAT
    if setting == "B":
        return XHAT
    a = float(setting)
    return BlochVector(cos(a), 0.0, sin(a))


@dataclass(frozen=True)
class Subensemble:
    weight: float
    state: StateVector = field(repr=False)
    tag: str


def wing2_mixture(setting, singlet: StateVector | None = None) -> list:
    """Spin-2 subensembles selected on the wing-1 outcomes for ``setting``."""
    singlet = make_singlet() if singlet is None else singlet
    label = setting if isinstance(setting, str) else f"angle:{float(setting):.12g}"
    members = [
        Subensemble(o.probability, o.state, f"{label}/{o.outcome:+d}")
        for o in measure_wing1(singlet, wing1_direction(setting))
    ]
    total = sum(m.weight for m in members)
    if abs(total - 1) > STRUCT_TOL:
        raise ArithmeticError(f"subensemble weights sum to {total!r}")
    return members


def propagate(members, evolve) -> list:
    """Map every member state through ``evolve`` keeping weight and tag."""
    return [Subensemble(m.weight, evolve(m.state), m.tag) for m in members]


@dataclass(frozen=True)
class DensityMatrix:
    matrix: np.ndarray = field(repr=False)
    labels: tuple

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "labels", tuple(self.labels))
        if m.shape != (2 ** len(self.labels),) * 2:
            raise ValueError("matrix shape does not match labels")
        if np.max(np.abs(m - m.conj().T)) > STRUCT_TOL:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1) > STRUCT_TOL:
            raise ValueError(f"density matrix trace {np.trace(m).real!r} != 1")
        if np.linalg.eigvalsh(m).min() < -STRUCT_TOL:
            raise ValueError("density matrix has a negative eigenvalue")


def reduced_density(s: StateVector, keep) -> DensityMatrix:
    keep = (keep,) if isinstance(keep, str) else tuple(keep)
    if not keep:
        raise ValueError("keep must name at least one subsystem")
    unknown = [k for k in keep if k not in s.labels]
    if unknown:
        raise ValueError(f"labels {unknown} not in state {s.labels}")
    axes = [s.labels.index(k) for k in keep]
    psi = np.moveaxis(s.tensor(), axes, range(len(keep))).reshape(2 ** len(keep), -1)
    return DensityMatrix(psi @ psi.conj().T, keep)


def mixture_density(members, keep=None) -> DensityMatrix:
    """Weighted sum of the members' (optionally reduced) density matrices."""
    rho = 0
    labels = None
    for m in members:
        r = reduced_density(m.state, keep if keep is not None else m.state.labels)
        rho = rho + m.weight * r.matrix
        labels = r.labels
    return DensityMatrix(rho, labels)


def concurrence(s: StateVector) -> float:
    """Pure-state concurrence 2|ad - bc|."""
    if len(s.labels) != 2:
        raise ValueError(f"concurrence needs exactly two subsystems, got {s.labels}")
    a, b, c, d = s.amps
    return float(min(1.0, 2 * abs(a * d - b * c)))


def _path(index):
    amps = np.zeros(2, dtype=complex)
    amps[index] = 1
    return StateVector((PATH,), amps)


def _spin(n, sign):
    return spin_state(SPIN2, n, sign)


# The four reference wing-2 states incident on the second beam splitter,
# global phases included. The product states carry a prefactor of 1/2 on two
# unit terms, which is not normalized; they are renormalized here.
def phi_plus() -> StateVector:
    return StateVector(
        WING2,
        1j / sqrt(2) * (tensor(_path(0), _spin(ZHAT, -1)).amps + tensor(_path(1), _spin(ZHAT, 1)).amps),
    )


def phi_minus() -> StateVector:
    return StateVector(
        WING2,
        1j / sqrt(2) * (tensor(_path(0), _spin(ZHAT, 1)).amps + tensor(_path(1), _spin(ZHAT, -1)).amps),
    )


def chi_plus() -> StateVector:
    arms = _path(0).amps + _path(1).amps
    return StateVector(WING2, 1j / 2 * np.kron(arms, _spin(XHAT, 1).amps)).normalize()


def chi_minus() -> StateVector:
    arms = _path(0).amps - _path(1).amps
    return StateVector(WING2, -1j / 2 * np.kron(arms, _spin(XHAT, -1).amps)).normalize()

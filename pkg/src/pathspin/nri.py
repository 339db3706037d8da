"""Path-spin NRI: correlations, hidden-variable bound and optimal settings.

The NRI combination is ``s = E(A1,b1) + E(A1,b2) + E(A2,b1) - E(A2,b2)``
with ``E(A,b) = <A x b.sigma>``. Noncontextual value assignments bound it by
2; quantum states reach at most ``2 sqrt 2``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .apparatus import PathObservable, path_observable_from_angle
from .errors import InvariantError
from .qcore import PAULIS, XHAT, ZHAT, BlochVector, Operator, StateVector, expect, pauli_along
from .states import PATH, SPIN2

CORR_TOL = 1e-9
TSIRELSON = 2 * math.sqrt(2)
GRID_STEP = math.radians(2.0)
STOP_STEP = 1e-6
TIE_TOL = 1e-9
CONSTRAINTS = ("paper-literal", "with-phase", "free-spin")


@dataclass(frozen=True)
class JointSetting:
    path: PathObservable
    spin: BlochVector


def joint_operator(j: JointSetting) -> Operator:
    spin = pauli_along(j.spin, SPIN2)
    return Operator(np.kron(j.path.matrix, spin.matrix), (PATH, SPIN2), "hermitian")


def correlation(state: StateVector, j: JointSetting) -> float:
    return expect(joint_operator(j), state)


@dataclass(frozen=True)
class NriValue:
    e11: float
    e12: float
    e21: float
    e22: float

    def __post_init__(self):
        for name in ("e11", "e12", "e21", "e22"):
            if abs(getattr(self, name)) > 1 + CORR_TOL:
                raise InvariantError(f"correlation {name}={getattr(self, name)!r} outside [-1, 1]")

    @property
    def s(self) -> float:
        return self.e11 + self.e12 + self.e21 - self.e22

    def as_dict(self) -> dict:
        return {"e11": self.e11, "e12": self.e12, "e21": self.e21, "e22": self.e22, "s": self.s}


def nri_value(state, a1: PathObservable, a2: PathObservable, b1=ZHAT, b2=XHAT) -> NriValue:
    b1, b2 = BlochVector.of(b1), BlochVector.of(b2)
    v = NriValue(
        correlation(state, JointSetting(a1, b1)),
        correlation(state, JointSetting(a1, b2)),
        correlation(state, JointSetting(a2, b1)),
        correlation(state, JointSetting(a2, b2)),
    )
    if abs(v.s) > TSIRELSON + CORR_TOL:
        raise InvariantError(f"|s| = {abs(v.s)!r} exceeds the quantum bound")
    return v


# --------------------------------------------------------------------------
# noncontextual hidden variables


class HvAssignment(NamedTuple):
    a1: int
    a2: int
    sz: int
    sx: int

    def value(self) -> int:
        return self.a1 * self.sz + self.a1 * self.sx + self.a2 * self.sz - self.a2 * self.sx


def enumerate_noncontextual() -> list:
    """All 16 sign assignments with their per-trial NRI combination."""
    rows = []
    for signs in itertools.product((1, -1), repeat=4):
        hv = HvAssignment(*signs)
        v = hv.value()
        if v not in (2, -2):
            raise InvariantError(f"assignment {hv} gives {v}")
        rows.append((hv, v))
    return rows


def hv_bound_check(samples) -> float:
    """Weighted average of the NRI combination over ``(assignment, weight)``."""
    samples = list(samples)
    if not samples:
        raise ValueError("empty hidden-variable distribution")
    weights = np.array([w for _, w in samples], dtype=float)
    if not np.all(np.isfinite(weights)) or np.any(weights < 0):
        raise ValueError("weights must be finite and non-negative")
    if abs(weights.sum() - 1) > 1e-12:
        raise ValueError(f"weights sum to {weights.sum()!r}, not 1")
    for hv, _ in samples:
        if any(v not in (1, -1) for v in hv):
            raise ValueError(f"assignment {tuple(hv)} has values other than +-1")
    s = float(sum(w * HvAssignment(*hv).value() for hv, w in samples))
    if abs(s) > 2 + 1e-12:
        raise InvariantError(f"noncontextual average {s!r} exceeds 2")
    return s


# --------------------------------------------------------------------------
# quantum maximum


def correlation_tensor(state: StateVector) -> np.ndarray:
    """``T[i, j] = <sigma_i x sigma_j>`` over the state's two subsystems."""
    if len(state.labels) != 2:
        raise ValueError("correlation tensor needs a two-subsystem state")
    T = np.empty((3, 3))
    for i, si in enumerate(PAULIS):
        for j, sj in enumerate(PAULIS):
            T[i, j] = expect(Operator(np.kron(si, sj), state.labels, "hermitian"), state)
    return T


def tsirelson_max(state: StateVector) -> float:
    """Largest NRI value over all settings, from the two largest singular values of T."""
    t = np.linalg.svd(correlation_tensor(state), compute_uv=False)
    return float(2 * math.sqrt(t[0] ** 2 + t[1] ** 2))


# --------------------------------------------------------------------------
# setting optimization


@dataclass(frozen=True)
class NriSettings:
    a1: PathObservable
    a2: PathObservable
    b1: BlochVector
    b2: BlochVector
    constraint: str
    params: tuple = field(default=())

    def as_dict(self) -> dict:
        return {
            "constraint": self.constraint,
            "a1": self.a1.as_dict(),
            "a2": self.a2.as_dict(),
            "b1": list(self.b1),
            "b2": list(self.b2),
            "params": list(self.params),
        }


class Optimum(NamedTuple):
    settings: NriSettings
    s: float
    value: NriValue


def _path_bloch(theta, chi=0.0):
    t2 = 2 * np.asarray(theta)
    return np.stack(np.broadcast_arrays(-np.sin(t2) * np.sin(chi), np.sin(t2) * np.cos(chi),
                                        np.cos(t2)), axis=-1)


def _spin_bloch(polar, azim):
    polar, azim = np.broadcast_arrays(polar, azim)
    return np.stack([np.sin(polar) * np.cos(azim), np.sin(polar) * np.sin(azim), np.cos(polar)], axis=-1)


def _angles_of(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < 1e-15:
        return 0.0, 0.0
    v = v / n
    polar = math.acos(max(-1.0, min(1.0, v[2])))
    azim = math.atan2(v[1], v[0]) % (2 * math.pi) if math.hypot(v[0], v[1]) > 1e-15 else 0.0
    return polar, azim


def _first_best(values):
    """Flat index of the lexicographically first entry within TIE_TOL of the max."""
    flat = values.reshape(-1)
    return int(np.argmax(flat >= flat.max() - TIE_TOL))


class _Family:
    """Maps a parameter vector to Bloch vectors for one constraint family."""

    def __init__(self, constraint, spins):
        if constraint not in CONSTRAINTS:
            raise ValueError(f"unknown constraint {constraint!r}; choose from {CONSTRAINTS}")
        self.constraint = constraint
        self.spins = tuple(BlochVector.of(b).as_array() for b in spins)

    def vectors(self, p):
        if self.constraint == "paper-literal":
            return _path_bloch(p[0]), _path_bloch(p[1]), self.spins[0], self.spins[1]
        if self.constraint == "with-phase":
            return _path_bloch(p[0], p[2]), _path_bloch(p[1], p[3]), self.spins[0], self.spins[1]
        return (_path_bloch(p[0]), _path_bloch(p[1]),
                _spin_bloch(p[2], p[3]), _spin_bloch(p[4], p[5]))

    def canonical(self, p):
        """Wrap angles into [0, pi) for BS2 and [0, 2 pi) for phases/azimuths."""
        p = list(p)
        p[0], p[1] = p[0] % math.pi, p[1] % math.pi
        if self.constraint == "with-phase":
            p[2], p[3] = p[2] % (2 * math.pi), p[3] % (2 * math.pi)
        elif self.constraint == "free-spin":
            p[2:4] = _angles_of(_spin_bloch(p[2], p[3]))
            p[4:6] = _angles_of(_spin_bloch(p[4], p[5]))
        return p

    def settings(self, p):
        p = self.canonical(p)
        if self.constraint == "with-phase":
            a1 = path_observable_from_angle(p[0], p[2])
            a2 = path_observable_from_angle(p[1], p[3])
        else:
            a1 = path_observable_from_angle(p[0])
            a2 = path_observable_from_angle(p[1])
        _, _, b1, b2 = self.vectors(p)
        b1, b2 = BlochVector.of(b1), BlochVector.of(b2)
        return NriSettings(a1, a2, b1, b2, self.constraint, tuple(float(x) for x in p))


def _s_from_tensor(T, a1, a2, b1, b2):
    return a1 @ T @ (b1 + b2) + a2 @ T @ (b1 - b2)


def _coarse_grid(T, fam: _Family):
    thetas = np.arange(90) * GRID_STEP
    if fam.constraint == "paper-literal":
        A = _path_bloch(thetas)
        b1, b2 = fam.spins
        s = (A @ T @ (b1 + b2))[:, None] + (A @ T @ (b1 - b2))[None, :]
        i, j = np.unravel_index(_first_best(np.abs(s)), s.shape)
        return [thetas[i], thetas[j]]
    if fam.constraint == "free-spin":
        A = _path_bloch(thetas)
        plus = A[:, None, :] + A[None, :, :]
        minus = A[:, None, :] - A[None, :, :]
        u, w = plus @ T, minus @ T
        # best spins for fixed path settings are along T^t(a1 +- a2)
        s = np.linalg.norm(u, axis=-1) + np.linalg.norm(w, axis=-1)
        i, j = np.unravel_index(_first_best(s), s.shape)
        return [thetas[i], thetas[j], *_angles_of(u[i, j]), *_angles_of(w[i, j])]
    # with-phase: s splits into f1(theta1, chi1) + f2(theta2, chi2), so the
    # joint grid argmax is the pair of per-observable argmaxes
    chis = np.arange(180) * GRID_STEP
    A = _path_bloch(thetas[:, None], chis[None, :])
    b1, b2 = fam.spins
    f1, f2 = A @ T @ (b1 + b2), A @ T @ (b1 - b2)
    candidates = []
    for sign in (1, -1):
        i1, k1 = np.unravel_index(_first_best(sign * f1), f1.shape)
        i2, k2 = np.unravel_index(_first_best(sign * f2), f2.shape)
        p = [thetas[i1], thetas[i2], chis[k1], chis[k2]]
        candidates.append((-abs(f1[i1, k1] + f2[i2, k2]), p))
    best = min(c[0] for c in candidates)
    return min(p for v, p in candidates if v <= best + TIE_TOL)


def _coordinate_descent(objective, p, step=GRID_STEP / 2, stop=STOP_STEP):
    p = list(p)
    best = objective(p)
    while step >= stop:
        improved = False
        for k in range(len(p)):
            for delta in (step, -step):
                trial = p.copy()
                trial[k] += delta
                v = objective(trial)
                if v > best + 1e-15:
                    p, best, improved = trial, v, True
                    break
        if not improved:
            step /= 2
    return p


def optimize_settings(state: StateVector, constraint: str = "free-spin", spins=(ZHAT, XHAT)) -> Optimum:
    """Settings maximizing |s| within a constraint family.

    ``paper-literal`` varies the two BS2 angles with no arm phase and fixed
    ``spins``; ``with-phase`` also varies the arm phases; ``free-spin``
    varies the BS2 angles (no phase) and both spin directions. A 2 degree grid
    is refined by coordinate descent down to 1e-6 rad steps.
    """
    fam = _Family(constraint, spins)
    T = correlation_tensor(state)

    def objective(p):
        return abs(_s_from_tensor(T, *fam.vectors(p)))

    p = _coordinate_descent(objective, _coarse_grid(T, fam))
    settings = fam.settings(p)
    value = nri_value(state, settings.a1, settings.a2, settings.b1, settings.b2)
    return Optimum(settings, value.s, value)

"""Wing-2 interferometer: component unitaries, path observables, file parser.

State space after the first beam splitter is ``path (2) x spin2 (2)``. The
first beam splitter's unused input port is identified with path index 1, so
the pipeline input for a particle entering the used port is
``|path=0> x |spin>``.

The second beam splitter maps output channel 3 to path index 0 and channel 4
to path index 1; measuring ``sigma_z`` on the path after it is therefore
measuring ``P(psi3) - P(psi4)`` on the state before it.
"""
from __future__ import annotations

import ast
import hashlib
import json
import math
import operator
import re
from dataclasses import dataclass, field
from math import cos, sin, sqrt

import numpy as np

from .errors import ApparatusSyntaxError, ApparatusValidationError
from .qcore import (
    STRUCT_TOL,
    XHAT,
    YHAT,
    ZHAT,
    BlochVector,
    Operator,
    StateVector,
    _require_unit,
    apply,
    embed,
    identity,
    pauli_along,
    tensor,
)
from .states import PATH, SPIN2, WING2

DEFAULT_SHOTS = 100_000
DEFAULT_BS2_SETTINGS = ((cos(3 * math.pi / 8), sin(3 * math.pi / 8), 0.0),
                        (cos(5 * math.pi / 8), sin(5 * math.pi / 8), 0.0))
DEFAULT_SPIN_DIRS = (ZHAT, XHAT)

_P1 = np.diag([1, 0]).astype(complex)
_P2 = np.diag([0, 1]).astype(complex)


def _check_split(gamma, delta):
    if not (math.isfinite(gamma) and math.isfinite(delta)):
        raise ValueError("beam-splitter amplitudes must be finite")
    total = gamma * gamma + delta * delta
    if abs(total - 1) > STRUCT_TOL:
        raise ValueError(
            f"γ²+δ² ≠ 1 ({gamma * gamma:.12g}+{delta * delta:.12g}={total:.12g})"
        )


@dataclass(frozen=True)
class BeamSplitterParams:
    gamma: float
    delta: float

    def __post_init__(self):
        _check_split(self.gamma, self.delta)


def bs1_unitary() -> Operator:
    """50:50 splitter taking the used input port to ``i(psi1 + psi2)/sqrt 2``.

    The output phases are pinned so that, followed by the spin flipper, the
    incident spin-z and spin-x states come out exactly as the reference phi
    and chi states, global factors included.
    """
    return Operator(1j / sqrt(2) * np.array([[1, 1j], [1, -1j]]), (PATH,), "unitary")


def sf_unitary(axis=XHAT) -> Operator:
    """Spin flipper on arm 1: ``P(psi1) x (axis . sigma) + P(psi2) x I``."""
    rot = pauli_along(axis, SPIN2).matrix
    return Operator(np.kron(_P1, rot) + np.kron(_P2, np.eye(2)), WING2, "unitary")


def mirror_unitary() -> Operator:
    return identity((PATH,))


def phase_unitary(chi: float) -> Operator:
    """Phase ``chi`` picked up on arm 1."""
    return Operator(np.diag([np.exp(1j * chi), 1.0]), (PATH,), "unitary")


def bs2_outputs(gamma: float, delta: float):
    """Output channel states psi3, psi4 in the arm basis."""
    _check_split(gamma, delta)
    psi3 = StateVector((PATH,), [-1j * gamma, delta])
    psi4 = StateVector((PATH,), [delta, -1j * gamma])
    return psi3, psi4


def bs2_unitary(gamma: float, delta: float) -> Operator:
    psi3, psi4 = bs2_outputs(gamma, delta)
    return Operator(np.vstack([psi3.amps.conj(), psi4.amps.conj()]), (PATH,), "unitary")


@dataclass(frozen=True)
class PathObservable:
    """``P(psi3) - P(psi4)`` for a BS2 setting, seen through an arm-1 phase.

    With ``chi == 0`` the matrix is built entry by entry from the closed form
    ``[[g²-d², -2igd], [2igd, d²-g²]]`` so it is reproduced exactly.
    """

    gamma: float
    delta: float
    chi: float = 0.0
    matrix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_split(self.gamma, self.delta)
        g, d = self.gamma, self.delta
        m = np.array([[g * g - d * d, -2j * g * d], [2j * g * d, d * d - g * g]])
        if self.chi != 0:
            ph = np.diag([np.exp(1j * self.chi), 1.0])
            m = ph.conj().T @ m @ ph
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def bloch(self) -> BlochVector:
        g, d, chi = self.gamma, self.delta, self.chi
        if chi == 0:
            return BlochVector(0.0, 2 * g * d, g * g - d * d)
        return BlochVector(-2 * g * d * sin(chi), 2 * g * d * cos(chi), g * g - d * d)

    def projectors(self):
        """``(P(psi3), P(psi4))`` as path operators, phase included."""
        ph = np.diag([np.exp(1j * self.chi), 1.0])
        out = []
        for psi in bs2_outputs(self.gamma, self.delta):
            v = ph.conj().T @ psi.amps
            out.append(Operator(np.outer(v, v.conj()), (PATH,), "projector"))
        return tuple(out)

    def operator(self) -> Operator:
        return Operator(self.matrix, (PATH,), "hermitian")

    def measurement_unitary(self) -> Operator:
        """Phase shifter then BS2, mapping channel 3/4 onto path index 0/1."""
        return bs2_unitary(self.gamma, self.delta) @ phase_unitary(self.chi)

    def as_dict(self) -> dict:
        return {"gamma": self.gamma, "delta": self.delta, "chi": self.chi,
                "bloch": list(self.bloch)}


def path_observable(gamma: float, delta: float, chi: float = 0.0) -> PathObservable:
    try:
        return PathObservable(float(gamma), float(delta), float(chi))
    except ValueError as exc:
        raise ValueError(f"invalid path observable: {exc}") from None


def path_observable_from_angle(theta: float, chi: float = 0.0) -> PathObservable:
    """``gamma = cos theta, delta = sin theta``; Bloch polar angle is ``2 theta``."""
    return PathObservable(cos(theta), sin(theta), chi)


def path_observable_from_bloch(v) -> PathObservable:
    """Inverse of :attr:`PathObservable.bloch` for any unit vector."""
    v = _require_unit(v)
    polar = math.atan2(math.hypot(v.x, v.y), v.z)
    chi = 0.0
    if math.hypot(v.x, v.y) > 1e-15:
        chi = math.atan2(v.y, v.x) - math.pi / 2
    return path_observable_from_angle(polar / 2, chi)


# --------------------------------------------------------------------------
# apparatus description files

SECTIONS = ("source", "pipeline", "measurement")
COMPONENT_PARAMS = {
    "bs1": (),
    "sf": ("axis",),
    "mirror": (),
    "phase": ("chi", "arm"),
    "bs2": ("gamma", "delta"),
}
SOURCE_KEYS = ("wing1_setting",)
MEASUREMENT_KEYS = ("spin_dirs", "bs2_settings", "shots", "seed")

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {name: getattr(math, name)
          for name in ("sqrt", "sin", "cos", "tan", "asin", "acos", "atan", "exp", "radians")}
_CONSTS = {"pi": math.pi, "e": math.e}
_AXES = {"x": XHAT, "y": YHAT, "z": ZHAT}


def eval_number(text: str) -> float:
    """Evaluate a numeric literal or simple arithmetic like ``cos(3*pi/8)``."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        if isinstance(node, ast.Name) and node.id in _CONSTS:
            return _CONSTS[node.id]
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ValueError(f"unsupported expression {text!r}")

    try:
        value = ev(ast.parse(text.strip(), mode="eval"))
    except (SyntaxError, ZeroDivisionError, OverflowError) as exc:
        raise ValueError(f"bad number {text!r}: {exc}") from None
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {text!r}")
    return value


def _unbalanced_at(text: str):
    """Index of the first unmatched parenthesis, or None."""
    opened = []
    for i, ch in enumerate(text):
        if ch == "(":
            opened.append(i)
        elif ch == ")":
            if not opened:
                return i
            opened.pop()
    return opened[0] if opened else None


def _split_top(text: str, offset: int = 0):
    """Split on commas outside parentheses; yield ``(piece, column_offset)``."""
    if _unbalanced_at(text) is not None:
        raise ValueError(f"unbalanced parentheses in {text!r}")
    depth, start = 0, 0
    for i, ch in enumerate(text + ","):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            piece = text[start:i]
            lead = len(piece) - len(piece.lstrip())
            yield piece.strip(), offset + start + lead
            start = i + 1


def _parse_direction(text: str) -> BlochVector:
    t = text.strip()
    if t.startswith("(") and t.endswith(")"):
        t = t[1:-1]
    sign = 1
    if t in ("-x", "-y", "-z", "+x", "+y", "+z"):
        sign, t = (-1 if t[0] == "-" else 1), t[1:]
    if t in _AXES:
        v = _AXES[t]
        return -v if sign < 0 else v
    parts = [p for p, _ in _split_top(t)]
    if len(parts) != 3:
        raise ValueError(f"direction {text!r} is not x|y|z or ux,uy,uz")
    return BlochVector(*(eval_number(p) for p in parts))


@dataclass(frozen=True)
class Component:
    kind: str
    params: dict = field(default_factory=dict)
    line: int = 0

    def unitary(self) -> Operator:
        """Component matrix on ``(path, spin2)``."""
        if self.kind == "bs1":
            return embed(bs1_unitary(), WING2)
        if self.kind == "sf":
            return sf_unitary(self.params.get("axis", XHAT))
        if self.kind == "mirror":
            return identity(WING2)
        if self.kind == "phase":
            return embed(phase_unitary(self.params.get("chi", 0.0)), WING2)
        if self.kind == "bs2":
            return embed(bs2_unitary(self.params["gamma"], self.params["delta"]), WING2)
        raise ValueError(f"unknown component {self.kind!r}")

    def as_dict(self) -> dict:
        d = {"kind": self.kind}
        for k, v in sorted(self.params.items()):
            d[k] = list(v) if isinstance(v, BlochVector) else v
        return d


@dataclass(frozen=True)
class ApparatusSpec:
    wing1_setting: object
    components: tuple
    spin_dirs: tuple = DEFAULT_SPIN_DIRS
    bs2_settings: tuple = DEFAULT_BS2_SETTINGS
    shots: int = DEFAULT_SHOTS
    seed: int | None = None

    @property
    def arm_phase(self) -> float:
        """Total arm-1 phase from phase shifters in the pipeline."""
        return sum(c.params["chi"] for c in self.components if c.kind == "phase")

    @property
    def sf_axis(self) -> BlochVector:
        axes = [c.params["axis"] for c in self.components if c.kind == "sf"]
        return axes[0] if axes else None

    def path_observables(self) -> tuple:
        """The two NRI path observables, pipeline phase folded into chi."""
        return tuple(path_observable(g, d, chi + self.arm_phase) for g, d, chi in self.bs2_settings)

    def preparation(self) -> Operator:
        """BS1, flippers and mirrors: everything that prepares the BS2 input."""
        return compile_pipeline([c for c in self.components if c.kind not in ("phase", "bs2")])

    def with_setting(self, setting) -> "ApparatusSpec":
        return ApparatusSpec(setting, self.components, self.spin_dirs, self.bs2_settings,
                             self.shots, self.seed)

    def as_dict(self) -> dict:
        s = self.wing1_setting
        return {
            "wing1_setting": s if isinstance(s, str) else f"angle:{s!r}",
            "pipeline": [c.as_dict() for c in self.components],
            "spin_dirs": [list(b) for b in self.spin_dirs],
            "bs2_settings": [list(p) for p in self.bs2_settings],
            "shots": self.shots,
            "seed": self.seed,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _parse_setting(value: str, line: int, col: int):
    v = value.strip()
    if v in ("A", "B"):
        return v
    if v.startswith("angle:"):
        try:
            return eval_number(v[len("angle:"):])
        except ValueError as exc:
            raise ApparatusSyntaxError(str(exc), line, col + len("angle:")) from None
    raise ApparatusSyntaxError(f"wing1_setting must be A, B or angle:<radians>, got {v!r}", line, col)


def _parse_component(body: str, line: int, indent: int) -> Component:
    tokens = [(m.group(), m.start() + indent + 1) for m in re.finditer(r"\S+", body)]
    kind, col = tokens[0]
    kind = kind.lower()
    if kind not in COMPONENT_PARAMS:
        raise ApparatusSyntaxError(f"unknown component {tokens[0][0]!r}", line, col)
    params = {}
    for tok, col in tokens[1:]:
        key, eq, value = tok.partition("=")
        if not eq or not value:
            raise ApparatusSyntaxError(f"expected key=value, got {tok!r}", line, col)
        if key not in COMPONENT_PARAMS[kind]:
            raise ApparatusSyntaxError(f"{kind} takes no parameter {key!r}", line, col)
        if key in params:
            raise ApparatusSyntaxError(f"duplicate parameter {key!r}", line, col)
        try:
            if key == "axis":
                params[key] = _parse_direction(value)
            elif key == "arm":
                if value not in ("1", "2"):
                    raise ValueError(f"arm must be 1 or 2, got {value!r}")
                params[key] = int(value)
            else:
                params[key] = eval_number(value)
        except ValueError as exc:
            raise ApparatusSyntaxError(str(exc), line, col + len(key) + 1) from None
    return Component(kind, params, line)


def _parse_pairs(value: str, line: int, col: int):
    out = []
    for piece, off in _split_top(value, col):
        if not (piece.startswith("(") and piece.endswith(")")):
            raise ApparatusSyntaxError(f"expected (gamma, delta[, chi]), got {piece!r}", line, off)
        nums = []
        for p, o in _split_top(piece[1:-1], off + 1):
            try:
                nums.append(eval_number(p))
            except ValueError as exc:
                raise ApparatusSyntaxError(str(exc), line, o) from None
        if len(nums) not in (2, 3):
            raise ApparatusSyntaxError(f"expected 2 or 3 numbers in {piece!r}", line, off)
        out.append((nums[0], nums[1], nums[2] if len(nums) == 3 else 0.0))
    return tuple(out)


def _parse_int(value: str, line: int, col: int) -> int:
    try:
        return int(value.strip().replace("_", ""), 0)
    except ValueError:
        raise ApparatusSyntaxError(f"expected an integer, got {value.strip()!r}", line, col) from None


def parse_apparatus(text: str) -> ApparatusSpec:
    """Parse and validate an apparatus description.

    Raises :class:`ApparatusSyntaxError` for malformed text and
    :class:`ApparatusValidationError` for physically invalid content.
    """
    section = None
    seen = set()
    source, measurement, components = {}, {}, []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].rstrip()
        if not body.strip():
            continue
        indent = len(body) - len(body.lstrip())
        body = body.strip()
        if body.startswith("["):
            if not body.endswith("]"):
                raise ApparatusSyntaxError("unterminated section header", lineno, indent + len(body) + 1)
            name = body[1:-1].strip().lower()
            if name not in SECTIONS:
                raise ApparatusSyntaxError(f"unknown section [{name}]", lineno, indent + 2)
            if name in seen:
                raise ApparatusSyntaxError(f"duplicate section [{name}]", lineno, indent + 2)
            seen.add(name)
            section = name
            continue
        if section is None:
            raise ApparatusSyntaxError("content before the first section header", lineno, indent + 1)
        if section == "pipeline":
            components.append(_parse_component(body, lineno, indent))
            continue
        key, eq, value = body.partition("=")
        if not eq:
            raise ApparatusSyntaxError("expected key = value", lineno, indent + len(body) + 1)
        key = key.strip()
        vcol = indent + len(body) - len(value) + 1 + (len(value) - len(value.lstrip()))
        bad = _unbalanced_at(value)
        if bad is not None:
            raise ApparatusSyntaxError("unbalanced parenthesis", lineno,
                                       indent + len(body) - len(value) + 1 + bad)
        allowed = SOURCE_KEYS if section == "source" else MEASUREMENT_KEYS
        target = source if section == "source" else measurement
        if key not in allowed:
            raise ApparatusSyntaxError(f"unknown key {key!r} in [{section}]", lineno, indent + 1)
        if key in target:
            raise ApparatusSyntaxError(f"duplicate key {key!r}", lineno, indent + 1)
        if key == "wing1_setting":
            target[key] = _parse_setting(value, lineno, vcol)
        elif key == "spin_dirs":
            dirs = []
            for piece, off in _split_top(value.strip(), vcol):
                try:
                    dirs.append(_parse_direction(piece))
                except ValueError as exc:
                    raise ApparatusSyntaxError(str(exc), lineno, off) from None
            target[key] = (tuple(dirs), lineno)
        elif key == "bs2_settings":
            target[key] = (_parse_pairs(value.strip(), lineno, vcol), lineno)
        else:
            target[key] = (_parse_int(value, lineno, vcol), lineno)

    spec = ApparatusSpec(
        wing1_setting=source.get("wing1_setting", "A"),
        components=tuple(_normalize_phase(c) for c in components),
        spin_dirs=measurement.get("spin_dirs", (DEFAULT_SPIN_DIRS,))[0],
        bs2_settings=measurement.get("bs2_settings", (DEFAULT_BS2_SETTINGS,))[0],
        shots=measurement.get("shots", (DEFAULT_SHOTS,))[0],
        seed=measurement.get("seed", (None,))[0],
    )
    validate(spec, lines={k: v[1] for k, v in measurement.items()})
    return spec


def _normalize_phase(c: Component) -> Component:
    # an arm-2 phase equals the opposite arm-1 phase up to a global factor
    if c.kind != "phase":
        if c.kind == "sf" and "axis" not in c.params:
            return Component(c.kind, {"axis": XHAT}, c.line)
        return c
    chi = c.params.get("chi", 0.0)
    if c.params.get("arm", 1) == 2:
        chi = -chi
    return Component("phase", {"chi": chi, "arm": 1}, c.line)


def validate(spec: ApparatusSpec, lines: dict | None = None) -> None:
    lines = lines or {}

    def fail(msg, line=None):
        where = f" (line {line})" if line else ""
        raise ApparatusValidationError(msg + where)

    kinds = [c.kind for c in spec.components]
    if kinds.count("bs1") != 1:
        fail(f"exactly one BS1 required, found {kinds.count('bs1')}")
    if kinds[0] != "bs1":
        fail("BS1 must be the first pipeline component", spec.components[0].line)
    if kinds.count("bs2") > 1:
        fail("at most one BS2 allowed")
    if "bs2" in kinds and kinds[-1] != "bs2":
        fail("BS2 must be the last pipeline component", spec.components[kinds.index("bs2")].line)
    for c in spec.components:
        if c.kind == "sf" and not c.params["axis"].is_unit():
            fail(f"sf axis {tuple(c.params['axis'])} must be a unit vector", c.line)
        if c.kind == "bs2":
            if "gamma" not in c.params or "delta" not in c.params:
                fail("bs2 needs gamma and delta", c.line)
            try:
                _check_split(c.params["gamma"], c.params["delta"])
            except ValueError as exc:
                fail(str(exc), c.line)
    if isinstance(spec.wing1_setting, float) and not math.isfinite(spec.wing1_setting):
        fail("wing1 angle must be finite")
    if len(spec.spin_dirs) != 2:
        fail(f"spin_dirs needs exactly 2 directions, got {len(spec.spin_dirs)}", lines.get("spin_dirs"))
    for b in spec.spin_dirs:
        if not b.is_unit():
            fail(f"spin direction {tuple(b)} must be a unit vector", lines.get("spin_dirs"))
    if len(spec.bs2_settings) != 2:
        fail(f"bs2_settings needs exactly 2 settings, got {len(spec.bs2_settings)}",
             lines.get("bs2_settings"))
    for g, d, _ in spec.bs2_settings:
        try:
            _check_split(g, d)
        except ValueError as exc:
            fail(str(exc), lines.get("bs2_settings"))
    if spec.shots < 1:
        fail(f"shots must be positive, got {spec.shots}", lines.get("shots"))
    if spec.seed is not None and not 0 <= spec.seed < 2 ** 64:
        fail("seed must fit in an unsigned 64-bit integer", lines.get("seed"))


def load_apparatus(path) -> ApparatusSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_apparatus(fh.read())


def compile_pipeline(spec, bs2: PathObservable | None = None) -> Operator:
    """Ordered product of the component unitaries on ``(path, spin2)``.

    ``spec`` is an :class:`ApparatusSpec` or a plain sequence of components.
    A ``bs2`` observable replaces the file's BS2 (and its phase), or is
    appended when the pipeline has none.
    """
    components = spec.components if isinstance(spec, ApparatusSpec) else tuple(spec)
    if bs2 is not None:
        components = [c for c in components if c.kind not in ("bs2", "phase")]
    U = identity(WING2)
    for c in components:
        U = c.unitary() @ U
    if bs2 is not None:
        U = embed(bs2_unitary(bs2.gamma, bs2.delta) @ phase_unitary(bs2.chi), WING2) @ U
    if U.kind != "unitary":
        raise ArithmeticError("compiled pipeline lost unitarity")
    return U


def input_state(spin_in: StateVector) -> StateVector:
    """``|used port> x spin_in`` on ``(path, spin2)``."""
    if len(spin_in.labels) != 1:
        raise ValueError("spin input must be a single two-level state")
    port = StateVector((PATH,), [1, 0])
    return tensor(port, StateVector((SPIN2,), spin_in.amps))


def prepare_bs1_sf(spin_in: StateVector, axis=XHAT) -> StateVector:
    """Evolve a wing-2 spin state through BS1 and the arm-1 spin flipper."""
    s = apply(bs1_unitary(), input_state(spin_in))
    return apply(sf_unitary(axis), s)


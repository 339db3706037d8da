import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import X, Y, Z, dot_sigma, path_matrix
from pathspin.apparatus import (
    Component,
    bs1_unitary,
    bs2_outputs,
    compile_pipeline,
    eval_number,
    input_state,
    load_apparatus,
    mirror_unitary,
    parse_apparatus,
    path_observable,
    path_observable_from_angle,
    path_observable_from_bloch,
    prepare_bs1_sf,
    sf_unitary,
)
from pathspin.errors import ApparatusSyntaxError, ApparatusValidationError
from pathspin.qcore import XHAT, YHAT, ZHAT, StateVector, apply, fidelity, ket, spin_state, tensor
from pathspin.states import PATH, SPIN2, WING2, chi_minus, chi_plus, concurrence, phi_minus, phi_plus

R = 1 / math.sqrt(2)
angles = st.floats(0, 2 * math.pi, allow_nan=False)

VALID = """\
[source]
wing1_setting = A
[pipeline]
bs1
sf axis=x
mirror
bs2 gamma=sqrt(0.5) delta=sqrt(0.5)
[measurement]
spin_dirs = z, x
bs2_settings = (1, 0), (0, 1)
shots = 10
seed = 1
"""


def _arm_state(arm, spin):
    return tensor(ket(PATH, arm), StateVector((SPIN2,), spin.amps))


def test_bs1_maps_input_to_equal_split():
    out = apply(bs1_unitary(), ket(PATH, 0)).amps
    # both arms carry i/sqrt2: the i is the global factor of the entangled outputs
    assert np.allclose(out, [1j * R, 1j * R], atol=1e-15)
    assert np.allclose(np.abs(out) ** 2, [0.5, 0.5], atol=1e-15)


def test_bs1_is_unitary_and_conserves_probability():
    U = bs1_unitary().matrix
    assert np.max(np.abs(U.conj().T @ U - np.eye(2))) <= 1e-12
    twice = apply(bs1_unitary(), apply(bs1_unitary(), ket(PATH, 0)))
    assert twice.norm() == pytest.approx(1, abs=1e-12)


def test_sf_flips_arm1_spin():
    out = apply(sf_unitary(XHAT), _arm_state(0, spin_state(SPIN2, ZHAT, 1)))
    assert np.allclose(out.amps, _arm_state(0, spin_state(SPIN2, ZHAT, -1)).amps, atol=1e-15)


def test_sf_leaves_down_x_with_a_sign():
    down_x = spin_state(SPIN2, XHAT, -1)
    out = apply(sf_unitary(XHAT), _arm_state(0, down_x))
    assert np.allclose(out.amps, -_arm_state(0, down_x).amps, atol=1e-15)


def test_sf_is_identity_on_arm2():
    rng = np.random.default_rng(21)
    v = rng.normal(size=2) + 1j * rng.normal(size=2)
    s = _arm_state(1, StateVector((SPIN2,), v).normalize())
    assert np.array_equal(apply(sf_unitary(XHAT), s).amps, s.amps)


def test_sf_rejects_non_unit_axis():
    with pytest.raises(ValueError):
        sf_unitary((1, 1, 0))


def test_prepare_reproduces_reference_states():
    for sign, ref in ((1, phi_plus()), (-1, phi_minus())):
        out = prepare_bs1_sf(spin_state(SPIN2, ZHAT, sign))
        assert fidelity(out, ref) >= 1 - 1e-12
        # the reference global phase is reproduced too
        assert np.allclose(out.amps, ref.amps, atol=1e-15)
    for sign, ref in ((1, chi_plus()), (-1, chi_minus())):
        out = prepare_bs1_sf(spin_state(SPIN2, XHAT, sign))
        assert fidelity(out, ref) >= 1 - 1e-12
        assert concurrence(out) <= 1e-12


def test_phi_plus_amplitudes():
    out = prepare_bs1_sf(spin_state(SPIN2, ZHAT, 1))
    # i/sqrt2 (psi1 down_z + psi2 up_z)
    assert np.allclose(out.amps, [0, 1j * R, 1j * R, 0], atol=1e-15)


def test_path_observable_endpoints():
    a = path_observable(1, 0)
    assert np.array_equal(a.matrix, Z)
    assert tuple(a.bloch) == (0, 0, 1)
    b = path_observable(R, R)
    assert np.max(np.abs(b.matrix - Y)) <= 1e-15
    assert np.allclose(list(b.bloch), [0, 1, 0], atol=1e-15)
    c = path_observable(0, 1)
    assert np.array_equal(c.matrix, -Z)


def test_path_observable_matches_projector_oracle():
    rng = np.random.default_rng(22)
    for _ in range(50):
        t, chi = rng.uniform(0, 2 * np.pi, size=2)
        a = path_observable(np.cos(t), np.sin(t), chi)
        assert np.max(np.abs(a.matrix - path_matrix(np.cos(t), np.sin(t), chi))) <= 1e-12
        p3, p4 = a.projectors()
        assert np.max(np.abs(p3.matrix - p4.matrix - a.matrix)) <= 1e-12
        assert np.max(np.abs(p3.matrix + p4.matrix - np.eye(2))) <= 1e-12


def test_path_observable_theta_sweep():
    for t in np.linspace(0, np.pi, 37):
        a = path_observable_from_angle(t)
        assert np.allclose(list(a.bloch), [0, np.sin(2 * t), np.cos(2 * t)], atol=1e-12)
        assert a.bloch.norm() == pytest.approx(1, abs=1e-12)


def test_phase_rotates_bloch_about_z():
    a0 = path_observable_from_angle(0.3)
    a = path_observable_from_angle(0.3, chi=np.pi / 2)
    # +y rotated by chi lands on -x
    assert np.allclose(list(a.bloch), [-a0.bloch.y, 0, a0.bloch.z], atol=1e-12)


def test_path_observable_rejects_bad_split():
    with pytest.raises(ValueError, match="γ²\\+δ² ≠ 1"):
        path_observable(0.8, 0.7)


@given(angles, angles)
def test_path_observable_is_bloch_dot_sigma(theta, chi):
    a = path_observable_from_angle(theta, chi)
    assert np.max(np.abs(a.matrix - dot_sigma(list(a.bloch)))) <= 1e-12
    assert np.allclose(np.linalg.eigvalsh(a.matrix), [-1, 1], atol=1e-12)


@given(angles, angles)
def test_path_observable_bloch_roundtrip(theta, chi):
    a = path_observable_from_angle(theta, chi)
    b = path_observable_from_bloch(a.bloch)
    assert np.max(np.abs(a.matrix - b.matrix)) <= 1e-9


@given(angles, angles, st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_path_commutes_with_spin(theta, chi, b):
    b = np.array(b) / np.linalg.norm(b)
    A = np.kron(path_observable_from_angle(theta, chi).matrix, np.eye(2))
    B = np.kron(np.eye(2), dot_sigma(b))
    assert np.array_equal(A @ B, B @ A)


def test_closed_form_matrix_is_exact():
    for g, d in ((1.0, 0.0), (R, R), (0.0, 1.0)):
        m = path_observable(g, d).matrix
        ref = np.array([[g * g - d * d, -2j * g * d], [2j * g * d, d * d - g * g]])
        assert np.array_equal(m, ref)


def test_bs2_outputs_orthonormal():
    rng = np.random.default_rng(23)
    for t in rng.uniform(0, 2 * np.pi, size=100):
        p3, p4 = bs2_outputs(np.cos(t), np.sin(t))
        gram = np.array([[np.vdot(u.amps, v.amps) for v in (p3, p4)] for u in (p3, p4)])
        assert np.max(np.abs(gram - np.eye(2))) <= 1e-12


def test_fig1_fixture_layout(fig1_path):
    spec = load_apparatus(fig1_path)
    assert [c.kind for c in spec.components] == ["bs1", "sf", "mirror", "mirror", "bs2"]
    assert spec.sf_axis == XHAT
    bs2 = spec.components[-1].params
    assert bs2["gamma"] == pytest.approx(R, abs=1e-15) and bs2["delta"] == pytest.approx(R, abs=1e-15)
    assert spec.wing1_setting == "A" and spec.seed == 42 and spec.shots == 100000
    assert spec.spin_dirs == (ZHAT, XHAT)


def test_parse_valid_and_defaults():
    spec = parse_apparatus(VALID)
    assert spec.bs2_settings == ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0))
    bare = parse_apparatus("[pipeline]\nbs1\n")
    assert bare.wing1_setting == "A" and bare.seed is None
    assert len(bare.spin_dirs) == 2 and len(bare.bs2_settings) == 2


def test_parse_settings_and_directions():
    spec = parse_apparatus(VALID.replace("wing1_setting = A", "wing1_setting = angle:pi/4")
                           .replace("spin_dirs = z, x", "spin_dirs = -y, (0.6, 0, 0.8)")
                           .replace("(0, 1)", "(0, 1, pi/2)"))
    assert spec.wing1_setting == pytest.approx(np.pi / 4)
    assert spec.spin_dirs[0] == -YHAT
    assert list(spec.spin_dirs[1]) == [0.6, 0.0, 0.8]
    assert spec.bs2_settings[1][2] == pytest.approx(np.pi / 2)


def test_parse_missing_bs1():
    with pytest.raises(ApparatusValidationError, match="exactly one BS1 required"):
        parse_apparatus(VALID.replace("bs1\n", ""))


def test_parse_bad_bs2_split():
    with pytest.raises(ApparatusValidationError, match="0.64\\+0.49"):
        parse_apparatus(VALID.replace("gamma=sqrt(0.5) delta=sqrt(0.5)", "gamma=0.8 delta=0.7"))
    with pytest.raises(ApparatusValidationError, match="line 10"):
        parse_apparatus(VALID.replace("(1, 0), (0, 1)", "(0.8, 0.7), (0, 1)"))


@pytest.mark.parametrize("text, fragment", [
    ("[pipeline]\nbs1\nsf axis=1,1,0\n", "unit"),
    ("[pipeline]\nbs1\n[measurement]\nshots = 0\n", "shots"),
    ("[pipeline]\nbs1\n[measurement]\nspin_dirs = z\n", "spin_dirs"),
    ("[pipeline]\nsf\nbs1\n", "first"),
    ("[pipeline]\nbs1\nbs2 gamma=1 delta=0\nmirror\n", "last"),
    ("[pipeline]\nbs1\nbs2 gamma=1 delta=0\nbs2 gamma=1 delta=0\n", "at most one"),
    ("[pipeline]\nbs1\n[measurement]\nseed = 18446744073709551616\n", "64-bit"),
])
def test_validation_errors(text, fragment):
    with pytest.raises(ApparatusValidationError, match=fragment):
        parse_apparatus(text)


@pytest.mark.parametrize("text, line, column", [
    ("[pipeline]\nbs1\nprism\n", 3, 1),
    ("[source]\nwing1_setting = C\n", 2, 17),
    ("[pipeline]\nbs1\n  sf axis=q\n", 3, 11),
    ("[nonsense]\n", 1, 2),
    ("bs1\n", 1, 1),
    ("[measurement]\nshots = many\n", 2, 9),
    ("[measurement]\nbs2_settings = (1, 0, (0, 1)\n", 2, 16),
])
def test_syntax_errors_report_position(text, line, column):
    with pytest.raises(ApparatusSyntaxError) as info:
        parse_apparatus(text)
    assert (info.value.line, info.value.column) == (line, column)
    assert str(info.value).startswith(f"line {line}, column {column}:")


def test_eval_number_is_restricted():
    assert eval_number("sqrt(2)/2") == pytest.approx(R)
    assert eval_number("cos(3*pi/8)") == pytest.approx(np.cos(3 * np.pi / 8))
    for bad in ("__import__('os')", "10**400", "x", "[1]", "open"):
        with pytest.raises(ValueError):
            eval_number(bad)


def test_compile_empty_is_identity():
    assert np.array_equal(compile_pipeline([]).matrix, np.eye(4))


def test_mirrors_are_exact_identity():
    assert np.array_equal(mirror_unitary().matrix, np.eye(2))
    two = compile_pipeline([Component("mirror"), Component("mirror")])
    assert np.array_equal(two.matrix, np.eye(4))


def test_compile_matches_step_by_step(fig1_path):
    spec = load_apparatus(fig1_path)
    U = compile_pipeline(spec)
    assert np.max(np.abs(U.matrix.conj().T @ U.matrix - np.eye(4))) <= 1e-12
    spin = spin_state(SPIN2, ZHAT, 1)
    via_pipeline = apply(U, input_state(spin))
    a = path_observable(R, R)
    via_steps = apply(a.measurement_unitary(), prepare_bs1_sf(spin))
    assert np.max(np.abs(via_pipeline.amps - via_steps.amps)) <= 1e-12


def test_compile_with_phase_component():
    spec = parse_apparatus("[pipeline]\nbs1\nsf\nphase chi=0.7 arm=2\nbs2 gamma=0.6 delta=0.8\n")
    assert spec.arm_phase == pytest.approx(-0.7)
    U = compile_pipeline(spec)
    assert np.max(np.abs(U.matrix.conj().T @ U.matrix - np.eye(4))) <= 1e-12
    # detector probabilities from the pipeline equal the projector route
    a = path_observable(0.6, 0.8, spec.arm_phase)
    s_in = input_state(spin_state(SPIN2, ZHAT, 1))
    out = apply(U, s_in).amps.reshape(2, 2)
    p_detector = (np.abs(out) ** 2).sum(axis=1)
    prepared = apply(spec.preparation(), s_in)
    p3, p4 = a.projectors()
    from pathspin.qcore import embed, expect
    ref = [expect(embed(p, WING2), prepared) for p in (p3, p4)]
    assert np.allclose(p_detector, ref, atol=1e-12)
    # an explicit observable override does not count the file phase twice
    V = compile_pipeline(spec, bs2=a)
    assert np.max(np.abs(V.matrix - U.matrix)) <= 1e-12


@given(st.lists(st.sampled_from(["sf axis=x", "sf axis=y", "sf axis=0.6,0,0.8", "mirror",
                                 "phase chi=1.1", "phase chi=0.3 arm=2"]), max_size=6),
       st.floats(0, 2 * math.pi))
def test_every_compiled_pipeline_is_unitary(middle, theta):
    text = "[pipeline]\nbs1\n" + "\n".join(middle) + f"\nbs2 gamma={math.cos(theta)!r} delta={math.sin(theta)!r}\n"
    U = compile_pipeline(parse_apparatus(text)).matrix
    assert np.max(np.abs(U.conj().T @ U - np.eye(4))) <= 1e-12


def test_config_hash_is_stable_and_sensitive():
    a, b = parse_apparatus(VALID), parse_apparatus("# comment\n" + VALID)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != parse_apparatus(VALID.replace("shots = 10", "shots = 11")).config_hash()


def test_x_and_sigma_consistency():
    # sanity on the oracle Paulis used across tests
    assert np.array_equal(X @ X, np.eye(2)) and np.array_equal(dot_sigma([0, 0, 1]), Z)

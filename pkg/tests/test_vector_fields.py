import math

import numpy as np
import pytest

from wienercub.tensor_algebra import GradedTensor
from wienercub.lie_structures import bracket, certify
from wienercub.path_signature import PiecewiseLinearPath, log_signature
from wienercub.vector_fields import (
    AffineField,
    GenericField,
    VectorFieldSystem,
    FlowConfig,
    FlowDivergence,
    bracket_field,
    combine_fields,
    gbm,
    ou,
    affine_from_file,
    nested_bracket_field,
    gamma_field,
    affine_flow_exact,
    flow_exp,
    flow_along_path,
)


def test_affine_field_evaluation_and_batching():
    v = AffineField([[1.0, 2.0], [0.0, -1.0]], [0.5, 0.0])
    np.testing.assert_allclose(v(np.array([1.0, 1.0])), [3.5, -1.0])
    batch = v(np.array([[1.0, 1.0], [0.0, 0.0]]))
    np.testing.assert_allclose(batch, [[3.5, -1.0], [0.5, 0.0]])
    np.testing.assert_allclose(v.jacobian(np.zeros(2)), [[1.0, 2.0], [0.0, -1.0]])


def test_affine_bracket_by_hand():
    # [V, W](x) = JW V - JV W = (BA - AB) x + (B a - A b)
    a, av = np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([1.0, 0.0])
    b, bv = np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([0.0, 2.0])
    lie = bracket_field(AffineField(a, av), AffineField(b, bv))
    assert isinstance(lie, AffineField)
    np.testing.assert_allclose(lie.matrix, b @ a - a @ b)
    np.testing.assert_allclose(lie.offset, b @ av - a @ bv)


def test_generic_bracket_matches_affine():
    a = AffineField([[0.2, -0.4], [0.3, 0.1]], [0.1, -0.2])
    b = AffineField([[0.0, 0.5], [-0.3, 0.2]], [0.4, 0.3])
    ga = GenericField(a, 2)
    gb = GenericField(b, 2)
    exact = bracket_field(a, b)
    approx = bracket_field(ga, gb)
    assert isinstance(approx, GenericField)
    for x in (np.zeros(2), np.array([0.7, -0.3]), np.array([-1.2, 0.4])):
        np.testing.assert_allclose(approx(x), exact(x), atol=1e-7)


def test_generic_jacobian_finite_differences():
    cube = GenericField(lambda x: np.array([x[0] ** 3, x[0] * x[1]]), 2)
    x = np.array([0.8, -0.5])
    expected = np.array([[3 * 0.8**2, 0.0], [-0.5, 0.8]])
    np.testing.assert_allclose(cube.jacobian(x), expected, atol=1e-9)


def test_combine_fields_affine_stays_affine():
    sys = gbm(0.05, 0.3)
    combined = sys.combine(np.array([0.5, 2.0]))
    assert isinstance(combined, AffineField)
    # 0.5 * (0.05 x) + 2.0 * (0.3 x) = 0.625 x
    np.testing.assert_allclose(combined(np.array([1.0])), [0.625])


def test_system_properties():
    sys = ou(0.8, 0.2)
    assert sys.dimension == 1 and sys.n_controls == 1 and sys.is_affine
    with pytest.raises(ValueError):
        VectorFieldSystem((AffineField([[0.0]], [1.0]),))  # needs drift + noise
    mixed = VectorFieldSystem(
        (AffineField([[0.0]], [1.0]), GenericField(lambda x: x**2, 1))
    )
    assert not mixed.is_affine


def test_affine_from_file_roundtrip(tmp_path, noncommuting_system):
    import json

    target = tmp_path / "system.json"
    target.write_text(
        json.dumps(
            {
                "fields": [
                    {"matrix": f.matrix.tolist(), "offset": f.offset.tolist()}
                    for f in noncommuting_system.fields
                ]
            }
        )
    )
    sys = affine_from_file(str(target))
    assert sys.dimension == 2 and sys.n_controls == 1
    x = np.array([0.3, 0.9])
    for mine, theirs in zip(sys.fields, noncommuting_system.fields):
        np.testing.assert_allclose(mine(x), theirs(x))


def test_scalar_affine_flow_closed_form():
    # dx/dt = a x + b has flow x e^{at} + b (e^{at} - 1) / a
    a, b, t, x = 0.3, -0.2, 0.7, 1.1
    v = AffineField([[a]], [b])
    expected = x * math.exp(a * t) + b * (math.exp(a * t) - 1.0) / a
    np.testing.assert_allclose(affine_flow_exact(v, t, np.array([x])), [expected])
    got = flow_exp(v, t, np.array([x]), FlowConfig(substeps=128))
    np.testing.assert_allclose(got, [expected], atol=1e-12)


def test_flow_exp_exact_affine_toggle():
    v = AffineField([[0.0, 1.0], [-1.0, 0.0]], [0.0, 0.0])  # rotation
    x = np.array([1.0, 0.0])
    exact = flow_exp(v, math.pi / 2, x, FlowConfig(substeps=1, exact_affine=True))
    np.testing.assert_allclose(exact, [0.0, -1.0], atol=1e-14)


def test_flow_exp_negative_time_inverts():
    v = AffineField([[0.4, -0.1], [0.2, 0.3]], [0.1, -0.2])
    x = np.array([0.5, 1.5])
    cfg = FlowConfig(substeps=64)
    back = flow_exp(v, -1.0, flow_exp(v, 1.0, x, cfg), cfg)
    np.testing.assert_allclose(back, x, atol=1e-9)


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_flow_divergence_detected():
    blowup = GenericField(lambda x: x**2, 1)
    with pytest.raises(FlowDivergence) as err:
        flow_exp(blowup, 5.0, np.array([3.0]), FlowConfig(substeps=8))
    assert err.value.substep is not None


def test_flow_along_path_gbm_closed_form():
    # for commuting linear fields the path flow is x exp(mu T + sigma x_T)
    sys = gbm(0.07, 0.25)
    path = PiecewiseLinearPath.from_increments([(0.5, (0.3,)), (0.5, (-0.8,))])
    got = flow_along_path(path, sys, np.array([2.0]), FlowConfig(substeps=64))
    expected = 2.0 * math.exp(0.07 * 1.0 + 0.25 * (-0.5))
    np.testing.assert_allclose(got, [expected], atol=1e-10)


def test_nested_bracket_field_words():
    sys = gbm(0.1, 0.4)
    v = nested_bracket_field(sys, (1,))
    np.testing.assert_allclose(v(np.array([1.0])), [0.4])
    lie = nested_bracket_field(sys, (1, 1, 0))  # [V1, [V1, V0]] = 0 here
    np.testing.assert_allclose(lie(np.array([1.0])), [0.0], atol=1e-15)


def test_gamma_map_on_generators(noncommuting_system):
    e1 = certify(GradedTensor.basis(1, 3, (1,)))
    v = gamma_field(e1, noncommuting_system)
    x = np.array([0.7, -0.3])
    np.testing.assert_allclose(v(x), noncommuting_system.fields[1](x))


def test_gamma_map_sends_brackets_to_bracket_fields(noncommuting_system):
    lie = certify(bracket(GradedTensor.basis(1, 3, (0,)), GradedTensor.basis(1, 3, (1,))))
    via_gamma = gamma_field(lie, noncommuting_system)
    direct = bracket_field(*noncommuting_system.fields)
    for x in (np.zeros(2), np.array([0.7, -0.3]), np.array([1.1, 0.2])):
        np.testing.assert_allclose(via_gamma(x), direct(x), atol=1e-13)


def test_gamma_map_of_line_log_signature_is_segment_field():
    # the log-signature of a straight segment is dt e0 + dx e1, so its field
    # is the same combination that drives the segment flow
    sys = gbm(0.05, 0.3)
    path = PiecewiseLinearPath.straight_line((0.6,), 1.0)
    v = gamma_field(log_signature(path, 5), sys)
    w = combine_fields(list(sys.fields), np.array([1.0, 0.6]))
    for x in (np.array([0.5]), np.array([2.0])):
        np.testing.assert_allclose(v(x), w(x), atol=1e-12)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perceptplan.geometry import (
    GRAVITY, Behind, CameraModel, DegenerateInput, Quaternion, SingularityError, Transform,
    ZeroAccelerationError, angle_to_axis, body_attitude, body_pose, hopf_quaternion, in_fov_smooth,
    project_point, projected_velocity, projected_velocity_fd,
)

E_Z = np.array([0.0, 0.0, 1.0])
finite = st.floats(-10, 10, allow_nan=False)


def camera_at_origin_looking_z():
    """World-to-body transform such that camera coordinates equal world coordinates."""
    cam = CameraModel()
    return cam, cam.body_to_camera.inverse()


def random_unit_quaternion(rng):
    q = rng.normal(size=4)
    return Quaternion.from_array(q / np.linalg.norm(q))


def test_quaternion_product_matches_rotation_composition():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a, b = random_unit_quaternion(rng), random_unit_quaternion(rng)
        np.testing.assert_allclose((a * b).rotation_matrix(), a.rotation_matrix() @ b.rotation_matrix(),
                                   atol=1e-12)


def test_transform_inverse_and_associativity():
    rng = np.random.default_rng(2)
    T = [Transform(random_unit_quaternion(rng), rng.normal(size=3)) for _ in range(3)]
    p = rng.normal(size=3)
    np.testing.assert_allclose((T[0].inverse() @ T[0]).apply(p), p, atol=1e-9)
    np.testing.assert_allclose(((T[0] @ T[1]) @ T[2]).apply(p), (T[0] @ (T[1] @ T[2])).apply(p), atol=1e-9)
    np.testing.assert_allclose((T[0] @ T[1]).matrix(), T[0].matrix() @ T[1].matrix(), atol=1e-12)


def test_hopf_hover_is_identity():
    assert hopf_quaternion([0, 0, GRAVITY]).as_array() == pytest.approx([1, 0, 0, 0], abs=1e-15)


def test_hopf_sideways_thrust():
    s = 1 / math.sqrt(2)
    assert hopf_quaternion([GRAVITY, 0, 0]).as_array() == pytest.approx([s, 0, s, 0], abs=1e-15)


def test_hopf_maps_ez_onto_thrust_direction():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        xb = rng.normal(size=3)
        xb /= np.linalg.norm(xb)
        if xb[2] <= -0.999:
            continue
        np.testing.assert_allclose(hopf_quaternion(xb).rotate(E_Z), xb, atol=1e-12)


def test_body_attitude_hover_yaw():
    q = body_attitude([0, 0, GRAVITY], math.pi / 2)
    c = math.cos(math.pi / 4)
    assert q.as_array() == pytest.approx([c, 0, 0, c], abs=1e-15)
    assert body_attitude([0, 0, GRAVITY], 0.0).as_array() == pytest.approx([1, 0, 0, 0])


@settings(max_examples=300, deadline=None)
@given(st.tuples(finite, finite, finite), st.floats(-10, 10))
def test_body_attitude_thrust_axis_independent_of_yaw(xi, psi):
    xi = np.array(xi)
    n = np.linalg.norm(xi)
    if n < 1e-6 or 1 + xi[2] / n < 1e-3:
        return
    q = body_attitude(xi, psi)
    assert abs(q.norm() - 1) < 1e-12
    np.testing.assert_allclose(q.rotate(E_Z), xi / n, atol=1e-12)


def test_singularity_and_zero_acceleration_errors():
    with pytest.raises(SingularityError):
        hopf_quaternion([0, 0, -1])
    with pytest.raises(SingularityError):
        hopf_quaternion([1e-4, 0, -1])  # 1 + z_bar ~ 5e-9
    hopf_quaternion([1e-2, 0, -1])  # 1 + z_bar ~ 5e-5 is still fine
    with pytest.raises(ZeroAccelerationError):
        hopf_quaternion([0, 0, 1e-12])


def test_project_point_examples():
    cam, w2b = camera_at_origin_looking_z()
    assert project_point(cam, w2b, [0, 0, 2]) == pytest.approx([0, 0])
    assert project_point(cam, w2b, [1, 0, 2]) == pytest.approx([0.005, 0])
    assert project_point(cam, w2b, [0, 0, -1]) is Behind


def test_forward_camera_looks_along_body_x():
    cam = CameraModel()
    w2b = Transform()
    assert project_point(cam, w2b, [3, 0, 0]) == pytest.approx([0, 0])
    assert project_point(cam, w2b, [-3, 0, 0]) is Behind
    # a point to the body's left appears on the image's left (negative x)
    assert project_point(cam, w2b, [3, 1, 0])[0] < 0


def test_in_fov_smooth_examples():
    cam, w2b = camera_at_origin_looking_z()
    on_axis = in_fov_smooth(cam, w2b, [0, 0, 5])
    assert on_axis == pytest.approx(1.0, abs=1e-5)
    half = cam.theta / 2
    assert in_fov_smooth(cam, w2b, [math.sin(half), 0, math.cos(half)]) == pytest.approx(0.5, abs=1e-12)
    assert in_fov_smooth(cam, w2b, [0, 0, -5]) < 1e-50
    with pytest.raises(DegenerateInput):
        in_fov_smooth(cam, w2b, [0, 0, 0])


def test_in_fov_smooth_scale_invariant_and_monotone():
    cam, w2b = camera_at_origin_looking_z()
    rng = np.random.default_rng(4)
    for _ in range(200):
        p = rng.normal(size=3)
        s = rng.uniform(0.01, 100)
        assert in_fov_smooth(cam, w2b, p) == pytest.approx(in_fov_smooth(cam, w2b, s * p), abs=1e-12)
    angles = np.linspace(0, math.pi, 50)
    vals = [in_fov_smooth(cam, w2b, [math.sin(a), 0, math.cos(a)]) for a in angles]
    assert np.all(np.diff(vals) <= 0)


def test_in_fov_smooth_matches_hard_indicator_for_sharp_sigmoid():
    cam = CameraModel(gamma_sig=1e4)
    w2b = cam.body_to_camera.inverse()
    rng = np.random.default_rng(5)
    for _ in range(2000):
        p = rng.normal(size=3)
        ang = angle_to_axis(cam, w2b, p)
        if abs(ang - cam.theta / 2) < 0.01:
            continue
        hard = float(ang <= cam.theta / 2)
        assert in_fov_smooth(cam, w2b, p) == pytest.approx(hard, abs=1e-6)


def test_projected_velocity_static_scene_is_zero():
    cam = CameraModel()

    def agent(t):
        return np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3), 0.0, 0.0

    def obstacle(t):
        return np.array([3.0, 0.5, 0.2]), np.zeros(3)

    assert projected_velocity(cam, agent, obstacle, 0.0) == pytest.approx([0, 0], abs=1e-15)


def test_projected_velocity_lateral_motion():
    # camera at origin looking along world z: body x = world z
    cam = CameraModel()
    pitch = Quaternion(math.cos(-math.pi / 4), 0, math.sin(-math.pi / 4), 0)  # body x -> world z
    assert pitch.rotate([1, 0, 0]) == pytest.approx([0, 0, 1], abs=1e-15)
    w2b = Transform(pitch).inverse()
    # obstacle at camera coords (v t, 0, 2) -> s = (f v t / 2, 0)
    v = 1.0
    cam_to_world = (w2b.inverse() @ cam.body_to_camera.inverse())
    p0 = cam_to_world.apply([0, 0, 2])
    dx = cam_to_world.rotation.rotate([v, 0, 0])
    s = [project_point(cam, w2b, p0 + dx * t) for t in (-1e-3, 1e-3)]
    assert (s[1] - s[0]) / 2e-3 == pytest.approx([0.005, 0], abs=1e-12)


def test_projected_velocity_analytic_matches_central_difference():
    cam = CameraModel()
    rng = np.random.default_rng(6)
    checked = 0
    for _ in range(200):
        c = rng.normal(size=(4, 3))  # cubic agent path coefficients
        c[0] = 0.0
        psi_c = rng.normal(size=3) * 0.5
        o = rng.normal(size=(2, 3))
        o[0] += [3.0, 0.0, 0.0]

        def agent(t, c=c, psi_c=psi_c):
            p = c[0] + c[1] * t + c[2] * t ** 2 + c[3] * t ** 3
            v = c[1] + 2 * c[2] * t + 3 * c[3] * t ** 2
            a = 2 * c[2] + 6 * c[3] * t
            j = 6 * c[3]
            return p, v, a, j, psi_c[0] + psi_c[1] * t + psi_c[2] * t ** 2, psi_c[1] + 2 * psi_c[2] * t

        def obstacle(t, o=o):
            return o[0] + o[1] * t, o[1]

        p, _, a, _, psi, _ = agent(0.3)
        w2b = body_pose(p, a, psi).inverse()
        if not (project_point(cam, w2b, obstacle(0.3)[0]) is not Behind
                and cam.to_camera(w2b, obstacle(0.3)[0])[2] > 0.5):
            continue
        an = projected_velocity(cam, agent, obstacle, 0.3)
        fd = projected_velocity_fd(cam, agent, obstacle, 0.3)
        assert np.linalg.norm(an - fd) <= 1e-5 * max(np.linalg.norm(an), 1e-3)
        checked += 1
    assert checked > 30

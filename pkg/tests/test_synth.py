import dataclasses

import numpy as np
import pytest
import scipy.stats

from gesture_fusion import radar as rd
from gesture_fusion import synth as sy

SP = sy.SubjectParams.draw(3)


def test_gesture_codes_stable():
    names = ["FLY", "COME_CLOSER", "SLOW_DOWN", "WAVE", "PUSH_AWAY", "WAVE_THROUGH", "STOP", "THANK_YOU"]
    assert [g.name for g in sy.GestureClass] == names
    assert [int(g) for g in sy.GestureClass] == list(range(8))


def test_subject_draw_is_seeded():
    assert sy.SubjectParams.draw(5, seed=1) == sy.SubjectParams.draw(5, seed=1)
    assert sy.SubjectParams.draw(5, seed=1) != sy.SubjectParams.draw(5, seed=2)


@pytest.mark.parametrize("cls", list(sy.GestureClass))
def test_bone_lengths_constant(cls):
    j = sy.synth_skeleton(cls, SP, 150, onset=0.8, offset=3.5)
    bl = sy.bone_lengths(j)
    assert np.max(np.abs(bl - bl[0]) / bl[0]) < 1e-6


def test_stop_wrist_above_shoulder():
    for s in range(10):
        sp = sy.SubjectParams.draw(s)
        j = sy.synth_skeleton(sy.GestureClass.STOP, sp, 120)
        w, sh = (sy.J["l_wrist"], sy.J["l_shoulder"]) if sp.left_handed else (sy.J["r_wrist"], sy.J["r_shoulder"])
        assert np.mean(j[:, w, 2] > j[:, sh, 2]) >= 0.9


def test_subjects_differ():
    a = sy.synth_skeleton(sy.GestureClass.WAVE, sy.SubjectParams.draw(0), 90)
    b = sy.synth_skeleton(sy.GestureClass.WAVE, sy.SubjectParams.draw(1), 90)
    assert np.max(np.linalg.norm(a - b, axis=-1)) > 0.05


def test_facing_rail_puts_right_side_on_image_left():
    j = sy.synth_skeleton(sy.GestureClass.STOP, dataclasses.replace(SP, position=(0.0, 4.0)), 2)
    # subject faces -y, so its right shoulder sits at negative scene x
    assert j[0, sy.J["r_shoulder"], 0] < 0 < j[0, sy.J["l_shoulder"], 0]
    assert j[0, sy.J["nose"], 1] < 4.0


def test_projection_centre_and_range():
    cam = sy.Camera()
    on_axis = np.array([[[0.0, 3.0, cam.position[2]]]])
    np.testing.assert_allclose(sy.project_keypoints(on_axis, cam)[0, :, 0], [0.5, 0.5])
    kp = sy.project_keypoints(sy.synth_skeleton(0, SP, 60), cam, np.random.default_rng(0))
    assert kp.shape == (60, 2, 17) and kp.min() >= 0 and kp.max() <= 1


def test_projection_scales_with_focal_length():
    j = sy.synth_skeleton(3, SP, 20)
    a = sy.project_keypoints(j, sy.Camera(focal_px=400.0)) - 0.5
    b = sy.project_keypoints(j, sy.Camera(focal_px=800.0)) - 0.5
    # image-plane offsets are proportional to the focal length
    np.testing.assert_allclose(b, 2 * a, atol=1e-12)


def test_projection_outside_frustum():
    j = sy.synth_skeleton(0, dataclasses.replace(SP, position=(30.0, 4.0)), 3)
    with pytest.raises(ValueError, match="frustum"):
        sy.project_keypoints(j, sy.Camera())


def test_static_torso_has_zero_velocity():
    j = sy.synth_skeleton(sy.GestureClass.STOP, SP, 2)
    sc = sy.derive_scatterers(j[0], j[0], rd.RadarConfig(), rng=np.random.default_rng(0), jitter_velocity=0.02)
    assert np.all(np.abs(sc[:, 1]) < 0.02 * 5)


def test_wrist_towards_sensor_has_negative_velocity():
    sensor = rd.RadarConfig(position=(0.0, 0.0, 1.0))
    p = np.zeros((17, 3))
    p[:, 1] = 3.0
    p[:, 2] = 1.0
    q = p.copy()
    q[sy.J["r_wrist"], 1] -= 1.0 / 30  # 1 m/s straight at the sensor
    sc = sy.derive_scatterers(p, q, sensor)
    k = list(sy.SCATTER_JOINTS).index(sy.J["r_wrist"])
    assert sc[k, 1] == pytest.approx(-1.0, rel=1e-9)
    assert sc[k, 0] == pytest.approx(3.0)


def test_sensors_see_consistent_azimuths():
    sensors = rd.default_sensors()
    j = sy.synth_skeleton(0, dataclasses.replace(SP, position=(0.2, 4.0)), 2)
    for s in sensors:
        sc = sy.derive_scatterers(j[0], j[1], s)
        k = list(sy.SCATTER_JOINTS).index(sy.J["nose"])
        rel = j[0, sy.J["nose"]] - np.asarray(s.position)
        assert sc[k, 2] == pytest.approx(np.arcsin(rel[0] / np.linalg.norm(rel)))
    az = [sy.derive_scatterers(j[0], j[1], s)[0, 2] for s in sensors]
    assert az[0] > az[1] > az[2]  # sensors further left see the subject further right


def _measurement(n):
    return sy.Measurement(0, 1, np.zeros((n, 17, 3)), np.random.default_rng(0).random((n, 2, 17)),
                          np.random.default_rng(1).random((n, 5, 300)).astype(np.float32))


def test_window_counts_and_contents():
    m = _measurement(120)
    r, k = sy.window_samples(m, stride=15)
    assert r.shape == (3, 30, 5, 300) and k.shape == (3, 30, 34)
    np.testing.assert_array_equal(r[1], m.radar[::2][15:45])
    np.testing.assert_array_equal(k[2], m.keypoints[::2][30:60].reshape(30, 34).astype(k.dtype))
    assert len(sy.window_samples(_measurement(60))[0]) == 1
    with pytest.warns(UserWarning):
        assert len(sy.window_samples(_measurement(50))[0]) == 0


def test_cross_subject_split():
    tests = []
    for f in range(5):
        tr, va, te = sy.cross_subject_split(35, f)
        assert len(te) == 7 and len(va) == 4 and len(tr) == 24
        assert not (set(tr) & set(va) or set(tr) & set(te) or set(va) & set(te))
        tests += te
        assert (tr, va, te) == sy.cross_subject_split(35, f)
    assert sorted(tests) == list(range(35))
    with pytest.raises(ValueError):
        sy.cross_subject_split(35, 5)


@pytest.fixture(scope="module")
def mini():
    cfg = sy.GeneratorConfig(n_subjects=8, measurements_per_class=2)
    return cfg, sy.generate_dataset(cfg)


def test_dataset_shapes_balance_ranges(mini):
    cfg, d = mini
    assert d.x_R.shape == (8 * 8 * 2 * 3, 30, 5, 300) and d.x_K.shape[1:] == (30, 34)
    counts = d.class_counts()
    assert np.all(np.abs(counts - counts.mean()) <= 0.1 * counts.mean())
    for x in (d.x_R, d.x_K):
        assert np.all(np.isfinite(x)) and x.min() >= 0 and x.max() <= 1


def test_default_dataset_size():
    cfg = sy.GeneratorConfig()
    per_measurement = len(range(0, cfg.n_frames // 2 - cfg.n_steps + 1, cfg.stride))
    n = cfg.n_subjects * 8 * cfg.measurements_per_class * per_measurement
    assert per_measurement == 3 and n == 3360


def test_dataset_deterministic(mini):
    cfg, d = mini
    small = dataclasses.replace(cfg, n_subjects=2)
    a, b = sy.generate_dataset(small), sy.generate_dataset(small)
    assert np.array_equal(a.x_R, b.x_R) and np.array_equal(a.x_K, b.x_K)
    # a subject's data does not depend on how many subjects are generated
    assert np.array_equal(a.x_R, d.x_R[: len(a)])


def test_modality_consistency(mini):
    _, d = mini
    kp = d.x_K.reshape(len(d), 30, 2, 17)[..., [sy.J["l_wrist"], sy.J["r_wrist"]]]
    wrist_speed = np.linalg.norm(np.diff(kp, axis=1), axis=2).max(-1)
    r = d.x_R[:, 1:]
    real = r[:, :, 0] > 0
    vmax = np.where(real, np.abs(r[:, :, 1] - 0.5), 0).max(-1)
    rho = scipy.stats.spearmanr(wrist_speed.ravel(), vmax.ravel()).statistic
    assert rho > 0.5


def test_config_round_trip():
    cfg = sy.GeneratorConfig(n_subjects=5, seed=3)
    assert sy.GeneratorConfig.from_dict(cfg.to_dict()) == cfg

"""Synthetic multimodal gesture data.

A kinematic COCO-17 skeleton performs one of eight gestures in front of a
rail carrying a camera and three radar sensors.  Each frame yields
normalized 2D keypoints (pinhole projection plus pixel noise) and, per
sensor, radar scatterers at selected joints that are turned into target
lists either by a resolution-limited detection model (FAST) or by the full
signal chain of :mod:`gesture_fusion.radar` (FULL).

Scene frame: x along the rail, y away from the rail (sensor boresight),
z up, metres.  Body frame: x to the subject's right, y forward, z up.

Seeding: subject ``s`` draws its parameters from ``default_rng([seed, 0, s])``
and measurement ``(s, class, rep)`` uses ``default_rng([seed, 1, s, class, rep])``,
so every measurement is reproducible on its own.
"""
from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import radar as rd
from .dataset import GestureDataset

log = logging.getLogger(__name__)


class GestureClass(IntEnum):
    FLY = 0
    COME_CLOSER = 1
    SLOW_DOWN = 2
    WAVE = 3
    PUSH_AWAY = 4
    WAVE_THROUGH = 5
    STOP = 6
    THANK_YOU = 7


JOINTS = ("nose", "l_eye", "r_eye", "l_ear", "r_ear", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow",
          "l_wrist", "r_wrist", "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle")
J = {name: i for i, name in enumerate(JOINTS)}
BONES = ((5, 7), (7, 9), (6, 8), (8, 10), (11, 13), (13, 15), (12, 14), (14, 16), (5, 6), (11, 12),
         (5, 11), (6, 12), (0, 1), (0, 2), (1, 3), (2, 4), (0, 5))

# radar scatterers: joint index -> base reflectivity (dB)
SCATTER_JOINTS = {9: -10.0, 10: -10.0, 7: -9.0, 8: -9.0, 5: -7.0, 6: -7.0, 0: -5.0, 13: -8.0, 14: -8.0}
TORSO_RCS = 0.0  # extra scatterer at the torso centre


@dataclass(frozen=True)
class SubjectParams:
    """Body and motion-style parameters of one virtual participant."""

    subject_id: int = 0
    height: float = 1.75
    shoulder_width: float = 0.40
    upper_arm: float = 0.30
    forearm: float = 0.27  # elbow to wrist
    amplitude: float = 1.0
    freq_scale: float = 1.0
    phase: float = 0.0
    style: tuple = (0.0, 0.0, 0.0, 0.0)  # angle offsets (deg)
    left_handed: bool = False
    position: tuple = (0.0, 4.0)  # standing point on the floor (x, y)
    orientation: float = 0.0  # rad; 0 = facing the rail
    seed: int = 0

    @staticmethod
    def draw(subject_id: int, seed: int = 0) -> "SubjectParams":
        rng = np.random.default_rng([seed, 0, subject_id])
        h = rng.uniform(1.55, 1.95)
        return SubjectParams(
            subject_id=subject_id,
            height=h,
            shoulder_width=h * rng.uniform(0.21, 0.25),
            upper_arm=h * rng.uniform(0.16, 0.19),
            forearm=h * rng.uniform(0.145, 0.165),
            amplitude=rng.uniform(0.7, 1.3),
            freq_scale=rng.uniform(0.8, 1.25),
            phase=rng.uniform(0, 2 * np.pi),
            style=tuple(rng.normal(0.0, 8.0, 4)),
            left_handed=bool(rng.random() < 0.15),
            seed=int(rng.integers(2**31)),
        )


# -- kinematics -----------------------------------------------------------------

def _dir(azim, elev, side):
    """Unit vector in the body frame; azim 0 = forward, 90 = sideways out; elev 90 = up (deg)."""
    a, e = np.deg2rad(azim), np.deg2rad(elev)
    a, e = np.broadcast_arrays(a, e)
    return np.stack([side * np.cos(e) * np.sin(a), np.cos(e) * np.cos(a), np.sin(e)], axis=-1)


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _slerp(u0, u1, a):
    """Great-circle blend of unit vectors; ``a`` in [0, 1] per frame."""
    cos = np.clip(np.sum(u0 * u1, axis=-1), -1.0, 1.0)
    om = np.arccos(cos)[..., None]
    a = np.asarray(a)[..., None]
    small = om < 1e-6
    so = np.where(small, 1.0, np.sin(om))
    w0 = np.where(small, 1 - a, np.sin((1 - a) * om) / so)
    w1 = np.where(small, a, np.sin(a * om) / so)
    return _unit(w0 * u0 + w1 * u1)


def activity_envelope(t, onset: float = -np.inf, offset: float = np.inf, ramp: float = 0.6):
    """Smooth 0 -> 1 -> 0 profile: rest before ``onset`` and after ``offset`` (s)."""
    up = np.clip((t - onset) / ramp, 0, 1)
    down = np.clip((t - offset) / ramp, 0, 1)
    ss = lambda x: x * x * (3 - 2 * x)
    return ss(up) * (1 - ss(down))


def _rest(t, side, sp: SubjectParams, sway=0.0):
    n = np.ones_like(t)
    u = _dir(8 * n, -84 + sway * np.sin(2 * np.pi * 0.2 * t + side), side)
    f = _dir(12 * n, -72 + sway * np.sin(2 * np.pi * 0.2 * t + side), side)
    return u, f


def _arm_trajectories(cls: GestureClass, t: np.ndarray, sp: SubjectParams, phase0: float):
    """Upper-arm and forearm unit directions for (dominant, other) arm, plus torso pitch (deg).

    Discriminative joints per class: fly - both wrists/elbows vertical;
    come-closer - dominant forearm flexing towards the body; slow-down -
    dominant hand pressing down beside the body; wave - raised forearm
    swinging sideways; push-away - dominant hand thrust forward; wave-through -
    horizontal sweep of the dominant arm; stop - static raised palm;
    thank-you - hand raised to the chest with a slight bow.
    """
    A, d = sp.amplitude, sp.style
    ph = lambda hz: 2 * np.pi * hz * sp.freq_scale * t + phase0
    dom = -1 if sp.left_handed else 1  # side sign of the dominant arm (+1 right)
    n = np.ones_like(t)
    pitch = np.zeros_like(t)
    other = _rest(t, -dom, sp, sway=2.0)
    if cls == GestureClass.FLY:
        p = ph(0.9)
        e = 5 + d[1] + 35 * A * np.sin(p)
        e2 = e + 15 * np.sin(p - 0.6)
        dom_arm = (_dir((70 + d[0]) * n, e, dom), _dir((65 + d[0]) * n, e2, dom))
        other = (_dir((70 + d[0]) * n, e, -dom), _dir((65 + d[0]) * n, e2, -dom))
    elif cls == GestureClass.COME_CLOSER:
        p = ph(1.2)
        w = 0.5 * (1 - np.cos(p))
        dom_arm = (_dir((20 + d[0]) * n, (-35 + d[1]) * n, dom), _dir((10 + d[2]) * n, 15 + 55 * A * w, dom))
    elif cls == GestureClass.SLOW_DOWN:
        p = ph(0.7)
        dom_arm = (_dir((35 + d[0]) * n, -20 + d[1] + 18 * A * np.sin(p), dom),
                   _dir((30 + d[0] - 15 * A * np.sin(p)) * n, -15 + d[2] + 35 * A * np.sin(p), dom))
    elif cls == GestureClass.WAVE:
        p = ph(1.5)
        beta = np.deg2rad(40 * A * np.sin(p) + d[2])
        g = np.deg2rad(35.0)  # swing plane turned towards the front
        f = _unit(np.stack([dom * np.cos(g) * np.sin(beta), 0.15 + np.sin(g) * np.sin(beta), np.cos(beta)], axis=-1))
        dom_arm = (_dir((55 + d[0]) * n, (25 + d[1]) * n, dom), f)
    elif cls == GestureClass.PUSH_AWAY:
        p = ph(1.0)
        x = np.clip(A, 0.5, 1.0) * 0.5 * (1 - np.cos(p))
        dom_arm = (_dir((15 + d[0]) * n, -65 + 60 * x + d[1], dom), _dir((5 + d[2]) * n, (0 + d[1] / 2) * n, dom))
    elif cls == GestureClass.WAVE_THROUGH:
        p = ph(0.9)
        a = 45 + d[0] + 45 * A * np.sin(p)
        dom_arm = (_dir(a, (-30 + d[1]) * n, dom), _dir(a + 10, (-10 + d[2]) * n, dom))
    elif cls == GestureClass.STOP:
        tremor = 3 * np.sin(2 * np.pi * 0.3 * t + phase0)
        dom_arm = (_dir((20 + d[0]) * n, 30 + d[1] / 2 + tremor, dom), _dir((15 + d[2]) * n, 75 + tremor, dom))
    elif cls == GestureClass.THANK_YOU:
        p = ph(0.5)
        b = np.sin(0.5 * p) ** 2
        e_u = -80 + 75 * A * b + d[1] / 2
        dom_arm = (_dir((25 + d[0]) * n, e_u, dom), _dir((15 + d[2]) * n, np.minimum(e_u + 70 * b, 85), dom))
        pitch = 10 * A * b
    else:  # pragma: no cover - IntEnum exhausts the classes
        raise ValueError(cls)
    return dom, dom_arm, other, pitch


def _rot_x(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(a), np.ones_like(a)
    return np.stack([np.stack([o, z, z], -1), np.stack([z, c, -s], -1), np.stack([z, s, c], -1)], -2)


def _rot_z(rad):
    c, s = np.cos(rad), np.sin(rad)
    z, o = np.zeros_like(rad), np.ones_like(rad)
    return np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)], -2)


def synth_skeleton(cls, subject: SubjectParams, n_frames: int, fps: float = 30.0,
                   phase0: float | None = None, onset: float = -np.inf, offset: float = np.inf) -> np.ndarray:
    """3D joint trajectories ``[n_frames, 17, 3]`` in scene coordinates.

    Outside ``[onset, offset]`` (seconds) the arms return to the rest pose
    along great circles; by default the gesture runs throughout.
    """
    cls = GestureClass(cls)
    sp = subject
    t = np.arange(n_frames) / fps
    phase0 = sp.phase if phase0 is None else phase0
    h, sw = sp.height, sp.shoulder_width
    # rigid body-frame template (standing on the origin)
    tpl = np.zeros((17, 3))
    tpl[J["nose"]] = (0, 0.06 * h, 0.93 * h)
    tpl[J["l_eye"]], tpl[J["r_eye"]] = (-0.02 * h, 0.05 * h, 0.945 * h), (0.02 * h, 0.05 * h, 0.945 * h)
    tpl[J["l_ear"]], tpl[J["r_ear"]] = (-0.045 * h, 0.0, 0.935 * h), (0.045 * h, 0.0, 0.935 * h)
    tpl[J["l_shoulder"]], tpl[J["r_shoulder"]] = (-sw / 2, 0, 0.82 * h), (sw / 2, 0, 0.82 * h)
    tpl[J["l_hip"]], tpl[J["r_hip"]] = (-0.055 * h, 0, 0.53 * h), (0.055 * h, 0, 0.53 * h)
    tpl[J["l_knee"]], tpl[J["r_knee"]] = (-0.06 * h, 0.01 * h, 0.285 * h), (0.06 * h, 0.01 * h, 0.285 * h)
    tpl[J["l_ankle"]], tpl[J["r_ankle"]] = (-0.06 * h, 0, 0.04 * h), (0.06 * h, 0, 0.04 * h)
    joints = np.repeat(tpl[None], n_frames, axis=0)

    dom, dom_arm, other_arm, pitch = _arm_trajectories(cls, t, sp, phase0)
    act = activity_envelope(t, onset, offset)
    pitch = pitch * act
    for side, (u, f) in ((dom, dom_arm), (-dom, other_arm)):
        u0, f0 = _rest(t, side, sp, sway=2.0)
        u, f = _slerp(u0, u, act), _slerp(f0, f, act)
        s, e, w = (J["r_shoulder"], J["r_elbow"], J["r_wrist"]) if side > 0 else (J["l_shoulder"], J["l_elbow"], J["l_wrist"])
        joints[:, e] = joints[:, s] + sp.upper_arm * u
        joints[:, w] = joints[:, e] + sp.forearm * f

    # upper-body pitch about the hip centre
    upper = [J[k] for k in JOINTS[:11]]
    pivot = np.array([0.0, 0.0, 0.53 * h])
    joints[:, upper] = np.einsum("tij,tkj->tki", _rot_x(-pitch), joints[:, upper] - pivot) + pivot

    # body to scene: heading, small yaw/translation sway
    yaw = np.deg2rad(3.0) * np.sin(2 * np.pi * 0.15 * t + 2 * phase0)
    heading = -np.pi / 2 + sp.orientation + yaw  # body y axis direction angle in the scene
    rot = _rot_z(heading - np.pi / 2)
    sway = 0.02 * np.stack([np.sin(2 * np.pi * 0.25 * t + phase0), np.cos(2 * np.pi * 0.21 * t), np.zeros_like(t)], -1)
    origin = np.array([sp.position[0], sp.position[1], 0.0])
    return np.einsum("tij,tkj->tki", rot, joints) + origin + sway[:, None, :]


def bone_lengths(joints: np.ndarray) -> np.ndarray:
    b = np.array(BONES)
    return np.linalg.norm(joints[..., b[:, 0], :] - joints[..., b[:, 1], :], axis=-1)


# -- camera -----------------------------------------------------------------------

@dataclass(frozen=True)
class Camera:
    """Pinhole camera on the rail looking along +y."""

    position: tuple = (0.0, 0.0, 1.3)
    focal_px: float = 1100.0
    width: int = 1240
    height: int = 1028
    noise_px: float = 2.0


def project_keypoints(joints: np.ndarray, camera: Camera = Camera(), rng: np.random.Generator | None = None) -> np.ndarray:
    """Normalized keypoints ``[T, 2, 17]`` (u/width, v/height), clipped to [0, 1].

    Pixel noise with ``camera.noise_px`` standard deviation is added before
    normalization when ``rng`` is given.
    """
    rel = joints - np.asarray(camera.position)
    depth = rel[..., 1]
    if np.any(depth <= 0.05):
        raise ValueError("joints behind the camera")
    u = camera.width / 2 + camera.focal_px * rel[..., 0] / depth
    v = camera.height / 2 - camera.focal_px * rel[..., 2] / depth
    inside = (u >= 0) & (u <= camera.width) & (v >= 0) & (v <= camera.height)
    if np.any(~inside.any(axis=-1)):
        raise ValueError("subject outside the camera frustum")
    if rng is not None:
        u = u + camera.noise_px * rng.standard_normal(u.shape)
        v = v + camera.noise_px * rng.standard_normal(v.shape)
    out = np.stack([u / camera.width, v / camera.height], axis=-2)
    return np.clip(out, 0.0, 1.0)


# -- radar observables ----------------------------------------------------------------

def derive_scatterers(joints_t: np.ndarray, joints_next: np.ndarray, sensor: rd.RadarConfig,
                      fps: float = 30.0, rng: np.random.Generator | None = None,
                      power_offset_db: float = -40.0, jitter_db: float = 2.0,
                      jitter_velocity: float = 0.02) -> np.ndarray:
    """Scatterer parameters ``(range, velocity, azimuth, power_db)`` for one frame.

    One scatterer per joint in ``SCATTER_JOINTS`` plus the torso centre.
    Velocity is the range rate (positive: receding); azimuth is the cone
    angle to the horizontal array broadside, ``arcsin(dx / range)``.
    """
    idx = list(SCATTER_JOINTS)
    torso = lambda j: j[[5, 6, 11, 12]].mean(axis=0)
    pts = np.vstack([joints_t[idx], torso(joints_t)])
    nxt = np.vstack([joints_next[idx], torso(joints_next)])
    rcs = np.array(list(SCATTER_JOINTS.values()) + [TORSO_RCS])
    rel = pts - np.asarray(sensor.position)
    rng_m = np.linalg.norm(rel, axis=1)
    los = rel / rng_m[:, None]
    vel = np.sum((nxt - pts) * fps * los, axis=1)
    az = np.arcsin(np.clip(rel[:, 0] / rng_m, -1, 1))
    power = rcs + power_offset_db - 40 * np.log10(rng_m)
    if rng is not None:
        power = power + jitter_db * rng.standard_normal(len(power))
        vel = vel + jitter_velocity * rng.standard_normal(len(vel))
    return np.column_stack([rng_m, vel, az, power])


def full_noise_db(cfg: rd.RadarConfig, floor_db: float) -> float:
    """Per-sample noise power giving ``floor_db`` per range-Doppler cell."""
    gain = 1.0
    for n in (cfg.n_samples, cfg.n_chirps):
        w = np.hanning(n)
        gain *= np.sum(w ** 2) / np.sum(w) ** 2
    return floor_db - 10 * np.log10(gain)


class FullChain:
    """Signal-level target extraction with alpha calibrated on processed noise."""

    def __init__(self, cfg: rd.RadarConfig, floor_db: float, pfa: float = 1e-5, seed: int = 0,
                 n_cells: int = 2_000_000):
        self.cfg = cfg
        self.noise_db = full_noise_db(cfg, floor_db)
        alpha = rd.calibrate_alpha(pfa, rd.CfarConfig(), np.random.default_rng([seed, 7]),
                                   noise=rd.processed_noise_map(cfg, self.noise_db), n_cells=n_cells)
        self.cfar = rd.CfarConfig(alpha=alpha)

    def detect(self, params: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        p = params[(params[:, 0] > 0) & (params[:, 0] < self.cfg.max_range)
                   & (np.abs(params[:, 1]) < self.cfg.max_velocity)]
        raw = rd.simulate_beat_signal(p, self.cfg, rng, self.noise_db)
        return rd.extract_targets(rd.range_doppler_map(raw), self.cfg, self.cfar)


# -- measurements and windows ---------------------------------------------------------------

@dataclass
class Measurement:
    label: int
    subject: int
    joints: np.ndarray  # [T_M, 17, 3]
    keypoints: np.ndarray  # [T_M, 2, 17]
    radar: np.ndarray  # [T_M, 5, 300]
    scatterers: list | None = None  # per frame, per sensor ground truth (kept on request)


@dataclass(frozen=True)
class GeneratorConfig:
    n_subjects: int = 35
    measurements_per_class: int = 4
    n_frames: int = 120
    fps: float = 30.0
    n_steps: int = 30
    stride: int = 15
    n_per_sensor: int = 100
    seed: int = 0
    distance: tuple = (3.0, 5.0)
    lateral: tuple = (-0.5, 0.5)
    orientations_deg: tuple = (0.0, 45.0, -45.0, 90.0, -90.0)
    onset: tuple = (-0.5, 1.5)  # gesture start (s); negative = already running
    early_stop: float = 1.5  # gesture may end up to this long before the recording
    rail_offsets: tuple = (-0.6, 0.0, 0.6)
    radar_height: float = 1.0
    noise_floor_db: float = -95.0
    camera: Camera = field(default_factory=Camera)

    def __post_init__(self):
        if self.n_subjects < 1 or self.measurements_per_class < 1:
            raise ValueError("need at least one subject and one measurement per class")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["n_points"] = 3 * self.n_per_sensor
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        d.pop("n_points", None)
        if isinstance(d.get("camera"), dict):
            d["camera"] = Camera(**d["camera"])
        for k in ("distance", "lateral", "orientations_deg", "rail_offsets", "onset"):
            if k in d:
                d[k] = tuple(d[k])
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def sensors(self) -> list[rd.RadarConfig]:
        return rd.default_sensors(self.rail_offsets, self.radar_height)


def measurement_rng(seed: int, subject: int, label: int, rep: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1, subject, label, rep])


def generate_measurement(cfg: GeneratorConfig, subject: SubjectParams, label: int, rep: int,
                         path: str = "fast", keep_scatterers: bool = False,
                         full_chains: list[FullChain] | None = None) -> Measurement:
    """One recording of ``label`` by ``subject`` (placement drawn per measurement)."""
    rng = measurement_rng(cfg.seed, subject.subject_id, label, rep)
    sp = dataclasses.replace(
        subject,
        position=(rng.uniform(*cfg.lateral), rng.uniform(*cfg.distance)),
        orientation=float(np.deg2rad(rng.choice(cfg.orientations_deg))),
    )
    dur = cfg.n_frames / cfg.fps
    onset = rng.uniform(*cfg.onset)
    offset = dur + rng.uniform(-cfg.early_stop, 1.0)
    joints = synth_skeleton(label, sp, cfg.n_frames + 1, cfg.fps, sp.phase + rng.uniform(0, 2 * np.pi), onset, offset)
    kp = project_keypoints(joints[:-1], cfg.camera, rng)
    sensors = cfg.sensors()
    fast = rd.FastDetectionModel(noise_db=cfg.noise_floor_db)
    if path == "full" and full_chains is None:
        full_chains = [FullChain(s, cfg.noise_floor_db, seed=cfg.seed) for s in sensors]
    frames = np.zeros((cfg.n_frames, 5, 3 * cfg.n_per_sensor), np.float32)
    kept = [] if keep_scatterers else None
    for t in range(cfg.n_frames):
        scat = [derive_scatterers(joints[t], joints[t + 1], s, cfg.fps, rng) for s in sensors]
        if path == "fast":
            dets = [fast.detect(p, s, rng) for p, s in zip(scat, sensors)]
        elif path == "full":
            dets = [fc.detect(p, rng) for p, fc in zip(scat, full_chains)]
        else:
            raise ValueError(f"unknown radar path {path!r}")
        frames[t] = rd.assemble_target_list(dets, sensors, rng, cfg.n_per_sensor)
        if kept is not None:
            kept.append((scat, dets))
    return Measurement(label, subject.subject_id, joints[:-1], kp, frames, kept)


@dataclass
class AuditResult:
    n_reference: int
    n_matched: int
    max_error: tuple  # (range m, velocity m/s, azimuth rad) over matched reference targets
    records: np.ndarray  # [n, 7]: frame key, sensor, matched, |d range|, |d velocity|, |d azimuth|, snr_db
    joint_fraction: float  # matched fraction of the raw injected scatterers

    @property
    def matched_fraction(self) -> float:
        return self.n_matched / self.n_reference if self.n_reference else 0.0


def match_scatterers(truth: np.ndarray, detections: np.ndarray, cfg: rd.RadarConfig,
                     range_tol: float = 2.0, velocity_tol: float = 2.0, azimuth_tol_deg: float = 3.0):
    """Per reference target: matched flag and errors to the closest admissible detection.

    A target is matched when one detection lies within all three
    tolerances (range and velocity in resolution cells) at once; among
    those the one closest in range-Doppler cells is reported.
    """
    out = np.full((len(truth), 4), np.nan)
    out[:, 0] = 0
    if len(detections) == 0 or len(truth) == 0:
        return out
    d_r = np.abs(truth[:, None, 0] - detections[None, :, 0])
    d_v = np.abs(truth[:, None, 1] - detections[None, :, 1])
    d_a = np.abs(truth[:, None, 2] - detections[None, :, 2])
    ok = (d_r <= range_tol * cfg.range_res + 1e-9) & (d_v <= velocity_tol * cfg.velocity_res + 1e-9) \
        & (d_a <= np.deg2rad(azimuth_tol_deg))
    cells = np.where(ok, d_r / cfg.range_res + d_v / cfg.velocity_res, np.inf)
    best = np.argmin(cells, axis=1)
    rows = np.arange(len(truth))
    hit = ok[rows, best]
    out[hit, 0] = 1
    out[:, 1] = np.where(hit, d_r[rows, best], np.nan)
    out[:, 2] = np.where(hit, d_v[rows, best], np.nan)
    out[:, 3] = np.where(hit, d_a[rows, best], np.nan)
    return out


def audit_frontend(cfg: GeneratorConfig | None = None, n_subjects: int = 2, classes=(0, 3, 6),
                   n_frames: int = 3, pfa: float = 1e-5, n_cells: int = 500_000) -> AuditResult:
    """Compare the signal-level chain with the fast path on an audit subset.

    Every frame of every sensor is simulated as a raw beat signal and run
    through range-Doppler FFTs, OS-CFAR and beamforming.  The reference is
    the fast path without its random misses and azimuth noise: the injected
    joint scatterers quantized to cells, one target per occupied cell.
    """
    cfg = dataclasses.replace(cfg or GeneratorConfig(), n_frames=n_frames)
    sensors = cfg.sensors()
    chains = [FullChain(s, cfg.noise_floor_db, pfa=pfa, seed=cfg.seed, n_cells=n_cells) for s in sensors]
    reference = rd.FastDetectionModel(noise_db=cfg.noise_floor_db, azimuth_noise_deg=0.0, miss_prob=0.0)
    ref_rng = np.random.default_rng(0)  # unused by the noise-free reference
    recs = []
    n_joints = n_joint_hits = 0
    key = 0
    for sid in range(n_subjects):
        subject = SubjectParams.draw(sid, cfg.seed)
        for label in classes:
            m = generate_measurement(cfg, subject, int(label), 0, path="full", keep_scatterers=True,
                                     full_chains=chains)
            for scat, dets in m.scatterers:
                for k, (truth, det, s) in enumerate(zip(scat, dets, sensors)):
                    ref = reference.detect(truth, s, ref_rng)
                    mt = match_scatterers(ref, det, s)
                    snr = ref[:, 3] - cfg.noise_floor_db
                    recs.append(np.column_stack([np.full(len(ref), key), np.full(len(ref), k), mt, snr]))
                    n_joints += len(truth)
                    n_joint_hits += int(np.nansum(match_scatterers(truth, det, s)[:, 0]))
                key += 1
    records = np.concatenate(recs)
    hit = records[:, 2] == 1
    max_err = tuple(float(np.max(records[hit, c])) if hit.any() else float("nan") for c in (3, 4, 5))
    return AuditResult(len(records), int(hit.sum()), max_err, records, n_joint_hits / max(n_joints, 1))


def window_samples(m: Measurement, stride: int = 15, n_steps: int = 30, step: int = 2):
    """Downsample by ``step`` and cut windows of ``n_steps``; returns ``(x_R, x_K)`` arrays.

    Measurements shorter than ``n_steps * step`` frames are skipped with a warning.
    """
    n = len(m.radar)
    if n < n_steps * step:
        warnings.warn(f"measurement of {n} frames is too short for a {n_steps}-step window; skipped")
        return np.zeros((0, n_steps, 5, m.radar.shape[-1]), np.float32), np.zeros((0, n_steps, 34), np.float32)
    r = m.radar[::step]
    k = m.keypoints[::step].reshape(len(r), -1).astype(np.float32)
    starts = range(0, len(r) - n_steps + 1, stride)
    return np.stack([r[s:s + n_steps] for s in starts]), np.stack([k[s:s + n_steps] for s in starts])


def cross_subject_split(n_subjects: int = 35, fold: int = 0, n_folds: int = 5, val_fraction: float = 0.15,
                        seed: int = 0) -> tuple[list[int], list[int], list[int]]:
    """Subject-level (train, val, test) ids; test subjects of the folds partition all subjects."""
    folds = subject_folds(n_subjects, n_folds, seed)
    if not 0 <= fold < n_folds:
        raise ValueError(f"fold {fold} outside 0..{n_folds - 1}")
    test = folds[fold]
    rest = [s for s in range(n_subjects) if s not in set(test)]
    n_val = max(1, int(round(val_fraction * len(rest)))) if len(rest) > 1 else 0
    rng = np.random.default_rng([seed, 2, fold])
    val = sorted(int(s) for s in rng.choice(rest, n_val, replace=False)) if n_val else []
    train = [s for s in rest if s not in set(val)]
    return train, val, test


def subject_folds(n_subjects: int = 35, n_folds: int = 5, seed: int = 0) -> list[list[int]]:
    if n_subjects < n_folds:
        raise ValueError("fewer subjects than folds")
    perm = np.random.default_rng([seed, 3]).permutation(n_subjects)
    return [sorted(int(s) for s in chunk) for chunk in np.array_split(perm, n_folds)]


def generate_dataset(cfg: GeneratorConfig = GeneratorConfig(), progress=None) -> GestureDataset:
    """All subjects x classes x repetitions, windowed; sample ids in generation order."""
    xs_r, xs_k, ys, subs = [], [], [], []
    for s in range(cfg.n_subjects):
        sp = SubjectParams.draw(s, cfg.seed)
        for label in GestureClass:
            for rep in range(cfg.measurements_per_class):
                m = generate_measurement(cfg, sp, int(label), rep)
                r, k = window_samples(m, cfg.stride, cfg.n_steps)
                xs_r.append(r)
                xs_k.append(k)
                ys += [int(label)] * len(r)
                subs += [s] * len(r)
        if progress is not None:
            progress(s)
    y = np.asarray(ys, np.int64)
    return GestureDataset(np.concatenate(xs_r), np.concatenate(xs_k), y, np.asarray(subs, np.int64))

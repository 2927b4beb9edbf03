"""Chirp-sequence radar simulation and target extraction.

Chain per sensor: beat-signal cube -> range-Doppler maps (Hann windows,
amplitude-calibrated FFTs) -> OS-CFAR on the channel-averaged power map ->
local-peak selection -> azimuth by digital beamforming.  Target lists from
three sensors are sampled/zero-padded and normalized into the ``[5, 300]``
network input.

Conventions
-----------
* Radial velocity is the range rate: positive means receding.
* Azimuth is the angle to the array broadside measured by a horizontal
  uniform linear array, i.e. ``arcsin(dx / range)``; positive towards +x.
* Target amplitude is ``10 ** (power_db / 20)``; after processing, an
  on-grid target of amplitude ``A`` has map magnitude ``A`` in every channel.
* Target parameter arrays have columns ``(range, velocity, azimuth, power_db)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class RadarConfig:
    carrier_hz: float = 77e9
    range_res: float = 0.045
    velocity_res: float = 0.107
    n_rx: int = 8
    sensor_index: int = 0
    position: tuple = (0.0, 0.0, 1.0)
    n_samples: int = 256
    n_chirps: int = 128
    element_spacing: float = 0.5  # wavelengths
    frame_rate: float = 30.0

    def __post_init__(self):
        if min(self.range_res, self.velocity_res, self.n_rx, self.n_samples, self.n_chirps) <= 0:
            raise ValueError("radar parameters must be positive")
        if self.sensor_index not in (0, 1, 2):
            raise ValueError("sensor_index must be 0, 1 or 2")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def n_range_bins(self) -> int:
        return self.n_samples // 2

    @property
    def max_range(self) -> float:
        return self.n_range_bins * self.range_res

    @property
    def velocity_span(self) -> float:
        return self.n_chirps * self.velocity_res

    @property
    def max_velocity(self) -> float:
        return self.velocity_span / 2

    @property
    def zero_doppler_bin(self) -> int:
        return self.n_chirps // 2


def default_sensors(rail_offsets=(-0.6, 0.0, 0.6), height: float = 1.0) -> list[RadarConfig]:
    """Three sensors on a rail along x, all looking along +y."""
    return [RadarConfig(sensor_index=i, position=(x, 0.0, height)) for i, x in enumerate(rail_offsets)]


class Scatterer(NamedTuple):
    range: float
    velocity: float
    azimuth: float
    power_db: float


def as_param_array(scatterers) -> np.ndarray:
    arr = np.asarray([tuple(s) for s in scatterers] if isinstance(scatterers, list) else scatterers, float)
    return arr.reshape(-1, 4)


# -- signal model -----------------------------------------------------------

def simulate_beat_signal(scatterers, cfg: RadarConfig, rng: np.random.Generator | None = None,
                         noise_db: float | None = None) -> np.ndarray:
    """Complex baseband cube ``[n_samples, n_chirps, n_rx]``.

    Each scatterer contributes a complex exponential whose fast-time
    frequency encodes range, whose chirp-to-chirp phase step encodes radial
    velocity and whose channel-to-channel phase step encodes azimuth.
    ``noise_db`` is the per-sample complex noise power (None: no noise).
    """
    params = as_param_array(scatterers)
    r, v, az, p = params.T if len(params) else (np.zeros(0),) * 4
    bad = (r <= 0) | (r >= cfg.max_range) | (np.abs(v) >= cfg.max_velocity) | (np.abs(az) >= np.pi / 2)
    if np.any(bad):
        raise ValueError(f"scatterer outside the unambiguous region: {params[bad][0].tolist()}")
    n = np.arange(cfg.n_samples)[:, None]
    m = np.arange(cfg.n_chirps)[:, None]
    ch = np.arange(cfg.n_rx)[:, None]
    amp = 10.0 ** (p / 20.0) * np.exp(1j * 4 * np.pi * r / cfg.wavelength)
    fast = np.exp(2j * np.pi * n * (r / cfg.range_res) / cfg.n_samples)  # [N_s, K]
    slow = np.exp(2j * np.pi * m * (v / cfg.velocity_res) / cfg.n_chirps)  # [N_c, K]
    chan = np.exp(2j * np.pi * cfg.element_spacing * ch * np.sin(az))  # [n_rx, K]
    cube = np.einsum("nk,mk,ck,k->nmc", fast, slow, chan, amp, optimize=True)
    if noise_db is not None:
        if rng is None:
            raise ValueError("noise requires an rng")
        sigma = np.sqrt(10.0 ** (noise_db / 10.0) / 2.0)
        cube = cube + sigma * (rng.standard_normal(cube.shape) + 1j * rng.standard_normal(cube.shape))
    return cube


def range_fft(raw: np.ndarray, keep_half: bool = True) -> np.ndarray:
    """Hann-windowed fast-time FFT scaled by the window sum."""
    w = np.hanning(raw.shape[0])
    spec = np.fft.fft(raw * w[:, None, None], axis=0) / w.sum()
    return spec[: raw.shape[0] // 2] if keep_half else spec


def range_doppler_map(raw: np.ndarray) -> np.ndarray:
    """Range-Doppler cube ``[n_samples/2, n_chirps, n_rx]``, zero Doppler at the centre bin."""
    rng_spec = range_fft(raw)
    w = np.hanning(raw.shape[1])
    dop = np.fft.fft(rng_spec * w[None, :, None], axis=1) / w.sum()
    return np.fft.fftshift(dop, axes=1)


def power_map(rd: np.ndarray) -> np.ndarray:
    """Channel-averaged power |X|^2 (non-coherent integration)."""
    return np.mean(np.abs(rd) ** 2, axis=-1)


# -- OS-CFAR ----------------------------------------------------------------

@dataclass(frozen=True)
class CfarConfig:
    window: tuple = (8, 4)  # half-sizes (range, Doppler), guard included
    guard: tuple = (2, 1)
    rank: int | None = None  # default ceil(3/4 * n_ref)
    alpha: float = 1.0

    def ring(self) -> np.ndarray:
        wr, wd = self.window
        gr, gd = self.guard
        if gr >= wr or gd >= wd or min(gr, gd) < 0:
            raise ValueError("window must be larger than guard")
        mask = np.ones((2 * wr + 1, 2 * wd + 1), bool)
        mask[wr - gr: wr + gr + 1, wd - gd: wd + gd + 1] = False
        return mask

    @property
    def n_ref(self) -> int:
        return int(self.ring().sum())

    @property
    def k(self) -> int:
        k = self.rank if self.rank is not None else int(np.ceil(0.75 * self.n_ref))
        if not 1 <= k <= self.n_ref:
            raise ValueError(f"rank {k} outside [1, {self.n_ref}]")
        return k


def os_cfar_statistic(power: np.ndarray, cfar: CfarConfig) -> np.ndarray:
    """Per-cell k-th smallest reference value (truncated windows at borders).

    At the map border the ring is cut off; the rank is scaled by the share of
    surviving reference cells, rounded down, at least 1.
    """
    ring = cfar.ring()
    k = cfar.k
    wr, wd = cfar.window
    padded = np.pad(power.astype(float), ((wr, wr), (wd, wd)), constant_values=np.nan)
    windows = sliding_window_view(padded, ring.shape)  # [R, D, h, w]
    refs = windows[..., ring]  # [R, D, n_ref]
    n_valid = np.sum(~np.isnan(refs), axis=-1)
    k_eff = np.maximum(1, (k * n_valid) // cfar.n_ref)
    refs = np.sort(refs, axis=-1)  # NaNs sort last
    return np.take_along_axis(refs, (k_eff - 1)[..., None], axis=-1)[..., 0]


def os_cfar_detect(power: np.ndarray, cfar: CfarConfig) -> np.ndarray:
    """Detections as rows ``(range_bin, doppler_bin, power)``.

    A cell is detected when its value exceeds ``alpha`` times the k-th
    order statistic of its reference ring.
    """
    stat = os_cfar_statistic(power, cfar)
    hits = np.argwhere(power > cfar.alpha * stat)
    return np.column_stack([hits, power[hits[:, 0], hits[:, 1]]]) if len(hits) else np.zeros((0, 3))


def exponential_noise(rng: np.random.Generator, shape, n_looks: int = 1) -> np.ndarray:
    """Noise-only power map: mean of ``n_looks`` unit exponentials per cell."""
    if n_looks == 1:
        return rng.exponential(1.0, size=shape)
    return rng.gamma(n_looks, 1.0 / n_looks, size=shape)


def calibrate_alpha(pfa: float, cfar: CfarConfig, rng: np.random.Generator, shape=(128, 128),
                    n_cells: int = 1_000_000, noise=None, tol: float = 1e-4) -> float:
    """Scale factor giving false-alarm rate ``pfa`` on Monte-Carlo noise maps.

    Bisection on alpha against the empirical false-alarm rate of the
    CUT-to-order-statistic ratios of at least ``n_cells`` noise cells.
    ``noise(rng, shape)`` draws one map (default: unit exponential power).
    """
    noise = noise or (lambda r, s: exponential_noise(r, s))
    ratios = []
    total = 0
    while total < n_cells:
        m = noise(rng, shape)
        ratios.append((m / os_cfar_statistic(m, cfar)).ravel())
        total += m.size
    ratios = np.concatenate(ratios)
    lo, hi = 0.0, float(ratios.max())
    while hi - lo > tol * max(hi, 1.0):
        mid = 0.5 * (lo + hi)
        if np.mean(ratios > mid) > pfa:
            lo = mid
        else:
            hi = mid
    return hi


def os_cfar_pfa_exponential(alpha: float, n_ref: int, k: int) -> float:
    """Closed-form interior false-alarm rate for exponential noise."""
    i = np.arange(k)
    return float(np.prod((n_ref - i) / (n_ref - i + alpha)))


# -- beamforming ------------------------------------------------------------

DEFAULT_GRID = np.deg2rad(np.arange(-89.0, 89.0 + 1e-9, 0.5))


def steering_vector(theta, n_rx: int = 8, spacing: float = 0.5) -> np.ndarray:
    ch = np.arange(n_rx)
    return np.exp(2j * np.pi * spacing * np.multiply.outer(np.sin(theta), ch))


def beamform_azimuth(snapshot: np.ndarray, grid: np.ndarray = DEFAULT_GRID, spacing: float = 0.5) -> float:
    """Grid angle maximizing ``|a(theta)^H x|`` for a uniform linear array."""
    snapshot = np.asarray(snapshot)
    if not np.any(snapshot):
        raise ValueError("azimuth undefined for an all-zero snapshot")
    a = steering_vector(grid, snapshot.shape[-1], spacing)
    return float(grid[np.argmax(np.abs(a.conj() @ snapshot))])


# -- full extraction chain ----------------------------------------------------

def local_peaks(power: np.ndarray, detections: np.ndarray) -> np.ndarray:
    """Keep detections that are maxima of their 3x3 neighbourhood."""
    if len(detections) == 0:
        return detections
    padded = np.pad(power, 1, constant_values=-np.inf)
    r = detections[:, 0].astype(int) + 1
    d = detections[:, 1].astype(int) + 1
    neigh = np.stack([padded[r + i, d + j] for i in (-1, 0, 1) for j in (-1, 0, 1) if i or j])
    return detections[np.all(power[r - 1, d - 1] >= neigh, axis=0)]


def extract_targets(rd: np.ndarray, cfg: RadarConfig, cfar: CfarConfig) -> np.ndarray:
    """Target parameters ``(range, velocity, azimuth, power_db)`` from one range-Doppler cube."""
    pw = power_map(rd)
    det = local_peaks(pw, os_cfar_detect(pw, cfar))
    if len(det) == 0:
        return np.zeros((0, 4))
    rb, db = det[:, 0].astype(int), det[:, 1].astype(int)
    out = np.empty((len(det), 4))
    out[:, 0] = rb * cfg.range_res
    out[:, 1] = (db - cfg.zero_doppler_bin) * cfg.velocity_res
    out[:, 2] = [beamform_azimuth(rd[i, j], spacing=cfg.element_spacing) for i, j in zip(rb, db)]
    out[:, 3] = 10 * np.log10(det[:, 2])
    keep = out[:, 0] > 0
    return out[keep]


def processed_noise_map(cfg: RadarConfig, noise_db: float):
    """Noise generator for alpha calibration that runs the real processing chain."""
    def draw(rng, shape=None):
        raw = simulate_beat_signal(np.zeros((0, 4)), cfg, rng, noise_db)
        return power_map(range_doppler_map(raw))
    return draw


# -- target-list assembly -----------------------------------------------------

@dataclass(frozen=True)
class Normalizer:
    """Affine maps of target parameters to [0, 1]."""

    max_range: float
    max_velocity: float
    power_floor_db: float = -40.0

    def normalize(self, params: np.ndarray, ref_power_db: float, sensor_index: int) -> np.ndarray:
        p = np.asarray(params, float).reshape(-1, 4)
        out = np.empty((len(p), 5))
        out[:, 0] = p[:, 0] / self.max_range
        out[:, 1] = (p[:, 1] + self.max_velocity) / (2 * self.max_velocity)
        out[:, 2] = (p[:, 2] + np.pi / 2) / np.pi
        out[:, 3] = (p[:, 3] - ref_power_db - self.power_floor_db) / -self.power_floor_db
        out[:, 4] = sensor_index / 2.0
        return np.clip(out, 0.0, 1.0)

    def denormalize(self, rows: np.ndarray, ref_power_db: float) -> np.ndarray:
        q = np.asarray(rows, float).reshape(-1, 5)
        out = np.empty((len(q), 4))
        out[:, 0] = q[:, 0] * self.max_range
        out[:, 1] = q[:, 1] * 2 * self.max_velocity - self.max_velocity
        out[:, 2] = q[:, 2] * np.pi - np.pi / 2
        out[:, 3] = q[:, 3] * -self.power_floor_db + self.power_floor_db + ref_power_db
        return out


def assemble_target_list(detections: Sequence[np.ndarray], cfgs: Sequence[RadarConfig],
                         rng: np.random.Generator, n_per_sensor: int = 100,
                         power_floor_db: float = -40.0) -> np.ndarray:
    """Fixed-size normalized target list ``[5, n_sensors * n_per_sensor]``.

    Per sensor, lists longer than ``n_per_sensor`` are subsampled without
    replacement and shorter ones are zero-padded.  Power is expressed
    relative to the strongest detection of the frame (all sensors) and
    mapped from ``[power_floor_db, 0]`` dB to [0, 1].
    """
    dets = [np.asarray(d, float).reshape(-1, 4) for d in detections]
    out = np.zeros((len(cfgs) * n_per_sensor, 5))
    nonempty = [d for d in dets if len(d)]
    if not nonempty:
        return out.T.copy()
    ref = max(d[:, 3].max() for d in nonempty)
    for i, (d, cfg) in enumerate(zip(dets, cfgs)):
        if len(d) > n_per_sensor:
            d = d[np.sort(rng.choice(len(d), n_per_sensor, replace=False))]
        norm = Normalizer(cfg.max_range, cfg.max_velocity, power_floor_db)
        out[i * n_per_sensor: i * n_per_sensor + len(d)] = norm.normalize(d, ref, cfg.sensor_index)
    return out.T.copy()


# -- fast path ----------------------------------------------------------------

@dataclass(frozen=True)
class FastDetectionModel:
    """Resolution-limited stand-in for the full chain, used for bulk data.

    Scatterers are quantized to range/Doppler bins, scatterers sharing a
    cell are merged (strongest wins), azimuth gets SNR-dependent noise,
    weak scatterers are missed and a few false alarms are added.
    """

    noise_db: float = -95.0  # post-processing noise floor per cell
    min_snr_db: float = 12.0
    azimuth_noise_deg: float = 1.5  # at 20 dB SNR; scales with 1/sqrt(SNR)
    false_alarm_rate: float = 0.0  # mean false detections per frame and sensor
    miss_prob: float = 0.05
    extra_scatter: float = 0.0
    clutter: tuple = field(default_factory=tuple)

    def detect(self, params: np.ndarray, cfg: RadarConfig, rng: np.random.Generator) -> np.ndarray:
        p = np.asarray(params, float).reshape(-1, 4)
        ok = (p[:, 0] > 0) & (p[:, 0] < cfg.max_range) & (np.abs(p[:, 1]) < cfg.max_velocity)
        p = p[ok]
        snr = p[:, 3] - self.noise_db
        keep = (snr >= self.min_snr_db) & (rng.random(len(p)) >= self.miss_prob)
        p, snr = p[keep], snr[keep]
        if len(p):
            rb = np.rint(p[:, 0] / cfg.range_res)
            db = np.rint(p[:, 1] / cfg.velocity_res)
            # merge scatterers sharing a cell: strongest survives
            order = np.lexsort((-p[:, 3], db, rb))
            p, snr, rb, db = p[order], snr[order], rb[order], db[order]
            first = np.ones(len(p), bool)
            first[1:] = (rb[1:] != rb[:-1]) | (db[1:] != db[:-1])
            p, snr, rb, db = p[first], snr[first], rb[first], db[first]
            sigma = np.deg2rad(self.azimuth_noise_deg) * 10 ** (-(snr - 20.0) / 20.0)
            out = np.column_stack([
                rb * cfg.range_res,
                db * cfg.velocity_res,
                np.clip(p[:, 2] + sigma * rng.standard_normal(len(p)), -np.pi / 2 + 1e-3, np.pi / 2 - 1e-3),
                p[:, 3],
            ])
        else:
            out = np.zeros((0, 4))
        n_fa = rng.poisson(self.false_alarm_rate)
        if n_fa:
            fa = np.column_stack([
                rng.integers(1, cfg.n_range_bins, n_fa) * cfg.range_res,
                rng.integers(-cfg.n_chirps // 2 + 1, cfg.n_chirps // 2, n_fa) * cfg.velocity_res,
                rng.uniform(-np.pi / 3, np.pi / 3, n_fa),
                self.noise_db + self.min_snr_db + rng.exponential(2.0, n_fa),
            ])
            out = np.vstack([out, fa])
        return out

"""Synthetic multipath OFDM CSI.

Each AP sees a sum of multipath components (MPCs)

    h(f) = sum_l alpha_l * a(azimuth_l, elevation_l, f) * exp(-j 2 pi f tau_l)

observed with a unit pilot plus circular complex Gaussian noise. Per UE and AP
there is one geometric direct path whose delay and amplitude follow the
UE-AP distance, and ``L - 1`` diffuse paths with uniform phase, uniform
excess delay and exponentially decaying power. In non-LOS scenarios the
direct path is attenuated by ``obstruction_loss_db``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import rng as rngmod
from .core import Dataset, TensorDims
from .errors import ConfigError, DimensionError, PreconditionError

C = 299_792_458.0


@dataclass(frozen=True)
class Mpc:
    alpha: complex
    tau: float
    azimuth: float = 0.0
    elevation: float = 0.0

    def __post_init__(self):
        if not self.tau >= 0:
            raise PreconditionError(f"tau must be >= 0, got {self.tau}")
        if not np.isfinite(complex(self.alpha)):
            raise PreconditionError("alpha must be finite")


@dataclass(frozen=True, eq=False)
class AntennaPattern:
    """Per-element complex gain.

    ``kind="isotropic"`` returns 1 everywhere. ``kind="tabulated"`` linearly
    interpolates ``gains[element, az, el, f]`` on the grid given by
    ``azimuths``, ``elevations`` and ``freqs`` (extrapolating at the edges).
    """

    kind: str = "isotropic"
    azimuths: np.ndarray | None = None
    elevations: np.ndarray | None = None
    freqs: np.ndarray | None = None
    gains: np.ndarray | None = None
    _interp: list = field(default_factory=list, init=False, repr=False)

    def __post_init__(self):
        if self.kind == "isotropic":
            return
        if self.kind != "tabulated":
            raise ConfigError(f"unknown antenna pattern kind {self.kind!r}")
        grid = tuple(np.asarray(g, dtype=np.float64) for g in (self.azimuths, self.elevations, self.freqs))
        gains = np.asarray(self.gains, dtype=np.complex128)
        if gains.ndim != 4 or gains.shape[1:] != tuple(len(g) for g in grid):
            raise DimensionError(f"gains shape {gains.shape} does not match grid")
        for g in gains:
            self._interp.append((
                RegularGridInterpolator(grid, g.real, bounds_error=False, fill_value=None),
                RegularGridInterpolator(grid, g.imag, bounds_error=False, fill_value=None),
            ))

    @property
    def n_elements(self) -> int | None:
        return None if self.kind == "isotropic" else len(self._interp)

    def gain(self, azimuth, elevation, freq, element: int = 0):
        """Gain for broadcastable argument arrays."""
        az, el, f = np.broadcast_arrays(
            np.asarray(azimuth, float), np.asarray(elevation, float), np.asarray(freq, float)
        )
        if self.kind == "isotropic":
            return np.ones(az.shape, dtype=np.complex128)
        re, im = self._interp[element]
        pts = np.stack([az.ravel(), el.ravel(), f.ravel()], axis=-1)
        return (re(pts) + 1j * im(pts)).reshape(az.shape)


ISOTROPIC = AntennaPattern()


def channel_response(mpcs: Sequence[Mpc], pattern: AntennaPattern, freq: float, element: int = 0) -> complex:
    """Frequency response of a list of MPCs at one frequency."""
    if not mpcs:
        raise PreconditionError("need at least one MPC")
    total = 0j
    for p in mpcs:
        g = complex(pattern.gain(p.azimuth, p.elevation, freq, element))
        total += complex(p.alpha) * g * np.exp(-2j * np.pi * freq * p.tau)
    return total


def response_matrix(mpcs: Sequence[Mpc], pattern: AntennaPattern, freqs, n_rx: int) -> np.ndarray:
    """Vectorized responses of one AP, shape ``(n_rx, len(freqs))``."""
    freqs = np.asarray(freqs, dtype=np.float64)
    alpha = np.array([complex(p.alpha) for p in mpcs])
    tau = np.array([p.tau for p in mpcs])
    # same operation order as channel_response so both agree bitwise
    steer = alpha[:, None] * np.exp(-2j * np.pi * freqs[None, :] * tau[:, None])
    if pattern.kind == "isotropic":
        row = steer.sum(axis=0)
        return np.repeat(row[None, :], n_rx, axis=0)
    az = np.array([p.azimuth for p in mpcs])[:, None]
    el = np.array([p.elevation for p in mpcs])[:, None]
    out = np.empty((n_rx, freqs.size), dtype=np.complex128)
    for j in range(n_rx):
        out[j] = (pattern.gain(az, el, freqs[None, :], j) * steer).sum(axis=0)
    return out


@dataclass(frozen=True, eq=False)
class Scenario:
    """Geometry, band and propagation priors for synthetic data.

    Args:
        dims: tensor dims.
        ap_positions: ``(n_ap, 2)`` meters.
        area: ``(x_min, y_min, x_max, y_max)`` meters; UEs are drawn uniformly in it.
        subcarrier_freqs: ``M`` strictly increasing frequencies, Hz.
        mpc_count_range: inclusive ``(L_min, L_max)``; ``L`` counts the direct path.
        noise_variance: complex noise variance per entry (linear).
        pattern: antenna pattern shared by all APs.
        seed: master seed.
        env_tag: ``"LOS"`` keeps the direct path unobstructed.
        tau_max: maximum excess delay of diffuse paths, seconds.
        decay: power-delay-profile decay constant, seconds.
        diffuse_power_db: total diffuse power relative to an unobstructed direct path.
        obstruction_loss_db: direct-path attenuation outside LOS scenarios.
        path_loss_exponent: direct-path amplitude falls as ``d ** (-ple / 2)``.
    """

    dims: TensorDims
    ap_positions: np.ndarray
    area: tuple[float, float, float, float]
    subcarrier_freqs: np.ndarray
    mpc_count_range: tuple[int, int] = (4, 12)
    noise_variance: float = 0.0
    pattern: AntennaPattern = ISOTROPIC
    seed: int = 0
    env_tag: str = "LOS"
    tau_max: float = 150e-9
    decay: float = 40e-9
    diffuse_power_db: float = -6.0
    obstruction_loss_db: float = 10.0
    path_loss_exponent: float = 2.0

    def __post_init__(self):
        ap = np.asarray(self.ap_positions, dtype=np.float64).reshape(-1, 2)
        f = np.asarray(self.subcarrier_freqs, dtype=np.float64)
        object.__setattr__(self, "ap_positions", ap)
        object.__setattr__(self, "subcarrier_freqs", f)
        if not self.dims.is_positive():
            raise ConfigError(f"dims must be positive: {self.dims}")
        if len(ap) != self.dims.n_ap:
            raise ConfigError(f"{len(ap)} AP positions for n_ap={self.dims.n_ap}")
        if f.size != self.dims.n_subcarriers:
            raise ConfigError(f"{f.size} subcarrier freqs for M={self.dims.n_subcarriers}")
        if f.size > 1 and not np.all(np.diff(f) > 0):
            raise ConfigError("subcarrier frequencies must be strictly increasing")
        lo, hi = self.mpc_count_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad mpc_count_range {self.mpc_count_range}")
        x0, y0, x1, y1 = self.area
        if not (x1 > x0 and y1 > y0):
            raise ConfigError(f"degenerate area {self.area}")
        if self.noise_variance < 0:
            raise ConfigError("noise_variance must be >= 0")
        n_el = self.pattern.n_elements
        if n_el is not None and n_el < self.dims.n_rx:
            raise ConfigError(f"pattern has {n_el} elements, need {self.dims.n_rx}")


def default_scenario(
    dims: TensorDims,
    env_tag: str = "LOS",
    seed: int = 0,
    noise_variance: float = 0.0,
    width: float = 10.0,
    height: float = 8.0,
    center_freq: float = 5.21e9,
    bandwidth: float = 80e6,
    **kwargs,
) -> Scenario:
    """Rectangular room with APs spread along its walls and a WiFi-like band."""
    ap = _perimeter_points(dims.n_ap, width, height)
    m = dims.n_subcarriers
    freqs = center_freq + (np.linspace(-0.5, 0.5, m) * bandwidth if m > 1 else np.zeros(1))
    return Scenario(dims, ap, (0.0, 0.0, width, height), freqs,
                    noise_variance=noise_variance, seed=seed, env_tag=env_tag, **kwargs)


def _perimeter_points(n: int, w: float, h: float) -> np.ndarray:
    # corners first, then evenly along the perimeter
    corners = [(0.0, 0.0), (w, h), (w, 0.0), (0.0, h)]
    if n <= 4:
        return np.array(corners[:n])
    t = np.arange(n) / n * 2 * (w + h)
    pts = []
    for s in t:
        if s < w:
            pts.append((s, 0.0))
        elif s < w + h:
            pts.append((w, s - w))
        elif s < 2 * w + h:
            pts.append((2 * w + h - s, h))
        else:
            pts.append((0.0, 2 * (w + h) - s))
    return np.array(pts)


@dataclass(frozen=True)
class SampleDraw:
    """All random quantities behind one synthetic sample."""

    location: np.ndarray  # (2,)
    mpcs: list[list[Mpc]]  # per AP
    noise: np.ndarray  # (n_ap, n_rx, M) complex


def draw_sample(scenario: Scenario, index: int) -> SampleDraw:
    """Draw location, per-AP MPCs and noise for sample ``index``."""
    g = rngmod.substream(scenario.seed, rngmod.SYNTH_SAMPLE, index)
    x0, y0, x1, y1 = scenario.area
    loc = np.array([g.uniform(x0, x1), g.uniform(y0, y1)])
    lo, hi = scenario.mpc_count_range
    n_paths = int(g.integers(lo, hi + 1))

    los = scenario.env_tag.upper() == "LOS"
    direct_scale = 1.0 if los else 10 ** (-scenario.obstruction_loss_db / 20)
    mpcs = []
    for ap in scenario.ap_positions:
        diff = loc - ap
        d = max(float(np.hypot(*diff)), 0.1)
        tau0 = d / C
        amp = d ** (-scenario.path_loss_exponent / 2)
        paths = [Mpc(amp * direct_scale, tau0, math.atan2(diff[1], diff[0]), 0.0)]
        n_diff = n_paths - 1
        if n_diff:
            excess = g.uniform(0.0, scenario.tau_max, n_diff)
            phase = g.uniform(0.0, 2 * np.pi, n_diff)
            az = g.uniform(-np.pi, np.pi, n_diff)
            el = g.uniform(-np.pi / 4, np.pi / 4, n_diff)
            power = amp**2 * 10 ** (scenario.diffuse_power_db / 10) / n_diff
            mag = np.sqrt(power * np.exp(-excess / scenario.decay))
            for k in range(n_diff):
                paths.append(Mpc(complex(mag[k] * np.exp(1j * phase[k])), tau0 + excess[k], az[k], el[k]))
        mpcs.append(paths)

    shape = scenario.dims.shape
    s = math.sqrt(scenario.noise_variance / 2)
    noise = s * g.standard_normal(shape) + 1j * s * g.standard_normal(shape)
    return SampleDraw(loc, mpcs, noise)


def _synth_one(scenario: Scenario, index: int) -> tuple[np.ndarray, np.ndarray]:
    draw = draw_sample(scenario, index)
    d = scenario.dims
    h = np.stack([
        response_matrix(paths, scenario.pattern, scenario.subcarrier_freqs, d.n_rx)
        for paths in draw.mpcs
    ])
    if scenario.noise_variance > 0:
        h = h + draw.noise
    return h, draw.location


def synthesize_dataset(scenario: Scenario, n_samples: int, workers: int = 1, start: int = 0) -> Dataset:
    """Generate ``n_samples`` labeled samples; sample ``i`` depends only on ``(seed, start + i)``."""
    if n_samples < 1:
        raise PreconditionError("n_samples must be >= 1")
    d = scenario.dims
    csi = np.empty((n_samples, *d.shape), dtype=np.complex128)
    labels = np.empty((n_samples, 2))

    def fill(i):
        csi[i], labels[i] = _synth_one(scenario, start + i)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(fill, range(n_samples)))
    else:
        for i in range(n_samples):
            fill(i)
    return Dataset(d, csi, labels, scenario.env_tag)


def noise_variance_for_snr(scenario: Scenario, snr_db: float, n_probe: int = 256) -> float:
    """Noise variance giving the requested mean per-entry SNR for this scenario."""
    clean = synthesize_dataset(
        Scenario(**{**_fields(scenario), "noise_variance": 0.0}), n_probe
    )
    power = float(np.mean(np.abs(clean.csi) ** 2))
    return power / 10 ** (snr_db / 10)


def _fields(s: Scenario) -> dict:
    return {k: getattr(s, k) for k in s.__dataclass_fields__}


@dataclass(frozen=True)
class NonidealityProfile:
    """Per-AP transceiver impairments applied to a test set.

    Args:
        phase_drift: ``"none"`` or ``"uniform"`` (offset uniform on [0, 2 pi)).
        gain_drift_db: ``None`` or ``G >= 0``; gain uniform on [-G, G] dB.
    """

    phase_drift: str = "none"
    gain_drift_db: float | None = None

    def __post_init__(self):
        if self.phase_drift not in ("none", "uniform"):
            raise ConfigError(f"phase_drift must be 'none' or 'uniform', got {self.phase_drift!r}")
        if self.gain_drift_db is not None and not self.gain_drift_db >= 0:
            raise ConfigError("gain_drift_db must be >= 0")

    @property
    def is_identity(self) -> bool:
        return self.phase_drift == "none" and self.gain_drift_db is None

    def tag(self) -> str:
        parts = []
        if self.phase_drift != "none":
            parts.append(f"phase-{self.phase_drift}")
        if self.gain_drift_db is not None:
            parts.append(f"gain-{self.gain_drift_db:g}dB")
        return "+".join(parts) or "clean"


def nonideality_draws(profile: NonidealityProfile, n_ap: int, seed: int, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Phase offsets (rad) and dB gains applied to sample ``index``."""
    g = rngmod.substream(seed, rngmod.NONIDEAL, index)
    theta = g.uniform(0.0, 2 * np.pi, n_ap)
    G = profile.gain_drift_db or 0.0
    gain_db = g.uniform(-G, G, n_ap)
    if profile.phase_drift == "none":
        theta[:] = 0.0
    if profile.gain_drift_db is None:
        gain_db[:] = 0.0
    return theta, gain_db


def apply_nonideality(dataset: Dataset, profile: NonidealityProfile, seed: int) -> Dataset:
    """Multiply each AP block of each sample by its drawn phase and gain."""
    if profile.is_identity:
        return dataset.replace()
    n_ap = dataset.dims.n_ap
    csi = np.array(dataset.csi, dtype=np.complex128)
    for i in range(len(dataset)):
        theta, gain_db = nonideality_draws(profile, n_ap, seed, i)
        if profile.phase_drift != "none":
            csi[i] *= np.exp(1j * theta)[:, None, None]
        if profile.gain_drift_db is not None:
            csi[i] *= (10 ** (gain_db / 20))[:, None, None]
    return dataset.replace(csi=csi)

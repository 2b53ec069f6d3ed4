"""Geometric multipath MIMO-OFDM channels and their evolution under UE motion.

Conventions: ``H`` has shape (N_f, N_t) and row ``s`` holds h[s]^H, so the
per-subcarrier column vector is ``h[s] = H[s].conj()``. Parametric CSI is
carried as an (L, 4) array with columns (aod, delay, gain, phase).
"""

from __future__ import annotations

import dataclasses
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import kernels

SPEED_OF_LIGHT = 299_792_458.0
MAX_PATHS = 10

AOD, DELAY, GAIN, PHASE = 0, 1, 2, 3
PARAM_NAMES = ("theta", "tau", "beta", "phi")


def kmh(speed_kmh: float) -> float:
    return speed_kmh / 3.6


@dataclass(frozen=True)
class ScenarioConfig:
    """Physical constants and dimensions of one simulated link.

    ``antenna_spacing_m`` defaults to half a wavelength. Defaults are desk
    scale; the full-size system (64 antennas, 1024 subcarriers, 20 slots)
    is expressible by overriding fields.
    """

    n_tx: int = 8
    n_subcarriers: int = 32
    carrier_freq_hz: float = 28e9
    bandwidth_hz: float = 100e6
    antenna_spacing_m: float | None = None
    tau_max_s: float = 100e-9
    beta_max: float = 1.0
    n_paths: int = 3
    ue_speed_mps: float = kmh(3.0)
    slot_period_s: float = 10e-3
    window_len: int = 8
    min_distance_m: float = 10.0
    max_distance_m: float = 500.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.antenna_spacing_m is None:
            object.__setattr__(self, "antenna_spacing_m", self.wavelength_m / 2)
        checks = [
            (self.n_tx >= 1, "n_tx must be >= 1"),
            (self.n_subcarriers >= 1, "n_subcarriers must be >= 1"),
            (1 <= self.n_paths <= MAX_PATHS, f"n_paths must be in [1, {MAX_PATHS}]"),
            (0 < self.bandwidth_hz < self.carrier_freq_hz, "need 0 < bandwidth < carrier frequency"),
            (self.antenna_spacing_m > 0, "antenna spacing must be positive"),
            (self.tau_max_s > 0, "tau_max must be positive"),
            (self.beta_max > 0, "beta_max must be positive"),
            (self.ue_speed_mps >= 0, "UE speed must be non-negative"),
            (self.slot_period_s > 0, "slot period must be positive"),
            (self.window_len >= 0, "window length must be non-negative"),
            (0 < self.min_distance_m <= self.max_distance_m, "invalid UE distance range"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq_hz

    @property
    def phase_constant(self) -> float:
        """2*pi*d/lambda, the inter-element phase scale of the array."""
        return 2 * math.pi * self.antenna_spacing_m / self.wavelength_m

    @property
    def frequencies(self) -> np.ndarray:
        s = np.arange(self.n_subcarriers)
        return self.carrier_freq_hz - self.bandwidth_hz / 2 + self.bandwidth_hz / self.n_subcarriers * s

    @property
    def param_max(self) -> np.ndarray:
        """Upper end of each parameter's range, in column order."""
        return np.array([2 * math.pi, self.tau_max_s, self.beta_max, 2 * math.pi])

    def replace(self, **changes) -> ScenarioConfig:
        if "carrier_freq_hz" in changes and "antenna_spacing_m" not in changes:
            changes["antenna_spacing_m"] = None
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class ParametricCsi:
    """Per-path geometric parameters. The complex gain is beta*exp(j*phi)."""

    aod_rad: np.ndarray
    delay_s: np.ndarray
    path_loss: np.ndarray
    phase_rad: np.ndarray

    def __post_init__(self):
        arrays = [np.array(a, dtype=np.float64).reshape(-1) for a in dataclasses.astuple(self)]
        if len({a.size for a in arrays}) != 1:
            raise ValueError("all parameter vectors must have one entry per path")
        for f, a in zip(dataclasses.fields(self), arrays):
            a.setflags(write=False)
            object.__setattr__(self, f.name, a)

    @classmethod
    def from_matrix(cls, p) -> ParametricCsi:
        p = np.asarray(p, dtype=np.float64)
        return cls(p[:, AOD], p[:, DELAY], p[:, GAIN], p[:, PHASE])

    @property
    def matrix(self) -> np.ndarray:
        """The (L, 4) matrix with columns (aod, delay, gain, phase)."""
        return np.stack([self.aod_rad, self.delay_s, self.path_loss, self.phase_rad], axis=1)

    @property
    def n_paths(self) -> int:
        return self.aod_rad.size

    @property
    def complex_gain(self) -> np.ndarray:
        return self.path_loss * np.exp(1j * self.phase_rad)

    def validate(self, cfg: ScenarioConfig, atol: float = 0.0) -> None:
        if self.n_paths != cfg.n_paths:
            raise ValueError(f"expected {cfg.n_paths} paths, got {self.n_paths}")
        p = self.matrix
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite parameters")
        lo_ok = np.all(p >= -atol)
        hi = cfg.param_max
        # angles live on [0, 2pi), delay and gain on closed intervals
        hi_ok = np.all(p[:, [AOD, PHASE]] < hi[[AOD, PHASE]] + atol) and np.all(
            p[:, [DELAY, GAIN]] <= hi[[DELAY, GAIN]] + atol
        )
        if not (lo_ok and hi_ok):
            raise ValueError("parameters outside their declared ranges")

    def __eq__(self, other):
        if not isinstance(other, ParametricCsi):
            return NotImplemented
        return np.array_equal(self.matrix, other.matrix)

    __hash__ = None


@dataclass(frozen=True)
class UeState:
    x_m: float
    y_m: float
    heading_rad: float

    def __post_init__(self):
        if self.distance_m <= 0:
            raise ValueError("UE must not sit on the BS")

    @property
    def distance_m(self) -> float:
        return math.hypot(self.x_m, self.y_m)

    @property
    def bearing_rad(self) -> float:
        return math.atan2(self.y_m, self.x_m) % (2 * math.pi)


def subcarrier_frequency(cfg: ScenarioConfig, s: int) -> float:
    """Frequency of subcarrier ``s`` (1-based)."""
    if not 1 <= s <= cfg.n_subcarriers:
        raise IndexError(f"subcarrier index {s} outside 1..{cfg.n_subcarriers}")
    return cfg.carrier_freq_hz - cfg.bandwidth_hz / 2 + cfg.bandwidth_hz / cfg.n_subcarriers * (s - 1)


def steering_vector(cfg: ScenarioConfig, theta: float) -> np.ndarray:
    n = np.arange(cfg.n_tx)
    return np.exp(-1j * n * cfg.phase_constant * np.sin(theta))


def delay_phase_vector(cfg: ScenarioConfig, tau: float) -> np.ndarray:
    if tau < 0:
        raise ValueError("delay must be non-negative")
    return np.exp(2j * np.pi * tau * cfg.frequencies)


def assemble_channel(cfg: ScenarioConfig, csi: ParametricCsi | np.ndarray) -> np.ndarray:
    """H = A_f(tau) diag(beta) diag(exp(-j phi)) A_t(theta)^H."""
    p = csi.matrix if isinstance(csi, ParametricCsi) else np.asarray(csi, dtype=np.float64)
    return kernels.assemble(p, cfg.frequencies, cfg.n_tx, cfg.phase_constant)[0]


def assemble_batch(cfg: ScenarioConfig, params: np.ndarray) -> np.ndarray:
    """Channels for a (B, L, 4) parameter batch, shape (B, N_f, N_t)."""
    return kernels.assemble(params, cfg.frequencies, cfg.n_tx, cfg.phase_constant)


def sample_parametric_csi(cfg: ScenarioConfig, rng: np.random.Generator) -> ParametricCsi:
    L = cfg.n_paths
    return ParametricCsi(
        rng.uniform(0.0, 2 * math.pi, L),
        rng.uniform(0.0, cfg.tau_max_s, L),
        rng.uniform(0.0, cfg.beta_max, L),
        rng.uniform(0.0, 2 * math.pi, L),
    )


def evolve_ue(state: UeState, cfg: ScenarioConfig, dt: float) -> tuple[UeState, float, float]:
    """Advance the UE by one interval.

    Returns the new state with the angle and delay variations computed
    from the current distance r and the travelled distance v*dt:
    arctan(v*dt/r) and (sqrt(r^2 + (v*dt)^2) - r)/c.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    r = state.distance_m
    step = cfg.ue_speed_mps * dt
    d_theta = math.atan(step / r)
    d_tau = (math.hypot(r, step) - r) / SPEED_OF_LIGHT
    moved = UeState(
        state.x_m + step * math.cos(state.heading_rad),
        state.y_m + step * math.sin(state.heading_rad),
        state.heading_rad,
    )
    return moved, d_theta, d_tau


class ChannelSequence(NamedTuple):
    past: np.ndarray  # (w, N_f, N_t)
    target: np.ndarray  # (N_f, N_t), the channel one slot after the window
    target_csi: ParametricCsi
    history: list  # ParametricCsi for all w+1 slots, oldest first


def _drift_signs(cfg: ScenarioConfig, ue: UeState, rng: np.random.Generator) -> np.ndarray:
    # LoS follows the bearing rotation sense of the motion; NLoS signs are arbitrary but frozen
    cross = ue.x_m * math.sin(ue.heading_rad) - ue.y_m * math.cos(ue.heading_rad)
    signs = rng.choice(np.array([-1.0, 1.0]), size=cfg.n_paths)
    signs[0] = 1.0 if cross >= 0 else -1.0
    return signs


def _step_csi(cfg, p, signs, d_theta, d_tau, r_old, r_new):
    p = p.copy()
    p[:, AOD] = np.mod(p[:, AOD] + signs * d_theta, 2 * math.pi)
    p[:, DELAY] = np.clip(p[:, DELAY] + d_tau, 0.0, cfg.tau_max_s)
    p[:, GAIN] = np.clip(p[:, GAIN] * (r_old / r_new), 0.0, cfg.beta_max)
    p[:, PHASE] = np.mod(p[:, PHASE] - 2 * math.pi * cfg.carrier_freq_hz * d_tau, 2 * math.pi)
    return p


def channel_sequence(cfg: ScenarioConfig, rng: np.random.Generator) -> ChannelSequence:
    """Draw a scenario and roll it forward w slots plus the prediction target.

    Path 1 is the line-of-sight path: the UE is placed along its AoD at a
    distance drawn uniformly from the configured range.
    """
    if cfg.window_len < 1:
        raise ValueError("window_len must be >= 1")
    csi = sample_parametric_csi(cfg, rng)
    r0 = rng.uniform(cfg.min_distance_m, cfg.max_distance_m)
    heading = rng.uniform(0.0, 2 * math.pi)
    los = csi.aod_rad[0]
    ue = UeState(r0 * math.cos(los), r0 * math.sin(los), heading)
    signs = _drift_signs(cfg, ue, rng)

    p = csi.matrix
    history = [p]
    for _ in range(cfg.window_len):
        r_old = ue.distance_m
        ue, d_theta, d_tau = evolve_ue(ue, cfg, cfg.slot_period_s)
        p = _step_csi(cfg, p, signs, d_theta, d_tau, r_old, ue.distance_m)
        history.append(p)

    channels = assemble_batch(cfg, np.stack(history))
    return ChannelSequence(
        past=channels[:-1],
        target=channels[-1],
        target_csi=ParametricCsi.from_matrix(history[-1]),
        history=[ParametricCsi.from_matrix(h) for h in history],
    )


# --- dataset files -----------------------------------------------------------

DATASET_MAGIC = b"CCSI1"
_HEADER = struct.Struct("<5I")


@dataclass
class Dataset:
    """Sequences of w+1 channels and the parametric CSI of the last one."""

    channels: np.ndarray  # (n, w+1, N_f, N_t) complex
    targets: np.ndarray  # (n, L, 4)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.channels.shape[0]

    @property
    def past(self) -> np.ndarray:
        return self.channels[:, :-1]

    @property
    def target_channels(self) -> np.ndarray:
        return self.channels[:, -1]

    def subset(self, idx) -> Dataset:
        return Dataset(self.channels[idx], self.targets[idx], dict(self.meta))


def generate_dataset(cfg: ScenarioConfig, n_samples: int, seed: int | None = None) -> Dataset:
    """Independent sequences, one child seed per sample.

    Sample i depends only on (seed, i), so any subset can be regenerated
    on its own or in parallel.
    """
    seed = cfg.rng_seed if seed is None else seed
    children = np.random.SeedSequence(seed).spawn(n_samples)
    w, nf, nt, L = cfg.window_len, cfg.n_subcarriers, cfg.n_tx, cfg.n_paths
    channels = np.empty((n_samples, w + 1, nf, nt), dtype=np.complex128)
    targets = np.empty((n_samples, L, 4))
    for i, child in enumerate(children):
        seq = channel_sequence(cfg, np.random.default_rng(child))
        channels[i, :w] = seq.past
        channels[i, w] = seq.target
        targets[i] = seq.target_csi.matrix
    return Dataset(channels, targets, {"seed": seed})


def write_dataset(path: str | Path, ds: Dataset) -> None:
    n, w1, nf, nt = ds.channels.shape
    L = ds.targets.shape[1]
    inter = np.empty((n, w1, nf, nt, 2), dtype="<f4")
    inter[..., 0] = ds.channels.real
    inter[..., 1] = ds.channels.imag
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(_HEADER.pack(nf, nt, w1 - 1, L, n))
        for i in range(n):
            fh.write(inter[i].tobytes())
            fh.write(ds.targets[i].astype("<f8").tobytes())


def read_dataset(path: str | Path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[: len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise ValueError(f"{path}: not a dataset file (bad magic)")
    off = len(DATASET_MAGIC)
    if len(raw) < off + _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    nf, nt, w, L, n = _HEADER.unpack_from(raw, off)
    off += _HEADER.size
    ch_bytes = (w + 1) * nf * nt * 2 * 4
    per = ch_bytes + 4 * L * 8
    if len(raw) != off + n * per:
        raise ValueError(f"{path}: expected {n} samples of {per} bytes")
    channels = np.empty((n, w + 1, nf, nt), dtype=np.complex128)
    targets = np.empty((n, L, 4))
    for i in range(n):
        base = off + i * per
        c = np.frombuffer(raw, dtype="<f4", count=ch_bytes // 4, offset=base).reshape(w + 1, nf, nt, 2)
        channels[i] = c[..., 0] + 1j * c[..., 1].astype(np.float64)
        targets[i] = np.frombuffer(raw, dtype="<f8", count=4 * L, offset=base + ch_bytes).reshape(L, 4)
    return Dataset(channels, targets)

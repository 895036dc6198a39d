"""Kinematic 2-DOF arm environment with a top-down grayscale camera.

The rendered (virtual) arm can be displaced laterally from the real one,
proprioception reports the real joint angles plus Gaussian noise, and
visuo-tactile stimulation arrives on a fixed 2 s visual clock.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, KVConfig
from .kinematics import ArmGeometry, joint_positions

CONDITIONS = ("left", "center", "right")
MODES = ("sync", "async")


class RenderError(RuntimeError):
    """The arm does not intersect the view window."""


@dataclass(frozen=True)
class EnvConfig(KVConfig):
    resolution: int = 64
    L1: float = 0.30
    L2: float = 0.30
    shoulder_x: float = -0.10
    shoulder_y: float = 0.0
    # resting pose: hand 0.30 m left of the midline and 0.40 m forward,
    # obtained from inverse_kinematics((-0.30, 0.40), elbow_sign=+1)
    rest_shoulder: float = -0.26608005
    rest_elbow: float = 1.45945531
    shoulder_min: float = -0.90
    shoulder_max: float = 0.35
    elbow_min: float = 0.85
    elbow_max: float = 2.05
    sigma_p: float = 0.01
    offset_left: float = -0.15
    offset_center: float = 0.0
    offset_right: float = 0.15
    view_x_min: float = -0.6
    view_x_max: float = 0.6
    view_y_min: float = 0.0
    view_y_max: float = 0.8
    upper_arm_width: float = 0.10
    forearm_width: float = 0.08
    sync_max_delay: float = 0.1
    async_max_delay: float = 1.0
    event_interval: float = 2.0

    def validate(self) -> None:
        if self.resolution < 4:
            raise ConfigError("resolution must be at least 4")
        if self.L1 <= 0 or self.L2 <= 0:
            raise ConfigError("link lengths must be positive")
        if not (self.shoulder_min < self.shoulder_max and self.elbow_min < self.elbow_max):
            raise ConfigError("joint limits must satisfy min < max")
        if not (self.view_x_min < self.view_x_max and self.view_y_min < self.view_y_max):
            raise ConfigError("empty view window")
        if self.sigma_p < 0:
            raise ConfigError("sigma_p must be non-negative")
        if self.upper_arm_width <= 0 or self.forearm_width <= 0:
            raise ConfigError("arm widths must be positive")
        if self.event_interval <= 0:
            raise ConfigError("event_interval must be positive")
        rest = self.rest_pose
        if not np.all((rest >= self.lower) & (rest <= self.upper)):
            raise ConfigError("resting pose lies outside the joint limits")

    @property
    def geometry(self) -> ArmGeometry:
        return ArmGeometry(self.L1, self.L2, (self.shoulder_x, self.shoulder_y))

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.shoulder_min, self.elbow_min])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.shoulder_max, self.elbow_max])

    @property
    def rest_pose(self) -> np.ndarray:
        return np.array([self.rest_shoulder, self.rest_elbow])

    @property
    def meters_per_pixel(self) -> tuple[float, float]:
        """(horizontal, vertical) pixel pitch."""
        n = self.resolution
        return (self.view_x_max - self.view_x_min) / n, (self.view_y_max - self.view_y_min) / n

    def offset(self, condition: str) -> float:
        if condition not in CONDITIONS:
            raise ConfigError(f"unknown condition {condition!r}")
        return getattr(self, f"offset_{condition}")

    def max_delay(self, mode: str) -> float:
        if mode not in MODES:
            raise ConfigError(f"unknown stimulation mode {mode!r}")
        return self.sync_max_delay if mode == "sync" else self.async_max_delay


def _segment_distance(px, py, a, b):
    ab = b - a
    denom = float(ab @ ab)
    t = ((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom
    t = np.clip(t, 0.0, 1.0)
    dx = px - (a[0] + t * ab[0])
    dy = py - (a[1] + t * ab[1])
    return np.sqrt(dx * dx + dy * dy)


def pixel_centers(cfg: EnvConfig) -> tuple[np.ndarray, np.ndarray]:
    """Metric x (per column) and y (per row) of pixel centres; row 0 is the far edge."""
    mx, my = cfg.meters_per_pixel
    idx = np.arange(cfg.resolution) + 0.5
    return cfg.view_x_min + idx * mx, cfg.view_y_max - idx * my


def render(q, offset: float, cfg: EnvConfig) -> np.ndarray:
    """Rasterize the arm as two anti-aliased capsules, white on black.

    The whole arm is shifted by ``offset`` metres along x. Edges ramp over
    one horizontal pixel pitch. Returns a (resolution, resolution) array.
    """
    shoulder, elbow, hand = joint_positions(q, cfg.geometry)
    shift = np.array([offset, 0.0])
    xs, ys = pixel_centers(cfg)
    px, py = np.meshgrid(xs, ys)
    ramp = cfg.meters_per_pixel[0]
    img = np.zeros_like(px)
    for a, b, width in (
        (shoulder, elbow, cfg.upper_arm_width),
        (elbow, hand, cfg.forearm_width),
    ):
        d = _segment_distance(px, py, a + shift, b + shift)
        cover = np.clip((0.5 * width - d) / ramp + 0.5, 0.0, 1.0)
        img = np.maximum(img, cover)
    if not img.any():
        raise RenderError(f"arm at q={tuple(np.round(q, 4))}, offset={offset} is outside the view")
    return img


def write_pgm(path, img: np.ndarray) -> None:
    """Binary 8-bit PGM (P5)."""
    data = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    data = np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)
    return data.astype(np.float64) / maxval


@dataclass(frozen=True)
class StimulationEvent:
    t_v: float
    t_t: float

    def __post_init__(self):
        if self.t_t < self.t_v:
            raise ValueError(f"tactile event at {self.t_t} precedes visual event at {self.t_v}")

    @property
    def delay(self) -> float:
        return self.t_t - self.t_v


def stimulation_schedule(
    mode: str,
    duration: float,
    rng: np.random.Generator,
    interval: float = 2.0,
    max_delay: float | None = None,
) -> list[StimulationEvent]:
    """Visual events every ``interval`` seconds strictly inside the trial, each
    followed by a tactile event after a uniform random delay."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    if max_delay is None:
        max_delay = {"sync": 0.1, "async": 1.0}[mode]
    elif mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    events = []
    k = 1
    while k * interval < duration:
        t_v = k * interval
        events.append(StimulationEvent(t_v, t_v + rng.uniform(0.0, max_delay)))
        k += 1
    return events


@dataclass
class Observation:
    s_p: np.ndarray
    s_v: np.ndarray
    event: StimulationEvent | None = None


@dataclass
class ArmState:
    q: np.ndarray
    t: float = 0.0
    action: np.ndarray = field(default_factory=lambda: np.zeros(2))


def observe(state: ArmState, cfg: EnvConfig, offset: float, rng: np.random.Generator) -> Observation:
    noise = rng.standard_normal(2) * cfg.sigma_p if cfg.sigma_p > 0 else np.zeros(2)
    return Observation(s_p=state.q + noise, s_v=render(state.q, offset, cfg))


def step(state: ArmState, action, dt: float, cfg: EnvConfig, clamped: bool = True) -> ArmState:
    """Advance one tick.

    Clamped (the illusion protocol): the arm is held, the action is only
    recorded. Free: Euler-integrate joint velocities within the limits.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    action = np.asarray(action, dtype=np.float64).copy()
    if clamped:
        q = state.q.copy()
    else:
        q = np.clip(state.q + action * dt, cfg.lower, cfg.upper)
    return ArmState(q=q, t=state.t + dt, action=action)


class ArmEnv:
    """Stateful wrapper: one trial's arm, virtual offset and stimulation schedule."""

    def __init__(
        self,
        cfg: EnvConfig,
        condition: str = "center",
        mode: str = "sync",
        duration: float = 30.0,
        rng: np.random.Generator | None = None,
        clamped: bool = True,
    ):
        self.cfg = cfg
        self.offset = cfg.offset(condition)
        self.clamped = clamped
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.schedule = stimulation_schedule(
            mode, duration, self.rng, cfg.event_interval, cfg.max_delay(mode)
        )
        self.state = ArmState(q=cfg.rest_pose.copy())
        self._pending = list(self.schedule)
        # the visual scene is static under clamping, render it once
        self._image_cache: tuple[bytes, np.ndarray] | None = None

    def _image(self) -> np.ndarray:
        key = self.state.q.tobytes()
        if self._image_cache is None or self._image_cache[0] != key:
            self._image_cache = (key, render(self.state.q, self.offset, self.cfg))
        return self._image_cache[1]

    def observe(self, t: float) -> Observation:
        """Observation at time ``t``; carries the event whose tactile part
        arrived since the previous call."""
        noise = (
            self.rng.standard_normal(2) * self.cfg.sigma_p if self.cfg.sigma_p > 0 else np.zeros(2)
        )
        event = None
        if self._pending and self._pending[0].t_t <= t:
            event = self._pending.pop(0)
        return Observation(s_p=self.state.q + noise, s_v=self._image(), event=event)

    def step(self, action, dt: float) -> ArmState:
        self.state = step(self.state, action, dt, self.cfg, self.clamped)
        return self.state

"""Deterministic procedural generation of the MNIST-1D dataset.

Each example starts from one of ten fixed 12-point digit templates and is
passed through a randomized pipeline: pad, circular translate, scale, additive
noise (iid + smoothed), shear ramp, and linear downsampling to a fixed length.
Every example owns its own random stream, so the dataset is a pure function of
its config regardless of generation order or parallelism.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .rng import RngStream

# Stream id used for the (optional) sequence permutation; example streams use
# their global example index, so any id >= train_count + test_count is safe.
PERMUTATION_STREAM_ID = 1 << 62

NUM_CLASSES = 10

# Stroke-trace caricatures of the digits 0-9: each template is the pen's
# horizontal position while writing the digit top to bottom in one stylized
# stroke (loops become oscillations, straight strokes become flats or ramps,
# crossbars become jumps). 12 points per digit, amplitudes in [-1, 1].
_TEMPLATE_POINTS = (
    (0.0, 0.8, 1.0, 0.8, 0.0, -0.8, -1.0, -0.8, 0.0, 0.8, 1.0, 0.8),
    (-0.6, 0.4, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0),
    (-0.5, 0.4, 1.0, 0.9, 0.2, -0.4, -0.9, -1.0, -1.0, -0.4, 0.4, 1.0),
    (-0.8, 0.2, 1.0, 0.6, -0.3, 0.4, 1.0, 0.8, 0.2, -0.5, -1.0, -0.8),
    (0.9, 0.7, 0.4, 0.1, -0.3, -0.7, -1.0, 0.6, 0.3, 0.3, 0.3, 0.3),
    (1.0, 0.2, -0.8, -0.9, -0.2, 0.5, 1.0, 1.0, 0.6, -0.2, -0.9, -0.6),
    (0.8, 0.2, -0.4, -0.9, -1.0, -0.8, -0.2, 0.5, 0.8, 0.4, -0.3, -0.7),
    (-1.0, -0.2, 0.6, 1.0, 0.8, 0.55, 0.3, 0.1, -0.15, -0.4, -0.6, -0.85),
    (0.0, 0.7, 1.0, 0.6, -0.5, -1.0, -0.6, 0.4, 1.0, 0.7, 0.0, -0.5),
    (0.7, -0.2, -0.9, -0.6, 0.3, 0.9, 1.0, 0.85, 0.7, 0.55, 0.4, 0.25),
)


@dataclass(frozen=True)
class Template:
    """Fixed 12-point signal for one digit class."""

    class_label: int
    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=np.float64))


def make_templates() -> list[Template]:
    """Return the ten digit templates, index k holding class k."""
    return [Template(k, np.array(p)) for k, p in enumerate(_TEMPLATE_POINTS)]


@dataclass(frozen=True)
class GeneratorConfig:
    """Every knob of the generation pipeline, with benchmark defaults."""

    train_count: int = 4000
    test_count: int = 1000
    template_len: int = 12
    pad_min: int = 36
    pad_max: int = 60
    max_translation: int = 48
    corr_noise_scale: float = 0.25
    iid_noise_scale: float = 2e-2
    shear_scale: float = 0.75
    shuffle_seq: bool = False
    final_seq_len: int = 40
    gaussian_sigma: float = 2.0
    scale_min: float = 0.8
    scale_max: float = 1.2
    seed: int = 42

    def validate(self) -> None:
        if self.train_count < 0 or self.test_count < 0:
            raise ConfigError("train_count and test_count must be non-negative")
        if self.pad_min < 0:
            raise ConfigError("pad_min must be >= 0")
        if self.pad_min > self.pad_max:
            raise ConfigError(f"pad_min ({self.pad_min}) must be <= pad_max ({self.pad_max})")
        if self.template_len + self.pad_min < self.final_seq_len:
            raise ConfigError(
                f"template_len + pad_min ({self.template_len + self.pad_min}) "
                f"must be >= final_seq_len ({self.final_seq_len})"
            )
        if self.max_translation > self.template_len + self.pad_min:
            raise ConfigError(
                f"max_translation ({self.max_translation}) must be <= "
                f"template_len + pad_min ({self.template_len + self.pad_min})"
            )
        if self.max_translation < 0:
            raise ConfigError("max_translation must be >= 0")
        if not self.scale_min > 0:
            raise ConfigError(f"scale_min must be > 0, got {self.scale_min}")
        if self.scale_min > self.scale_max:
            raise ConfigError(f"scale_min ({self.scale_min}) must be <= scale_max ({self.scale_max})")
        if self.corr_noise_scale < 0 or self.iid_noise_scale < 0:
            raise ConfigError("noise scales must be >= 0")
        if self.gaussian_sigma < 0:
            raise ConfigError("gaussian_sigma must be >= 0")
        if self.final_seq_len < 2:
            raise ConfigError("final_seq_len must be >= 2")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - fields
        if unknown:
            raise ConfigError(f"unknown generator config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Dataset:
    """Train/test splits plus the config and optional permutation that made them."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    config: GeneratorConfig
    permutation: np.ndarray | None = None

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        perms_equal = (self.permutation is None) == (other.permutation is None) and (
            self.permutation is None or np.array_equal(self.permutation, other.permutation)
        )
        return (
            np.array_equal(self.x_train, other.x_train)
            and np.array_equal(self.y_train, other.y_train)
            and np.array_equal(self.x_test, other.x_test)
            and np.array_equal(self.y_test, other.y_test)
            and self.config == other.config
            and perms_equal
        )


def pad(points: np.ndarray, pad_lo: int, pad_hi: int) -> np.ndarray:
    """Surround ``points`` with ``pad_lo`` zeros on the left and ``pad_hi`` on the right."""
    if pad_lo < 0 or pad_hi < 0:
        raise DataError(f"pad amounts must be >= 0, got ({pad_lo}, {pad_hi})")
    return np.concatenate([np.zeros(pad_lo), np.asarray(points, dtype=np.float64), np.zeros(pad_hi)])


def translate(points: np.ndarray, shift: int) -> np.ndarray:
    """Circularly shift the sequence right by ``shift`` positions."""
    return np.roll(np.asarray(points, dtype=np.float64), shift)


def apply_shear(points: np.ndarray, slope: float) -> np.ndarray:
    """Add a zero-mean linear ramp spanning [-slope, +slope] across the sequence."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    ramp = slope * (2.0 * np.arange(n) / (n - 1) - 1.0) if n > 1 else np.zeros(n)
    return points + ramp


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(4.0 * sigma)
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(d**2) / (2.0 * sigma**2))
    return w / w.sum()


def gaussian_filter_1d(points: np.ndarray, sigma: float) -> np.ndarray:
    """Smooth with a truncated Gaussian (radius ceil(4*sigma), symmetric-reflect edges)."""
    points = np.asarray(points, dtype=np.float64)
    if sigma < 0:
        raise DataError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return points.copy()
    kernel = _gaussian_kernel(sigma)
    radius = (len(kernel) - 1) // 2
    padded = np.pad(points, radius, mode="symmetric")
    return np.convolve(padded, kernel, mode="valid")


def add_noise(
    points: np.ndarray,
    rng: RngStream,
    iid_scale: float,
    corr_scale: float,
    sigma: float,
) -> np.ndarray:
    """Add iid Gaussian noise plus smoothed ("correlated") Gaussian noise.

    The filter shapes only the correlated component, never the signal itself.
    Draw order is fixed (iid noise first) so streams replay identically.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    out = points.copy()
    eps = rng.normal(n)
    eta = rng.normal(n)
    if iid_scale > 0:
        out = out + iid_scale * eps
    if corr_scale > 0:
        out = out + corr_scale * gaussian_filter_1d(eta, sigma)
    return out


def downsample(points: np.ndarray, target_len: int) -> np.ndarray:
    """Linearly interpolate to ``target_len`` evenly spaced samples over the full span."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2 or target_len < 2:
        raise DataError(f"need length >= 2 on both sides, got {len(points)} -> {target_len}")
    positions = np.linspace(0.0, len(points) - 1.0, target_len)
    return np.interp(positions, np.arange(len(points)), points)


def generate_example(class_label: int, rng: RngStream, config: GeneratorConfig) -> np.ndarray:
    """Run the full randomized pipeline for one example of ``class_label``."""
    if not 0 <= class_label < NUM_CLASSES:
        raise DataError(f"class_label must be in 0..9, got {class_label}")
    template = np.asarray(_TEMPLATE_POINTS[class_label], dtype=np.float64)

    total_pad = int(rng.integers(config.pad_min, config.pad_max + 1))
    pad_lo = int(rng.integers(0, total_pad + 1))
    seq = pad(template, pad_lo, total_pad - pad_lo)

    shift = int(rng.integers(-config.max_translation, config.max_translation + 1))
    shift = int(np.clip(shift, -len(seq), len(seq)))
    seq = translate(seq, shift)

    seq = seq * rng.uniform(config.scale_min, config.scale_max)
    seq = add_noise(seq, rng, config.iid_noise_scale, config.corr_noise_scale, config.gaussian_sigma)
    seq = apply_shear(seq, rng.uniform(-config.shear_scale, config.shear_scale))
    return downsample(seq, config.final_seq_len)


def _generate_block(args) -> np.ndarray:
    config, start, stop = args
    out = np.empty((stop - start, config.final_seq_len))
    for g in range(start, stop):
        out[g - start] = generate_example(g % NUM_CLASSES, RngStream(config.seed, g), config)
    return out


def generate_dataset(config: GeneratorConfig, jobs: int = 1) -> Dataset:
    """Generate the full dataset described by ``config``.

    Labels cycle 0..9 so both splits are stratified. Example ``g`` (test
    examples numbered after train) draws only from stream ``(seed, g)``, which
    makes the result independent of ``jobs``.
    """
    config.validate()
    total = config.train_count + config.test_count

    if jobs <= 1 or total < 2 * NUM_CLASSES:
        x_all = _generate_block((config, 0, total))
    else:
        bounds = np.linspace(0, total, jobs + 1).astype(int)
        tasks = [(config, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            x_all = np.concatenate(list(pool.map(_generate_block, tasks)))

    y_all = np.arange(total, dtype=np.int64) % NUM_CLASSES
    permutation = None
    if config.shuffle_seq:
        permutation = RngStream(config.seed, PERMUTATION_STREAM_ID).permutation(config.final_seq_len)
        x_all = x_all[:, permutation]

    n = config.train_count
    return Dataset(
        x_train=x_all[:n],
        y_train=y_all[:n],
        x_test=x_all[n:],
        y_test=y_all[n:],
        config=config,
        permutation=permutation,
    )

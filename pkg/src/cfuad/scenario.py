"""Deployment geometry, large-scale fading and activity sampling.

Every sampler takes an explicit ``numpy.random.Generator`` so results are
reproducible and safe to produce from several threads, one stream each.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MIN_DISTANCE_M = 1.0
FEATURE_MODES = ("magnitude", "reim-stack")


class ConfigError(ValueError):
    """Raised for invalid or unknown configuration values."""


@dataclass(frozen=True)
class SystemConfig:
    """Scenario and training parameters.

    Defaults reproduce the industrial setup used throughout the project:
    a 1 km square with 20 single-antenna APs, 200 users and length-40 pilots.
    """

    area_side_m: float = 1000.0
    num_aps: int = 20
    num_users: int = 200
    num_antennas: int = 1
    pilot_len: int = 40
    carrier_ghz: float = 1.9
    shadow_intensity: float = 5.9
    tx_power_mw: float = 200.0
    noise_dbm: float = -109.0
    activity_prob: float = 0.1
    batch_size: int = 256
    num_epochs: int = 10
    learning_rate: float = 1e-3
    rng_seed: int = 0
    feature_mode: str = "magnitude"
    dtype: str = "float64"

    def __post_init__(self):
        for name in ("num_aps", "num_users", "num_antennas", "pilot_len", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_epochs < 0:
            raise ConfigError("num_epochs must be >= 0")
        if not 0.0 <= self.activity_prob <= 1.0:
            raise ConfigError(f"activity_prob must lie in [0, 1], got {self.activity_prob}")
        if not self.area_side_m > 0:
            raise ConfigError("area_side_m must be positive")
        if not self.carrier_ghz > 0:
            raise ConfigError("carrier_ghz must be positive")
        if self.area_side_m < 2 * MIN_DISTANCE_M:
            raise ConfigError("area too small to honour the minimum AP-user distance")
        if self.feature_mode not in FEATURE_MODES:
            raise ConfigError(f"feature_mode must be one of {FEATURE_MODES}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")

    @property
    def snr(self) -> float:
        """Transmit power normalized by the noise power (noise variance becomes 1)."""
        noise_mw = 10.0 ** (self.noise_dbm / 10.0)
        return self.tx_power_mw / noise_mw

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> int:
        """64-bit hash of the canonical JSON form."""
        h = hashlib.blake2b(self.to_json().encode(), digest_size=8)
        return int.from_bytes(h.digest(), "little")

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in d.items():
            if key not in known:
                raise ConfigError(f"unknown config key: {key!r}")
            kwargs[key] = _coerce(known[key], value)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "SystemConfig":
        """Read a flat ``key = value`` text file (``#`` comments allowed)."""
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        parser.optionxform = str
        text = Path(path).read_text()
        try:
            parser.read_string("[config]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        return cls.from_dict(dict(parser["config"]))


def _coerce(f: dataclasses.Field, value):
    typ = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
        return str(value).strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {f.name}: {value!r}") from exc


@dataclass
class Deployment:
    ap_positions: np.ndarray  # (M, 2)
    user_positions: np.ndarray  # (K, 2)

    def distances(self) -> np.ndarray:
        """(M, K) Euclidean AP-user distances in meters."""
        diff = self.ap_positions[:, None, :] - self.user_positions[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])


@dataclass
class LargeScale:
    beta: np.ndarray  # (M, K) linear power gains
    shadow_draws: np.ndarray  # (M, K) standard normal


def path_loss_db(d_m, f_ghz):
    """Industrial path loss ``32.40 + 23 log10(d) + 20 log10(f)`` in dB."""
    d_m = np.asarray(d_m, dtype=float)
    f_ghz = np.asarray(f_ghz, dtype=float)
    if np.any(d_m <= 0) or np.any(f_ghz <= 0):
        raise ValueError("distance and frequency must be positive")
    out = 32.40 + 23.0 * np.log10(d_m) + 20.0 * np.log10(f_ghz)
    return out if out.ndim else float(out)


def large_scale_coeff(pl_db, s, sigma_sh):
    out = 10.0 ** ((sigma_sh * np.asarray(s, dtype=float) - np.asarray(pl_db, dtype=float)) / 10.0)
    return out if np.ndim(out) else float(out)


def sample_ap_positions(config: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.0, config.area_side_m, size=(config.num_aps, 2))


def sample_user_positions(
    config: SystemConfig, rng: np.random.Generator, ap_positions: np.ndarray
) -> np.ndarray:
    """Uniform user positions, redrawing any user closer than 1 m to an AP."""
    users = rng.uniform(0.0, config.area_side_m, size=(config.num_users, 2))
    while True:
        diff = ap_positions[:, None, :] - users[None, :, :]
        too_close = (np.hypot(diff[..., 0], diff[..., 1]) < MIN_DISTANCE_M).any(axis=0)
        if not too_close.any():
            return users
        users[too_close] = rng.uniform(0.0, config.area_side_m, size=(int(too_close.sum()), 2))


def sample_deployment(config: SystemConfig, rng: np.random.Generator) -> Deployment:
    aps = sample_ap_positions(config, rng)
    return Deployment(aps, sample_user_positions(config, rng, aps))


def sample_large_scale(
    dep: Deployment, config: SystemConfig, rng: np.random.Generator
) -> LargeScale:
    d = dep.distances()
    if np.any(d < MIN_DISTANCE_M):
        raise ValueError("deployment violates the minimum AP-user distance")
    s = rng.standard_normal(d.shape)
    pl = path_loss_db(d, config.carrier_ghz)
    return LargeScale(large_scale_coeff(pl, s, config.shadow_intensity), s)


def sample_activity(k: int, eps: float, rng: np.random.Generator) -> np.ndarray:
    """Length-``k`` i.i.d. Bernoulli(``eps``) activity vector of 0/1 ints."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"activation probability must lie in [0, 1], got {eps}")
    return (rng.random(k) < eps).astype(np.int8)

"""Dataset and checkpoint files plus the deterministic generation pipeline.

Dataset layout (all little-endian)::

    magic "CFAD" | version u32 | M, N, K, tau u32 | feature mode u32
    | sample count u64 | config digest u64 | seed u64
    | config JSON length u32 | config JSON (UTF-8)
    | pilots tau*K complex128, row-major
    | records...

Each record is the (N, K, depth) tensor as float32 in n -> k -> m order
followed by the activity bitmap (``ceil(K/8)`` bytes, user k in bit k % 8
of byte k // 8). AP positions and pilots come from the config's own seed;
sample ``i`` comes from the stream ``(file seed, i)``, so any sample,
including its raw frames, can be rebuilt from the header alone.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import airlink, preprocess, scenario
from .scenario import SystemConfig

DATASET_MAGIC = b"CFAD"
DATASET_VERSION = 1
CHECKPOINT_MAGIC = b"CFCK"
CHECKPOINT_VERSION = 1
_MODE_TAGS = {"magnitude": 0, "reim-stack": 1}
_FIXED = struct.Struct("<4sI4IIQQQI")

LAYOUT_STREAM = 0
SAMPLE_STREAM = 1


class FormatError(ValueError):
    """Raised for malformed or inconsistent dataset files."""


class CheckpointError(ValueError):
    """Raised when a checkpoint does not fit the requested architecture."""


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent random stream identified by ``(seed, key...)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


# -- simulation pipeline ---------------------------------------------------

@dataclass
class Layout:
    """Per-dataset constants: AP positions and pilot sequences."""

    ap_positions: np.ndarray
    pilots: np.ndarray


def make_layout(config: SystemConfig) -> Layout:
    """Fixed infrastructure drawn from ``config.rng_seed``.

    Files sharing a config (train/validation/test splits) therefore share
    AP positions and pilots, while their samples come from per-file seeds.
    """
    rng = stream(config.rng_seed, LAYOUT_STREAM)
    aps = scenario.sample_ap_positions(config, rng)
    phi = airlink.gen_pilots(config.pilot_len, config.num_users, rng)
    return Layout(aps, phi)


def simulate_sample(config: SystemConfig, layout: Layout, seed: int, index: int):
    """Frames and activity of sample ``index``: ``(ReceivedFrames, activity)``."""
    rng = stream(seed, SAMPLE_STREAM, index)
    users = scenario.sample_user_positions(config, rng, layout.ap_positions)
    ls = scenario.sample_large_scale(scenario.Deployment(layout.ap_positions, users), config, rng)
    act = scenario.sample_activity(config.num_users, config.activity_prob, rng)
    chans = airlink.sample_channels(ls, config.num_antennas, rng)
    frames = airlink.synthesize_frame(layout.pilots, act, chans, config.snr, rng)
    return frames, act


def sample_tensor(config: SystemConfig, layout: Layout, frames) -> np.ndarray:
    est = preprocess.estimate_channels(preprocess.normalize_pilots(layout.pilots), frames, config.snr)
    return preprocess.assemble_tensor(est, config.feature_mode)


def tensor_depth(config: SystemConfig) -> int:
    return config.num_aps * (2 if config.feature_mode == "reim-stack" else 1)


def record_size(n: int, k: int, depth: int) -> int:
    return 4 * n * k * depth + (k + 7) // 8


def _record_dtype(n: int, k: int, depth: int) -> np.dtype:
    return np.dtype([("c", "<f4", (n, k, depth)), ("bits", "u1", ((k + 7) // 8,))])


def pack_activity(a) -> bytes:
    return np.packbits(np.asarray(a, dtype=np.uint8), bitorder="little").tobytes()


def unpack_activity(bits, k: int) -> np.ndarray:
    return np.unpackbits(np.asarray(bits, dtype=np.uint8), axis=-1, count=k,
                         bitorder="little").astype(np.int8)


# -- datasets --------------------------------------------------------------

@dataclass
class DatasetHeader:
    config: SystemConfig
    seed: int
    count: int
    pilots: np.ndarray
    config_digest: int
    header_size: int = 0

    @property
    def dims(self) -> tuple[int, int, int, int]:
        c = self.config
        return c.num_aps, c.num_antennas, c.num_users, c.pilot_len

    @property
    def depth(self) -> int:
        return tensor_depth(self.config)

    @property
    def record_size(self) -> int:
        _, n, k, _ = self.dims
        return record_size(n, k, self.depth)

    def encode(self) -> bytes:
        c = self.config
        blob = c.to_json().encode()
        head = _FIXED.pack(DATASET_MAGIC, DATASET_VERSION, c.num_aps, c.num_antennas,
                           c.num_users, c.pilot_len, _MODE_TAGS[c.feature_mode], self.count,
                           self.config_digest, self.seed, len(blob))
        return head + blob + np.ascontiguousarray(self.pilots, dtype="<c16").tobytes()


def generate_dataset(config: SystemConfig, count: int, seed: int, path) -> DatasetHeader:
    """Write ``count`` simulated samples to ``path``; byte-deterministic in (config, seed)."""
    if count < 0:
        raise ValueError("count must be >= 0")
    layout = make_layout(config)
    header = DatasetHeader(config, seed, count, layout.pilots, config.digest())
    raw = header.encode()
    header.header_size = len(raw)
    with open(path, "wb") as fh:
        fh.write(raw)
        for i in range(count):
            frames, act = simulate_sample(config, layout, seed, i)
            c = sample_tensor(config, layout, frames)
            fh.write(np.ascontiguousarray(c, dtype="<f4").tobytes())
            fh.write(pack_activity(act))
    return header


def read_header(fh) -> DatasetHeader:
    raw = fh.read(_FIXED.size)
    if len(raw) < _FIXED.size:
        raise FormatError(f"truncated header: {len(raw)} of {_FIXED.size} fixed bytes at offset 0")
    (magic, version, m, n, k, tau, mode, count, digest, seed, blob_len) = _FIXED.unpack(raw)
    if magic != DATASET_MAGIC:
        raise FormatError(f"bad magic {magic!r} at offset 0 (expected {DATASET_MAGIC!r})")
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported format version {version} at offset 4")
    blob = fh.read(blob_len)
    if len(blob) != blob_len:
        raise FormatError(f"truncated config block at offset {_FIXED.size}")
    try:
        config = SystemConfig.from_dict(json.loads(blob))
    except (ValueError, TypeError) as exc:
        raise FormatError(f"invalid config block at offset {_FIXED.size}: {exc}") from exc
    if (config.num_aps, config.num_antennas, config.num_users, config.pilot_len) != (m, n, k, tau):
        raise FormatError("header dims disagree with the embedded config (offset 8)")
    if _MODE_TAGS.get(config.feature_mode) != mode:
        raise FormatError("feature-mode tag disagrees with the embedded config (offset 24)")
    if config.digest() != digest:
        raise FormatError("config digest mismatch (offset 36)")
    pil_off = _FIXED.size + blob_len
    pil = fh.read(16 * tau * k)
    if len(pil) != 16 * tau * k:
        raise FormatError(f"truncated pilot block at offset {pil_off}")
    pilots = np.frombuffer(pil, dtype="<c16").reshape(tau, k).astype(complex)
    return DatasetHeader(config, seed, count, pilots, digest, pil_off + 16 * tau * k)


class Dataset:
    """Read-only view of a dataset file with streaming and random access."""

    def __init__(self, path):
        self.path = Path(path)
        with open(self.path, "rb") as fh:
            self.header = read_header(fh)
        size = self.path.stat().st_size
        expected = self.header.header_size + self.header.count * self.header.record_size
        if size != expected:
            raise FormatError(
                f"{self.path}: file is {size} bytes but header at offset 0 declares "
                f"{self.header.count} records of {self.header.record_size} bytes after "
                f"a {self.header.header_size}-byte header ({expected} bytes)")
        _, n, k, _ = self.header.dims
        self._dtype = _record_dtype(n, k, self.header.depth)

    @property
    def config(self) -> SystemConfig:
        return self.header.config

    def __len__(self) -> int:
        return self.header.count

    def _records(self):
        if len(self) == 0:
            return np.zeros(0, dtype=self._dtype)
        return np.memmap(self.path, dtype=self._dtype, mode="r",
                         offset=self.header.header_size, shape=(len(self),))

    def __getitem__(self, i: int):
        if not -len(self) <= i < len(self):
            raise IndexError(i)
        i %= len(self)
        with open(self.path, "rb") as fh:
            fh.seek(self.header.header_size + i * self.header.record_size)
            rec = np.frombuffer(fh.read(self.header.record_size), dtype=self._dtype)[0]
        return np.array(rec["c"]), unpack_activity(rec["bits"], self.config.num_users)

    def __iter__(self):
        with open(self.path, "rb") as fh:
            fh.seek(self.header.header_size)
            reader = io.BufferedReader(fh)
            for _ in range(len(self)):
                rec = np.frombuffer(reader.read(self.header.record_size), dtype=self._dtype)[0]
                yield np.array(rec["c"]), unpack_activity(rec["bits"], self.config.num_users)

    def load(self, start: int = 0, stop: int | None = None):
        """Tensors (S, N, K, depth) float32 and activity (S, K) int8 for a slice."""
        rec = self._records()[start:stop]
        return np.array(rec["c"]), unpack_activity(rec["bits"], self.config.num_users)

    def frames(self, indices) -> np.ndarray:
        """Rebuild raw per-AP frames for the given samples, shape (S, M, tau, N)."""
        layout = Layout(make_layout(self.config).ap_positions, self.header.pilots)
        return np.stack([simulate_sample(self.config, layout, self.header.seed, int(i))[0].y
                         for i in indices])


def read_dataset(path) -> Dataset:
    return Dataset(path)


# -- checkpoints ------------------------------------------------------------

def _net_descriptor(net) -> dict:
    d = net.describe()
    d["input_shift"] = net.input_shift
    d["input_scale"] = net.input_scale
    d["arrays"] = [[name, list(arr.shape)] for name, arr in net.named_params() + net.named_buffers()]
    return d


def save_checkpoint(net, path) -> None:
    desc = json.dumps(_net_descriptor(net), sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(desc)))
        fh.write(desc)
        for _, arr in net.named_params() + net.named_buffers():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_checkpoint(path):
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, n = struct.unpack_from("<4sII", data)
    if magic != CHECKPOINT_MAGIC or version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    try:
        desc = json.loads(data[12:12 + n])
    except ValueError as exc:
        raise CheckpointError(f"{path}: unreadable descriptor at offset 12: {exc}") from exc
    return desc, memoryview(data)[12 + n:]


def load_checkpoint(path, net=None):
    """Load parameters into ``net`` (validated) or into a freshly built network."""
    from .neuralnet import Network

    desc, payload = _read_checkpoint(path)
    if net is None:
        n, k, depth = desc["input_shape"]
        net = Network(n, k, depth, desc["conv_widths"], desc["dense_widths"],
                      dtype=np.dtype(desc["dtype"]), input_transform=desc["input_transform"])
    mine = _net_descriptor(net)
    for key in ("input_shape", "conv_widths", "dense_widths", "layers", "arrays",
                "input_transform"):
        if mine[key] != desc[key]:
            raise CheckpointError(
                f"checkpoint incompatible with network: {key} is {desc[key]!r}, "
                f"network has {mine[key]!r}")
    arrays = [arr for _, arr in net.named_params() + net.named_buffers()]
    expected = 8 * sum(a.size for a in arrays)
    if len(payload) != expected:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    offset = 0
    for arr in arrays:
        vals = np.frombuffer(payload, dtype="<f8", count=arr.size, offset=offset)
        arr[...] = vals.reshape(arr.shape)
        offset += 8 * arr.size
    net.input_shift = float(desc["input_shift"])
    net.input_scale = float(desc["input_scale"])
    return net

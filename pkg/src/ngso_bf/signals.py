"""Symbol streams and snapshot synthesis for the received array signal."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .scenario import Scenario

QPSK_POINTS = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)
# rectangular 2x4 grid: I in {-3,-1,1,3}, Q in {-1,1}; mean power 6 before scaling
QAM8_POINTS = np.array([i + 1j * q for q in (-1, 1) for i in (-3, -1, 1, 3)]) / np.sqrt(6)


class Modulation(enum.Enum):
    QPSK = "qpsk"
    QAM8 = "8qam"

    @property
    def constellation(self) -> np.ndarray:
        return QPSK_POINTS if self is Modulation.QPSK else QAM8_POINTS


@dataclass(frozen=True, eq=False)
class SymbolStream:
    symbols: np.ndarray
    modulation: Modulation


@dataclass(frozen=True, eq=False)
class SnapshotMatrix:
    """Received samples ``Y``, shape (M, L)."""

    data: np.ndarray
    sample_rate_hz: float = 0.0

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[1] < 1:
            raise ConfigError("snapshot matrix must be (M, L) with L >= 1")

    @property
    def num_elements(self) -> int:
        return self.data.shape[0]

    @property
    def num_snapshots(self) -> int:
        return self.data.shape[1]


def gen_symbols(modulation: Modulation, length: int, seed) -> SymbolStream:
    """i.i.d. uniform constellation draws with unit average power."""
    if length < 1:
        raise ConfigError("symbol stream length must be >= 1")
    rng = np.random.default_rng(seed)
    points = modulation.constellation
    idx = rng.integers(0, len(points), size=length)
    return SymbolStream(points[idx], modulation)


@dataclass(frozen=True, eq=False)
class SnapshotComponents:
    desired: np.ndarray
    interference: np.ndarray
    noise: np.ndarray

    def total(self) -> np.ndarray:
        return self.desired + self.interference + self.noise


def _child_seeds(seed, n: int) -> list[np.random.SeedSequence]:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return ss.spawn(n)


def synthesize_components(
    scenario: Scenario,
    num_snapshots: int,
    seed,
    h_d: np.ndarray | None = None,
) -> SnapshotComponents:
    """Desired, interference and noise parts of ``Y`` kept separate.

    ``seed`` is split into K + 2 child streams: desired symbols, one per
    interferer, then noise. Passing ``h_d`` overrides the scenario's
    desired channel while keeping every random draw identical.
    """
    if num_snapshots < 1:
        raise ConfigError("number of snapshots must be >= 1")
    k = scenario.num_interferers
    m = scenario.geometry.num_elements
    children = _child_seeds(seed, k + 2)
    h_d = scenario.h_d if h_d is None else np.asarray(h_d)

    s_d = gen_symbols(Modulation.QPSK, num_snapshots, children[0]).symbols
    desired = np.outer(h_d, s_d)

    interference = np.zeros((m, num_snapshots), dtype=complex)
    if k:
        s_i = np.stack([gen_symbols(Modulation.QAM8, num_snapshots, c).symbols for c in children[1 : k + 1]])
        interference = scenario.h_int @ s_i

    rng = np.random.default_rng(children[-1])
    scale = np.sqrt(scenario.noise_power_w / 2)
    noise = scale * (rng.standard_normal((m, num_snapshots)) + 1j * rng.standard_normal((m, num_snapshots)))
    return SnapshotComponents(desired, interference, noise)


def synthesize_snapshots(scenario: Scenario, num_snapshots: int = 200, seed=0) -> SnapshotMatrix:
    comps = synthesize_components(scenario, num_snapshots, seed)
    return SnapshotMatrix(comps.total(), sample_rate_hz=2 * scenario.desired_link.bandwidth_hz)


SNAPSHOT_MAGIC = b"NGSOSNAP"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<8sIII")


def write_snapshots(path: str | Path, y: SnapshotMatrix) -> None:
    """Binary dump: magic, version, M, L (little-endian u32), then
    interleaved re/im f64 values, row-major by element index."""
    data = np.ascontiguousarray(y.data, dtype=np.complex128)
    m, n = data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, m, n))
        fh.write(data.astype("<c16").tobytes(order="C"))


def read_snapshots(path: str | Path, sample_rate_hz: float = 0.0) -> SnapshotMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ConfigError(f"{path}: truncated snapshot header")
    magic, version, m, n = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ConfigError(f"{path}: bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise ConfigError(f"{path}: unsupported version {version}")
    body = raw[_HEADER.size :]
    if len(body) != 16 * m * n:
        raise ConfigError(f"{path}: expected {16 * m * n} data bytes, got {len(body)}")
    data = np.frombuffer(body, dtype="<c16").reshape(m, n).astype(np.complex128)
    return SnapshotMatrix(data, sample_rate_hz)

"""Shared domain types: time grids, random streams, volatility fields,
martingale models and simulated path ensembles."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DomainError

_U64 = (1 << 64) - 1
_MAGIC = b"SWPE"
_META = b"META"
ENSEMBLE_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time points ``t_start = points[0] < ... < points[-1] = t_end``.

    ``clock="t"`` grids live inside [0, 1]; ``clock="r"`` marks the
    infinite-horizon clock r = -2 log(1 - t) produced by the time change.
    """

    points: np.ndarray
    clock: str = "t"

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 1 or pts.size < 2:
            raise DomainError("a time grid needs at least two points")
        if not np.all(np.isfinite(pts)) or not np.all(np.diff(pts) > 0):
            raise DomainError("grid points must be finite and strictly increasing")
        if self.clock == "t" and (pts[0] < 0.0 or pts[-1] > 1.0):
            raise DomainError(f"grid [{pts[0]}, {pts[-1]}] is not inside [0, 1]")
        if self.clock not in ("t", "r"):
            raise DomainError(f"unknown clock {self.clock!r}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, t_start: float, t_end: float, n_cells: int) -> "TimeGrid":
        if n_cells < 1:
            raise DomainError("n_cells must be positive")
        pts = t_start + (t_end - t_start) * (np.arange(n_cells + 1) / n_cells)
        pts[-1] = t_end
        return cls(pts)

    @property
    def t_start(self) -> float:
        return float(self.points[0])

    @property
    def t_end(self) -> float:
        return float(self.points[-1])

    @property
    def n_cells(self) -> int:
        return self.points.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.points)

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return self.clock == other.clock and np.array_equal(self.points, other.points)

    __hash__ = None


def make_dyadic_grid(t_start: float, t_end: float, n_exponent: int) -> TimeGrid:
    """Uniform grid on [t_start, t_end] with ``2**n_exponent`` cells.

    Refining by one exponent keeps every old point bit-for-bit, since k / 2**n
    is exact in binary floating point.
    """
    if not (0.0 <= t_start < t_end <= 1.0):
        raise DomainError(f"need 0 <= t_start < t_end <= 1, got [{t_start}, {t_end}]")
    if int(n_exponent) != n_exponent or n_exponent < 0:
        raise DomainError("n_exponent must be a nonnegative integer")
    n = 1 << int(n_exponent)
    pts = t_start + (t_end - t_start) * (np.arange(n + 1) / n)
    pts[0], pts[-1] = t_start, t_end
    return TimeGrid(pts)


class RngStream:
    """Counter-based stream: Philox4x64 keyed by ``(master_seed, stream_id)``.

    ``substream`` offsets the high word of the 256-bit counter, which gives
    disjoint sub-sequences of the same keyed stream.
    """

    __slots__ = ("master_seed", "stream_id", "substream", "_gen")

    def __init__(self, master_seed: int, stream_id: int, substream: int = 0):
        self.master_seed = int(master_seed) & _U64
        self.stream_id = int(stream_id) & _U64
        self.substream = int(substream) & _U64
        key = np.array([self.master_seed, self.stream_id], dtype=np.uint64)
        counter = np.array([0, 0, 0, self.substream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key, counter=counter))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def uniform(self, size=None):
        return self._gen.random(size)

    def __repr__(self):
        return f"RngStream(master_seed={self.master_seed}, stream_id={self.stream_id}, substream={self.substream})"


def derive_stream(master_seed: int, stream_id: int, substream: int = 0) -> RngStream:
    return RngStream(master_seed, stream_id, substream)


@dataclass(frozen=True)
class VolatilityField:
    """Evaluatable volatility sigma(t, x) >= 0 plus the regularity flags the
    divergence theorems need. Flags are declared, never inferred."""

    func: Callable[[float, np.ndarray], np.ndarray]
    name: str = "sigma"
    time_domain: tuple[float, float] = (0.0, 1.0)
    state_domain: tuple[float, float] = (-math.inf, math.inf)
    singular_at_end: bool = False
    markov: bool = True
    markov_time_homogeneous: bool = False
    bounded: bool = True
    lipschitz: bool = True
    bounds: tuple[float, float] = (0.0, math.inf)

    def eval(self, t: float, x, check: bool = True) -> np.ndarray:
        if check:
            t0, t1 = self.time_domain
            if not (t0 - 1e-15 <= t <= t1 + 1e-15) or (self.singular_at_end and t >= t1):
                raise DomainError(f"{self.name}: t={t} outside time domain {self.time_domain}")
            xa = np.asarray(x)
            lo, hi = self.state_domain
            if xa.size and (np.min(xa) < lo - 1e-12 or np.max(xa) > hi + 1e-12):
                raise DomainError(f"{self.name}: state outside {self.state_domain}")
        return np.asarray(self.func(t, x), dtype=np.float64)

    __call__ = eval

    @property
    def uniformly_positive(self) -> bool:
        return self.bounds[0] > 0.0 and math.isfinite(self.bounds[1])


def constant_field(c: float, name: str | None = None) -> VolatilityField:
    c = float(c)
    if c < 0:
        raise DomainError("volatility fields are stored nonnegative")

    def func(t, x):
        return np.full(np.shape(x), c)

    return VolatilityField(func, name=name or f"const({c:g})", markov_time_homogeneous=True,
                           bounds=(c, c))


def sine_field(level: float = 1.5, amplitude: float = 0.5) -> VolatilityField:
    """sigma(x) = level + amplitude * sin(x); Lipschitz and uniformly positive
    when amplitude < level."""
    if abs(amplitude) >= level:
        raise DomainError("need |amplitude| < level for a positive field")

    def func(t, x):
        return level + amplitude * np.sin(x)

    return VolatilityField(func, name=f"{level:g}+{amplitude:g}sin(x)", markov_time_homogeneous=True,
                           bounds=(level - abs(amplitude), level + abs(amplitude)))


@dataclass(frozen=True)
class MartingaleModel:
    """dX = vol(t, X) dB started at ``x0``; ``[0,1]`` models absorb at 0 and 1."""

    x0: float
    vol: VolatilityField
    state_domain: str = "real"
    boundary: str = "none"
    tag: str = ""

    def __post_init__(self):
        if self.state_domain not in ("real", "unit"):
            raise DomainError(f"unknown state domain {self.state_domain!r}")
        if self.boundary not in ("none", "absorbing"):
            raise DomainError(f"unknown boundary rule {self.boundary!r}")
        if not math.isfinite(self.x0):
            raise DomainError("x0 must be finite")
        if self.state_domain == "unit":
            if not 0.0 <= self.x0 <= 1.0:
                raise DomainError("x0 must lie in [0, 1] for a [0,1]-valued model")
            t0, t1 = self.vol.time_domain
            for t in np.linspace(t0, t1, 5)[:-1]:
                edge = self.vol.eval(float(t), np.array([0.0, 1.0]))
                if np.any(np.abs(edge) > 1e-12):
                    raise DomainError("[0,1]-valued models need vol(t,0) = vol(t,1) = 0")
        if not self.tag:
            object.__setattr__(self, "tag", self.vol.name)


def brownian(scale: float = 1.0, x0: float = 0.0) -> MartingaleModel:
    return MartingaleModel(x0, constant_field(scale), tag=f"{scale:g}*BM")


def constant_martingale(x0: float = 0.0) -> MartingaleModel:
    return MartingaleModel(x0, constant_field(0.0, name="delta"), tag="P_delta")


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """K simulated paths sampled on ``grid``.

    ``realized_qv[k, i]`` is sum sigma^2 dt over the substeps of cell i;
    ``integrals`` holds any extra running integrals requested at simulation time
    (same shape as ``realized_qv``); ``pre_snap`` keeps the states at ``t_cut``
    when the terminal values were drawn by the Bernoulli snap.
    """

    grid: TimeGrid
    states: np.ndarray
    realized_qv: np.ndarray
    model_tag: str = ""
    master_seed: int = 0
    integrals: dict = field(default_factory=dict)
    pre_snap: np.ndarray | None = None

    def __post_init__(self):
        k, m = self.states.shape
        if m != self.grid.n_cells + 1 or self.realized_qv.shape != (k, self.grid.n_cells):
            raise DomainError("ensemble arrays do not match the grid")

    @property
    def K(self) -> int:
        return self.states.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.states[:, -1]

    def save(self, path) -> None:
        header = _MAGIC + struct.pack("<IQQ", ENSEMBLE_FORMAT_VERSION, self.K, self.grid.n_cells)
        tag = self.model_tag.encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.grid.points, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.states, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.realized_qv, dtype="<f8").tobytes())
            fh.write(_META + struct.pack("<QI", int(self.master_seed) & _U64, len(tag)) + tag)

    @classmethod
    def load(cls, path) -> "PathEnsemble":
        raw = Path(path).read_bytes()
        if raw[:4] != _MAGIC:
            raise DomainError(f"{path}: not a path-ensemble file")
        version, k, n = struct.unpack_from("<IQQ", raw, 4)
        if version != ENSEMBLE_FORMAT_VERSION:
            raise DomainError(f"{path}: unsupported format version {version}")
        off = 4 + struct.calcsize("<IQQ")

        def take(count):
            nonlocal off
            arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).astype(np.float64)
            off += 8 * count
            return arr

        pts = take(n + 1)
        states = take(k * (n + 1)).reshape(k, n + 1)
        qv = take(k * n).reshape(k, n)
        seed, tag = 0, ""
        if raw[off:off + 4] == _META:
            seed, length = struct.unpack_from("<QI", raw, off + 4)
            start = off + 4 + struct.calcsize("<QI")
            tag = raw[start:start + length].decode("utf-8")
        clock = "t" if pts[0] >= 0 and pts[-1] <= 1 else "r"
        return cls(TimeGrid(pts, clock=clock), states, qv, model_tag=tag, master_seed=seed)

    def to_csv(self, path) -> None:
        k, m = self.states.shape
        rows = np.column_stack([
            np.repeat(np.arange(k), m),
            np.tile(self.grid.points, k),
            self.states.ravel(),
        ])
        np.savetxt(path, rows, fmt=["%d", "%.17g", "%.17g"], delimiter=",",
                   header="path_id,t,x", comments="")


def mc_mean(values) -> tuple[float, float]:
    """Sample mean and its standard error."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise DomainError("no samples")
    if v.size == 1 or np.ptp(v) == 0.0:
        return float(v.flat[0]), 0.0
    return float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(v.size))

"""Toy ocean model: sea level -> geostrophic velocities -> kinetic energy series.

The function under test maps a sea-level field ``eta(t, y, x)`` together with its
coordinates and the constants ``G`` (gravity) and ``F`` (Coriolis parameter) to the
area-mean kinetic energy per time step::

    u = -(G/F) d(eta)/dy,   v = (G/F) d(eta)/dx,   e = 0.5 * mean(u**2 + v**2)

Two implementations exist.  ``Variant.CYCLIC`` wraps the centered stencil around
periodic boundaries; ``Variant.NONCYCLIC`` falls back to one-sided differences at
the edges, which is the seeded defect the metamorphic tests are meant to expose.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import SingularParameterError, ValidationError

OMEGA = 7.2921e-5
DEFAULT_G = 9.81
DEFAULT_F = 2.0 * OMEGA * math.sin(math.radians(30.0))


class Variant(str, enum.Enum):
    CYCLIC = "cyclic"
    NONCYCLIC = "noncyclic"

    @classmethod
    def coerce(cls, value) -> "Variant":
        return value if isinstance(value, cls) else cls(str(value))


@dataclass(frozen=True)
class GridSpec:
    nx: int = 20
    ny: int = 10
    nt: int = 30
    x0: float = 0.0
    y0: float = 0.0
    t0: float = 0.0
    dx: float = 1000.0
    dy: float = 1000.0
    dt: float = 3600.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2 or self.nt < 1:
            raise ValidationError(f"grid too small: nx={self.nx}, ny={self.ny}, nt={self.nt}")
        for name in ("dx", "dy", "dt"):
            step = getattr(self, name)
            if not (np.isfinite(step) and step > 0):
                raise ValidationError(f"{name} must be positive and finite, got {step}")
        for name in ("x0", "y0", "t0"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nt, self.ny, self.nx)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        return cls(**data)

    @classmethod
    def parse(cls, text: str, **overrides) -> "GridSpec":
        """Parse an ``NYxNXxNT`` string such as ``10x20x30``."""
        try:
            ny, nx, nt = (int(part) for part in text.lower().split("x"))
        except ValueError:
            raise ValidationError(f"grid must look like NYxNXxNT, got {text!r}") from None
        return cls(nx=nx, ny=ny, nt=nt, **overrides)


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


def _strictly_monotone(coords: np.ndarray) -> bool:
    steps = np.diff(coords)
    return bool(np.all(steps > 0) or np.all(steps < 0))


@dataclass(frozen=True, eq=False)
class ModelInput:
    """One point of the input space: sea level, coordinates and constants."""

    eta: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    ts: np.ndarray
    G: float = DEFAULT_G
    F: float = DEFAULT_F

    def __post_init__(self):
        for name in ("eta", "xs", "ys", "ts"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "G", float(self.G))
        object.__setattr__(self, "F", float(self.F))
        self._validate()

    def _validate(self):
        if self.eta.ndim != 3:
            raise ValidationError(f"eta must be 3-D (t, y, x), got shape {self.eta.shape}")
        nt, ny, nx = self.eta.shape
        for name, n in (("xs", nx), ("ys", ny), ("ts", nt)):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ValidationError(f"{name} has shape {arr.shape}, expected ({n},)")
        arrays = (self.eta, self.xs, self.ys, self.ts, np.array([self.G, self.F]))
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValidationError("model input contains non-finite values")
        for name in ("xs", "ys", "ts"):
            arr = getattr(self, name)
            if arr.size > 1 and not _strictly_monotone(arr):
                raise ValidationError(f"{name} is not strictly monotone")
        if self.F == 0.0:
            raise SingularParameterError("Coriolis parameter F is zero")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.eta.shape

    def __eq__(self, other):
        if not isinstance(other, ModelInput):
            return NotImplemented
        return (
            self.G == other.G
            and self.F == other.F
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("eta", "xs", "ys", "ts")
            )
        )

    def to_json(self) -> dict:
        nt, ny, nx = self.shape
        return {
            "grid": {"nt": nt, "ny": ny, "nx": nx},
            "eta": self.eta.tolist(),
            "xs": self.xs.tolist(),
            "ys": self.ys.tolist(),
            "ts": self.ts.tolist(),
            "G": self.G,
            "F": self.F,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ModelInput":
        try:
            inp = cls(
                eta=data["eta"], xs=data["xs"], ys=data["ys"], ts=data["ts"],
                G=data["G"], F=data["F"],
            )
        except KeyError as exc:
            raise ValidationError(f"model input JSON missing key {exc}") from None
        grid = data.get("grid")
        if grid and tuple(grid[k] for k in ("nt", "ny", "nx")) != inp.shape:
            raise ValidationError(f"grid header {grid} disagrees with eta shape {inp.shape}")
        return inp

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "ModelInput":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class VelocityFields:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", _frozen(self.u))
        object.__setattr__(self, "v", _frozen(self.v))
        if self.u.shape != self.v.shape:
            raise ValidationError(f"u {self.u.shape} and v {self.v.shape} differ in shape")


@dataclass(frozen=True, eq=False)
class EnergySeries:
    e: np.ndarray
    ts: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "e", _frozen(self.e))
        if self.ts is not None:
            object.__setattr__(self, "ts", _frozen(self.ts))

    def __len__(self):
        return len(self.e)

    def to_csv(self, path) -> None:
        ts = self.ts if self.ts is not None else np.arange(len(self.e), dtype=float)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "e"])
            for t, e in zip(ts, self.e):
                writer.writerow([repr(float(t)), repr(float(e))])


def make_coordinates(spec: GridSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xs = spec.x0 + np.arange(spec.nx) * spec.dx
    ys = spec.y0 + np.arange(spec.ny) * spec.dy
    ts = spec.t0 + np.arange(spec.nt) * spec.dt
    return xs, ys, ts


def random_sea_level(
    spec: GridSpec,
    seed: int,
    amplitude: float = 1.0,
    G: float = DEFAULT_G,
    F: float = DEFAULT_F,
) -> ModelInput:
    """Uniform white-noise sea level on ``[-amplitude, amplitude]``."""
    if not amplitude > 0:
        raise ValidationError(f"amplitude must be positive, got {amplitude}")
    rng = np.random.default_rng(seed)
    eta = rng.uniform(-amplitude, amplitude, size=spec.shape)
    xs, ys, ts = make_coordinates(spec)
    return ModelInput(eta=eta, xs=xs, ys=ys, ts=ts, G=G, F=F)


def _derivative(field, coords, axis, cyclic):
    """Centered first derivative of ``field`` along ``axis``.

    ``coords`` may carry leading batch dimensions matching ``field``; its last axis
    runs along the differentiated direction.
    """
    field = np.moveaxis(field, axis, -1)
    n = field.shape[-1]
    # coords (..., n) -> broadcastable against field (..., other axes, n)
    pad = field.ndim - coords.ndim
    c = coords.reshape(coords.shape[:-1] + (1,) * pad + (n,))
    out = np.empty(np.broadcast_shapes(field.shape, c.shape))
    out[..., 1:-1] = (field[..., 2:] - field[..., :-2]) / (c[..., 2:] - c[..., :-2])
    if cyclic:
        # wrap distance from the uniform spacing of the grid
        step = (c[..., -1:] - c[..., :1]) / (n - 1)
        out[..., :1] = (field[..., 1:2] - field[..., -1:]) / (2.0 * step)
        out[..., -1:] = (field[..., :1] - field[..., -2:-1]) / (2.0 * step)
    else:
        out[..., :1] = (field[..., 1:2] - field[..., :1]) / (c[..., 1:2] - c[..., :1])
        out[..., -1:] = (field[..., -1:] - field[..., -2:-1]) / (c[..., -1:] - c[..., -2:-1])
    return np.moveaxis(out, -1, axis)


def velocity_arrays(eta, xs, ys, G, F, variant):
    """Array-level kernel behind :func:`velocities`; accepts leading batch axes.

    ``eta`` has shape ``(..., nt, ny, nx)``, ``xs`` ``(..., nx)``, ``ys`` ``(..., ny)``
    and ``G``/``F`` shape ``(...)``.  No validation is done here.
    """
    cyclic = Variant.coerce(variant) is Variant.CYCLIC
    eta = np.asarray(eta, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    ratio = (np.asarray(G, dtype=np.float64) / np.asarray(F, dtype=np.float64))[..., None, None, None]
    # xs/ys gain a time axis so they broadcast over (nt, ny, nx)
    d_dx = _derivative(eta, xs[..., None, None, :], -1, cyclic)
    d_dy = _derivative(eta, ys[..., None, None, :], -2, cyclic)
    return -ratio * d_dy, ratio * d_dx


def energy_arrays(eta, xs, ys, G, F, variant) -> np.ndarray:
    u, v = velocity_arrays(eta, xs, ys, G, F, variant)
    return 0.5 * np.mean(u * u + v * v, axis=(-2, -1))


def velocities(inp: ModelInput, variant) -> VelocityFields:
    if inp.F == 0.0:
        raise SingularParameterError("Coriolis parameter F is zero")
    for name in ("xs", "ys"):
        if not _strictly_monotone(getattr(inp, name)):
            raise ValidationError(f"{name} is not strictly monotone")
    u, v = velocity_arrays(inp.eta, inp.xs, inp.ys, inp.G, inp.F, variant)
    return VelocityFields(u=u, v=v)


def kinetic_energy(vel: VelocityFields) -> EnergySeries:
    # uniform grid: the area integrals reduce to an unweighted mean
    return EnergySeries(e=0.5 * np.mean(vel.u * vel.u + vel.v * vel.v, axis=(-2, -1)))


def energy_pipeline(inp: ModelInput, variant) -> EnergySeries:
    """The function under test: sea level in, kinetic-energy time series out."""
    series = kinetic_energy(velocities(inp, variant))
    return EnergySeries(e=series.e, ts=inp.ts)

"""Power-system test cases and clean measurement streams.

The network is modelled with the DC power-flow approximation: the state is
the vector of non-slack bus voltage angles (radians), branch flows are
``(theta_i - theta_j) / x_ij`` and a bus injection is the sum of the flows
leaving the bus.  Voltage-magnitude meters observe a flat 1.0 p.u. profile,
so the measurement model is affine::

    z = H @ x + offset + e

with zero Jacobian rows (and a unit offset) for the voltage channel.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "CaseError",
    "UnobservableError",
    "Bus",
    "Branch",
    "MeasurementDef",
    "GridCase",
    "LoadProfile",
    "case_from_dict",
    "load_case",
    "bundled_case",
    "bundled_case_names",
    "default_profile",
    "load_profile",
    "simulate_day",
]

BUS_TYPES = ("slack", "load", "gen")
MEASUREMENT_KINDS = ("flow", "injection", "voltage")
FLAT_VOLTAGE = 1.0


class CaseError(ValueError):
    """Raised when a case description is malformed."""


class UnobservableError(CaseError):
    """Raised when the measurement set cannot observe every state."""


@dataclass(frozen=True)
class Bus:
    id: int
    type: str
    base_load: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    x: float

    @property
    def key(self) -> tuple[int, int]:
        return (self.from_bus, self.to_bus)


@dataclass(frozen=True)
class MeasurementDef:
    """One meter.

    ``location`` is a ``(from, to)`` tuple for flows and a bus id otherwise.
    ``owner_bus`` groups the meter with a local detector: the from-bus for
    flows, the bus itself for injections and voltages.
    """

    kind: str
    location: int | tuple[int, int]
    owner_bus: int
    sigma: float = 0.01

    @property
    def label(self) -> str:
        if self.kind == "flow":
            return f"flow{self.location[0]}-{self.location[1]}"
        return f"{self.kind}{self.location}"


@dataclass(frozen=True, eq=False)
class GridCase:
    """Validated bus/branch topology with its linear measurement model.

    Build instances with :func:`case_from_dict` or :func:`load_case`; the
    constructor does not validate.
    """

    name: str
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    measurements: tuple[MeasurementDef, ...]
    H: np.ndarray = field(repr=False)
    offset: np.ndarray = field(repr=False)

    @property
    def state_dim(self) -> int:
        return self.H.shape[1]

    @property
    def meas_dim(self) -> int:
        return self.H.shape[0]

    @property
    def bus_ids(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses)

    @property
    def slack_bus(self) -> int:
        return next(b.id for b in self.buses if b.type == "slack")

    @property
    def state_buses(self) -> tuple[int, ...]:
        """Bus ids whose angles make up the state vector, in order."""
        return tuple(b.id for b in self.buses if b.type != "slack")

    @cached_property
    def sigmas(self) -> np.ndarray:
        out = np.array([m.sigma for m in self.measurements])
        out.setflags(write=False)
        return out

    @cached_property
    def owner_buses(self) -> np.ndarray:
        out = np.array([m.owner_bus for m in self.measurements])
        out.setflags(write=False)
        return out

    def measurements_of(self, bus: int) -> np.ndarray:
        """Indices of the measurements owned by ``bus``."""
        return np.flatnonzero(self.owner_buses == bus)

    @cached_property
    def bus_susceptance(self) -> np.ndarray:
        """Reduced DC susceptance matrix over the state buses."""
        pos = {b: i for i, b in enumerate(self.state_buses)}
        B = np.zeros((self.state_dim, self.state_dim))
        for br in self.branches:
            y = 1.0 / br.x
            i, j = pos.get(br.from_bus), pos.get(br.to_bus)
            if i is not None:
                B[i, i] += y
            if j is not None:
                B[j, j] += y
            if i is not None and j is not None:
                B[i, j] -= y
                B[j, i] -= y
        B.setflags(write=False)
        return B

    def h(self, x: np.ndarray) -> np.ndarray:
        """Noise-free measurements for state(s) ``x`` (last axis = states)."""
        return np.asarray(x) @ self.H.T + self.offset

    def solve_dc(self, loads: np.ndarray) -> np.ndarray:
        """Angles for per-bus net loads (p.u., positive = consumption).

        ``loads`` may be ``(n_bus,)`` or ``(samples, n_bus)``; the slack bus
        absorbs the imbalance.
        """
        loads = np.asarray(loads, dtype=float)
        keep = [i for i, b in enumerate(self.buses) if b.type != "slack"]
        injections = -loads[..., keep]
        return np.linalg.solve(self.bus_susceptance, injections.T).T

    @property
    def base_loads(self) -> np.ndarray:
        return np.array([b.base_load for b in self.buses])


def _jacobian(
    buses: Sequence[Bus],
    branches: Sequence[Branch],
    measurements: Sequence[MeasurementDef],
) -> tuple[np.ndarray, np.ndarray]:
    state_buses = [b.id for b in buses if b.type != "slack"]
    pos = {b: i for i, b in enumerate(state_buses)}

    def flow_row(f: int, t: int, x: float) -> np.ndarray:
        row = np.zeros(len(state_buses))
        if f in pos:
            row[pos[f]] += 1.0 / x
        if t in pos:
            row[pos[t]] -= 1.0 / x
        return row

    by_key = {br.key: br for br in branches}
    H = np.zeros((len(measurements), len(state_buses)))
    offset = np.zeros(len(measurements))
    for k, m in enumerate(measurements):
        if m.kind == "flow":
            f, t = m.location
            if (f, t) in by_key:
                H[k] = flow_row(f, t, by_key[f, t].x)
            else:
                H[k] = -flow_row(t, f, by_key[t, f].x)
        elif m.kind == "injection":
            for br in branches:
                if br.from_bus == m.location:
                    H[k] += flow_row(br.from_bus, br.to_bus, br.x)
                elif br.to_bus == m.location:
                    H[k] -= flow_row(br.from_bus, br.to_bus, br.x)
        else:
            offset[k] = FLAT_VOLTAGE
    return H, offset


def case_from_dict(doc: dict, name: str | None = None) -> GridCase:
    """Validate a case document (see the JSON schema in the README)."""
    try:
        buses = tuple(
            Bus(int(b["id"]), str(b["type"]), float(b.get("base_load", 0.0)))
            for b in doc["buses"]
        )
        branches = tuple(
            Branch(int(br["from"]), int(br["to"]), float(br["x"]))
            for br in doc["branches"]
        )
        raw_meas = list(doc["measurements"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CaseError(f"malformed case document: {exc!r}") from exc

    ids = [b.id for b in buses]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise CaseError(f"duplicate bus ids: {dup}")
    bad_types = [b.id for b in buses if b.type not in BUS_TYPES]
    if bad_types:
        raise CaseError(f"unknown bus type on buses {bad_types}")
    if sum(b.type == "slack" for b in buses) != 1:
        raise CaseError("exactly one slack bus is required")
    id_set = set(ids)
    seen = set()
    for br in branches:
        if br.from_bus not in id_set or br.to_bus not in id_set:
            raise CaseError(f"branch {br.key} references an unknown bus")
        if br.from_bus == br.to_bus or br.x == 0.0:
            raise CaseError(f"degenerate branch {br.key}")
        if br.key in seen or br.key[::-1] in seen:
            raise CaseError(f"parallel branch {br.key} is not supported")
        seen.add(br.key)

    measurements = []
    for raw in raw_meas:
        kind = raw.get("kind")
        sigma = float(raw.get("sigma", 0.01))
        if kind not in MEASUREMENT_KINDS:
            raise CaseError(f"unknown measurement kind {kind!r}")
        if not sigma > 0:
            raise CaseError(f"measurement sigma must be positive, got {sigma}")
        loc = raw.get("loc")
        if kind == "flow":
            f, t = (int(v) for v in loc)
            if (f, t) not in seen and (t, f) not in seen:
                raise CaseError(f"flow measurement on missing branch {(f, t)}")
            measurements.append(MeasurementDef(kind, (f, t), f, sigma))
        else:
            if int(loc) not in id_set:
                raise CaseError(f"{kind} measurement on unknown bus {loc}")
            measurements.append(MeasurementDef(kind, int(loc), int(loc), sigma))
    measurements = tuple(measurements)

    H, offset = _jacobian(buses, branches, measurements)
    n_state = H.shape[1]
    if H.shape[0] <= n_state:
        raise UnobservableError(
            f"need more measurements than states (d={H.shape[0]}, N={n_state})"
        )
    rank = np.linalg.matrix_rank(H)
    if rank < n_state:
        raise UnobservableError(
            f"Jacobian rank {rank} < {n_state} states; the case is unobservable"
        )
    H.setflags(write=False)
    offset.setflags(write=False)
    return GridCase(
        name=name or str(doc.get("name", "case")),
        buses=buses,
        branches=branches,
        measurements=measurements,
        H=H,
        offset=offset,
    )


def load_case(path: str | Path) -> GridCase:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CaseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return case_from_dict(doc, name=doc.get("name", path.stem))


def bundled_case_names() -> tuple[str, ...]:
    data = resources.files("gridshield") / "data"
    return tuple(sorted(p.name[:-5] for p in data.iterdir() if p.name.endswith(".json")))


def bundled_case(name: str = "ieee14") -> GridCase:
    """Load one of the cases shipped in ``gridshield/data``."""
    if name not in bundled_case_names():
        raise CaseError(f"no bundled case {name!r}; choose from {bundled_case_names()}")
    res = resources.files("gridshield") / "data" / f"{name}.json"
    return case_from_dict(json.loads(res.read_text()), name=name)


@dataclass(frozen=True)
class LoadProfile:
    """Diurnal load scaling.

    Sample ``k`` of a stream uses ``shape[k % len(shape)]`` times each bus's
    base load, with independent relative Gaussian noise of ``noise_sigma``.
    """

    shape: np.ndarray
    noise_sigma: float = 0.0

    def __post_init__(self):
        shape = np.asarray(self.shape, dtype=float)
        if shape.ndim != 1 or shape.size == 0:
            raise ValueError("profile shape must be a non-empty 1-D sequence")
        if np.any(shape <= 0):
            raise ValueError("profile scaling factors must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        shape.setflags(write=False)
        object.__setattr__(self, "shape", shape)

    def factors(self, samples: int) -> np.ndarray:
        return self.shape[np.arange(samples) % self.shape.size]


def default_profile(samples_per_day: int = 21600, noise_sigma: float = 0.0) -> LoadProfile:
    """Smooth morning/evening double-peak curve between roughly 0.7 and 1.3."""
    k = np.arange(samples_per_day)
    phase = 2 * np.pi * k / samples_per_day
    shape = 1.0 + 0.3 * np.sin(phase - np.pi / 2) + 0.1 * np.sin(2 * phase)
    return LoadProfile(shape, noise_sigma)


def load_profile(path: str | Path) -> LoadProfile:
    doc = json.loads(Path(path).read_text())
    unknown = set(doc) - {"shape", "noise_sigma"}
    if unknown:
        raise ValueError(f"unknown profile keys: {sorted(unknown)}")
    return LoadProfile(np.asarray(doc["shape"], dtype=float), float(doc.get("noise_sigma", 0.0)))


def true_states(
    case: GridCase, profile: LoadProfile, samples: int, rng: np.random.Generator
) -> np.ndarray:
    factors = profile.factors(samples)
    loads = factors[:, None] * case.base_loads[None, :]
    if profile.noise_sigma > 0:
        loads = loads * (1.0 + profile.noise_sigma * rng.standard_normal(loads.shape))
    return case.solve_dc(loads)


def simulate_day(
    case: GridCase,
    profile: LoadProfile,
    samples: int,
    seed=0,
    magnitude_floor: float = 1e-3,
) -> np.ndarray:
    """Clean measurement stream of shape ``(samples, d)``.

    Each row is ``h(x_true) + e`` with ``e_i ~ N(0, (sigma_i * |h_i|)^2)``;
    ``|h_i|`` is floored at ``magnitude_floor`` so zero-injection meters still
    carry a little noise.  The RNG is created from ``seed`` for this call
    only; load noise is drawn before measurement noise.
    """
    if samples <= 0:
        raise ValueError("samples must be positive")
    rng = np.random.default_rng(seed)
    exact = case.h(true_states(case, profile, samples, rng))
    noise_std = case.sigmas[None, :] * np.maximum(np.abs(exact), magnitude_floor)
    return exact + noise_std * rng.standard_normal(exact.shape)


def clean_measurements(case: GridCase, loads: Iterable[float]) -> np.ndarray:
    """Exact measurement vector for one load snapshot (helper for tests/demos)."""
    return case.h(case.solve_dc(np.asarray(list(loads), dtype=float)))

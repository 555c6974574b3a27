"""Labelled attack datasets built from clean grid and network streams.

Event placement is a renewal process: scanning the samples in order, every
sample that is not already inside an event starts a new event with
probability ``attack_fraction``.  An event covers ``burst_length``
consecutive samples, so the expected attacked share is
``L / (L + (1 - p) / p)`` for mean event length ``L``; with ``p = 0.05`` and
ten-sample bursts that is about 34 % of the stream.

The scenario RNG is consumed in a fixed order: placement uniforms, then
targets for every event, then severities, then FDI signs.  Mixtures draw
the event type of each potential start from a second generator seeded with
``[seed, 1]``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from .gridmodel import GridCase, LoadProfile, simulate_day
from .netsim import QueueParams, channels_from_rates, scale_channels
from .sestimator import compute_ii, measurement_sigmas, projection_matrix

__all__ = [
    "ATTACK_KINDS",
    "HIGH_SEVERITY",
    "LOW_SEVERITY",
    "CleanStreams",
    "Column",
    "AttackScenario",
    "AttackEvent",
    "TripleSample",
    "LabeledDataset",
    "columns_for",
    "simulate_clean",
    "place_events",
    "expected_attack_fraction",
    "low_ii_candidates",
    "make_mfdi",
    "make_cmfdi",
    "make_mdos",
    "make_mfdi_mdos",
    "make_mitm",
    "make_dataset",
]

ATTACK_KINDS = ("mfdi", "c_mfdi", "mdos", "mfdi_mdos", "mitm")
CHANNELS = ("sg", "iat", "td", "pc")
HIGH_SEVERITY = (2.0, 7.0)
LOW_SEVERITY = (1.2, 2.0)

DEFAULT_QUEUE = QueueParams(lam=10.0, mu=40.0, poll_interval=4.0)

_DEFAULT_TARGETS = {"mfdi": 2, "c_mfdi": 2, "mdos": 3, "mfdi_mdos": 4, "mitm": 1}
_DEFAULT_BURST = {"mfdi": 1, "c_mfdi": 1, "mdos": 10, "mfdi_mdos": 10, "mitm": 10}


@dataclass
class CleanStreams:
    """Un-attacked per-measurement channels, all of shape ``(samples, d)``.

    Link ``c`` carries measurement ``c``; its IAT/TD/PC belong to the same
    owner bus as the measurement.
    """

    case: GridCase
    queue: QueueParams
    sg: np.ndarray
    iat: np.ndarray
    td: np.ndarray
    pc: np.ndarray

    def __len__(self) -> int:
        return self.sg.shape[0]

    def channel(self, name: str) -> np.ndarray:
        return getattr(self, name)


def simulate_clean(
    case: GridCase,
    profile: LoadProfile,
    samples: int,
    queue: QueueParams = DEFAULT_QUEUE,
    seed=0,
) -> CleanStreams:
    """Grid measurements plus one M/M/1 link per measurement."""
    grid_seed, net_seed = np.random.SeedSequence(seed).spawn(2)
    sg = simulate_day(case, profile, samples, seed=grid_seed)
    rates = np.full(sg.shape, queue.lam)
    ch = channels_from_rates(rates, queue, np.random.default_rng(net_seed))
    return CleanStreams(case=case, queue=queue, sg=sg, iat=ch.iat, td=ch.td, pc=ch.pc)


@dataclass(frozen=True)
class Column:
    channel: str
    bus: int
    measurement: int
    label: str

    @property
    def name(self) -> str:
        return f"{self.channel}:{self.bus}:{self.label}"

    @classmethod
    def parse(cls, name: str, measurement: int) -> "Column":
        channel, bus, label = name.split(":", 2)
        return cls(channel, int(bus), measurement, label)


def columns_for(case: GridCase, channels: Sequence[str]) -> tuple[Column, ...]:
    cols = []
    for ch in channels:
        for i, m in enumerate(case.measurements):
            cols.append(Column(ch, m.owner_bus, i, m.label))
    return tuple(cols)


@dataclass(frozen=True)
class AttackScenario:
    kind: str
    attack_fraction: float = 0.05
    targets_per_event: int | None = None
    burst_length: int | None = None
    fdi_magnitude: float = 10.0
    severity: tuple[float, float] | None = None
    mfdi_probability: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not 0 < self.attack_fraction < 1:
            raise ValueError("attack_fraction must lie in (0, 1)")
        if self.burst_length is not None and self.burst_length < 1:
            raise ValueError("burst_length must be >= 1")
        if self.targets_per_event is not None and self.targets_per_event < 1:
            raise ValueError("targets_per_event must be >= 1")
        if self.fdi_magnitude < 0:
            raise ValueError("fdi_magnitude must be non-negative")
        sev = self.severity_range
        if sev[0] < 1 or sev[1] < sev[0]:
            raise ValueError(f"invalid severity range {sev}")
        if not 0 <= self.mfdi_probability <= 1:
            raise ValueError("mfdi_probability must lie in [0, 1]")

    @property
    def targets(self) -> int:
        return self.targets_per_event or _DEFAULT_TARGETS[self.kind]

    @property
    def burst(self) -> int:
        return self.burst_length or _DEFAULT_BURST[self.kind]

    @property
    def severity_range(self) -> tuple[float, float]:
        if self.severity is None:
            return LOW_SEVERITY if self.kind == "c_mfdi" else HIGH_SEVERITY
        if np.isscalar(self.severity):
            return (float(self.severity), float(self.severity))
        lo, hi = self.severity
        return (float(lo), float(hi))

    @property
    def is_null(self) -> bool:
        """True when injected events leave every feature unchanged."""
        no_net = self.severity_range == (1.0, 1.0)
        if self.kind == "mitm":
            return no_net
        if self.kind in ("mdos", "mfdi_mdos"):
            return False
        return no_net and self.fdi_magnitude == 0


@dataclass
class AttackEvent:
    kind: str
    start: int
    length: int
    buses: tuple[int, ...]
    measurements: tuple[int, ...]
    severity: float
    magnitudes: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "AttackEvent":
        doc = dict(doc)
        for key in ("buses", "measurements", "magnitudes"):
            doc[key] = tuple(doc.get(key, ()))
        return cls(**doc)


@dataclass
class TripleSample:
    index: int
    features: np.ndarray
    label: int
    attack_kind: str


@dataclass
class LabeledDataset:
    """Feature matrix with ground truth.

    ``layout`` is ``"cross"`` for ``[z_SG, z_IAT, z_TD]`` rows (3d columns)
    or ``"pc"`` for packet-count rows (d columns).
    """

    features: np.ndarray
    labels: np.ndarray
    attack_kind: np.ndarray
    columns: tuple[Column, ...]
    layout: str
    scenario: AttackScenario | None = None
    case_name: str = ""
    events: list[AttackEvent] = field(default_factory=list)

    def __post_init__(self):
        if self.features.shape != (len(self.labels), len(self.columns)):
            raise ValueError("feature matrix does not match labels/columns")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0/1")

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[TripleSample]:
        for k in range(len(self)):
            yield self[k]

    def __getitem__(self, k: int) -> TripleSample:
        return TripleSample(k, self.features[k], int(self.labels[k]), str(self.attack_kind[k]))

    @property
    def attacked_count(self) -> int:
        return int(self.labels.sum())

    @property
    def channels(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(c.channel for c in self.columns))

    def select(self, channels: str | Sequence[str]) -> "LabeledDataset":
        """Restrict the features to some channels (labels unchanged)."""
        if isinstance(channels, str):
            channels = (channels,)
        missing = set(channels) - set(self.channels)
        if missing:
            raise KeyError(f"dataset has no {sorted(missing)} channel(s)")
        keep = [i for i, c in enumerate(self.columns) if c.channel in channels]
        return replace(
            self,
            features=self.features[:, keep],
            columns=tuple(self.columns[i] for i in keep),
        )

    def bus_groups(self) -> list[tuple[int, np.ndarray]]:
        """``(bus, column indices)`` for every bus owning at least one column."""
        buses = np.array([c.bus for c in self.columns])
        return [(int(b), np.flatnonzero(buses == b)) for b in sorted(set(buses.tolist()))]

    def events_mask(self) -> np.ndarray:
        """Labels reconstructed from the event list."""
        y = np.zeros(len(self), dtype=np.int8)
        for ev in self.events:
            y[ev.start:ev.start + ev.length] = 1
        return y


def expected_attack_fraction(scenario: AttackScenario) -> float:
    """Long-run attacked share under renewal placement (end effects ignored)."""
    p = scenario.attack_fraction
    if scenario.kind == "mfdi_mdos":
        q = scenario.mfdi_probability
        mean_len = q * 1 + (1 - q) * scenario.burst
    else:
        mean_len = scenario.burst
    return mean_len / (mean_len + (1 - p) / p)


def place_events(
    n: int, p: float, lengths: np.ndarray | int, rng: np.random.Generator
) -> list[tuple[int, int]]:
    """``(start, length)`` pairs from one pass of the renewal scan.

    ``lengths`` gives the length an event would have if it started at each
    sample (or one length for all).  Events are truncated at the stream end.
    """
    u = rng.random(n)
    lengths = np.broadcast_to(np.asarray(lengths), (n,))
    out = []
    k = 0
    while k < n:
        if u[k] < p:
            L = int(min(lengths[k], n - k))
            out.append((k, L))
            k += L
        else:
            k += 1
    return out


def _draw_severity(rng: np.random.Generator, sev: tuple[float, float]) -> float:
    lo, hi = sev
    return float(rng.uniform(lo, hi)) if hi > lo else lo


def low_ii_candidates(case: GridCase, quantile: float = 0.25) -> np.ndarray:
    """Measurements whose innovation index is in the lowest ``quantile``.

    II is evaluated once, from the projection matrix at nominal load with
    magnitude-proportional weights.
    """
    z0 = case.h(case.solve_dc(case.base_loads))
    ii = compute_ii(np.diag(projection_matrix(case, measurement_sigmas(case, z0))))
    cut = np.quantile(ii, quantile)
    return np.flatnonzero(ii <= cut)


class _Builder:
    """Mutable working copy of the clean streams for one dataset build."""

    def __init__(self, clean: CleanStreams, channels: Sequence[str]):
        self.clean = clean
        self.case = clean.case
        self.channels = tuple(channels)
        self.data = {ch: clean.channel(ch).copy() for ch in CHANNELS}
        n = len(clean)
        self.labels = np.zeros(n, dtype=np.int8)
        self.kind = np.full(n, "", dtype=object)
        self.events: list[AttackEvent] = []

    def links_of(self, buses: Sequence[int]) -> np.ndarray:
        return np.flatnonzero(np.isin(self.case.owner_buses, list(buses)))

    def scale_network(self, rows: slice, links: np.ndarray, severity: float, which=("iat", "td")):
        clean = self.clean
        ch = scale_channels(clean.iat[rows][:, links], clean.pc[rows][:, links], severity, clean.queue)
        for name in which:
            self.data[name][rows, links] = getattr(ch, name)

    def mark(self, ev: AttackEvent):
        rows = slice(ev.start, ev.start + ev.length)
        self.labels[rows] = 1
        self.kind[rows] = ev.kind
        self.events.append(ev)

    def fdi(self, ev: AttackEvent, signs: np.ndarray):
        rows = slice(ev.start, ev.start + ev.length)
        meas = np.asarray(ev.measurements)
        sg = self.data["sg"]
        err = ev.magnitudes[0] * self.case.sigmas[meas] * np.maximum(np.abs(sg[rows, meas]), 1e-3)
        sg[rows, meas] += signs * err
        self.scale_network(rows, self.links_of(ev.buses), ev.severity)

    def dos(self, ev: AttackEvent):
        rows = slice(ev.start, ev.start + ev.length)
        links = self.links_of(ev.buses)
        held = self.clean.sg[max(ev.start - 1, 0), links]
        self.data["sg"][rows, links] = held
        self.scale_network(rows, links, ev.severity, which=("iat", "td", "pc"))

    def finish(self, scenario: AttackScenario) -> LabeledDataset:
        feats = np.hstack([self.data[ch] for ch in self.channels])
        return LabeledDataset(
            features=feats,
            labels=self.labels,
            attack_kind=self.kind.astype(str),
            columns=columns_for(self.case, self.channels),
            layout="pc" if self.channels == ("pc",) else "cross",
            scenario=scenario,
            case_name=self.case.name,
            events=self.events,
        )


def _check(scenario: AttackScenario, kind: str | tuple[str, ...]):
    kinds = (kind,) if isinstance(kind, str) else kind
    if scenario.kind not in kinds:
        raise ValueError(f"scenario kind {scenario.kind!r} does not match {kinds}")


def _draw_targets(rng, pool, k, H=None, tries=100):
    """``k`` distinct meters; with ``H`` given their rows must be independent."""
    for _ in range(tries):
        t = np.sort(rng.choice(pool, k, replace=False))
        if H is None or np.linalg.matrix_rank(H[t]) == k:
            return t
    raise ValueError(f"no {k} meters with independent Jacobian rows in the eligible pool")


def _fdi_events(b: _Builder, scenario, placed, rng, candidates=None, kind="mfdi", independent=False):
    case = b.case
    pool = np.arange(case.meas_dim) if candidates is None else candidates
    k = scenario.targets
    if k > len(pool):
        raise ValueError(f"targets_per_event={k} exceeds the {len(pool)} eligible measurements")
    H = case.H if independent else None
    targets = [_draw_targets(rng, pool, k, H) for _ in placed]
    sev = [_draw_severity(rng, scenario.severity_range) for _ in placed]
    signs = [rng.choice((-1.0, 1.0), k) for _ in placed]
    out = []
    for (start, length), t, s, sg in zip(placed, targets, sev, signs):
        buses = tuple(sorted({int(case.owner_buses[i]) for i in t}))
        ev = AttackEvent(kind, start, length, buses, tuple(int(i) for i in t), s,
                         (float(scenario.fdi_magnitude),))
        out.append((ev, sg))
    return out


def make_mfdi(clean: CleanStreams, scenario: AttackScenario) -> LabeledDataset:
    """Random measurements get ``fdi_magnitude`` sigma errors; owner links are scaled."""
    _check(scenario, "mfdi")
    rng = np.random.default_rng(scenario.seed)
    b = _Builder(clean, ("sg", "iat", "td"))
    placed = place_events(len(clean), scenario.attack_fraction, scenario.burst, rng)
    for ev, signs in _fdi_events(b, scenario, placed, rng):
        b.fdi(ev, signs)
        b.mark(ev)
    return b.finish(scenario)


def make_cmfdi(clean: CleanStreams, case: GridCase | None, scenario: AttackScenario) -> LabeledDataset:
    """Coordinated FDI on low-innovation-index meters, aligned with ``range(H)``.

    The injection is the least-norm ``a = H c`` that puts ``fdi_magnitude``
    sigma on each target, so most of it lands in the undetectable subspace.
    Network links of the target owners are scaled in the low severity band.
    """
    _check(scenario, "c_mfdi")
    case = case or clean.case
    rng = np.random.default_rng(scenario.seed)
    b = _Builder(clean, ("sg", "iat", "td"))
    placed = place_events(len(clean), scenario.attack_fraction, scenario.burst, rng)
    candidates = low_ii_candidates(case)
    H = case.H
    sg = b.data["sg"]
    # both ends of one branch have parallel rows; an injection cannot honour
    # independent signs on them, so coordinated targets are drawn independent
    for ev, signs in _fdi_events(b, scenario, placed, rng, candidates, kind="c_mfdi", independent=True):
        rows = slice(ev.start, ev.start + ev.length)
        t = np.asarray(ev.measurements)
        want = signs * ev.magnitudes[0] * case.sigmas[t] * np.maximum(np.abs(sg[rows, t]), 1e-3)
        c = np.linalg.pinv(H[t]) @ want.T
        a = (H @ c).T
        touched = np.flatnonzero(np.abs(a).max(axis=0) > 1e-12)
        sg[rows] += a
        ev.measurements = tuple(int(i) for i in touched)
        b.scale_network(rows, b.links_of(ev.buses), ev.severity)
        b.mark(ev)
    return b.finish(scenario)


def _bus_events(b: _Builder, scenario, placed, rng, kind):
    buses = np.array(b.case.bus_ids)
    k = scenario.targets
    if k > len(buses):
        raise ValueError(f"targets_per_event={k} exceeds the {len(buses)} buses")
    targets = [np.sort(rng.choice(buses, k, replace=False)) for _ in placed]
    sev = [_draw_severity(rng, scenario.severity_range) for _ in placed]
    return [
        AttackEvent(kind, start, length, tuple(int(x) for x in t),
                    tuple(int(i) for i in b.links_of(t)), s)
        for (start, length), t, s in zip(placed, targets, sev)
    ]


def make_mdos(clean: CleanStreams, case: GridCase | None, scenario: AttackScenario) -> LabeledDataset:
    """Ten-sample DoS bursts: victim meters go stale, victim links are flooded."""
    _check(scenario, "mdos")
    rng = np.random.default_rng(scenario.seed)
    b = _Builder(clean, ("sg", "iat", "td"))
    placed = place_events(len(clean), scenario.attack_fraction, scenario.burst, rng)
    for ev in _bus_events(b, scenario, placed, rng, "mdos"):
        b.dos(ev)
        b.mark(ev)
    return b.finish(scenario)


def make_mfdi_mdos(clean: CleanStreams, case: GridCase | None, scenario: AttackScenario) -> LabeledDataset:
    """Mixture: each event is a one-sample MFDI or a ``burst_length`` MDoS."""
    _check(scenario, "mfdi_mdos")
    rng = np.random.default_rng(scenario.seed)
    b = _Builder(clean, ("sg", "iat", "td"))
    n = len(clean)
    # event types come from their own stream so the placement, target and
    # severity draws line up with make_mfdi when every event is an FDI
    types = np.random.default_rng([scenario.seed, 1])
    is_fdi = types.random(n) < scenario.mfdi_probability
    lengths = np.where(is_fdi, 1, scenario.burst)
    placed = place_events(n, scenario.attack_fraction, lengths, rng)
    fdi_placed = [pl for pl in placed if is_fdi[pl[0]]]
    dos_placed = [pl for pl in placed if not is_fdi[pl[0]]]
    fdi = _fdi_events(b, scenario, fdi_placed, rng)
    dos = _bus_events(b, scenario, dos_placed, rng, "mdos")
    for ev, signs in fdi:
        ev.kind = "mfdi"
        b.fdi(ev, signs)
        b.mark(ev)
    for ev in dos:
        b.dos(ev)
        b.mark(ev)
    b.events.sort(key=lambda e: e.start)
    return b.finish(scenario)


def make_mitm(clean: CleanStreams, scenario: AttackScenario) -> LabeledDataset:
    """Packet-count-only dataset; one bus per event has its PC inflated."""
    _check(scenario, "mitm")
    rng = np.random.default_rng(scenario.seed)
    b = _Builder(clean, ("pc",))
    placed = place_events(len(clean), scenario.attack_fraction, scenario.burst, rng)
    for ev in _bus_events(b, scenario, placed, rng, "mitm"):
        rows = slice(ev.start, ev.start + ev.length)
        links = np.asarray(ev.measurements)
        b.data["pc"][rows, links] = clean.pc[rows][:, links] * ev.severity
        b.mark(ev)
    return b.finish(scenario)


def make_dataset(clean: CleanStreams, scenario: AttackScenario) -> LabeledDataset:
    """Dispatch on ``scenario.kind``."""
    if scenario.kind == "mfdi":
        return make_mfdi(clean, scenario)
    if scenario.kind == "c_mfdi":
        return make_cmfdi(clean, clean.case, scenario)
    if scenario.kind == "mdos":
        return make_mdos(clean, clean.case, scenario)
    if scenario.kind == "mfdi_mdos":
        return make_mfdi_mdos(clean, clean.case, scenario)
    return make_mitm(clean, scenario)

"""Radial unbalanced feeder data model, JSON file format and the tap-changer device.

Impedances in the file are in ohms, referred to the base voltage of the
branch's receiving (``to``) bus. ``base_kv`` is line-to-neutral and
``base_mva`` is the three-phase system base, so the per-phase power base is
``base_mva / 3`` and the impedance base of a bus is ``3 * base_kv**2 / base_mva``.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np

PHASES = "abc"
TAP_MIN = -16
TAP_MAX = 16


class FeederError(ValueError):
    """Base class for feeder file problems."""


class FeederParseError(FeederError):
    pass


class FeederValidationError(FeederError):
    pass


@dataclass(frozen=True)
class PhaseSet:
    a: bool = False
    b: bool = False
    c: bool = False

    def __post_init__(self):
        if not (self.a or self.b or self.c):
            raise FeederValidationError("phase set must contain at least one phase")

    @classmethod
    def parse(cls, text: str) -> "PhaseSet":
        text = text.lower()
        bad = set(text) - set(PHASES)
        if bad or not text or len(set(text)) != len(text):
            raise FeederParseError(f"invalid phase string {text!r}")
        return cls(*(p in text for p in PHASES))

    @property
    def mask(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    @property
    def indices(self) -> list[int]:
        return [i for i, on in enumerate(self.mask) if on]

    def issubset(self, other: "PhaseSet") -> bool:
        return bool(np.all(other.mask[self.mask]))

    def __str__(self) -> str:
        return "".join(p for p, on in zip(PHASES, self.mask) if on)

    def __len__(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class Bus:
    id: str
    phases: PhaseSet
    base_kv: float


@dataclass(frozen=True, eq=False)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    phases: PhaseSet
    impedance: np.ndarray  # 3x3 complex ohms

    def __eq__(self, other):
        if not isinstance(other, Branch):
            return NotImplemented
        return (
            (self.id, self.from_bus, self.to_bus, self.phases)
            == (other.id, other.from_bus, other.to_bus, other.phases)
            and np.array_equal(self.impedance, other.impedance)
        )

    __hash__ = None


@dataclass(frozen=True)
class Load:
    """Per-phase rated demand at 1.0 pu voltage plus ZIP split (power, current, impedance)."""

    id: str
    bus: str
    kw: tuple[float, float, float]
    kvar: tuple[float, float, float]
    zip_fractions: tuple[float, float, float] = (1.0, 0.0, 0.0)
    profile: str = ""  # default time-series shape name, optional

    @property
    def phases(self) -> PhaseSet:
        return PhaseSet(*(p != 0 or q != 0 for p, q in zip(self.kw, self.kvar)))


@dataclass(frozen=True)
class PvInverter:
    id: str
    bus: str
    phases: PhaseSet
    rated_kva: float
    rated_kw: float
    monitored_branch: str = ""
    profile: str = ""


@dataclass(frozen=True)
class Regulator:
    branch: str
    taps: tuple[int, int, int] = (0, 0, 0)
    setpoint_pu: float = 1.0
    bandwidth_pu: float = 0.0167
    step: float = 0.00625

    def ratios(self) -> np.ndarray:
        return 1.0 + np.asarray(self.taps, dtype=float) * self.step


@dataclass(frozen=True, eq=False)
class FeederModel:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    loads: tuple[Load, ...]
    pvs: tuple[PvInverter, ...]
    regulators: tuple[Regulator, ...]
    source_bus: str
    source_voltage_pu: float = 1.0
    base_mva: float = 1.0
    name: str = ""
    comment: str = ""

    def __post_init__(self):
        _validate(self)

    def __eq__(self, other):
        if not isinstance(other, FeederModel):
            return NotImplemented
        return to_dict(self) == to_dict(other)

    __hash__ = None

    # --- lookup helpers -------------------------------------------------
    @cached_property
    def bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def branch_index(self) -> dict[str, int]:
        return {br.id: i for i, br in enumerate(self.branches)}

    @cached_property
    def pv_index(self) -> dict[str, int]:
        return {pv.id: i for i, pv in enumerate(self.pvs)}

    @cached_property
    def load_index(self) -> dict[str, int]:
        return {ld.id: i for i, ld in enumerate(self.loads)}

    @cached_property
    def upstream(self) -> dict[str, str]:
        """bus id -> id of the branch feeding it."""
        return {br.to_bus: br.id for br in self.branches}

    @cached_property
    def topological_order(self) -> list[str]:
        """Bus ids in breadth-first order from the source."""
        children: dict[str, list[str]] = {b.id: [] for b in self.buses}
        for br in self.branches:
            children[br.from_bus].append(br.to_bus)
        order, queue = [], deque([self.source_bus])
        while queue:
            bus = queue.popleft()
            order.append(bus)
            queue.extend(children[bus])
        return order

    def z_base(self, bus: str) -> float:
        kv = self.buses[self.bus_index[bus]].base_kv
        return 3.0 * kv * kv / self.base_mva

    @property
    def s_base_kva(self) -> float:
        """Per-phase power base in kVA."""
        return self.base_mva * 1000.0 / 3.0

    def branch_z_pu(self, branch_id: str) -> np.ndarray:
        br = self.branches[self.branch_index[branch_id]]
        return br.impedance / self.z_base(br.to_bus)

    def with_source_voltage(self, voltage_pu: float) -> "FeederModel":
        return replace(self, source_voltage_pu=voltage_pu)


def upstream_branch(model: FeederModel, bus: str) -> str:
    """Return the id of the tree edge connecting ``bus`` toward the source."""
    if bus not in model.bus_index:
        raise KeyError(f"unknown bus {bus!r}")
    if bus == model.source_bus:
        raise ValueError(f"bus {bus!r} is the source and has no upstream branch")
    return model.upstream[bus]


def path_to_source(model: FeederModel, bus: str) -> list[str]:
    """Branch ids on the path from ``bus`` up to the source, nearest first."""
    path = []
    by_id = {br.id: br for br in model.branches}
    while bus != model.source_bus:
        br = by_id[model.upstream[bus]]
        path.append(br.id)
        bus = br.from_bus
    return path


def _validate(m: FeederModel) -> None:
    ids = [b.id for b in m.buses]
    dup = {i for i in ids if ids.count(i) > 1}
    if dup:
        raise FeederValidationError(f"duplicate bus ids: {sorted(dup)}")
    buses = {b.id: b for b in m.buses}
    for b in m.buses:
        if not b.base_kv > 0:
            raise FeederValidationError(f"bus {b.id!r}: base_kv must be > 0")
    if m.source_bus not in buses:
        raise FeederValidationError(f"source bus {m.source_bus!r} does not exist")
    if not m.base_mva > 0:
        raise FeederValidationError("base_mva must be > 0")
    if not m.source_voltage_pu > 0:
        raise FeederValidationError("source voltage must be > 0")

    br_ids = [br.id for br in m.branches]
    dup = {i for i in br_ids if br_ids.count(i) > 1}
    if dup:
        raise FeederValidationError(f"duplicate branch ids: {sorted(dup)}")
    for br in m.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in buses:
                raise FeederValidationError(f"branch {br.id!r}: dangling bus reference {end!r}")
        if br.from_bus == br.to_bus:
            raise FeederValidationError(f"branch {br.id!r}: non-radial (self loop)")
        for end in (br.from_bus, br.to_bus):
            if not br.phases.issubset(buses[end].phases):
                raise FeederValidationError(
                    f"branch {br.id!r}: phases {br.phases} not present at bus {end!r}"
                )
        z = br.impedance
        if z.shape != (3, 3):
            raise FeederValidationError(f"branch {br.id!r}: impedance must be 3x3")
        if not np.allclose(z, z.T, rtol=1e-9, atol=1e-12):
            raise FeederValidationError(f"branch {br.id!r}: impedance matrix not symmetric")
        mask = br.phases.mask
        absent = ~(mask[:, None] & mask[None, :])
        if np.any(z[absent] != 0):
            raise FeederValidationError(f"branch {br.id!r}: nonzero impedance on absent phase")
        if np.any(z.real[mask, mask] < 0):
            raise FeederValidationError(f"branch {br.id!r}: negative self resistance")

    # radial: every non-source bus has exactly one parent and is reachable
    parents: dict[str, list[str]] = {}
    for br in m.branches:
        parents.setdefault(br.to_bus, []).append(br.id)
    for bus, brs in parents.items():
        if len(brs) > 1:
            raise FeederValidationError(f"non-radial: bus {bus!r} fed by branches {brs}")
    if m.source_bus in parents:
        raise FeederValidationError(
            f"non-radial: source bus {m.source_bus!r} is fed by branch {parents[m.source_bus][0]!r}"
        )
    reached = set(m.topological_order)
    missing = [b for b in ids if b not in reached]
    if missing:
        # with single parents everywhere, unreachable buses sit on a cycle or an island
        cyc = [br.id for br in m.branches if br.to_bus in missing]
        raise FeederValidationError(
            f"non-radial: buses {missing} unreachable from source (cycle or island via {cyc})"
        )

    ld_ids = [ld.id for ld in m.loads]
    if len(set(ld_ids)) != len(ld_ids):
        raise FeederValidationError("duplicate load ids")
    for ld in m.loads:
        if ld.bus not in buses:
            raise FeederValidationError(f"load {ld.id!r}: dangling bus reference {ld.bus!r}")
        zf = ld.zip_fractions
        if len(zf) != 3 or any(not 0 <= f <= 1 for f in zf) or abs(sum(zf) - 1) > 1e-9:
            raise FeederValidationError(f"load {ld.id!r}: zip fractions must lie in [0,1] and sum to 1")
        if any(ld.kw[i] != 0 or ld.kvar[i] != 0 for i in range(3)):
            if not ld.phases.issubset(buses[ld.bus].phases):
                raise FeederValidationError(f"load {ld.id!r}: phases not present at bus {ld.bus!r}")

    pv_ids = [pv.id for pv in m.pvs]
    if len(set(pv_ids)) != len(pv_ids):
        raise FeederValidationError("duplicate pv ids")
    for pv in m.pvs:
        if pv.bus not in buses:
            raise FeederValidationError(f"pv {pv.id!r}: dangling bus reference {pv.bus!r}")
        if pv.bus == m.source_bus:
            raise FeederValidationError(f"pv {pv.id!r}: cannot sit on the source bus")
        if not pv.phases.issubset(buses[pv.bus].phases):
            raise FeederValidationError(f"pv {pv.id!r}: phases not present at bus {pv.bus!r}")
        if not (0 < pv.rated_kw <= pv.rated_kva):
            raise FeederValidationError(
                f"pv {pv.id!r}: rated_kw {pv.rated_kw} must be positive and <= rated_kva {pv.rated_kva}"
            )
        if pv.monitored_branch != m.upstream[pv.bus]:
            raise FeederValidationError(
                f"pv {pv.id!r}: monitored branch {pv.monitored_branch!r} is not the upstream "
                f"branch {m.upstream[pv.bus]!r} of bus {pv.bus!r}"
            )

    br_map = {br.id: br for br in m.branches}
    seen = set()
    for reg in m.regulators:
        if reg.branch not in br_map:
            raise FeederValidationError(f"regulator: dangling branch reference {reg.branch!r}")
        if reg.branch in seen:
            raise FeederValidationError(f"regulator: duplicate on branch {reg.branch!r}")
        seen.add(reg.branch)
        if any(not TAP_MIN <= t <= TAP_MAX for t in reg.taps):
            raise FeederValidationError(f"regulator {reg.branch!r}: tap outside [{TAP_MIN}, {TAP_MAX}]")
        if not reg.bandwidth_pu > 0:
            raise FeederValidationError(f"regulator {reg.branch!r}: bandwidth must be > 0")
        if not reg.step > 0:
            raise FeederValidationError(f"regulator {reg.branch!r}: step must be > 0")


# --- JSON format ---------------------------------------------------------

def _get(d: dict, key: str, where: str):
    try:
        return d[key]
    except (KeyError, TypeError):
        raise FeederParseError(f"{where}: missing key {key!r}") from None


def from_dict(doc: dict[str, Any]) -> FeederModel:
    """Build a validated model from the decoded JSON document."""
    if not isinstance(doc, dict):
        raise FeederParseError("feeder document must be a JSON object")
    try:
        buses = tuple(
            Bus(str(_get(b, "id", "bus")), PhaseSet.parse(_get(b, "phases", f"bus {b.get('id')}")),
                float(_get(b, "base_kv", f"bus {b.get('id')}")))
            for b in _get(doc, "buses", "feeder")
        )
        branches = []
        for b in _get(doc, "branches", "feeder"):
            bid = str(_get(b, "id", "branch"))
            raw = np.asarray(_get(b, "z", f"branch {bid}"), dtype=float)
            if raw.shape != (3, 3, 2):
                raise FeederParseError(f"branch {bid!r}: z must be a 3x3 array of [r, x] pairs")
            branches.append(Branch(
                bid, str(_get(b, "from", f"branch {bid}")), str(_get(b, "to", f"branch {bid}")),
                PhaseSet.parse(_get(b, "phases", f"branch {bid}")), raw[..., 0] + 1j * raw[..., 1],
            ))
        loads = []
        for k, ld in enumerate(doc.get("loads", [])):
            kw, kvar = [0.0] * 3, [0.0] * 3
            lid = str(ld.get("id", f"load{k + 1}"))
            for entry in _get(ld, "per_phase", f"load {lid}"):
                ph = PHASES.index(str(_get(entry, "phase", f"load {lid}")).lower())
                kw[ph] = float(_get(entry, "kw", f"load {lid}"))
                kvar[ph] = float(_get(entry, "kvar", f"load {lid}"))
            loads.append(Load(lid, str(_get(ld, "bus", f"load {lid}")), tuple(kw), tuple(kvar),
                              tuple(float(f) for f in ld.get("zip", (1.0, 0.0, 0.0))),
                              str(ld.get("profile", ""))))
        branch_to = {br.to_bus: br.id for br in branches}
        pvs = []
        for k, pv in enumerate(doc.get("pvs", [])):
            pid = str(pv.get("id", f"pv{k + 1}"))
            bus = str(_get(pv, "bus", f"pv {pid}"))
            pvs.append(PvInverter(
                pid, bus, PhaseSet.parse(_get(pv, "phases", f"pv {pid}")),
                float(_get(pv, "rated_kva", f"pv {pid}")), float(_get(pv, "rated_kw", f"pv {pid}")),
                str(pv.get("monitored_branch", branch_to.get(bus, ""))),
                str(pv.get("profile", "")),
            ))
        regs = tuple(
            Regulator(
                str(_get(r, "branch", "regulator")),
                tuple(int(t) for t in r.get("taps", (0, 0, 0))),
                float(r.get("setpoint_pu", 1.0)), float(r.get("bandwidth_pu", 0.0167)),
                float(r.get("step", 0.00625)),
            )
            for r in doc.get("regulators", [])
        )
        src = _get(doc, "source", "feeder")
        return FeederModel(
            buses=buses, branches=tuple(branches), loads=tuple(loads), pvs=tuple(pvs),
            regulators=regs, source_bus=str(_get(src, "bus", "source")),
            source_voltage_pu=float(src.get("voltage_pu", 1.0)),
            base_mva=float(_get(doc, "base_mva", "feeder")),
            name=str(doc.get("name", "")), comment=str(doc.get("comment", "")),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, FeederError):
            raise
        raise FeederParseError(str(exc)) from exc


def to_dict(model: FeederModel) -> dict[str, Any]:
    doc: dict[str, Any] = {}
    if model.name:
        doc["name"] = model.name
    if model.comment:
        doc["comment"] = model.comment
    doc["base_mva"] = model.base_mva
    doc["source"] = {"bus": model.source_bus, "voltage_pu": model.source_voltage_pu}
    doc["buses"] = [{"id": b.id, "phases": str(b.phases), "base_kv": b.base_kv} for b in model.buses]
    doc["branches"] = [
        {
            "id": br.id, "from": br.from_bus, "to": br.to_bus, "phases": str(br.phases),
            "z": [[[float(z.real), float(z.imag)] for z in row] for row in br.impedance],
        }
        for br in model.branches
    ]
    doc["loads"] = [
        {
            "id": ld.id, "bus": ld.bus,
            "per_phase": [
                {"phase": PHASES[i], "kw": ld.kw[i], "kvar": ld.kvar[i]}
                for i in range(3) if ld.kw[i] != 0 or ld.kvar[i] != 0
            ],
            "zip": list(ld.zip_fractions),
            **({"profile": ld.profile} if ld.profile else {}),
        }
        for ld in model.loads
    ]
    doc["pvs"] = [
        {"id": pv.id, "bus": pv.bus, "phases": str(pv.phases), "rated_kva": pv.rated_kva,
         "rated_kw": pv.rated_kw, "monitored_branch": pv.monitored_branch,
         **({"profile": pv.profile} if pv.profile else {})}
        for pv in model.pvs
    ]
    doc["regulators"] = [
        {"branch": r.branch, "taps": list(r.taps), "setpoint_pu": r.setpoint_pu,
         "bandwidth_pu": r.bandwidth_pu, "step": r.step}
        for r in model.regulators
    ]
    return doc


def loads_json(text: str) -> FeederModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FeederParseError(f"malformed JSON: {exc}") from exc
    return from_dict(doc)


def dumps(model: FeederModel) -> str:
    return json.dumps(to_dict(model), indent=1)


def bundled_feeder_path(name: str) -> Path:
    return Path(__file__).parent / "data" / "feeders" / name


def resolve_feeder_path(path: str | Path) -> Path:
    """Use ``path`` if it exists, else look it up among the bundled feeders."""
    p = Path(path)
    if p.exists():
        return p
    bundled = bundled_feeder_path(p.name)
    if bundled.exists():
        return bundled
    if not p.suffix and bundled_feeder_path(p.name + ".json").exists():
        return bundled_feeder_path(p.name + ".json")
    raise FileNotFoundError(f"feeder file not found: {path}")


def load_feeder(path: str | Path) -> FeederModel:
    """Parse and validate a feeder JSON file (bundled names such as ``4bus.json`` work too)."""
    p = resolve_feeder_path(path)
    return loads_json(p.read_text())


def save_feeder(model: FeederModel, path: str | Path) -> None:
    Path(path).write_text(dumps(model) + "\n")


# --- voltage regulator ---------------------------------------------------

def regulator_step(reg: Regulator, controlled_voltage) -> Regulator:
    """Move each phase at most one tap toward the band around the setpoint."""
    v = np.broadcast_to(np.asarray(controlled_voltage, dtype=float), (3,))
    taps = list(reg.taps)
    half = reg.bandwidth_pu / 2.0
    for ph in range(3):
        err = v[ph] - reg.setpoint_pu
        if not np.isfinite(v[ph]) or v[ph] == 0.0:
            continue
        if err > half:
            taps[ph] = max(TAP_MIN, taps[ph] - 1)
        elif err < -half:
            taps[ph] = min(TAP_MAX, taps[ph] + 1)
    return replace(reg, taps=tuple(taps))

"""Core vocabulary of the twin: elements, the construction dependency graph,
events, and shared value types in canonical units.

Everything here is an immutable value; operations are pure and safe for
concurrent use.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from functools import cached_property
from typing import Iterable, Iterator, Mapping, Sequence


class TwinQaError(Exception):
    """Base class for all errors raised by this package."""


class DuplicateId(TwinQaError):
    def __init__(self, element_id: str):
        super().__init__(f"duplicate element id {element_id!r}")
        self.element_id = element_id


class UnknownEndpoint(TwinQaError):
    def __init__(self, element_id: str):
        super().__init__(f"edge endpoint {element_id!r} is not a known element")
        self.element_id = element_id


class CycleDetected(TwinQaError):
    def __init__(self, path: Sequence[str]):
        super().__init__(f"dependency cycle: {' -> '.join(path)}")
        self.path = list(path)


class UnknownElement(TwinQaError):
    def __init__(self, element_id: str):
        super().__init__(f"unknown element {element_id!r}")
        self.element_id = element_id


# Opaque, project-unique element identifier.
ElementId = str


class ElementKind(str, Enum):
    DRILLED_SHAFT = "DrilledShaft"
    COLUMN = "Column"
    CAP = "Cap"
    GIRDER_OR_DECK_PANEL = "GirderOrDeckPanel"
    DECK_POUR = "DeckPour"
    OTHER = "Other"


# Kinds whose elements carry a concrete design strength.
CONCRETE_KINDS = frozenset(
    {
        ElementKind.DRILLED_SHAFT,
        ElementKind.COLUMN,
        ElementKind.CAP,
        ElementKind.GIRDER_OR_DECK_PANEL,
        ElementKind.DECK_POUR,
    }
)


class EventType(str, Enum):
    INSPECTION_COMPLETED = "InspectionCompleted"
    BATCH_TICKET = "BatchTicket"
    PLACEMENT_RECORDED = "PlacementRecorded"
    SENSOR_READING = "SensorReading"
    LAB_RESULT = "LabResult"
    FIELD_TEST_RESULT = "FieldTestResult"
    SPEC_REVISION = "SpecRevision"
    HUMAN_DECISION = "HumanDecision"


class Unit(str, Enum):
    DEG_C = "degC"
    MPA = "MPa"
    METER = "meter"
    HOUR = "hour"
    DEG_C_HOUR = "degC_hour"


@dataclass(frozen=True)
class Quantity:
    """A magnitude in one of the canonical internal units."""

    magnitude: float
    unit: Unit

    def __post_init__(self) -> None:
        if not math.isfinite(self.magnitude):
            raise ValueError(f"non-finite magnitude for unit {self.unit.value}")


@dataclass(frozen=True)
class SpatialRef:
    """Location reference: exactly one of element id, station-offset, or GPS."""

    element_id: ElementId | None = None
    station_offset: tuple[float, float] | None = None  # (station_m, offset_m)
    gps: tuple[float, float] | None = None  # (lat, lon)

    def __post_init__(self) -> None:
        set_fields = [
            f for f in (self.element_id, self.station_offset, self.gps) if f is not None
        ]
        if len(set_fields) != 1:
            raise ValueError("SpatialRef requires exactly one of element_id, station_offset, gps")
        if self.element_id is not None and not self.element_id:
            raise ValueError("element_id must be non-empty")
        if self.station_offset is not None:
            station_m, offset_m = self.station_offset
            if not (math.isfinite(station_m) and math.isfinite(offset_m)):
                raise ValueError("station/offset must be finite")
            if station_m < 0:
                raise ValueError(f"station_m must be >= 0, got {station_m}")
        if self.gps is not None:
            lat, lon = self.gps
            if not (-90.0 <= lat <= 90.0):
                raise ValueError(f"latitude {lat} outside [-90, 90]")
            if not (-180.0 <= lon <= 180.0):
                raise ValueError(f"longitude {lon} outside [-180, 180]")

    @classmethod
    def for_element(cls, element_id: ElementId) -> "SpatialRef":
        return cls(element_id=element_id)

    @classmethod
    def at_station(cls, station_m: float, offset_m: float = 0.0) -> "SpatialRef":
        return cls(station_offset=(station_m, offset_m))

    @classmethod
    def at_gps(cls, lat: float, lon: float) -> "SpatialRef":
        return cls(gps=(lat, lon))

    def to_json(self) -> dict:
        if self.element_id is not None:
            return {"element_id": self.element_id}
        if self.station_offset is not None:
            return {
                "station_offset": {
                    "station_m": self.station_offset[0],
                    "offset_m": self.station_offset[1],
                }
            }
        assert self.gps is not None
        return {"gps": {"lat": self.gps[0], "lon": self.gps[1]}}


@dataclass(frozen=True)
class Element:
    """A discrete physical construction unit, the subject of QA reasoning."""

    id: ElementId
    kind: ElementKind
    location: SpatialRef
    planned_placement: datetime
    design_strength_mpa: float | None = None
    other_name: str | None = None  # descriptive name when kind is OTHER

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("element id must be non-empty")
        if self.planned_placement.tzinfo is None:
            raise ValueError("planned_placement must be timezone-aware")
        if self.kind in CONCRETE_KINDS:
            if self.design_strength_mpa is None or self.design_strength_mpa <= 0:
                raise ValueError(
                    f"{self.id}: design_strength_mpa must be > 0 for {self.kind.value}"
                )


@dataclass(frozen=True, eq=False)
class QaEvent:
    """A timestamped, typed, idempotent record. Equality is by event_id."""

    event_id: str
    event_type: EventType
    occurred_at: datetime
    recorded_at: datetime
    subject: SpatialRef
    payload: Mapping[str, object]
    source: str
    element_id: ElementId | None = None  # populated once mapped
    late_arrival: bool = False  # populated by align_events

    def __post_init__(self) -> None:
        if not self.event_id:
            raise ValueError("event_id must be non-empty")
        if self.occurred_at.tzinfo is None or self.recorded_at.tzinfo is None:
            raise ValueError("event timestamps must be timezone-aware")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QaEvent):
            return NotImplemented
        return self.event_id == other.event_id

    def __hash__(self) -> int:
        return hash(self.event_id)


@dataclass(frozen=True)
class TemperatureHistory:
    """Ordered in-place temperature samples for one element."""

    element: ElementId
    samples: tuple[tuple[datetime, float], ...]

    def __post_init__(self) -> None:
        prev: datetime | None = None
        for at, temp_c in self.samples:
            if at.tzinfo is None:
                raise ValueError("sample timestamps must be timezone-aware")
            if prev is not None and at <= prev:
                raise ValueError(f"sample timestamps must strictly increase (at {at})")
            if not math.isfinite(temp_c) or not (-50.0 <= temp_c <= 100.0):
                raise ValueError(f"temperature {temp_c} outside [-50, 100] degC")
            prev = at


@dataclass(frozen=True)
class ElementGraph:
    """Validated construction precedence DAG. Build via build_element_graph."""

    elements: Mapping[ElementId, Element]
    edges: frozenset[tuple[ElementId, ElementId]]

    @cached_property
    def _preds(self) -> dict[ElementId, frozenset[ElementId]]:
        preds: dict[ElementId, set[ElementId]] = {eid: set() for eid in self.elements}
        for pred, succ in self.edges:
            preds[succ].add(pred)
        return {eid: frozenset(s) for eid, s in preds.items()}

    @cached_property
    def _succs(self) -> dict[ElementId, frozenset[ElementId]]:
        succs: dict[ElementId, set[ElementId]] = {eid: set() for eid in self.elements}
        for pred, succ in self.edges:
            succs[pred].add(succ)
        return {eid: frozenset(s) for eid, s in succs.items()}

    def predecessors(self, element_id: ElementId) -> frozenset[ElementId]:
        """Direct predecessors only."""
        if element_id not in self.elements:
            raise UnknownElement(element_id)
        return self._preds[element_id]

    def successors(self, element_id: ElementId) -> frozenset[ElementId]:
        if element_id not in self.elements:
            raise UnknownElement(element_id)
        return self._succs[element_id]

    @cached_property
    def _topological_order(self) -> tuple[ElementId, ...]:
        indegree = {eid: len(self._preds[eid]) for eid in self.elements}
        ready = [eid for eid, d in sorted(indegree.items()) if d == 0]
        heapq.heapify(ready)
        order: list[ElementId] = []
        while ready:
            eid = heapq.heappop(ready)
            order.append(eid)
            for succ in self._succs[eid]:
                indegree[succ] -= 1
                if indegree[succ] == 0:
                    heapq.heappush(ready, succ)
        return tuple(order)

    def topological_order(self) -> tuple[ElementId, ...]:
        """Every predecessor precedes its successors; ties broken by id."""
        return self._topological_order


def _find_cycle(
    nodes: Iterable[ElementId], succs: Mapping[ElementId, set[ElementId]]
) -> list[ElementId] | None:
    WHITE, GREY, BLACK = 0, 1, 2
    color = {n: WHITE for n in nodes}
    parent: dict[ElementId, ElementId] = {}
    for root in sorted(color):
        if color[root] != WHITE:
            continue
        stack: list[tuple[ElementId, Iterator]] = [(root, iter(sorted(succs.get(root, ()))))]
        color[root] = GREY
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color[nxt] == GREY:
                    # Reconstruct the cycle ending back at nxt.
                    path = [nxt, node]
                    cur = node
                    while cur != nxt:
                        cur = parent[cur]
                        path.append(cur)
                    path.reverse()
                    return path
                if color[nxt] == WHITE:
                    color[nxt] = GREY
                    parent[nxt] = node
                    stack.append((nxt, iter(sorted(succs.get(nxt, ())))))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack.pop()
    return None


def build_element_graph(
    elements: Sequence[Element], edges: Sequence[tuple[ElementId, ElementId]]
) -> ElementGraph:
    """Validate and assemble the dependency graph.

    Raises DuplicateId, UnknownEndpoint, or CycleDetected; a returned graph
    is guaranteed acyclic with all endpoints present.
    """
    by_id: dict[ElementId, Element] = {}
    for element in elements:
        if element.id in by_id:
            raise DuplicateId(element.id)
        by_id[element.id] = element

    succs: dict[ElementId, set[ElementId]] = {}
    for pred, succ in edges:
        for endpoint in (pred, succ):
            if endpoint not in by_id:
                raise UnknownEndpoint(endpoint)
        succs.setdefault(pred, set()).add(succ)

    cycle = _find_cycle(by_id, succs)
    if cycle is not None:
        raise CycleDetected(cycle)

    return ElementGraph(elements=by_id, edges=frozenset((p, s) for p, s in edges))


def topological_order(graph: ElementGraph) -> tuple[ElementId, ...]:
    return graph.topological_order()


def predecessors(graph: ElementGraph, element_id: ElementId) -> frozenset[ElementId]:
    return graph.predecessors(element_id)

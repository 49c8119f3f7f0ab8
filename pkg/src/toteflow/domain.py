"""Core domain model: entities, the travel metric, validation, and instance IO.

Everything here is immutable after construction. Mutable episode state lives
in :mod:`toteflow.engine`; instances only carry initial conditions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import DomainError

# Rack module footprint: 1.2 x 1.2 m cells, 2.4 m tall modules.
CELL_PITCH_M = 1.2

INSTANCE_FORMAT_VERSION = "toteflow_instance_v1"

DEFAULT_SLOTS_PER_STATION = 6
DEFAULT_CAPACITY = {"multi_tote_2d": 8, "rack_climb_3d": 1}


class SystemKind(Enum):
    """The two supported robot archetypes.

    MULTI_TOTE_2D: ground robots with onboard lifts carrying several totes per
    trip; vertical access is folded into the per-tote handling time.
    RACK_CLIMB_3D: shelf-climbing robots paying an explicit per-level vertical
    travel cost, one tote per trip by default.
    """

    MULTI_TOTE_2D = "multi_tote_2d"
    RACK_CLIMB_3D = "rack_climb_3d"

    @property
    def min_capacity(self) -> int:
        return 2 if self is SystemKind.MULTI_TOTE_2D else 1


@dataclass(frozen=True, order=True)
class Location:
    """Grid cell index: (aisle, column, level). Level is 0 on the ground plane."""

    aisle: int
    column: int
    level: int = 0

    def within(self, layout: tuple[int, int, int]) -> bool:
        a, c, l = layout
        return 0 <= self.aisle < a and 0 <= self.column < c and 0 <= self.level < l


@dataclass(frozen=True)
class SpeedParams:
    """Kinematic and handling constants. All configurable; defaults are
    plausible industrial values."""

    horizontal_mps: float = 1.2
    vertical_s_per_level: float = 2.0
    pick_s_per_line: float = 4.0
    load_s_per_tote: float = 3.0


@dataclass(frozen=True)
class OrderLine:
    sku: int
    quantity: int = 1


@dataclass(frozen=True)
class Order:
    id: int
    lines: tuple[OrderLine, ...]
    priority: int = 0
    arrival_time: float = 0.0


@dataclass(frozen=True)
class Place:
    """Where a tote currently is. Exactly one holder at any instant.

    kind is one of "in_storage" (location set), "on_robot" / "at_workstation"
    (holder set to the robot / station id).
    """

    kind: str
    location: Location | None = None
    holder: int | None = None

    @staticmethod
    def in_storage(location: Location) -> "Place":
        return Place("in_storage", location=location)

    @staticmethod
    def on_robot(robot_id: int) -> "Place":
        return Place("on_robot", holder=robot_id)

    @staticmethod
    def at_workstation(station_id: int) -> "Place":
        return Place("at_workstation", holder=station_id)


@dataclass(frozen=True)
class Tote:
    """One-SKU-per-tote storage container."""

    id: int
    sku: int
    quantity: int
    home: Location
    place: Place | None = None

    def initial_place(self) -> Place:
        return self.place if self.place is not None else Place.in_storage(self.home)


@dataclass(frozen=True)
class Robot:
    id: int
    capacity: int
    position: Location
    load: tuple[int, ...] = ()
    busy_until: float = 0.0


@dataclass(frozen=True)
class Workstation:
    id: int
    position: Location
    slots: int = DEFAULT_SLOTS_PER_STATION
    active_orders: tuple[int, ...] = ()
    tote_buffer: tuple[int, ...] = ()


@dataclass(frozen=True)
class WarehouseInstance:
    kind: SystemKind
    skus: int
    orders: tuple[Order, ...]
    totes: tuple[Tote, ...]
    robots: tuple[Robot, ...]
    workstations: tuple[Workstation, ...]
    layout: tuple[int, int, int]
    speed: SpeedParams = field(default_factory=SpeedParams)

    @property
    def total_slots(self) -> int:
        return sum(ws.slots for ws in self.workstations)

    def max_travel_time(self) -> float:
        """Corner-to-corner travel time; used to scale distance weights."""
        a, c, l = self.layout
        return travel_time(
            Location(0, 0, 0), Location(a - 1, c - 1, l - 1), self.kind, self.speed
        )


@dataclass(frozen=True)
class MetricsReport:
    """End-of-episode accounting. z_final is always the sum of its parts."""

    z_retrievals: int
    z_returns: int
    makespan: float
    runtime: float
    decisions_per_stage: tuple[int, int, int]

    @property
    def z_final(self) -> int:
        return self.z_retrievals + self.z_returns

    def to_dict(self) -> dict:
        return {
            "z_retrievals": self.z_retrievals,
            "z_returns": self.z_returns,
            "z_final": self.z_final,
            "makespan": self.makespan,
            "runtime": self.runtime,
            "decisions_per_stage": list(self.decisions_per_stage),
        }


def travel_time(
    a: Location,
    b: Location,
    kind: SystemKind,
    speed: SpeedParams,
    layout: tuple[int, int, int] | None = None,
) -> float:
    """Travel seconds between two grid cells.

    Manhattan horizontal distance over 1.2 m cells divided by horizontal
    speed, plus a per-level vertical term for rack-climbing systems. Ground
    systems serve levels through onboard lifts, folded into handling time.
    Symmetric, zero at identity, and satisfies the triangle inequality.
    """
    if layout is not None:
        for loc in (a, b):
            if not loc.within(layout):
                raise DomainError(f"location {loc} outside layout {layout}")
    cells = abs(a.aisle - b.aisle) + abs(a.column - b.column)
    t = cells * CELL_PITCH_M / speed.horizontal_mps
    if kind is SystemKind.RACK_CLIMB_3D:
        t += abs(a.level - b.level) * speed.vertical_s_per_level
    return t


def validate_instance(inst: WarehouseInstance) -> list[str]:
    """Check every structural invariant; returns all violations, not just the first.

    An empty list means the instance is valid. Violations are data, not faults.
    """
    violations: list[str] = []
    layout = inst.layout

    if any(d < 1 for d in layout):
        violations.append(f"layout dimensions must be positive: {layout}")
        return violations

    # Entity ids double as positions in their tuples; the engine indexes on that.
    for label, entities in (
        ("order", inst.orders),
        ("tote", inst.totes),
        ("robot", inst.robots),
        ("workstation", inst.workstations),
    ):
        for pos, ent in enumerate(entities):
            if ent.id != pos:
                violations.append(f"{label} ids must be contiguous from 0; got {ent.id} at {pos}")
                break

    for ws in inst.workstations:
        if ws.slots < 1:
            violations.append(f"workstation {ws.id}: slot count < 1")
        if not ws.position.within(layout):
            violations.append(f"workstation {ws.id}: position out of bounds")
        if len(ws.active_orders) > ws.slots:
            violations.append(f"workstation {ws.id}: active orders exceed slots")
        if inst.kind is SystemKind.MULTI_TOTE_2D and ws.position.level != 0:
            violations.append(f"workstation {ws.id}: non-ground position in 2D system")

    for robot in inst.robots:
        if robot.capacity < inst.kind.min_capacity:
            violations.append(
                f"robot {robot.id}: capacity {robot.capacity} below minimum "
                f"{inst.kind.min_capacity} for {inst.kind.value}"
            )
        if not robot.position.within(layout):
            violations.append(f"robot {robot.id}: position out of bounds")
        if len(robot.load) > robot.capacity:
            violations.append(f"robot {robot.id}: capacity exceeded")

    stock: dict[int, int] = {}
    seen_totes: set[int] = set()
    for tote in inst.totes:
        if tote.id in seen_totes:
            violations.append(f"tote {tote.id}: duplicate id")
        seen_totes.add(tote.id)
        if tote.quantity < 0:
            violations.append(f"tote {tote.id}: negative quantity")
        if not tote.home.within(layout):
            violations.append(f"tote {tote.id}: home out of bounds")
        stock[tote.sku] = stock.get(tote.sku, 0) + tote.quantity

    seen_orders: set[int] = set()
    demand: dict[int, int] = {}
    for order in inst.orders:
        if order.id in seen_orders:
            violations.append(f"order {order.id}: duplicate id")
        seen_orders.add(order.id)
        if not order.lines:
            violations.append(f"order {order.id}: no lines")
        if order.priority < 0:
            violations.append(f"order {order.id}: negative priority")
        if order.arrival_time < 0:
            violations.append(f"order {order.id}: negative arrival time")
        skus_in_order = [line.sku for line in order.lines]
        if len(set(skus_in_order)) != len(skus_in_order):
            violations.append(f"order {order.id}: duplicate sku in lines")
        for line in order.lines:
            if line.quantity < 1:
                violations.append(f"order {order.id}: line quantity < 1")
            demand[line.sku] = demand.get(line.sku, 0) + line.quantity

    for sku, qty in sorted(demand.items()):
        if stock.get(sku, 0) == 0:
            violations.append(f"uncovered sku {sku}: demanded but not stocked")
        elif stock[sku] < qty:
            violations.append(
                f"uncovered sku {sku}: stock {stock[sku]} below demand {qty}"
            )

    return violations


# --- instance (de)serialization -------------------------------------------

def _location_to_list(loc: Location) -> list[int]:
    return [loc.aisle, loc.column, loc.level]


def _location_from_list(raw) -> Location:
    return Location(int(raw[0]), int(raw[1]), int(raw[2]))


def _place_to_dict(place: Place) -> dict:
    out: dict = {"kind": place.kind}
    if place.location is not None:
        out["location"] = _location_to_list(place.location)
    if place.holder is not None:
        out["holder"] = place.holder
    return out


def _place_from_dict(raw: dict) -> Place:
    return Place(
        kind=raw["kind"],
        location=_location_from_list(raw["location"]) if "location" in raw else None,
        holder=raw.get("holder"),
    )


def _canonical_tote(id, sku, quantity, home, place) -> Tote:
    # "in storage at home" is the default; normalize so round-trips compare equal.
    if place is not None and place == Place.in_storage(home):
        place = None
    return Tote(id=id, sku=sku, quantity=quantity, home=home, place=place)


def instance_to_dict(inst: WarehouseInstance) -> dict:
    return {
        "version": INSTANCE_FORMAT_VERSION,
        "kind": inst.kind.value,
        "skus": inst.skus,
        "layout": list(inst.layout),
        "speed_params": {
            "horizontal_mps": inst.speed.horizontal_mps,
            "vertical_s_per_level": inst.speed.vertical_s_per_level,
            "pick_s_per_line": inst.speed.pick_s_per_line,
            "load_s_per_tote": inst.speed.load_s_per_tote,
        },
        "orders": [
            {
                "id": o.id,
                "lines": [[line.sku, line.quantity] for line in o.lines],
                "priority": o.priority,
                "arrival_time": o.arrival_time,
            }
            for o in inst.orders
        ],
        "totes": [
            {
                "id": t.id,
                "sku": t.sku,
                "quantity": t.quantity,
                "home": _location_to_list(t.home),
                "place": _place_to_dict(t.initial_place()),
            }
            for t in inst.totes
        ],
        "robots": [
            {
                "id": r.id,
                "capacity": r.capacity,
                "position": _location_to_list(r.position),
                "load": list(r.load),
                "busy_until": r.busy_until,
            }
            for r in inst.robots
        ],
        "workstations": [
            {
                "id": w.id,
                "position": _location_to_list(w.position),
                "slots": w.slots,
                "active_orders": list(w.active_orders),
                "tote_buffer": list(w.tote_buffer),
            }
            for w in inst.workstations
        ],
    }


def instance_from_dict(raw: dict) -> WarehouseInstance:
    if raw.get("version") != INSTANCE_FORMAT_VERSION:
        raise DomainError(f"unsupported instance format: {raw.get('version')!r}")
    speed = raw.get("speed_params", {})
    return WarehouseInstance(
        kind=SystemKind(raw["kind"]),
        skus=int(raw["skus"]),
        layout=tuple(int(x) for x in raw["layout"]),
        speed=SpeedParams(
            horizontal_mps=float(speed.get("horizontal_mps", 1.2)),
            vertical_s_per_level=float(speed.get("vertical_s_per_level", 2.0)),
            pick_s_per_line=float(speed.get("pick_s_per_line", 4.0)),
            load_s_per_tote=float(speed.get("load_s_per_tote", 3.0)),
        ),
        orders=tuple(
            Order(
                id=int(o["id"]),
                lines=tuple(OrderLine(int(s), int(q)) for s, q in o["lines"]),
                priority=int(o.get("priority", 0)),
                arrival_time=float(o.get("arrival_time", 0.0)),
            )
            for o in raw["orders"]
        ),
        totes=tuple(
            _canonical_tote(
                id=int(t["id"]),
                sku=int(t["sku"]),
                quantity=int(t["quantity"]),
                home=_location_from_list(t["home"]),
                place=_place_from_dict(t["place"]) if "place" in t else None,
            )
            for t in raw["totes"]
        ),
        robots=tuple(
            Robot(
                id=int(r["id"]),
                capacity=int(r["capacity"]),
                position=_location_from_list(r["position"]),
                load=tuple(int(x) for x in r.get("load", [])),
                busy_until=float(r.get("busy_until", 0.0)),
            )
            for r in raw["robots"]
        ),
        workstations=tuple(
            Workstation(
                id=int(w["id"]),
                position=_location_from_list(w["position"]),
                slots=int(w.get("slots", DEFAULT_SLOTS_PER_STATION)),
                active_orders=tuple(int(x) for x in w.get("active_orders", [])),
                tote_buffer=tuple(int(x) for x in w.get("tote_buffer", [])),
            )
            for w in raw["workstations"]
        ),
    )


def save_instance(inst: WarehouseInstance, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(instance_to_dict(inst), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_instance(path: str | Path) -> WarehouseInstance:
    return instance_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

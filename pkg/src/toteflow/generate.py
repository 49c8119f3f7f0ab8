"""Deterministic instance generation: named presets plus seeded synthesis.

Generation is a pure function of the config (seed included): equal configs
yield byte-identical serialized instances. Independent PCG64 streams per
entity class keep order, tote, and robot sampling decoupled, so extending
one class never perturbs another.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .domain import (
    DEFAULT_CAPACITY,
    DEFAULT_SLOTS_PER_STATION,
    Location,
    Order,
    OrderLine,
    Robot,
    SpeedParams,
    SystemKind,
    Tote,
    WarehouseInstance,
    Workstation,
)
from .errors import GenerationError

TRANSVERSE_AISLES = 4
LEVELS_3D = 8
DEFAULT_ARRIVAL_HORIZON = 600.0

# (skus, orders, robots, workstations, totes) per preset row.
PRESETS: dict[str, tuple[int, int, int, int, int]] = {
    "S-1": (20, 10, 3, 3, 100),
    "S-2": (25, 12, 4, 3, 125),
    "S-3": (30, 14, 4, 4, 150),
    "S-4": (35, 15, 5, 4, 175),
    "S-5": (40, 15, 5, 5, 200),
    "S-6": (45, 16, 5, 5, 225),
    "S-7": (50, 18, 6, 5, 250),
    "S-8": (55, 18, 6, 6, 275),
    "S-9": (60, 20, 6, 6, 300),
    "L-1": (60, 50, 10, 5, 500),
    "L-2": (80, 60, 15, 5, 650),
    "L-3": (100, 70, 20, 5, 800),
    "L-4": (120, 80, 25, 10, 1000),
    "L-5": (140, 90, 30, 10, 1200),
    "L-6": (160, 100, 35, 10, 1400),
    "L-7": (180, 110, 40, 15, 1600),
    "L-8": (200, 120, 45, 15, 1800),
    "L-9": (220, 130, 50, 15, 2000),
    "L-10": (250, 150, 55, 15, 2200),
    "L-11": (300, 180, 60, 20, 2500),
    "L-12": (350, 210, 60, 20, 3000),
    "L-13": (400, 250, 65, 20, 3500),
    "L-14": (500, 300, 65, 20, 4000),
    "L-15": (600, 350, 70, 25, 5000),
}


@dataclass(frozen=True)
class InstanceConfig:
    name: str
    skus: int
    orders: int
    robots: int
    workstations: int
    totes: int
    kind: SystemKind = SystemKind.MULTI_TOTE_2D
    seed: int = 0
    arrival_horizon: float = 0.0
    slots_per_station: int = DEFAULT_SLOTS_PER_STATION
    robot_capacity: int | None = None
    max_lines_per_order: int = 3
    zipf_exponent: float = 0.0
    speed: SpeedParams = SpeedParams()
    levels_override: int | None = None

    def validate(self) -> None:
        if self.totes < self.skus:
            raise GenerationError(
                f"{self.name}: totes ({self.totes}) < skus ({self.skus}); "
                "redundant storage needs at least one tote per SKU"
            )
        for label, n in (
            ("skus", self.skus),
            ("orders", self.orders),
            ("robots", self.robots),
            ("workstations", self.workstations),
            ("totes", self.totes),
        ):
            if n < (0 if label == "orders" else 1):
                raise GenerationError(f"{self.name}: {label} must be positive")


def preset(name: str, kind: SystemKind = SystemKind.MULTI_TOTE_2D, seed: int = 0) -> InstanceConfig:
    """Config for a named instance family row. S-rows are static (all arrivals
    at zero, exactly solvable); L-rows spread arrivals over the horizon."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; expected S-1..S-9 or L-1..L-15")
    skus, orders, robots, stations, totes = PRESETS[name]
    horizon = DEFAULT_ARRIVAL_HORIZON if name.startswith("L-") else 0.0
    return InstanceConfig(
        name=name,
        skus=skus,
        orders=orders,
        robots=robots,
        workstations=stations,
        totes=totes,
        kind=kind,
        seed=seed,
        arrival_horizon=horizon,
    )


def micro_config(seed: int) -> InstanceConfig:
    """Tiny seeded config in the exhaustively enumerable regime:
    at most 3 orders, 5 totes, 2 robots, and a single station."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 99)))
    n_orders = int(rng.integers(1, 4))
    n_skus = int(rng.integers(2, 5))
    n_totes = int(rng.integers(n_skus, 6))
    n_robots = int(rng.integers(1, 3))
    return InstanceConfig(
        name=f"micro-{seed}",
        skus=n_skus,
        orders=n_orders,
        robots=n_robots,
        workstations=1,
        totes=n_totes,
        seed=seed,
        max_lines_per_order=2,
    )


def _streams(seed: int) -> dict[str, np.random.Generator]:
    return {
        cls: np.random.default_rng(np.random.SeedSequence((seed, tag)))
        for cls, tag in (("orders", 1), ("totes", 2), ("robots", 3))
    }


def _sku_weights(skus: int, exponent: float) -> np.ndarray | None:
    if exponent <= 0.0:
        return None
    w = 1.0 / np.arange(1, skus + 1) ** exponent
    return w / w.sum()


def generate(config: InstanceConfig) -> WarehouseInstance:
    """Materialize a config into a concrete instance.

    Layout: 4 transverse aisles x ceil(totes / (4 * levels)) columns, with
    8 levels for rack-climbing systems and 1 for ground systems. Station
    cells are carved out of level 0, bumping the column count when the
    remaining storage cells could not hold every tote.
    """
    config.validate()
    streams = _streams(config.seed)

    levels = config.levels_override or (
        LEVELS_3D if config.kind is SystemKind.RACK_CLIMB_3D else 1
    )
    columns = math.ceil(config.totes / (TRANSVERSE_AISLES * levels))
    while TRANSVERSE_AISLES * columns * levels - config.workstations < config.totes:
        columns += 1
    layout = (TRANSVERSE_AISLES, columns, levels)
    if TRANSVERSE_AISLES * columns * levels < config.totes:
        raise GenerationError(
            f"{config.name}: layout {layout} holds fewer cells than totes"
        )

    # Stations spread along the columns at aisle 0, ground level.
    station_step = max(1, columns // config.workstations)
    stations = tuple(
        Workstation(
            id=i,
            position=Location(0, min((i * station_step), columns - 1), 0),
            slots=config.slots_per_station,
        )
        for i in range(config.workstations)
    )
    station_cells = {ws.position for ws in stations}

    storage_cells = [
        Location(a, c, l)
        for l in range(levels)
        for c in range(columns)
        for a in range(TRANSVERSE_AISLES)
        if Location(a, c, l) not in station_cells
    ]
    if len(storage_cells) < config.totes:
        raise GenerationError(f"{config.name}: not enough storage cells for totes")

    cell_order = streams["totes"].permutation(len(storage_cells))
    totes = tuple(
        Tote(
            id=i,
            sku=i % config.skus,  # round-robin redundancy, every SKU stocked
            quantity=10,
            home=storage_cells[cell_order[i]],
        )
        for i in range(config.totes)
    )

    capacity = config.robot_capacity or DEFAULT_CAPACITY[config.kind.value]
    robot_rng = streams["robots"]
    robots = tuple(
        Robot(
            id=i,
            capacity=capacity,
            position=Location(
                int(robot_rng.integers(0, TRANSVERSE_AISLES)),
                int(robot_rng.integers(0, columns)),
                0,
            ),
        )
        for i in range(config.robots)
    )

    order_rng = streams["orders"]
    weights = _sku_weights(config.skus, config.zipf_exponent)
    if config.arrival_horizon > 0:
        arrivals = np.sort(order_rng.uniform(0.0, config.arrival_horizon, config.orders))
    else:
        arrivals = np.zeros(config.orders)
    orders = []
    for i in range(config.orders):
        n_lines = int(order_rng.integers(1, config.max_lines_per_order + 1))
        skus = order_rng.choice(config.skus, size=n_lines, replace=False, p=weights)
        orders.append(
            Order(
                id=i,
                lines=tuple(OrderLine(int(s), 1) for s in sorted(skus)),
                priority=int(order_rng.integers(0, 3)),
                arrival_time=float(arrivals[i]),
            )
        )

    return WarehouseInstance(
        kind=config.kind,
        skus=config.skus,
        orders=tuple(orders),
        totes=totes,
        robots=robots,
        workstations=stations,
        layout=layout,
        speed=config.speed,
    )


def micro_1() -> WarehouseInstance:
    """Canonical smallest fixture: two orders over two SKUs, one shared.

    Order 0 needs SKUs {0, 1}; order 1 needs {1}. Optimal play assigns both
    orders together so the shared-SKU tote serves both in one retrieval:
    two retrievals plus two returns in total.
    """
    layout = (1, 6, 1)
    station = Workstation(id=0, position=Location(0, 0, 0), slots=6)
    return WarehouseInstance(
        kind=SystemKind.MULTI_TOTE_2D,
        skus=2,
        orders=(
            Order(id=0, lines=(OrderLine(0), OrderLine(1))),
            Order(id=1, lines=(OrderLine(1),)),
        ),
        totes=(
            Tote(id=0, sku=0, quantity=10, home=Location(0, 1, 0)),
            Tote(id=1, sku=1, quantity=10, home=Location(0, 2, 0)),
            Tote(id=2, sku=1, quantity=10, home=Location(0, 3, 0)),
        ),
        robots=(Robot(id=0, capacity=2, position=Location(0, 0, 0)),),
        workstations=(station,),
        layout=layout,
    )

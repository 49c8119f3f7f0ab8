"""Experiment runner: policy x instance matrices with deterministic rows.

Each (instance, seed, policy) triple runs exactly once per bench invocation;
repeated triples reuse the cached row, so emitted files are byte-identical
for identical specs. The first policy listed is the gap baseline.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import socket
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .domain import SystemKind, WarehouseInstance, load_instance
from .engine import STAGES, DecisionPoint, Stage, WarehouseState, run_episode
from .errors import ToteflowError
from .features import feature_scales
from .generate import generate, micro_1, preset
from .oracle import average_gap, replay_trajectory, solve_exact
from .policies import make_policy
from .server import observe_message

BUILTIN_POLICIES = ("oracle", "csgh", "r3", "g3")


@dataclass(frozen=True)
class BenchSpec:
    instances: tuple[dict, ...]
    policies: tuple[object, ...]  # names or {"extern": "host:port"}
    repetitions: int = 1
    output: str | None = None
    policy_params: dict = field(default_factory=dict)

    @staticmethod
    def from_dict(raw: dict) -> "BenchSpec":
        if not raw.get("instances") or not raw.get("policies"):
            raise ToteflowError("bench spec needs at least one instance and one policy")
        return BenchSpec(
            instances=tuple(raw["instances"]),
            policies=tuple(raw["policies"]),
            repetitions=int(raw.get("repetitions", 1)),
            output=raw.get("output"),
            policy_params=raw.get("policy_params", {}),
        )

    @staticmethod
    def load(path: str | Path) -> "BenchSpec":
        return BenchSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def config_hash(self) -> str:
        canon = json.dumps(
            {
                "instances": list(self.instances),
                "policies": list(self.policies),
                "repetitions": self.repetitions,
                "policy_params": self.policy_params,
            },
            sort_keys=True,
        )
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _instance_for(entry: dict, seed: int) -> tuple[str, WarehouseInstance]:
    if "file" in entry:
        return Path(entry["file"]).stem, load_instance(entry["file"])
    name = entry["preset"]
    if name == "micro-1":
        return name, micro_1()
    cfg = preset(name, seed=seed)
    if "system" in entry:
        cfg = dataclasses.replace(cfg, kind=SystemKind(entry["system"]))
    if "horizon" in entry:
        cfg = dataclasses.replace(cfg, arrival_horizon=float(entry["horizon"]))
    return name, generate(cfg)


class _TimedPolicy:
    """Wraps a policy callable, bucketing per-stage decision latencies."""

    def __init__(self, fn):
        self._fn = fn
        self.latencies: dict[Stage, list[float]] = {s: [] for s in STAGES}

    def begin_episode(self, instance, seed):
        begin = getattr(self._fn, "begin_episode", None)
        if begin is not None:
            begin(instance, seed)

    def __call__(self, dp, state):
        t0 = time.perf_counter()
        action = self._fn(dp, state)
        self.latencies[dp.stage].append(time.perf_counter() - t0)
        return action


class ExternPolicy:
    """Forwards each decision to a remote endpoint speaking the decide/act
    exchange documented in docs/protocol.md."""

    def __init__(self, endpoint: str, timeout: float = 10.0):
        host, _, port = endpoint.rpartition(":")
        self._sock = socket.create_connection((host, int(port)), timeout=timeout)
        self._file = self._sock.makefile("rwb")
        self._scales = None

    def begin_episode(self, instance, seed):
        self._scales = feature_scales(instance)

    def __call__(self, dp: DecisionPoint, state: WarehouseState) -> int:
        msg = observe_message(0, state, dp, self._scales or feature_scales(state.instance))
        msg["kind"] = "decide"
        self._file.write((json.dumps(msg) + "\n").encode())
        self._file.flush()
        line = self._file.readline()
        if not line:
            raise ToteflowError("extern policy closed the connection")
        reply = json.loads(line.decode())
        return dp.candidates[int(reply["action_index"])]

    def close(self):
        try:
            self._file.close()
        finally:
            self._sock.close()


def _percentile(values: list[float], q: float) -> float:
    if not values:
        return 0.0
    xs = sorted(values)
    idx = min(len(xs) - 1, max(0, round(q * (len(xs) - 1))))
    return xs[idx]


def _policy_label(ref) -> str:
    if isinstance(ref, str):
        return ref
    return f"extern:{ref['extern']}"


def _run_triple(entry: dict, seed: int, ref, policy_params: dict) -> dict:
    name, inst = _instance_for(entry, seed)
    label = _policy_label(ref)
    row = {
        "instance": name,
        "seed": seed,
        "policy": label,
        "failed": False,
    }
    try:
        if ref == "oracle":
            t0 = time.perf_counter()
            result = solve_exact(inst, name=name)
            report, _state = replay_trajectory(inst, result.trajectory)
            runtime = time.perf_counter() - t0
            report = dataclasses.replace(report, runtime=runtime)
            latencies: dict[Stage, list[float]] = {s: [] for s in STAGES}
            row["proved_optimal"] = result.proved_optimal
        else:
            if isinstance(ref, str):
                fn = make_policy(ref, inst, **policy_params.get(ref, {}))
            else:
                fn = ExternPolicy(ref["extern"])
            timed = _TimedPolicy(fn)
            report, _records = run_episode(
                inst, {s: timed for s in STAGES}, seed=seed
            )
            latencies = timed.latencies
            if isinstance(fn, ExternPolicy):
                fn.close()
        row.update(
            {
                "z_final": report.z_final,
                "z_retrievals": report.z_retrievals,
                "z_returns": report.z_returns,
                "makespan": report.makespan,
                "runtime_s": report.runtime,
                "decisions_order": report.decisions_per_stage[0],
                "decisions_tote": report.decisions_per_stage[1],
                "decisions_robot": report.decisions_per_stage[2],
            }
        )
        for stage, key in zip(STAGES, ("order", "tote", "robot")):
            row[f"p50_{key}_ms"] = _percentile(latencies[stage], 0.50) * 1e3
            row[f"p99_{key}_ms"] = _percentile(latencies[stage], 0.99) * 1e3
    except (ToteflowError, OSError) as exc:
        row["failed"] = True
        row["error"] = str(exc)
    return row


def run_bench(spec: BenchSpec) -> dict:
    """One row per (instance, seed, policy) plus per-(instance, policy) means."""
    rows: list[dict] = []
    cache: dict[tuple, dict] = {}
    for entry in spec.instances:
        seeds = entry.get("seeds", [0])
        for _rep in range(spec.repetitions):
            for seed in seeds:
                for ref in spec.policies:
                    key = (json.dumps(entry, sort_keys=True), seed, _policy_label(ref))
                    if key not in cache:
                        cache[key] = _run_triple(entry, seed, ref, spec.policy_params)
                    rows.append(dict(cache[key]))

    baseline_label = _policy_label(spec.policies[0])
    by_key: dict[tuple, dict] = {}
    for row in rows:
        if row["failed"]:
            continue
        by_key[(row["instance"], row["seed"], row["policy"])] = row
    for row in rows:
        base = by_key.get((row["instance"], row["seed"], baseline_label))
        if not row["failed"] and base is not None and base["z_final"] > 0:
            row["gap_pct"] = (row["z_final"] - base["z_final"]) / base["z_final"] * 100.0
        else:
            row["gap_pct"] = None

    aggregates: list[dict] = []
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        if not row["failed"]:
            groups.setdefault((row["instance"], row["policy"]), []).append(row)
    for (inst_name, label), members in sorted(groups.items()):
        agg = {
            "instance": inst_name,
            "policy": label,
            "runs": len(members),
            "mean_z_final": sum(r["z_final"] for r in members) / len(members),
            "mean_makespan": sum(r["makespan"] for r in members) / len(members),
            "mean_runtime_s": sum(r["runtime_s"] for r in members) / len(members),
        }
        base_members = groups.get((inst_name, baseline_label))
        if base_members and len(base_members) == len(members):
            agg["average_gap_pct"] = average_gap(
                [r["z_final"] for r in members],
                [r["z_final"] for r in base_members],
            )
        aggregates.append(agg)

    return {
        "metadata": {
            "tool": "toteflow",
            "version": __version__,
            "config_hash": spec.config_hash(),
            "baseline_policy": baseline_label,
            "seeds": sorted({r["seed"] for r in rows}),
        },
        "rows": rows,
        "aggregates": aggregates,
    }


_CSV_COLUMNS = [
    "instance", "seed", "policy", "z_final", "z_retrievals", "z_returns",
    "makespan", "runtime_s",
    "p50_order_ms", "p99_order_ms", "p50_tote_ms", "p99_tote_ms",
    "p50_robot_ms", "p99_robot_ms",
    "decisions_order", "decisions_tote", "decisions_robot",
    "gap_pct", "failed",
]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def emit(results: dict, fmt: str, path: str | Path) -> None:
    """Write results deterministically; identical results give identical bytes."""
    path = Path(path)
    meta = results["metadata"]
    if fmt == "json":
        path.write_text(
            json.dumps(results, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        return
    if fmt != "csv":
        raise ToteflowError(f"unknown emit format {fmt!r}")
    lines = [
        f"# tool={meta['tool']} version={meta['version']}",
        f"# config_hash={meta['config_hash']}",
        f"# seeds={','.join(str(s) for s in meta['seeds'])}",
        ",".join(_CSV_COLUMNS),
    ]
    for row in results["rows"]:
        lines.append(",".join(_fmt(row.get(col)) for col in _CSV_COLUMNS))
    lines.append("")
    lines.append("# aggregates")
    agg_cols = ["instance", "policy", "runs", "mean_z_final", "mean_makespan",
                "mean_runtime_s", "average_gap_pct"]
    lines.append(",".join(agg_cols))
    for agg in results["aggregates"]:
        lines.append(",".join(_fmt(agg.get(col)) for col in agg_cols))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")

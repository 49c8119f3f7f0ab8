"""Stepwise decision-environment server over newline-delimited JSON.

One connection hosts one session at a time: strict alternation of
Reset -> (Observe -> Act)* -> Terminal, one message per line, UTF-8. After a
Terminal the client may Reset again for a fresh episode. Malformed messages
get an Error reply and the session survives; protocol-order violations get an
Error and the connection closes.

The Observe payload carries the decision point (candidates, mask,
standardized feature rows), its canonical abstract key, the canonical
candidate ordering, and a compact global summary, so external agents can act
without any access to engine internals.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading

from .domain import MetricsReport, instance_from_dict
from .engine import (
    DecisionPoint,
    WarehouseState,
    apply_action,
    next_decision,
    reset,
)
from .errors import ProtocolError, SimulationDeadlock
from .features import feature_scales, global_summary, observe_rows
from .generate import generate, micro_1, preset
from .quotient import abstract_state, canonical_candidates

PROTOCOL_VERSION = "toteflow_proto_v1"
DEFAULT_LISTEN = "127.0.0.1:4157"


def _instance_from_reset(msg: dict):
    if "instance" in msg:
        return instance_from_dict(msg["instance"]), msg.get("name", "inline")
    name = msg.get("preset")
    if name is None:
        raise ProtocolError("reset needs an inline instance or a preset name")
    if name == "micro-1":
        return micro_1(), name
    import dataclasses

    from .domain import SystemKind

    cfg = preset(name, seed=int(msg.get("seed", 0)))
    if "system" in msg:
        cfg = dataclasses.replace(cfg, kind=SystemKind(msg["system"]))
    if "horizon" in msg:
        cfg = dataclasses.replace(cfg, arrival_horizon=float(msg["horizon"]))
    return generate(cfg), name


def observe_message(
    session_id: int, state: WarehouseState, dp: DecisionPoint, scales
) -> dict:
    rows, mask = observe_rows(dp, state, scales)
    key = abstract_state(state, dp)
    canon = canonical_candidates(dp, state)
    cand_list = list(dp.candidates)
    return {
        "kind": "observe",
        "session": session_id,
        "stage": dp.stage.value,
        "subject": dp.subject,
        "clock": state.clock,
        "z_retrievals": state.z_retrievals,
        "z_returns": state.z_returns,
        "candidates": cand_list,
        "mask": mask,
        "features": rows,
        "canonical_order": [0] + [cand_list.index(a) for a in canon],
        "abstract_key": {"hash": key.hash},
        "global_summary": global_summary(state),
    }


class _Handler(socketserver.StreamRequestHandler):
    def _send(self, payload: dict) -> None:
        self.wfile.write((json.dumps(payload, sort_keys=True) + "\n").encode())
        self.wfile.flush()

    def _advance(self, sess: dict) -> None:
        state = sess["state"]
        try:
            out = next_decision(state)
        except SimulationDeadlock as exc:
            sess["in_episode"] = False
            self._send(
                {"kind": "error", "code": "deadlock", "message": str(exc), "stage": exc.stage}
            )
            return
        if isinstance(out, MetricsReport):
            sess["in_episode"] = False
            self._send(
                {
                    "kind": "terminal",
                    "session": sess["id"],
                    "metrics": out.to_dict(),
                    "action_records": [r.to_dict() for r in state.records],
                }
            )
        else:
            sess["dp"] = out
            self._send(observe_message(sess["id"], state, out, sess["scales"]))

    def handle(self) -> None:
        sess: dict | None = None
        next_id = 0
        for raw in self.rfile:
            try:
                msg = json.loads(raw.decode("utf-8"))
                if not isinstance(msg, dict):
                    raise ValueError("not an object")
            except (ValueError, UnicodeDecodeError) as exc:
                self._send({"kind": "error", "code": "malformed", "message": str(exc)})
                continue
            kind = msg.get("kind")
            if kind == "reset":
                if sess is not None and sess["in_episode"]:
                    self._send(
                        {
                            "kind": "error",
                            "code": "protocol_order",
                            "message": "reset during a live episode",
                        }
                    )
                    return
                try:
                    instance, name = _instance_from_reset(msg)
                    state = reset(instance)
                except Exception as exc:
                    self._send({"kind": "error", "code": "bad_instance", "message": str(exc)})
                    continue
                next_id += 1
                sess = {
                    "id": next_id,
                    "state": state,
                    "scales": feature_scales(instance),
                    "dp": None,
                    "in_episode": True,
                }
                self._send(
                    {
                        "kind": "reset_ok",
                        "proto": PROTOCOL_VERSION,
                        "session": sess["id"],
                        "instance_name": name,
                        "standardization": sess["scales"],
                    }
                )
                self._advance(sess)
            elif kind == "act":
                if sess is None or not sess["in_episode"] or sess["dp"] is None:
                    self._send(
                        {
                            "kind": "error",
                            "code": "protocol_order",
                            "message": "act without a pending observation",
                        }
                    )
                    return
                idx = msg.get("action_index")
                dp = sess["dp"]
                if (
                    not isinstance(idx, int)
                    or not 0 <= idx < len(dp.candidates)
                    or not dp.mask[idx]
                ):
                    self._send(
                        {
                            "kind": "error",
                            "code": "infeasible_action",
                            "message": f"action index {idx!r} is not feasible",
                        }
                    )
                    continue
                apply_action(sess["state"], dp, dp.candidates[idx])
                sess["dp"] = None
                self._advance(sess)
            else:
                self._send(
                    {
                        "kind": "error",
                        "code": "malformed",
                        "message": f"unknown message kind {kind!r}",
                    }
                )


class EnvServer:
    """Bindable server object; use as a context manager in tests."""

    def __init__(self, listen: str = "127.0.0.1:0"):
        host, _, port = listen.rpartition(":")
        self._srv = socketserver.ThreadingTCPServer(
            (host or "127.0.0.1", int(port)), _Handler
        )
        self._srv.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self._srv.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "EnvServer":
        self._thread = threading.Thread(target=self._srv.serve_forever, daemon=True)
        self._thread.start()
        return self

    def shutdown(self) -> None:
        self._srv.shutdown()
        self._srv.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "EnvServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.shutdown()


def serve(listen: str = DEFAULT_LISTEN) -> None:
    """Blocking entry point used by the CLI."""
    server = EnvServer(listen)
    print(f"toteflow env server listening on {server.address}", flush=True)
    try:
        server._srv.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()


class EnvClient:
    """Minimal line-oriented client for the wire protocol."""

    def __init__(self, address: str, timeout: float = 30.0):
        host, _, port = address.rpartition(":")
        self._sock = socket.create_connection((host, int(port)), timeout=timeout)
        self._file = self._sock.makefile("rwb")

    def _rpc(self, payload: dict) -> dict:
        self._file.write((json.dumps(payload) + "\n").encode())
        self._file.flush()
        return self._read()

    def _read(self) -> dict:
        line = self._file.readline()
        if not line:
            raise ProtocolError("server closed the connection")
        return json.loads(line.decode("utf-8"))

    def reset(self, **kwargs) -> tuple[dict, dict]:
        """Returns (reset_ok, first observe-or-terminal)."""
        ack = self._rpc({"kind": "reset", **kwargs})
        if ack.get("kind") != "reset_ok":
            raise ProtocolError(f"reset rejected: {ack}")
        return ack, self._read()

    def act(self, action_index: int) -> dict:
        return self._rpc({"kind": "act", "action_index": action_index})

    def close(self) -> None:
        try:
            self._file.close()
        finally:
            self._sock.close()

    def __enter__(self) -> "EnvClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def run_served_episode(client: EnvClient, choose, **reset_kwargs) -> dict:
    """Drive one episode through a client; ``choose(observe) -> action index``.

    Returns the terminal message.
    """
    _, msg = client.reset(**reset_kwargs)
    while msg["kind"] == "observe":
        msg = client.act(choose(msg))
    if msg["kind"] != "terminal":
        raise ProtocolError(f"episode ended abnormally: {msg}")
    return msg

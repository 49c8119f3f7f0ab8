"""Client side of the toteflow external interfaces.

The learner never imports the simulator package: instances, trajectories,
and datasets flow through files produced by the ``toteflow`` CLI, and
episodes run over the newline-delimited JSON socket protocol described in
the simulator's docs/protocol.md.
"""

from __future__ import annotations

import json
import os
import shlex
import socket
import subprocess
import sys
import time
from pathlib import Path


def toteflow_command() -> list[str]:
    """Command vector for the simulator CLI; override with TOTEFLOW_CMD."""
    override = os.environ.get("TOTEFLOW_CMD")
    if override:
        return shlex.split(override)
    return [sys.executable, "-m", "toteflow.cli"]


def run_toteflow(*args: str, timeout: float = 600.0) -> str:
    proc = subprocess.run(
        [*toteflow_command(), *args],
        capture_output=True,
        text=True,
        timeout=timeout,
    )
    if proc.returncode != 0:
        raise RuntimeError(
            f"toteflow {' '.join(args)} failed:\n{proc.stdout}\n{proc.stderr}"
        )
    return proc.stdout


def gen_instance(out: Path, *, preset: str | None = None, seed: int = 0, **counts) -> Path:
    args = ["gen", "--seed", str(seed), "--out", str(out)]
    if preset:
        args += ["--preset", preset]
    for key, value in counts.items():
        if value is not None:
            args += [f"--{key}", str(value)]
    run_toteflow(*args)
    return out


def solve_instance(
    instance_path: Path, result_path: Path, traj_path: Path | None = None
) -> dict:
    args = ["solve", "--in", str(instance_path), "--out", str(result_path)]
    if traj_path is not None:
        args += ["--export-traj", str(traj_path)]
    run_toteflow(*args)
    return json.loads(Path(result_path).read_text())


def concat_trajectories(traj_paths: list[Path], out: Path) -> Path:
    """Merge per-instance trajectory files into one (single header kept)."""
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"version": "toteflow_traj_v1", "count": len(traj_paths)}) + "\n")
        for path in traj_paths:
            with open(path, encoding="utf-8") as src:
                src.readline()  # skip its header
                for line in src:
                    if line.strip():
                        fh.write(line)
    return out


def build_dataset(traj_path: Path, out: Path) -> Path:
    run_toteflow("dataset", "--traj", str(traj_path), "--out", str(out))
    return out


class SimulatorServer:
    """Spawns ``toteflow serve`` on an ephemeral port; context manager."""

    def __init__(self):
        self._proc: subprocess.Popen | None = None
        self.address: str | None = None

    def __enter__(self) -> "SimulatorServer":
        self._proc = subprocess.Popen(
            [*toteflow_command(), "serve", "--listen", "127.0.0.1:0"],
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            text=True,
        )
        line = self._proc.stdout.readline()
        marker = "listening on "
        if marker not in line:
            raise RuntimeError(f"simulator server failed to start: {line!r}")
        self.address = line.split(marker, 1)[1].strip()
        return self

    def __exit__(self, *exc) -> None:
        if self._proc is not None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()


class EpisodeClient:
    """One socket connection speaking the decision-environment protocol."""

    def __init__(self, address: str, timeout: float = 60.0):
        host, _, port = address.rpartition(":")
        self._sock = socket.create_connection((host, int(port)), timeout=timeout)
        self._file = self._sock.makefile("rwb")
        self.standardization: dict | None = None

    def _send(self, payload: dict) -> None:
        self._file.write((json.dumps(payload) + "\n").encode())
        self._file.flush()

    def _read(self) -> dict:
        line = self._file.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        return json.loads(line.decode())

    def reset(self, **kwargs) -> dict:
        self._send({"kind": "reset", **kwargs})
        ack = self._read()
        if ack.get("kind") != "reset_ok":
            raise RuntimeError(f"reset rejected: {ack}")
        self.standardization = ack["standardization"]
        return self._read()

    def act(self, action_index: int) -> dict:
        self._send({"kind": "act", "action_index": action_index})
        return self._read()

    def close(self) -> None:
        try:
            self._file.close()
        finally:
            self._sock.close()

    def __enter__(self) -> "EpisodeClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def run_episode(client: EpisodeClient, choose, **reset_kwargs) -> dict:
    """Drives one episode; ``choose(observe) -> candidates index``. Returns
    the terminal message."""
    msg = client.reset(**reset_kwargs)
    while msg["kind"] == "observe":
        msg = client.act(choose(msg))
    if msg["kind"] != "terminal":
        raise RuntimeError(f"episode ended abnormally: {msg}")
    return msg


def destandardize(row: list[float], scales: list[list[float]]) -> list[float]:
    """Invert the server's per-column (offset, scale) standardization."""
    return [x * sc + off for x, (off, sc) in zip(row, scales)]

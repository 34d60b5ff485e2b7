"""Wire format, run configuration and transcripts for the distributed experiment.

Every connection carries newline-delimited JSON. The connecting side opens
with ``{"type": "hello", "role": ...}``. Message types::

    source -> alice/bob   ball {trial, coord}, sync {upto}, end
    source -> collector   manifest {n_trials, config_hash}, sync {upto}, end
    alice/bob -> collector result {trial, station, label, outcome}, end
    collector -> source   ack {upto}       (flow control only)
"""

from __future__ import annotations

import hashlib
import json
import os
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from ..chessboard import HolePattern, canonical_pattern, require_valid
from ..core import SwitchPolicy
from ..rng import Seeds

ROLES = ("source", "alice", "bob", "collector")
STATION_OF = {"alice": "A", "bob": "B"}
ENV_VARS = {
    "source": "HARNESS_SOURCE",
    "alice": "HARNESS_ALICE",
    "bob": "HARNESS_BOB",
    "collector": "HARNESS_COLLECTOR",
}


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int

    @classmethod
    def parse(cls, text: str) -> "Endpoint":
        host, sep, port = text.rpartition(":")
        if not sep or not host:
            raise ValueError(f"endpoint {text!r} is not host:port")
        return cls(host, int(port))

    def __str__(self) -> str:
        return f"{self.host}:{self.port}"


@dataclass
class RunConfig:
    pattern: HolePattern
    policy: SwitchPolicy
    n_trials: int
    seeds: Seeds
    endpoints: dict = field(default_factory=dict)  # role -> Endpoint
    sync_every: int = 10_000
    high_water: int = 10_000
    timeout: float = 60.0
    retries: int = 50

    def __post_init__(self):
        require_valid(self.pattern)
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.sync_every < 1:
            raise ValueError("sync_every must be >= 1")
        eps = [str(e) for e in self.endpoints.values()]
        if len(set(eps)) != len(eps):
            raise ValueError("roles must have distinct endpoints")

    def fingerprint(self) -> str:
        """Hash of everything that determines the data (not the endpoints)."""
        body = {
            "pattern": sorted(self.pattern.cells),
            "p_a": repr(float(self.policy.p_a)),
            "p_b": repr(float(self.policy.p_b)),
            "n_trials": self.n_trials,
            "seeds": self.seeds.as_dict(),
            "sync_every": self.sync_every,
        }
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]

    def endpoint(self, role: str) -> Endpoint:
        try:
            return self.endpoints[role]
        except KeyError:
            raise ValueError(f"no endpoint configured for {role}") from None


def endpoints_from_env(defaults: Optional[dict] = None) -> dict:
    out = dict(defaults or {})
    for role, var in ENV_VARS.items():
        if os.environ.get(var):
            out[role] = Endpoint.parse(os.environ[var])
    return out


def default_config(**kw) -> RunConfig:
    kw.setdefault("pattern", canonical_pattern())
    kw.setdefault("policy", SwitchPolicy(0.9, 0.9))
    kw.setdefault("n_trials", 1000)
    kw.setdefault("seeds", Seeds.from_master(0))
    return RunConfig(**kw)


# --- message encoding -------------------------------------------------------------


def hello(role: str) -> str:
    return f'{{"type": "hello", "role": "{role}"}}'


def ball(trial: int, coord: float) -> str:
    return f'{{"type": "ball", "trial": {trial}, "coord": {coord!r}}}'


def result(trial: int, station: str, label: str, outcome: int) -> str:
    return (
        f'{{"type": "result", "trial": {trial}, "station": "{station}", '
        f'"label": "{label}", "outcome": {outcome}}}'
    )


def manifest(n_trials: int, config_hash: str) -> str:
    return f'{{"type": "manifest", "n_trials": {n_trials}, "config_hash": "{config_hash}"}}'


def sync(upto: int) -> str:
    return f'{{"type": "sync", "upto": {upto}}}'


def ack(upto: int) -> str:
    return f'{{"type": "ack", "upto": {upto}}}'


END = '{"type": "end"}'


def decode(line) -> dict:
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed message {line!r}: {exc}") from None
    if not isinstance(msg, dict) or "type" not in msg:
        raise ProtocolError(f"message without type: {line!r}")
    return msg


# --- transcripts -------------------------------------------------------------


class Transcript:
    """Line-per-message log of everything a role sends and receives.

    Each line is ``{"dir": "send"|"recv", "from": role, "to": role, "msg": {...}}``.
    A ``None`` path keeps nothing.
    """

    def __init__(self, role: str, path=None):
        self.role = role
        self._fh = open(path, "w", encoding="utf-8") if path else None
        self._lock = threading.Lock()

    @property
    def enabled(self) -> bool:
        return self._fh is not None

    def sent(self, peer: str, line: str) -> None:
        if self._fh:
            with self._lock:
                self._fh.write(f'{{"dir": "send", "from": "{self.role}", "to": "{peer}", "msg": {line}}}\n')

    def received(self, peer: str, line: str) -> None:
        if self._fh:
            with self._lock:
                self._fh.write(f'{{"dir": "recv", "from": "{peer}", "to": "{self.role}", "msg": {line}}}\n')

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


def read_transcript(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# --- sockets -------------------------------------------------------------------


class Channel:
    """One buffered NDJSON connection to a known peer."""

    def __init__(self, sock: socket.socket, peer: str, transcript: Transcript):
        self.sock = sock
        self.peer = peer
        self.transcript = transcript
        self.rfile = sock.makefile("rb", buffering=1 << 16)
        self.wfile = sock.makefile("wb", buffering=1 << 16)

    def send(self, line: str, flush: bool = False) -> None:
        self.transcript.sent(self.peer, line)
        self.wfile.write(line.encode("utf-8") + b"\n")
        if flush:
            self.wfile.flush()

    def flush(self) -> None:
        self.wfile.flush()

    def recv_hello(self) -> Optional[str]:
        """Read the opening hello, adopt the claimed role as peer name, and log it."""
        raw = self.rfile.readline()
        if not raw:
            return None
        line = raw.decode("utf-8", errors="replace").rstrip("\n")
        try:
            msg = decode(line)
        except ProtocolError:
            self.transcript.received(self.peer, json.dumps({"type": "malformed", "raw": line}))
            return None
        role = msg.get("role") if msg.get("type") == "hello" else None
        if isinstance(role, str):
            self.peer = role
        self.transcript.received(self.peer, line)
        return role if msg.get("type") == "hello" else None

    def recv(self) -> Optional[dict]:
        """Next decoded message, or None at EOF. Malformed lines are logged, then raised."""
        raw = self.rfile.readline()
        if not raw:
            return None
        line = raw.decode("utf-8", errors="replace").rstrip("\n")
        try:
            msg = decode(line)
        except ProtocolError:
            self.transcript.received(self.peer, json.dumps({"type": "malformed", "raw": line}))
            raise
        self.transcript.received(self.peer, line)
        return msg

    def close(self) -> None:
        for f in (self.wfile, self.rfile):
            try:
                f.close()
            except OSError:
                pass
        try:
            self.sock.close()
        except OSError:
            pass


def connect(endpoint: Endpoint, retries: int = 50, delay: float = 0.1) -> socket.socket:
    last = None
    for _ in range(max(retries, 1)):
        try:
            sock = socket.create_connection((endpoint.host, endpoint.port), timeout=30)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            sock.settimeout(None)
            return sock
        except OSError as exc:
            last = exc
            time.sleep(delay)
    raise ConnectionError(f"cannot reach {endpoint} after {retries} attempts: {last}")


def listen(endpoint: Endpoint) -> socket.socket:
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((endpoint.host, endpoint.port))
    srv.listen(8)
    return srv


def free_port(host: str = "127.0.0.1") -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.bind((host, 0))
        return s.getsockname()[1]


def config_to_dict(config: RunConfig) -> dict:
    return {
        "pattern": [list(c) for c in config.pattern.sorted_cells()],
        "p_a": float(config.policy.p_a),
        "p_b": float(config.policy.p_b),
        "n_trials": config.n_trials,
        "seeds": config.seeds.as_dict(),
        "endpoints": {role: str(ep) for role, ep in config.endpoints.items()},
        "sync_every": config.sync_every,
        "high_water": config.high_water,
        "timeout": config.timeout,
        "retries": config.retries,
    }


def config_from_dict(d: dict) -> RunConfig:
    return RunConfig(
        pattern=HolePattern(tuple(c) for c in d["pattern"]),
        policy=SwitchPolicy(d["p_a"], d["p_b"]),
        n_trials=int(d["n_trials"]),
        seeds=Seeds(**d["seeds"]),
        endpoints={role: Endpoint.parse(ep) for role, ep in d.get("endpoints", {}).items()},
        sync_every=int(d.get("sync_every", 10_000)),
        high_water=int(d.get("high_water", 10_000)),
        timeout=float(d.get("timeout", 60.0)),
        retries=int(d.get("retries", 50)),
    )

"""The four processes of the distributed experiment: source, two stations, collector."""

from __future__ import annotations

import logging
import socket
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..chessboard import sample_lambdas, station_result
from ..core import CollectionMode, SettingLabel, Station, TrialBatch
from ..rng import LambdaStreams, stream
from ..stats import (
    ChshResult,
    EfficiencyReport,
    EstimationError,
    Single,
    efficiency_audit,
    estimate,
)
from . import protocol as proto
from .protocol import Channel, ProtocolError, RunConfig, Transcript

log = logging.getLogger(__name__)


# --- source -------------------------------------------------------------------


@dataclass
class SourceSummary:
    n_sent: int
    acks: int


def run_source(config: RunConfig, transcript_path=None) -> SourceSummary:
    """Sample hidden variables and send each station only its own coordinate."""
    tr = Transcript("source", transcript_path)
    chans = {}
    try:
        for role in ("collector", "alice", "bob"):
            sock = proto.connect(config.endpoint(role), retries=config.retries)
            sock.settimeout(config.timeout)
            chans[role] = ch = Channel(sock, role, tr)
            ch.send(proto.hello("source"))
        collector, alice, bob = chans["collector"], chans["alice"], chans["bob"]
        collector.send(proto.manifest(config.n_trials, config.fingerprint()), flush=True)

        streams = LambdaStreams(config.seeds.source)
        sent = acks = 0
        while sent < config.n_trials:
            k = min(config.sync_every, config.n_trials - sent)
            lam = sample_lambdas(streams, config.pattern, k).tolist()
            for t, (a, b) in enumerate(lam, sent):
                alice.send(proto.ball(t, a))
                bob.send(proto.ball(t, b))
            sent += k
            for ch in (alice, bob, collector):
                ch.send(proto.sync(sent), flush=True)
            msg = collector.recv()
            if msg is None or msg.get("type") != "ack" or msg.get("upto") != sent:
                raise ProtocolError(f"expected ack for {sent}, got {msg!r}")
            acks += 1
        for ch in (alice, bob, collector):
            ch.send(proto.END, flush=True)
        return SourceSummary(sent, acks)
    except socket.timeout:
        raise ConnectionError("source timed out waiting for the collector") from None
    finally:
        for ch in chans.values():
            ch.close()
        tr.close()


# --- stations ---------------------------------------------------------------------


@dataclass
class StationSummary:
    role: str
    processed: int = 0
    rejected: list = field(default_factory=list)  # (trial or None, reason)
    refused_peers: list = field(default_factory=list)


def _accept_source(srv: socket.socket, tr: Transcript, summary: StationSummary) -> Channel:
    while True:
        conn, _ = srv.accept()
        ch = Channel(conn, "unknown", tr)
        peer = ch.recv_hello()
        if peer == "source":
            return ch
        summary.refused_peers.append(peer)
        log.warning("%s refused a connection from %r", summary.role, peer)
        ch.close()


def _check_ball(msg: dict) -> Optional[str]:
    if set(msg) != {"type", "trial", "coord"}:
        return f"ball must carry exactly trial and coord, got keys {sorted(msg)}"
    if not isinstance(msg["trial"], int) or msg["trial"] < 0:
        return "bad trial id"
    coord = msg["coord"]
    if isinstance(coord, bool) or not isinstance(coord, (int, float)) or not 0.0 <= coord <= 4.0:
        return f"coordinate {coord!r} outside [0, 4]"
    return None


def run_station(config: RunConfig, role: str, transcript_path=None, listener=None) -> StationSummary:
    """Turn each incoming ball into (label, outcome) using a local switch stream.

    The station listens only for the source and talks only to the collector.
    """
    if role not in proto.STATION_OF:
        raise ValueError(f"not a station role: {role}")
    station = Station(proto.STATION_OF[role])
    p = config.policy.p_a if station is Station.ALICE else config.policy.p_b
    rng = stream(config.seeds.alice if station is Station.ALICE else config.seeds.bob)
    summary = StationSummary(role)
    tr = Transcript(role, transcript_path)
    srv = listener or proto.listen(config.endpoint(role))
    collector = src = None
    try:
        sock = proto.connect(config.endpoint("collector"), retries=config.retries)
        collector = Channel(sock, "collector", tr)
        collector.send(proto.hello(role), flush=True)
        srv.settimeout(config.timeout)
        src = _accept_source(srv, tr, summary)
        src.sock.settimeout(config.timeout)
        while True:
            try:
                msg = src.recv()
            except ProtocolError as exc:
                summary.rejected.append((None, str(exc)))
                log.warning("%s rejected: %s", role, exc)
                continue
            if msg is None:
                raise ConnectionError(f"{role}: source closed before end")
            kind = msg["type"]
            if kind == "ball":
                problem = _check_ball(msg)
                if problem:
                    summary.rejected.append((msg.get("trial"), problem))
                    log.warning("%s rejected trial %s: %s", role, msg.get("trial"), problem)
                    continue
                swapped = rng.random() < p
                label, outcome = station_result(station, float(msg["coord"]), swapped)
                collector.send(proto.result(msg["trial"], station.value, str(label), outcome))
                summary.processed += 1
            elif kind == "sync":
                collector.flush()
            elif kind == "end":
                collector.send(proto.END, flush=True)
                return summary
            else:
                summary.rejected.append((None, f"unexpected message type {kind!r}"))
    except socket.timeout:
        raise ConnectionError(f"{role} timed out") from None
    finally:
        for ch in (src, collector):
            if ch is not None:
                ch.close()
        srv.close()
        tr.close()


# --- collector ---------------------------------------------------------------------


@dataclass
class CollectorResult:
    records: TrialBatch
    singles: list
    errors: list
    chsh: Optional[ChshResult]
    efficiency: EfficiencyReport
    n_trials: int
    stats_error: Optional[str] = None  # why chsh is None; not a protocol fault

    @property
    def flagged(self) -> bool:
        return bool(self.errors)


class ResultJoiner:
    """Pairs Alice and Bob results by trial id, in any arrival order.

    Both halves live in preallocated per-station arrays, so duplicates and
    out-of-range ids are detected in O(1) and the output is in trial order
    regardless of how messages interleaved.
    """

    def __init__(self, n_trials: int):
        self.n = n_trials
        self.have = {s: np.zeros(n_trials, dtype=bool) for s in "AB"}
        self.primed = {s: np.zeros(n_trials, dtype=bool) for s in "AB"}
        self.outcome = {s: np.zeros(n_trials, dtype=np.int8) for s in "AB"}
        self.received = {"A": 0, "B": 0}
        self.errors: list[str] = []

    def add(self, msg: dict, sender: Optional[str] = None) -> bool:
        try:
            trial = msg["trial"]
            st = msg["station"]
            label = SettingLabel.parse(msg["label"])
            outcome = msg["outcome"]
        except (KeyError, ValueError) as exc:
            self.errors.append(f"malformed result {msg!r}: {exc}")
            return False
        if sender is not None and proto.STATION_OF.get(sender) != st:
            self.errors.append(f"{sender} sent a result for station {st} (trial {trial})")
            return False
        if st not in self.have or label.station.value != st:
            self.errors.append(f"label {label} does not belong to station {st} (trial {trial})")
            return False
        if not isinstance(trial, int) or not 0 <= trial < self.n:
            self.errors.append(f"trial id {trial!r} out of range")
            return False
        if outcome not in (-1, 1):
            self.errors.append(f"outcome {outcome!r} not +-1 (trial {trial})")
            return False
        if self.have[st][trial]:
            self.errors.append(f"duplicate result for trial {trial} station {st}")
            return False
        self.have[st][trial] = True
        self.primed[st][trial] = label.primed
        self.outcome[st][trial] = outcome
        self.received[st] += 1
        return True

    def unmatched(self) -> int:
        return int(np.count_nonzero(self.have["A"] ^ self.have["B"]))

    def finish(self) -> CollectorResult:
        both = self.have["A"] & self.have["B"]
        idx = np.flatnonzero(both)
        records = TrialBatch(
            trial=idx.astype(np.int64),
            a_primed=self.primed["A"][idx],
            a_out=self.outcome["A"][idx],
            b_primed=self.primed["B"][idx],
            b_out=self.outcome["B"][idx],
        )
        singles = []
        for st, other in (("A", "B"), ("B", "A")):
            for t in np.flatnonzero(self.have[st] & ~self.have[other]).tolist():
                label = SettingLabel(Station(st), bool(self.primed[st][t]))
                singles.append(Single(t, label, int(self.outcome[st][t])))
        singles.sort(key=lambda s: (s.trial_id, s.label.station.value))
        chsh, stats_error = None, "no coincidences"
        if len(records):
            try:
                chsh, stats_error = estimate(records, CollectionMode.SWITCH), None
            except EstimationError as exc:
                stats_error = str(exc)
        eff = efficiency_audit(records, singles)
        return CollectorResult(records, singles, list(self.errors), chsh, eff, self.n, stats_error)


class Collector:
    """Network front end for :class:`ResultJoiner`.

    One thread per inbound connection; all state changes happen under one
    condition variable. The source's ``sync(upto)`` is acknowledged once both
    stations have delivered at least ``upto - high_water`` results, which
    bounds the number of half-trials buffered here.
    """

    def __init__(self, config: RunConfig, transcript_path=None, listener=None):
        self.config = config
        self.joiner = ResultJoiner(config.n_trials)
        self.tr = Transcript("collector", transcript_path)
        self.srv = listener or proto.listen(config.endpoint("collector"))
        self.cond = threading.Condition()
        self.ended: set[str] = set()
        self.connected: set[str] = set()
        self.threads: list[threading.Thread] = []

    def _error(self, text: str) -> None:
        with self.cond:
            self.joiner.errors.append(text)
            self.cond.notify_all()

    def _handle(self, conn: socket.socket) -> None:
        ch = Channel(conn, "unknown", self.tr)
        conn.settimeout(self.config.timeout)
        try:
            peer = ch.recv_hello()
            if peer not in ("source", "alice", "bob"):
                self._error(f"connection without a valid hello (peer {peer!r})")
                return
            with self.cond:
                if peer in self.connected:
                    self.joiner.errors.append(f"second connection claiming to be {peer}")
                    return
                self.connected.add(peer)
            if peer == "source":
                self._serve_source(ch)
            else:
                self._serve_station(ch, peer)
        except (OSError, ProtocolError) as exc:
            self._error(f"connection {ch.peer}: {exc}")
        finally:
            with self.cond:
                self.cond.notify_all()
            ch.close()

    def _serve_source(self, ch: Channel) -> None:
        while True:
            msg = ch.recv()
            if msg is None:
                self._error("source disconnected before end")
                self._mark_end("source")
                return
            kind = msg["type"]
            if kind == "manifest":
                if msg.get("n_trials") != self.config.n_trials or msg.get("config_hash") != self.config.fingerprint():
                    self._error(f"manifest does not match collector config: {msg!r}")
            elif kind == "sync":
                upto = int(msg["upto"])
                need = upto - self.config.high_water
                with self.cond:
                    ok = self.cond.wait_for(
                        lambda: min(self.joiner.received.values()) >= need
                        or {"alice", "bob"} <= self.ended,
                        timeout=self.config.timeout,
                    )
                if not ok:
                    self._error(f"stations fell behind sync {upto}")
                ch.send(proto.ack(upto), flush=True)
            elif kind == "end":
                self._mark_end("source")
                return
            else:
                self._error(f"source sent {kind!r} to the collector")

    def _serve_station(self, ch: Channel, peer: str) -> None:
        while True:
            try:
                msg = ch.recv()
            except ProtocolError as exc:
                self._error(f"{peer}: {exc}")
                continue
            if msg is None:
                self._error(f"{peer} disconnected before end")
                self._mark_end(peer)
                return
            kind = msg["type"]
            if kind == "result":
                with self.cond:
                    self.joiner.add(msg, sender=peer)
                    self.cond.notify_all()
            elif kind == "end":
                self._mark_end(peer)
                return
            else:
                self._error(f"{peer} sent unexpected {kind!r}")

    def _mark_end(self, role: str) -> None:
        with self.cond:
            self.ended.add(role)
            self.cond.notify_all()

    def serve(self) -> CollectorResult:
        stop = threading.Event()

        def accept_loop():
            self.srv.settimeout(0.2)
            while not stop.is_set():
                try:
                    conn, _ = self.srv.accept()
                except socket.timeout:
                    continue
                except OSError:
                    return
                t = threading.Thread(target=self._handle, args=(conn,), daemon=True)
                t.start()
                self.threads.append(t)

        acceptor = threading.Thread(target=accept_loop, daemon=True)
        acceptor.start()
        try:
            with self.cond:
                done = self.cond.wait_for(
                    lambda: {"alice", "bob", "source"} <= self.ended,
                    timeout=self.config.timeout * 4,
                )
            if not done:
                self._error(f"run did not finish; ended roles: {sorted(self.ended)}")
        finally:
            stop.set()
            acceptor.join()
            self.srv.close()
            for t in self.threads:
                t.join(timeout=5)
            self.tr.close()
        return self.joiner.finish()


def run_collector(config: RunConfig, transcript_path=None, records_path=None, listener=None) -> CollectorResult:
    result = Collector(config, transcript_path, listener).serve()
    if records_path is not None:
        with open(records_path, "w", encoding="utf-8") as fh:
            result.records.write(fh)
    return result

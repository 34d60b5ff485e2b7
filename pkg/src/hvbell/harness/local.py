"""Launch all four roles on this machine, as threads or as separate processes."""

from __future__ import annotations

import json
import subprocess
import sys
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from ..core import SettingLabel, as_batch, read_records
from ..stats import Single, efficiency_audit, estimate
from . import protocol as proto
from .audit import AuditVerdict, audit_run
from .roles import CollectorResult, run_collector, run_source, run_station


@dataclass
class HarnessRun:
    collector: CollectorResult
    transcripts: dict  # role -> path
    records_path: Path
    audit: Optional[AuditVerdict]


def local_endpoints(host: str = "127.0.0.1") -> dict:
    return {role: proto.Endpoint(host, proto.free_port(host)) for role in proto.ROLES}


def transcript_paths(workdir: Path) -> dict:
    return {role: workdir / f"{role}.transcript.jsonl" for role in proto.ROLES}


def run_threads(config: proto.RunConfig, workdir, transcripts: bool = True) -> HarnessRun:
    """All roles in one process on loopback sockets; each role keeps to its own sockets."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    if not config.endpoints:
        config = replace(config, endpoints=local_endpoints())
    paths = transcript_paths(workdir) if transcripts else dict.fromkeys(proto.ROLES)
    records_path = workdir / "records.jsonl"

    # Bind listeners up front so no role races another's startup.
    listeners = {r: proto.listen(config.endpoint(r)) for r in ("collector", "alice", "bob")}
    out: dict = {}
    failures: list = []

    def go(name, fn, *args, **kw):
        try:
            out[name] = fn(*args, **kw)
        except BaseException as exc:  # surfaced below
            failures.append((name, exc))

    threads = [
        threading.Thread(
            target=go,
            args=("collector", run_collector, config, paths["collector"], records_path),
            kwargs={"listener": listeners["collector"]},
        ),
        threading.Thread(
            target=go,
            args=("alice", run_station, config, "alice", paths["alice"]),
            kwargs={"listener": listeners["alice"]},
        ),
        threading.Thread(
            target=go,
            args=("bob", run_station, config, "bob", paths["bob"]),
            kwargs={"listener": listeners["bob"]},
        ),
        threading.Thread(target=go, args=("source", run_source, config, paths["source"])),
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if failures:
        name, exc = failures[0]
        raise RuntimeError(f"role {name} failed: {exc}") from exc
    verdict = audit_run({r: p for r, p in paths.items()}) if transcripts else None
    return HarnessRun(out["collector"], paths if transcripts else {}, records_path, verdict)


def run_processes(config: proto.RunConfig, workdir, transcripts: bool = True) -> HarnessRun:
    """Each role as its own OS process via ``python -m hvbell serve``."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    if not config.endpoints:
        config = replace(config, endpoints=local_endpoints())
    cfg_path = workdir / "run.json"
    cfg_path.write_text(json.dumps(proto.config_to_dict(config), indent=2))
    paths = transcript_paths(workdir)
    records_path = workdir / "records.jsonl"
    summary_path = workdir / "collector.json"

    def cmd(role):
        c = [sys.executable, "-m", "hvbell", "serve", "--role", role, "--config", str(cfg_path)]
        if transcripts:
            c += ["--transcript", str(paths[role])]
        if role == "collector":
            c += ["--records", str(records_path), "--summary", str(summary_path)]
        return c

    procs = {}
    for role in ("collector", "alice", "bob", "source"):
        procs[role] = subprocess.Popen(cmd(role), stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    errors = []
    for role, p in procs.items():
        stdout, stderr = p.communicate(timeout=config.timeout * 5)
        if p.returncode != 0:
            errors.append(f"{role} exited {p.returncode}: {stderr.strip()}")
    if errors:
        raise RuntimeError("; ".join(errors))

    with open(records_path) as fh:
        records = as_batch(read_records(fh))
    summary = json.loads(summary_path.read_text())
    singles = [
        Single(s["trial"], SettingLabel.parse(s["label"]), s["outcome"]) for s in summary["singles"]
    ]
    result = CollectorResult(
        records=records,
        singles=singles,
        errors=summary["errors"],
        chsh=estimate(records) if summary["chsh"] else None,
        efficiency=efficiency_audit(records, singles),
        n_trials=config.n_trials,
        stats_error=summary["stats_error"],
    )
    verdict = audit_run(paths) if transcripts else None
    return HarnessRun(result, paths if transcripts else {}, records_path, verdict)


def collector_summary(result: CollectorResult) -> dict:
    eff = result.efficiency
    return {
        "n_trials": result.n_trials,
        "coincidences": eff.coincidences,
        "coincidence_fraction": eff.fraction,
        "singles": [
            {"trial": s.trial_id, "label": str(s.label), "outcome": s.outcome} for s in result.singles
        ],
        "errors": result.errors,
        "stats_error": result.stats_error,
        "chsh": result.chsh.as_dict() if result.chsh else None,
    }

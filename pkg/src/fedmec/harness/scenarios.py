"""Scenario pipelines and latency reports.

Every scenario follows the same script.  A *prelude* in the home network
attaches the UE, logs it into the app, stores its state and detaches.  At
the move instant t0 the UE attaches to the visited network, authenticates
to the app there and (optionally) resumes its session.  Stage instants come
from marks set by the entities themselves:

* U1  t0 -> UE receives InitialContextSetupRequest
* U2  end of U1 -> app session established
* U3  end of U2 -> UE receives the resumed state
* M1  subscription fetch issued -> stored in the visited datastore
* M2  state fetch issued by the target AMS -> state received
* M3  app registers for mobility -> watch filed at the neighbour's manager
"""

from __future__ import annotations

import csv
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from fedmec.errors import InvariantViolation, IoFailure
from fedmec.harness.config import (
    CLOUD,
    MEC,
    ON_ARRIVAL,
    ON_DEMAND,
    PREFETCH,
    PROXY,
    REAUTH,
    SCENARIO_CODES,
    TOKEN_REUSE,
    AppSpec,
    ScenarioConfig,
)
from fedmec.harness.topology import SIM, Federation, build_federation
from fedmec.netsim import TraceRecord

log = logging.getLogger(__name__)

STAGES = ("U1", "U2", "U3", "M1", "M2", "M3")
SWEEP_PATHS = ("cloud", "proxy", "proxy-prefetch")
BREAKDOWN_STATE_BYTES = 1_000_000
INTERRUPTION_SCENARIOS = (1, 2, 3)


@dataclass
class LatencyReport:
    scenario: str
    stages: dict[str, tuple[float, float]]
    totals: dict[str, float]
    trace: list[TraceRecord] = field(default_factory=list, repr=False)
    marks: dict[str, float] = field(default_factory=dict)
    decomposition: dict[str, float] = field(default_factory=dict)
    t0: float = 0.0

    def duration(self, stage: str) -> float:
        start, end = self.stages[stage]
        return end - start

    @property
    def auth_latency(self) -> float:
        return self.totals["auth_latency"]

    @property
    def state_transfer_latency(self) -> float:
        return self.totals["state_transfer_latency"]

    @property
    def service_interruption(self) -> float:
        return self.totals["service_interruption"]

    def count(self, msg_name: str, src_prefix: str = "", dst_prefix: str = "") -> int:
        return sum(
            1 for r in self.trace
            if r.msg == msg_name and r.src.startswith(src_prefix) and r.dst.startswith(dst_prefix)
        )


@dataclass
class MoveOutcome:
    """Everything a scenario run leaves behind, for deeper inspection in tests."""

    report: LatencyReport
    federation: Federation
    prelude_token: str = ""


def state_blob(seed: int, size: int) -> bytes:
    return random.Random(f"state:{seed}:{size}").randbytes(size)


def _check(cond: bool, what: str) -> None:
    if not cond:
        raise InvariantViolation(what)


def run_prelude(fed: Federation, *, updates: Sequence[bytes] = ()) -> str:
    """Home attach, login, state updates, detach.  Returns the token the UE now holds."""
    cfg = fed.config
    net, ue = fed.net, fed.ue
    ue.login_mode, ue.app_id, ue.resume = REAUTH, cfg.app.id, False
    ue.attach(net, cfg.home)
    net.run_until_idle()
    _check(ue.attached and cfg.app.id in ue.sessions,
           f"prelude login failed in {cfg.home}: {ue.last_error}")
    home_app = fed.app(cfg.home)
    session = ue.sessions[cfg.app.id]
    blobs = list(updates) or [state_blob(cfg.seed, cfg.app.state_size_bytes)]
    for blob in blobs:
        home_app.app_update_state(net, session, blob)
    net.run_until_idle()
    ue.detach(net)
    net.run_until_idle()
    return ue.tokens[cfg.app.id]


def _begin_move(fed: Federation) -> float:
    net = fed.net
    if hasattr(net, "advance"):
        net.advance(math.floor(net.now_ms / 1000.0) * 1000.0 + 1000.0 - net.now_ms)
    net.marks.clear()
    return net.now_ms


def run_move(fed: Federation, *, resume: bool, label: Optional[str] = None,
             updates: Sequence[bytes] = ()) -> MoveOutcome:
    """Prelude at home, then the measured move into the visited network."""
    cfg = fed.config
    net, ue = fed.net, fed.ue
    token = run_prelude(fed, updates=updates)
    t0 = _begin_move(fed)
    first = len(net.trace)
    ue.login_mode = "token" if cfg.auth_mode == TOKEN_REUSE else "reauth"
    ue.resume = resume
    ue.attach(net, cfg.visited)
    net.run_until_idle()
    _check(ue.attached, f"attach to {cfg.visited} failed: {ue.last_error}")
    _check(ue.last_error is None, f"scenario failed: {ue.last_error}")
    report = _report(label or cfg.code, dict(net.marks), net.trace[first:], t0, resume)
    check_report(report, cfg, resume)
    return MoveOutcome(report, fed, token)


def _report(label: str, marks: dict[str, float], trace: list, t0: float, resume: bool) -> LatencyReport:
    def span(a: str, b: str):
        return (marks[a], marks[b]) if a in marks and b in marks else None

    _check("U1.end" in marks and "U2.end" in marks, f"{label}: UE never authenticated")
    stages: dict[str, tuple[float, float]] = {"U1": (t0, marks["U1.end"]), "U2": (marks["U1.end"], marks["U2.end"])}
    if resume:
        _check("U3.end" in marks, f"{label}: state never reached the UE")
        stages["U3"] = (marks["U2.end"], marks["U3.end"])
    for name in ("M1", "M2", "M3"):
        s = span(f"{name}.start", f"{name}.end")
        if s is not None:
            stages[name] = s
    totals = {"auth_latency": marks["U2.end"] - t0}
    if resume:
        totals["state_transfer_latency"] = marks["state.delivered"] - marks["state.demand"]
        totals["service_interruption"] = marks["U3.end"] - t0
    rep = LatencyReport(label, stages, totals, list(trace), marks, t0=t0)
    if resume:
        u3 = rep.duration("U3")
        visible = totals["state_transfer_latency"]
        rep.decomposition = {
            "attach": rep.duration("U1"),
            "auth": rep.duration("U2"),
            "mec_to_mec": visible,
            "mec_to_ue": u3 - visible,
        }
    return rep


def check_report(rep: LatencyReport, cfg: ScenarioConfig, resume: bool) -> None:
    """Structural invariants every report must satisfy."""
    u1, u2 = rep.stages["U1"], rep.stages["U2"]
    _check(u1[0] <= u1[1] <= u2[1], f"{rep.scenario}: U1/U2 out of order")
    if resume:
        u3 = rep.stages["U3"]
        _check(u2[1] <= u3[1], f"{rep.scenario}: U3 ends before U2")
        _check(rep.service_interruption == u3[1] - u1[0], f"{rep.scenario}: interruption != end(U3) - start(U1)")
        _check(rep.state_transfer_latency >= 0, f"{rep.scenario}: negative visible state transfer")
    if "M1" in rep.stages and cfg.subscription_fetch == ON_DEMAND:
        m1 = rep.stages["M1"]
        _check(u2[0] <= m1[0] and m1[1] <= u2[1], f"{rep.scenario}: on-demand M1 not nested in U2")
    if resume and "M2" in rep.stages and cfg.state_fetch == ON_ARRIVAL:
        m2, u3 = rep.stages["M2"], rep.stages["U3"]
        _check(u3[0] <= m2[0] and m2[1] <= u3[1], f"{rep.scenario}: on-arrival M2 not nested in U3")


# ---------------------------------------------------------------------------
# experiments


def run_auth_scenario(code: str, config: ScenarioConfig, transport: str = SIM) -> LatencyReport:
    return auth_outcome(code, config, transport).report


def auth_outcome(code: str, config: ScenarioConfig, transport: str = SIM) -> MoveOutcome:
    cfg = config.with_code(code)
    fed = build_federation(cfg, transport)
    try:
        return run_move(fed, resume=False, label=code)
    finally:
        fed.close()


def with_state_size(cfg: ScenarioConfig, size: int) -> ScenarioConfig:
    app = cfg.app
    return cfg.with_(apps=(AppSpec(app.id, app.key, size), *cfg.apps[1:]))


def sweep_config(config: ScenarioConfig, size: int, path: str) -> ScenarioConfig:
    if path not in SWEEP_PATHS:
        raise ValueError(f"unknown state path {path!r}; choose from {SWEEP_PATHS}")
    cfg = with_state_size(config, size)
    return cfg.with_(
        state_location=CLOUD if path == "cloud" else PROXY,
        state_fetch=PREFETCH if path == "proxy-prefetch" else ON_ARRIVAL,
    )


def resume_outcome(cfg: ScenarioConfig, label: str, transport: str = SIM,
                   updates: Sequence[bytes] = ()) -> MoveOutcome:
    fed = build_federation(cfg, transport)
    try:
        return run_move(fed, resume=True, label=label, updates=updates)
    finally:
        fed.close()


def run_state_sweep(sizes: Iterable[int], paths: Iterable[str], config: ScenarioConfig,
                    transport: str = SIM) -> list[LatencyReport]:
    out = []
    for size in sizes:
        if size <= 0:
            raise ValueError("state sizes must be positive")
        for path in paths:
            cfg = sweep_config(config, size, path)
            out.append(resume_outcome(cfg, f"{path}@{size}", transport).report)
    return out


def breakdown_configs(config: ScenarioConfig) -> tuple[ScenarioConfig, ScenarioConfig]:
    base = with_state_size(config, BREAKDOWN_STATE_BYTES).with_(
        auth_server_location=MEC, state_location=PROXY)
    plain = base.with_(subscription_fetch=ON_DEMAND, auth_mode=REAUTH, state_fetch=ON_ARRIVAL)
    optimized = base.with_(subscription_fetch=PREFETCH, auth_mode=TOKEN_REUSE, state_fetch=PREFETCH)
    return plain, optimized


def run_breakdown(config: ScenarioConfig, transport: str = SIM) -> tuple[LatencyReport, LatencyReport]:
    """(without optimizations, with optimizations) at 1 MB state, auth in the MEC."""
    plain, optimized = breakdown_configs(config)
    return (resume_outcome(plain, "unoptimized", transport).report,
            resume_outcome(optimized, "optimized", transport).report)


def interruption_config(scenario: int, config: ScenarioConfig) -> ScenarioConfig:
    if scenario == 1:
        return config.with_code("CUA").with_(state_location=CLOUD, state_fetch=ON_ARRIVAL)
    if scenario == 2:
        return config.with_code("MUA").with_(state_location=PROXY, state_fetch=ON_ARRIVAL)
    if scenario == 3:
        return config.with_code("MPT").with_(state_location=PROXY, state_fetch=PREFETCH)
    raise ValueError(f"interruption scenario must be one of {INTERRUPTION_SCENARIOS}")


def run_interruption(scenario: int, config: ScenarioConfig, transport: str = SIM) -> LatencyReport:
    return resume_outcome(interruption_config(scenario, config), f"scenario{scenario}", transport).report


def run_all_auth(config: ScenarioConfig, transport: str = SIM) -> list[LatencyReport]:
    return [run_auth_scenario(code, config, transport) for code in SCENARIO_CODES]


# ---------------------------------------------------------------------------
# CSV output

STAGE_COLUMNS = ("scenario", "stage", "start_ms", "end_ms", "duration_ms")
TOTAL_COLUMNS = ("scenario", "auth_latency_ms", "state_transfer_latency_ms", "service_interruption_ms")


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.6f}"


def emit_report(reports: Sequence[LatencyReport], out_dir: str | Path, name: str = "report") -> tuple[Path, Path]:
    """Write ``<name>_stages.csv`` and ``<name>_totals.csv``; rows follow report order."""
    out = Path(out_dir)
    stages_path, totals_path = out / f"{name}_stages.csv", out / f"{name}_totals.csv"
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(stages_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(STAGE_COLUMNS)
            for rep in reports:
                for stage in STAGES:
                    if stage in rep.stages:
                        start, end = rep.stages[stage]
                        w.writerow((rep.scenario, stage, _fmt(start), _fmt(end), _fmt(end - start)))
                for part, value in rep.decomposition.items():
                    w.writerow((rep.scenario, f"interruption:{part}", "", "", _fmt(value)))
        with open(totals_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TOTAL_COLUMNS)
            for rep in reports:
                t = rep.totals
                w.writerow((rep.scenario, _fmt(t.get("auth_latency")), _fmt(t.get("state_transfer_latency")),
                            _fmt(t.get("service_interruption"))))
    except OSError as exc:
        raise IoFailure(f"cannot write reports to {out}: {exc}") from exc
    return stages_path, totals_path

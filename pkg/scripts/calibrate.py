"""Fit link classes so the harness reproduces the published headline *ratios*.

Absolute milliseconds from the original testbed are hardware bound; only the
relative reductions are targeted.  The objective is evaluated with the
flow-walking oracle (tests/oracle.py) rather than the simulator: frame sizes
do not depend on link parameters, so they are memoised and one evaluation
costs a few milliseconds.  The winning config is re-checked with the real
simulator by tests/test_acceptance.py.

Usage:  python scripts/calibrate.py [--out PATH] [--iters N] [--seed N]
Requires scipy (``pip install .[calibrate]``).
"""

from __future__ import annotations

import argparse
import functools
import json
import logging
import math
import sys
from pathlib import Path

from scipy.optimize import differential_evolution, minimize

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

import oracle  # noqa: E402
from fedmec.harness import scenarios as S  # noqa: E402
from fedmec.harness.config import (  # noqa: E402
    DEFAULT_CONFIG,
    SCENARIO_CODES,
    from_dict,
)
from fedmec.wire import AppState  # noqa: E402

log = logging.getLogger("calibrate")

DEFAULT_OUT = ROOT / "src" / "fedmec" / "harness" / "fixtures" / "paper_calibrated.json"
SWEEP_SIZES = (10_000, 1_000_000, 10_000_000)

# metric -> (target %, band, limit): the loss is flat within +-band of the
# target and climbs steeply beyond +-limit.  Bands leave slack inside the
# +-10 pp acceptance tolerance.  Auth latency includes the attach, so its
# reduction necessarily trails the U2 reduction; the reference only gives it as a
# 53-65 % range, hence the wide band around the range centre.
TARGETS = {
    "auth_mec": (59.0, 10.0, 14.0),   # MPT vs MUA
    "auth_cloud": (59.0, 10.0, 14.0),  # CPT vs CUA
    "sweep_10k": (51.4, 4.0, 8.0),
    "sweep_1m": (80.6, 4.0, 8.0),
    "sweep_10m": (91.3, 4.0, 8.0),
    "u2": (56.3, 4.0, 8.0),
    "u3": (28.3, 4.0, 8.0),
    "int_vs_2": (33.1, 4.0, 8.0),
    "int_vs_1": (73.6, 4.0, 8.0),
}

# free parameters: every class's latency; bandwidth of all but the cloud link
# (20 Mbps is a published figure and stays fixed).  epc_internal (MME<->HSS inside
# one network) never carries a measured frame, so it keeps its default.
FIXED = ("epc_internal",)
LAT = [c for c in DEFAULT_CONFIG["links"] if c not in FIXED]
BW = [c for c in LAT if c != "cloud"]
LAT_RANGE = (math.log(0.1), math.log(300.0))
BW_RANGE = (math.log(10.0), math.log(20000.0))


def _install_size_cache() -> None:
    raw = oracle.size

    @functools.lru_cache(maxsize=None)
    def cached(msg):
        return raw(msg)

    oracle.size = cached


def config_for(x) -> dict:
    links = {}
    for i, c in enumerate(LAT):
        links[c] = {"latency_ms": round(math.exp(min(max(x[i], LAT_RANGE[0]), LAT_RANGE[1])), 3),
                    "bandwidth_mbps": 20.0}
    for j, c in enumerate(BW):
        v = min(max(x[len(LAT) + j], BW_RANGE[0]), BW_RANGE[1])
        links[c]["bandwidth_mbps"] = round(math.exp(v), 1)
    for c in FIXED:
        links[c] = dict(DEFAULT_CONFIG["links"][c])
    return {"links": links}


@functools.lru_cache(maxsize=None)
def _state(size: int, imsi: str, app_id: str, seed: int) -> AppState:
    return AppState(imsi, app_id, 1, S.state_blob(seed, size), 500)


def _predict(cfg, resume: bool):
    H = cfg.home
    issuer = "cloud" if cfg.auth_server_location == "cloud" else H
    token = oracle.token_string(issuer, cfg.subscriber.imsi, cfg.app.id, 500.0, cfg.token_lifetime_ms)
    state = _state(cfg.app.state_size_bytes, cfg.subscriber.imsi, cfg.app.id, cfg.seed)
    return oracle.predict(cfg, t0=2000.0, resume=resume, token=token, state=state).marks


def metrics(doc: dict) -> tuple[dict[str, float], float]:
    """Reduction percentages plus a penalty for every violated structural property."""
    cfg = from_dict(doc)
    penalty = 0.0
    t0 = 2000.0

    auth = {code: _predict(cfg.with_code(code), False)["U2.end"] - t0 for code in SCENARIO_CODES}
    m = {
        "auth_mec": 100 * (1 - auth["MPT"] / auth["MUA"]),
        "auth_cloud": 100 * (1 - auth["CPT"] / auth["CUA"]),
    }
    penalty += sum(max(0.0, auth["MPT"] - v + 0.5) for k, v in auth.items() if k != "MPT")
    for code in SCENARIO_CODES:
        if code[0] == "M":
            penalty += max(0.0, auth[code] - auth["C" + code[1:]] + 0.5)

    prev = -1.0
    for size, name in zip(SWEEP_SIZES, ("sweep_10k", "sweep_1m", "sweep_10m")):
        vis = {}
        for path in S.SWEEP_PATHS:
            mk = _predict(S.sweep_config(cfg, size, path), True)
            vis[path] = mk["state.delivered"] - mk["state.demand"]
        penalty += max(0.0, vis["proxy"] - vis["cloud"] + 0.5)
        penalty += max(0.0, vis["proxy-prefetch"] - vis["proxy"] + 0.5)
        m[name] = 100 * (1 - vis["proxy-prefetch"] / vis["proxy"])
        penalty += max(0.0, prev - m[name] + 1.0)
        prev = m[name]

    plain_cfg, opt_cfg = S.breakdown_configs(cfg)
    plain, opt = _predict(plain_cfg, True), _predict(opt_cfg, True)
    u2 = lambda mk: mk["U2.end"] - mk["U1.end"]  # noqa: E731
    u3 = lambda mk: mk["U3.end"] - mk["U2.end"]  # noqa: E731
    m["u2"] = 100 * (1 - u2(opt) / u2(plain))
    m["u3"] = 100 * (1 - u3(opt) / u3(plain))
    # optimized run: state must be in place before it is demanded
    penalty += max(0.0, opt["M2.end"] - opt["state.demand"] + 0.5)
    penalty += max(0.0, opt["M1.end"] - opt["M1.need"] + 0.5)

    totals = {s: _predict(S.interruption_config(s, cfg), True)["U3.end"] - t0 for s in (1, 2, 3)}
    m["int_vs_2"] = 100 * (1 - totals[3] / totals[2])
    m["int_vs_1"] = 100 * (1 - totals[3] / totals[1])
    penalty += max(0.0, totals[3] - totals[2] + 0.5) + max(0.0, totals[2] - totals[1] + 0.5)
    return m, penalty


def objective(x) -> float:
    try:
        m, penalty = metrics(config_for(x))
    except Exception as exc:  # a degenerate point; steer away from it
        log.debug("evaluation failed: %s", exc)
        return 1e9
    # flat inside each band: any point there is as good as another
    err = sum(max(0.0, abs(m[k] - t) - band) ** 2 + 50.0 * max(0.0, abs(m[k] - t) - limit) ** 2
              for k, (t, band, limit) in TARGETS.items())
    return err + 100.0 * penalty


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    ap.add_argument("--iters", type=int, default=60)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    _install_size_cache()

    bounds = [LAT_RANGE] * len(LAT) + [BW_RANGE] * len(BW)
    res = differential_evolution(objective, bounds, maxiter=args.iters, popsize=12, seed=args.seed,
                                 tol=1e-8, polish=False, updating="deferred", workers=1)
    log.info("global search: %.4f", res.fun)
    res = minimize(objective, res.x, method="Powell", bounds=bounds,
                   options={"maxiter": 20000, "xtol": 1e-4, "ftol": 1e-8})
    log.info("local polish: %.4f", res.fun)

    doc = config_for(res.x)
    m, penalty = metrics(doc)
    for k, (t, _, _) in TARGETS.items():
        log.info("  %-10s %6.1f%%  (target %.1f%%)", k, m[k], t)
    log.info("  structural penalty %.3f", penalty)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    log.info("wrote %s", args.out)
    return 0 if penalty == 0 else 1


if __name__ == "__main__":
    sys.exit(main())

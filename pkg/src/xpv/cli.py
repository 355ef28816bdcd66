"""Command line entry point ``xpv``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness, measure
from .errors import XpvError
from .estimate import HammingKernel, Variant, estimate_fidelities
from .resample import BootstrapConfig


def _load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _print_rows(rows: list[dict], limit: int = 40) -> None:
    if not rows:
        print("(no rows)")
        return
    cols = list(rows[0])
    print("  ".join(cols))
    for row in rows[:limit]:
        print("  ".join(f"{row[c]:.6g}" if isinstance(row[c], float) else str(row[c]) for c in cols))
    if len(rows) > limit:
        print(f"... {len(rows) - limit} more rows")


def cmd_scaling(args) -> int:
    cfg = _load_json(args.config) if args.config else {}
    if args.study:
        cfg["study"] = args.study
    if args.study == "theory_experiment":
        cfg["study"], cfg["theory_side"] = "error_vs_nm", True
    plan = harness.ExperimentPlan.from_dict(cfg)
    out = harness.run_study(plan, args.out)
    _print_rows(out["rows"])
    for key in ("fit", "fits"):
        if key in out["manifest"]:
            print(f"{key}: {json.dumps(out['manifest'][key])}")
    print(f"wrote {args.out}/{plan.study.value}.csv and manifest.json")
    return 0


def cmd_estimate(args) -> int:
    ds1, ds2 = measure.read_dataset(args.ds1), measure.read_dataset(args.ds2)
    kernel = HammingKernel.for_dataset(ds1, args.kernel)
    boot = BootstrapConfig(args.bootstrap, args.seed) if args.bootstrap else None
    report = estimate_fidelities(ds1, ds2, kernel, Variant(args.variant), boot)
    print(report.to_json() if args.json else report.table())
    return 0


def cmd_quench(args) -> int:
    cfg = _load_json(args.config)
    cfg["study"] = "quench_fidelity"
    plan = harness.ExperimentPlan.from_dict(cfg)
    if args.out:
        rows = harness.run_study(plan, args.out)["rows"]
    else:
        rows = harness.run_quench_fidelity(plan)
    _print_rows(rows)
    return 0


def cmd_simulate(args) -> int:
    from .qcore import StateKind, StateSpec, build_pure, build_state
    from .randsrc import Ensemble, Mode, SchedulePlan, sample_schedule

    spec = StateSpec.parse(args.state)
    if spec.kind in (StateKind.PURE_PRODUCT, StateKind.PURE_HAAR_RANDOM, StateKind.NEEL):
        state = build_pure(spec)
    else:
        state = build_state(spec)
    sched = sample_schedule(
        SchedulePlan(args.nu, spec.num_sites, spec.local_dim, Mode(args.mode), Ensemble(args.ensemble), args.schedule_seed)
    )
    shots = None if args.nm == 0 else args.nm
    ds = measure.acquire_dataset(state, sched, shots, args.data_seed, args.platform_id, args.platform)
    measure.write_dataset(ds, args.out)
    print(f"wrote {ds.n_u} records ({'exact' if ds.exact else f'{shots} shots'}) to {args.out}; schedule {ds.schedule_ref[:16]}")
    return 0


def cmd_serve(args) -> int:
    from .xverify import serve

    cfg = _load_json(args.config)
    if args.transcript:
        cfg["transcript"] = args.transcript

    def ready(addr, sid):
        print(f"verifier listening on {addr} session {sid}", flush=True)

    state = serve(args.bind, cfg, ready)
    print(state.report.table() if state.report else "no report")
    return 0


def cmd_join(args) -> int:
    from .xverify import client_run
    from .xverify.client import SimulatorSource

    source = args.source
    if not Path(source).exists():
        source = SimulatorSource(args.source, args.shots, args.seed, args.platform_index)
    report = client_run(args.connect, args.platform, source, session_id=args.session)
    print(report.to_json() if args.json else report.table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xpv", description="Cross-platform fidelity from randomized measurements.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scaling", help="run a Monte Carlo study and write CSV + manifest")
    s.add_argument("--study", choices=[st.value for st in harness.Study] + ["theory_experiment"])
    s.add_argument("--config", help="JSON experiment plan")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_scaling)

    s = sub.add_parser("estimate", help="fidelity report for two dataset files")
    s.add_argument("--ds1", required=True)
    s.add_argument("--ds2", required=True)
    s.add_argument("--kernel", choices=["local", "global"])
    s.add_argument("--variant", choices=[v.value for v in Variant], default="ustat")
    s.add_argument("--bootstrap", type=int, default=400, help="resamples; 0 disables")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("quench", help="subsystem fidelities of the Neel quench")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_quench)

    s = sub.add_parser("simulate", help="simulate one platform and write its dataset")
    s.add_argument("--state", required=True, help="e.g. pp:4:seed=3 or mixed_random:5:traced_sites=3")
    s.add_argument("--schedule-seed", type=int, required=True)
    s.add_argument("--nu", type=int, required=True)
    s.add_argument("--nm", type=int, required=True, help="shots per unitary; 0 stores exact probabilities")
    s.add_argument("--out", required=True)
    s.add_argument("--data-seed", type=int, default=0)
    s.add_argument("--platform", type=int, default=0, help="platform index for the shot stream")
    s.add_argument("--platform-id", default="platform")
    s.add_argument("--mode", choices=["local", "global"], default="local")
    s.add_argument("--ensemble", choices=["haar_cue", "clifford_1q"], default="haar_cue")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("serve", help="run a verifier session")
    s.add_argument("--bind", default="127.0.0.1:7788")
    s.add_argument("--config", required=True)
    s.add_argument("--transcript")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("join", help="join a verifier session as a platform")
    s.add_argument("--connect", required=True)
    s.add_argument("--platform", required=True, help="platform id")
    s.add_argument("--source", required=True, help="dataset file or state spec to simulate")
    s.add_argument("--shots", type=int, help="shots per unitary when simulating (default exact)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--platform-index", type=int, default=0)
    s.add_argument("--session", help="session id to resume")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_join)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (XpvError, ValueError, OSError) as exc:
        print(f"xpv: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``gridincentive <command> [options]``.

Exit codes: 0 success, 2 invalid input, 3 solver did not converge.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .feeder import compute_sensitivity
from .operator import certify_step_sizes, weighted_norm
from .oracle import NotConverged
from .runtime import (OnlineTrace, UncertifiedStepSizes, empirical_contraction, mismatch_vector,
                      offline_solve, online_run, slot_instance, slot_oracles,
                      tracking_bound_report, uncontrolled_voltages)
from .scenario import (FeederSpec, NodeProfile, ParseError, ProfileShape, RunConfig,
                       ScenarioTimeline, ValidationError, build_ieee37_phase_c, data_path,
                       dump_feeder, dump_timeline, ieee37_nodes, load_config, load_feeder,
                       load_timeline, synth_profiles)

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 2, 3
BUILTIN_FEEDERS = ("fixture3", "ieee37")

log = logging.getLogger("gridincentive")


def _feeder(arg: str, h: float = 1.0) -> FeederSpec:
    if arg == "ieee37":
        return build_ieee37_phase_c()
    if arg == "fixture3":
        return load_feeder(data_path("fixture3.feeder.json"), h)
    return load_feeder(arg, h)


def _slot_duration(path) -> float:
    for raw in Path(path).read_text().splitlines():
        s = raw.strip()
        if not s.startswith("#"):
            break
        key, _, val = s[1:].partition("=")
        if key.strip() == "slot_duration":
            try:
                return float(val)
            except ValueError:
                return 1.0
    return 1.0


def _load(args, need_timeline: bool = False):
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = cfg.with_overrides(K=args.k, gamma=args.gamma, seed=args.seed)
    h = _slot_duration(args.timeline) if args.timeline else 1.0
    spec = _feeder(args.feeder, h)
    if args.timeline:
        tl = load_timeline(args.timeline, spec)
    elif need_timeline:
        raise ValidationError("timeline", "--timeline is required for this command")
    else:
        tl = None
    return spec, tl, cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    raise TypeError(f"cannot serialize {type(x)}")


def _slot0_instance(spec: FeederSpec, tl, cfg: RunConfig):
    top = spec.topology
    model = compute_sensitivity(top)
    ocfg = cfg.operator_config(top.n)
    pool = spec.pool()
    if tl is None:
        tl = ScenarioTimeline.static(1, top.p_load, top.q_load, spec.p_av())
    return top, model, pool, ocfg, slot_instance(top, model, pool, ocfg, tl, 0)


# ---------------------------------------------------------------- commands

def cmd_validate(args) -> int:
    spec, tl, cfg = _load(args)
    msg = f"ok: {spec.n} buses, {len(spec.agents)} devices"
    if tl is not None:
        msg += f", {tl.n_slots} slots of {tl.h:g} s"
    print(msg)
    return EXIT_OK


def cmd_certify(args) -> int:
    spec, tl, cfg = _load(args)
    _, _, _, _, inst = _slot0_instance(spec, tl, cfg)
    cert = certify_step_sizes(inst.model, inst.agents, inst.cfg)
    print(json.dumps({"certified": cert.certified, "modulus": cert.modulus,
                      "violated": [list(v) for v in cert.violated],
                      "screen": [list(v) for v in cert.screen], "row_sum": cert.row_sum},
                     indent=1))
    return EXIT_OK


def cmd_offline(args) -> int:
    spec, tl, cfg = _load(args)
    top, _, _, _, inst = _slot0_instance(spec, tl, cfg)
    out = _out_dir(args, cfg)
    stride = max(1, args.stride)
    try:
        state, diag = offline_solve(top, inst.model, inst.agents, inst.cfg, cfg.tol,
                                    cfg.max_iter, acknowledge_uncertified=args.force,
                                    record="full", stride=stride)
        code = EXIT_OK
    except UncertifiedStepSizes as exc:
        print(f"error: {exc} (use --force to run anyway)", file=sys.stderr)
        return EXIT_INVALID
    except NotConverged as exc:
        state, diag = exc.state, exc.diagnostics
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_NOT_CONVERGED
    k = (np.arange(diag.dy.shape[0]) + 1) * stride
    np.savetxt(out / "trace.csv", np.column_stack([k, diag.dy, diag.lagrangian, diag.kkt,
                                                    diag.violation]),
               delimiter=",", header="k,dy,lagrangian,kkt,max_violation", comments="",
               fmt="%.12g")
    summary = dict(mode="offline", **diag.summary(), n=top.n,
                   p=state.p, q=state.q, alpha=state.alpha, beta=state.beta,
                   mu_lo=state.mu.mu_lo, mu_hi=state.mu.mu_hi, v_hat=state.v)
    _write_json(out / "summary.json", summary)
    print(f"{'converged' if diag.converged else 'stopped'} after {diag.iterations} iterations; "
          f"wrote {out}")
    return code


def _write_trace(path: Path, trace: OnlineTrace) -> None:
    cols = trace.columns()
    tab = trace.table()
    np.savetxt(path, tab, delimiter=",", header=",".join(cols), comments="", fmt="%.12g")


def cmd_online(args) -> int:
    spec, tl, cfg = _load(args, need_timeline=True)
    top = spec.topology
    model = compute_sensitivity(top)
    ocfg = cfg.operator_config(top.n)
    pool = spec.pool()
    out = _out_dir(args, cfg)
    trace = online_run(top, model, pool, tl, ocfg, cfg.K, gamma=args.gamma)
    _write_trace(out / "trace.csv", trace)
    vmax = trace.vmax_per_slot()
    unc = uncontrolled_voltages(top, model, pool, tl).max(axis=1)
    v_hi = float(ocfg.v_hi.max())
    summary = dict(mode="online", K=cfg.K, gamma=args.gamma if args.gamma is not None else cfg.gamma,
                   slots=tl.n_slots, n=top.n, wall_time=trace.diagnostics.wall_time,
                   e=trace.diagnostics.e, all_slots_certified=bool(trace.slot_certified.all()),
                   controlled_vmax=float(vmax.max()), uncontrolled_vmax=float(unc.max()),
                   fraction_within_limit=float(np.mean(vmax <= v_hi + 5e-3)),
                   mean_abs_deviation=float(np.mean(np.abs(trace.v - ocfg.v_nom))),
                   plant_failures=int(trace.plant_failed.sum()),
                   max_abs_alpha=float(np.abs(trace.alpha).max()),
                   max_abs_beta=float(np.abs(trace.beta).max()))
    inst = slot_instance(top, model, pool, ocfg, tl, 0, args.gamma)
    if top.n <= 12 and not args.no_bound:
        rep = tracking_bound_report(trace, slot_oracles(trace, stride=1 if top.n <= 6 else 10),
                                    n_pairs=200, seed=cfg.seed)
        summary.update(delta_hat=rep.delta_hat, rho_hat=rep.rho_hat, sigma_hat=rep.sigma_hat,
                       bound_lhs=rep.bound_lhs, bound_rhs=rep.bound_rhs, slack=rep.slack)
    else:
        d = empirical_contraction(inst.model, inst.agents, inst.cfg, 200, cfg.seed)
        e = trace.diagnostics.e if np.isfinite(trace.diagnostics.e) else 0.0
        rho = weighted_norm(mismatch_vector(inst.model, inst.cfg, e), inst.cfg)
        summary.update(delta_hat=d, rho_hat=rho, sigma_hat=None, bound_lhs=None,
                       bound_rhs=None, slack=None)
    _write_json(out / "summary.json", summary)
    np.savetxt(out / "uncontrolled.csv", np.column_stack([np.arange(tl.n_slots), unc]),
               delimiter=",", header="t,vmax_uncontrolled", comments="", fmt="%.12g")
    print(f"{tl.n_slots} slots, K={cfg.K}: max voltage {vmax.max():.4f} "
          f"(uncontrolled {unc.max():.4f}); wrote {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    seed = args.seed if args.seed is not None else cfg.seed
    spec = _feeder(args.feeder)
    if args.feeder == "ieee37":
        nodes = ieee37_nodes(spec)
    else:
        cap = {a.bus: a.feasible.eta for a in spec.agents if a.kind == "PV"}
        top = spec.topology
        nodes = [NodeProfile(i, cap.get(i, 0.0), float(top.p_load[i - 1]),
                             float(top.q_load[i - 1])) for i in range(1, top.n + 1)]
    shape = ProfileShape(cloud_volatility=args.volatility, peak=args.peak,
                         start_hour=args.start_hour, slot_seconds=args.slot_seconds,
                         gamma=args.gamma if args.gamma is not None else float("nan"))
    tl = synth_profiles(seed, args.slots, nodes, shape, n=spec.n)
    target = Path(args.out) if args.out else Path(cfg.out) / "timeline.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(dump_timeline(tl))
    if args.write_feeder:
        Path(args.write_feeder).write_text(dump_feeder(spec))
    print(f"wrote {tl.n_slots} slots to {target}")
    return EXIT_OK


_PLOT_TEMPLATE = '''import csv
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open("{csv}")))
x = [float(r["{x}"]) for r in rows]
fig, ax = plt.subplots(figsize=(8, 4))
for col in {cols!r}:
    ax.plot(x, [float(r[col]) for r in rows], label=col)
ax.set_xlabel("{xlabel}")
ax.set_ylabel("{ylabel}")
{extra}ax.legend()
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else "{png}")
'''


def _figure(out: Path, name: str, header: list, data: np.ndarray, xlabel: str, ylabel: str,
            extra: str = "") -> None:
    csv_path = out / f"{name}.csv"
    np.savetxt(csv_path, data, delimiter=",", header=",".join(header), comments="",
               fmt="%.12g")
    (out / f"plot_{name}.py").write_text(_PLOT_TEMPLATE.format(
        csv=csv_path.name, x=header[0], cols=header[1:], xlabel=xlabel, ylabel=ylabel,
        extra=extra, png=f"{name}.png"))


def cmd_report(args) -> int:
    run = Path(args.out) if args.out else Path("out")
    trace_path = run / "trace.csv"
    if not trace_path.exists():
        raise ValidationError(str(run), "no trace.csv found; run offline or online first")
    with open(trace_path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(trace_path, delimiter=",", skiprows=1, ndmin=2)
    col = {c: j for j, c in enumerate(header)}
    made = []
    if "t" in col:
        n = sum(1 for c in header if c.startswith("v_"))
        vcols = [col[f"v_{i}"] for i in range(1, n + 1)]
        v = data[:, vcols]
        last = np.r_[data[1:, col["t"]] != data[:-1, col["t"]], True]
        t = data[last, col["t"]]
        vt = v[last]
        fig = [t, vt.max(axis=1), vt.min(axis=1), np.abs(vt - 1.0).mean(axis=1)]
        hdr = ["t", "v_max", "v_min", "mean_abs_dev"]
        unc_path = run / "uncontrolled.csv"
        if unc_path.exists():
            unc = np.loadtxt(unc_path, delimiter=",", skiprows=1, ndmin=2)
            fig.append(unc[:, 1])
            hdr.append("v_max_uncontrolled")
        _figure(run, "fig_voltage", hdr, np.column_stack(fig), "slot", "voltage (p.u.)",
                'ax.axhline(1.05, color="k", ls="--")\n')
        acols = [c for c in header if c.startswith("alpha_") or c.startswith("beta_")]
        _figure(run, "fig_signals", ["t"] + acols,
                np.column_stack([t, data[last][:, [col[c] for c in acols]]]), "slot",
                "price")
        _figure(run, "fig_dual_step", ["row", "dy"],
                np.column_stack([np.arange(data.shape[0]), data[:, col["dy"]]]), "iteration",
                "step norm")
        made = ["fig_voltage", "fig_signals", "fig_dual_step"]
    else:
        _figure(run, "fig_convergence", ["k", "dy", "kkt", "max_violation"],
                data[:, [col["k"], col["dy"], col["kkt"], col["max_violation"]]], "iteration",
                "magnitude", 'ax.set_yscale("log")\n')
        made = ["fig_convergence"]
    print("wrote " + ", ".join(f"{m}.csv/plot_{m}.py" for m in made) + f" in {run}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridincentive",
                                 description="Incentive-based voltage regulation on radial feeders.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, feeder_default="fixture3"):
        p.add_argument("--feeder", default=feeder_default,
                       help="feeder JSON path or a built-in name (fixture3, ieee37)")
        p.add_argument("--timeline", help="timeline CSV")
        p.add_argument("--config", help="key=value run configuration")
        p.add_argument("--out", help="output directory (file for synth)")
        p.add_argument("--k", type=int, help="iterations per timeslot")
        p.add_argument("--gamma", type=float, help="voltage-deviation weight")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    common(sub.add_parser("validate", help="check scenario files"))
    common(sub.add_parser("certify", help="step-size certificate for the first slot"))
    p = common(sub.add_parser("offline", help="solve one instance to convergence"))
    p.add_argument("--force", action="store_true", help="run even if not certified")
    p.add_argument("--stride", type=int, default=1000, help="keep every n-th trace row")
    p = common(sub.add_parser("online", help="run the real-time loop over a timeline"))
    p.add_argument("--no-bound", action="store_true", help="skip the tracking-bound oracles")
    p = common(sub.add_parser("synth", help="write a synthetic timeline"), "ieee37")
    p.add_argument("--slots", type=int, default=7200)
    p.add_argument("--start-hour", type=float, default=10.0)
    p.add_argument("--slot-seconds", type=float, default=1.0)
    p.add_argument("--volatility", type=float, default=0.0)
    p.add_argument("--peak", type=float, default=0.9)
    p.add_argument("--write-feeder", help="also write the feeder JSON here")
    common(sub.add_parser("report", help="figure CSVs and plot scripts from a run directory"))
    return ap


COMMANDS = {"validate": cmd_validate, "certify": cmd_certify, "offline": cmd_offline,
            "online": cmd_online, "synth": cmd_synth, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ParseError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NotConverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())

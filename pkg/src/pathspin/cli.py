"""Command-line scenarios built on an apparatus file.

Subcommands: ``run``, ``nosignal``, ``sweep``, ``enumerate-hv``,
``optimize``. Exit status is 0 on success, 2 for a parse error, 3 for a
validation error and 4 when a numerical invariant fails.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .apparatus import ApparatusSpec, input_state, load_apparatus
from .errors import ApparatusSyntaxError, ApparatusValidationError, InvariantError
from .nri import (
    CONSTRAINTS,
    JointSetting,
    enumerate_noncontextual,
    hv_bound_check,
    nri_value,
    optimize_settings,
    tsirelson_max,
)
from .qcore import apply
from .shots import (
    CountTable,
    SamplerConfig,
    born_probabilities,
    estimate_nri,
    sample_categorical,
    sample_counts,
    write_csv,
)
from .states import SPIN2, concurrence, mixture_density, propagate, wing1_direction, wing2_mixture

EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, EXIT_INVARIANT = 0, 2, 3, 4
SEED_ENV = "PATHSPIN_SEED"
SETTING_IDS = ("A1b1", "A1b2", "A2b1", "A2b2")


def _spec(source) -> ApparatusSpec:
    if isinstance(source, ApparatusSpec):
        return source
    return load_apparatus(source)


def resolve_seed(spec: ApparatusSpec, seed=None) -> int:
    if seed is not None:
        return int(seed)
    if spec.seed is not None:
        return spec.seed
    return int(os.environ.get(SEED_ENV, "0"), 0)


def parse_setting(text: str):
    if text in ("A", "B"):
        return text
    if text.startswith("angle:"):
        text = text[len("angle:"):]
    return float(text)


def apply_overrides(spec: ApparatusSpec, overrides: dict | None) -> ApparatusSpec:
    o = dict(overrides or {})
    setting = o.pop("wing1_setting", None)
    shots = o.pop("shots", None)
    seed = o.pop("seed", None)
    if o:
        raise ValueError(f"unknown overrides {sorted(o)}")
    if shots is not None and int(shots) < 1:
        raise ApparatusValidationError(f"shots must be positive, got {shots}")
    return ApparatusSpec(
        spec.wing1_setting if setting is None else setting,
        spec.components,
        spec.spin_dirs,
        spec.bs2_settings,
        spec.shots if shots is None else int(shots),
        spec.seed if seed is None else int(seed),
    )


def prepared_subensembles(spec: ApparatusSpec, setting=None) -> list:
    """Wing-2 subensembles after BS1, flipper and mirrors."""
    prep = spec.preparation()
    members = wing2_mixture(spec.wing1_setting if setting is None else setting)
    return propagate(members, lambda s: apply(prep, input_state(s)))


def joint_settings(spec: ApparatusSpec) -> list:
    a1, a2 = spec.path_observables()
    b1, b2 = spec.spin_dirs
    return [JointSetting(a1, b1), JointSetting(a1, b2), JointSetting(a2, b1), JointSetting(a2, b2)]


def postselected_counts(members, j: JointSetting, cfg: SamplerConfig) -> list:
    """Sample ``cfg.shots`` ensemble events and split counts by wing-1 outcome."""
    probs = np.concatenate([m.weight * born_probabilities(m.state, j) for m in members])
    counts = sample_categorical(probs, cfg).reshape(len(members), 4)
    return [CountTable(*(int(c) for c in row)) for row in counts]


def _sampled_nri(tables) -> dict:
    value, se = estimate_nri(tables)
    return {**value.as_dict(), "stderr": se, "counts": [list(t.counts) for t in tables]}


def run_scenario(source, overrides: dict | None = None) -> dict:
    """Full subensemble NRI analysis for one wing-1 setting."""
    spec = apply_overrides(_spec(source), overrides)
    seed = resolve_seed(spec)
    members = prepared_subensembles(spec)
    a1, a2 = spec.path_observables()
    b1, b2 = spec.spin_dirs
    settings = joint_settings(spec)

    per_setting = [
        postselected_counts(members, j, SamplerConfig(seed, spec.shots, stream=k))
        for k, j in enumerate(settings)
    ]
    subs = []
    for i, m in enumerate(members):
        opts = {c: optimize_settings(m.state, c, spins=spec.spin_dirs) for c in CONSTRAINTS}
        optimized = {c: {"s": o.s, "settings": o.settings.as_dict(), "exact": o.value.as_dict()}
                     for c, o in opts.items()}
        fs = opts["free-spin"].settings
        best = [JointSetting(fs.a1, fs.b1), JointSetting(fs.a1, fs.b2),
                JointSetting(fs.a2, fs.b1), JointSetting(fs.a2, fs.b2)]
        opt_tables = [sample_counts(m.state, j, SamplerConfig(seed, spec.shots, stream=100 + 10 * i + k))
                      for k, j in enumerate(best)]
        optimized["free-spin"]["sampled"] = _sampled_nri(opt_tables)
        subs.append({
            "tag": m.tag,
            "outcome": int(m.tag.rsplit("/", 1)[1]),
            "weight": m.weight,
            "concurrence": concurrence(m.state),
            "nri_exact": nri_value(m.state, a1, a2, b1, b2).as_dict(),
            "nri_sampled": _sampled_nri([tables[i] for tables in per_setting]),
            "optimized": optimized,
            "max_abs_s": max(abs(v["s"]) for v in optimized.values()),
            "tsirelson_max": tsirelson_max(m.state),
        })
    total = sum(s["weight"] for s in subs)
    if abs(total - 1) > 1e-12:
        raise InvariantError(f"subensemble weights sum to {total!r}")
    return {
        "version": __version__,
        "config_hash": spec.config_hash(),
        "seed": seed,
        "shots": spec.shots,
        "wing1_setting": spec.as_dict()["wing1_setting"],
        "wing1_direction": list(wing1_direction(spec.wing1_setting)),
        "settings": {"path": [a.as_dict() for a in (a1, a2)], "spin": [list(b1), list(b2)]},
        "subensembles": subs,
        "no_signaling": nosignal_check(spec, seed=seed),
    }


def unconditional_stats(spec: ApparatusSpec, setting) -> np.ndarray:
    """Wing-2 detector probabilities ignoring the wing-1 outcome, per joint setting."""
    members = prepared_subensembles(spec, setting)
    return np.array([sum(m.weight * born_probabilities(m.state, j) for m in members)
                     for j in joint_settings(spec)])


def nosignal_check(source, settings=("A", "B"), seed=None, shots=None) -> dict:
    """Exact and sampled comparison of wing-2 statistics across two wing-1 settings."""
    spec = _spec(source)
    seed = resolve_seed(spec, seed)
    shots = spec.shots if shots is None else shots
    rho = [mixture_density(wing2_mixture(s), keep=SPIN2).matrix for s in settings]
    rho_pipe = [mixture_density(prepared_subensembles(spec, s)).matrix for s in settings]
    stats = [unconditional_stats(spec, s) for s in settings]
    rho_res = float(np.max(np.abs(rho[0] - rho[1])))
    pipe_res = float(np.max(np.abs(rho_pipe[0] - rho_pipe[1])))
    det_res = float(np.max(np.abs(stats[0] - stats[1])))

    # streams keyed by sorted label so swapping the pair reproduces the draw
    freqs = []
    for i, s in enumerate(sorted(settings, key=str)):
        members = prepared_subensembles(spec, s)
        rows = []
        for k, j in enumerate(joint_settings(spec)):
            tables = postselected_counts(members, j, SamplerConfig(seed, shots, stream=1000 + 10 * i + k))
            rows.append(np.sum([t.counts for t in tables], axis=0) / shots)
        freqs.append(np.array(rows))
    p = 0.5 * (stats[0] + stats[1])
    var = 2 * p * (1 - p) / shots
    diff = np.abs(freqs[0] - freqs[1])
    z = np.where(var > 0, diff / np.sqrt(np.where(var > 0, var, 1)), np.where(diff > 0, np.inf, 0.0))
    zmax = float(z.max())
    return {
        "settings": [str(s) for s in settings],
        "rho_spin2_residual": rho_res,
        "rho_wing2_residual": pipe_res,
        "detector_residual": det_res,
        "exact_ok": max(rho_res, pipe_res, det_res) <= 1e-12,
        "sampled_shots": shots,
        "sampled_max_z": zmax,
        "sampled_ok": zmax <= 5.0,
    }


def sweep_wing1_angle(source, angles) -> list:
    """Concurrence and free-spin max |s| of both subensembles versus wing-1 angle."""
    spec = _spec(source)
    rows = []
    for alpha in angles:
        if not 0 <= alpha <= math.pi:
            raise ValueError(f"sweep angle {alpha!r} outside [0, pi]")
        plus, minus = prepared_subensembles(spec, float(alpha))
        row = {"alpha": float(alpha)}
        for name, m in (("plus", plus), ("minus", minus)):
            row[f"weight_{name}"] = m.weight
            row[f"concurrence_{name}"] = concurrence(m.state)
            row[f"smax_{name}"] = abs(optimize_settings(m.state, "free-spin").s)
        rows.append(row)
    return rows


SWEEP_COLUMNS = ("alpha", "weight_plus", "concurrence_plus", "smax_plus",
                 "weight_minus", "concurrence_minus", "smax_minus")


def enumerate_hv_cmd(fmt: str = "text") -> str:
    rows = enumerate_noncontextual()
    bound = max(abs(hv_bound_check([(hv, 1.0)])) for hv, _ in rows)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("v_A1", "v_A2", "v_sz", "v_sx", "value"))
        w.writerows([(*hv, v) for hv, v in rows])
        return buf.getvalue()
    if fmt == "json":
        return _dumps({"rows": [{"assignment": list(hv), "value": v} for hv, v in rows],
                       "max_abs_s": bound})
    lines = [f"{'v(A1)':>6}{'v(A2)':>6}{'v(sz)':>6}{'v(sx)':>6}{'value':>7}"]
    lines += [f"{hv.a1:>+6d}{hv.a2:>+6d}{hv.sz:>+6d}{hv.sx:>+6d}{v:>+7d}" for hv, v in rows]
    lines.append(f"max |S| over noncontextual models = {bound:g}")
    return "\n".join(lines) + "\n"


def optimize_report(source, constraints=CONSTRAINTS, overrides=None) -> dict:
    spec = apply_overrides(_spec(source), overrides)
    out = []
    for m in prepared_subensembles(spec):
        res = {"tag": m.tag, "weight": m.weight, "tsirelson_max": tsirelson_max(m.state)}
        for c in constraints:
            opt = optimize_settings(m.state, c, spins=spec.spin_dirs)
            res[c] = {"s": opt.s, "settings": opt.settings.as_dict()}
        out.append(res)
    return {"version": __version__, "config_hash": spec.config_hash(), "subensembles": out}


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _flatten(prefix, obj, out):
    if isinstance(obj, dict):
        for k in sorted(obj):
            _flatten(f"{prefix}.{k}" if prefix else k, obj[k], out)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _flatten(f"{prefix}.{i}", v, out)
    else:
        out.append((prefix, obj))
    return out


def _kv_csv(obj) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("key", "value"))
    w.writerows(_flatten("", obj, []))
    return buf.getvalue()


def _run_csv(report) -> str:
    rows = []
    for sub in report["subensembles"]:
        for sid, counts in zip(SETTING_IDS, sub["nri_sampled"]["counts"]):
            rows.append((f"{sub['tag']}:{sid}", CountTable(*counts)))
        for sid, counts in zip(SETTING_IDS, sub["optimized"]["free-spin"]["sampled"]["counts"]):
            rows.append((f"{sub['tag']}:free-spin:{sid}", CountTable(*counts)))
    return write_csv(rows)


def _sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _check_report(report):
    def walk(obj, key=""):
        if isinstance(obj, dict):
            for k, v in obj.items():
                walk(v, k)
        elif isinstance(obj, list):
            for v in obj:
                walk(v, key)
        elif key in ("e11", "e12", "e21", "e22") and abs(obj) > 1 + 1e-9:
            raise InvariantError(f"reported correlation {obj!r} outside [-1, 1]")
    walk(report)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pathspin", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, file=True):
        if file:
            sp.add_argument("apparatus", help="apparatus description file")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("--seed", type=lambda s: int(s, 0), help=f"overrides the file seed and ${SEED_ENV}")
        sp.add_argument("--shots", type=int)
        sp.add_argument("-o", "--output", help="write to this file instead of stdout")

    sp = sub.add_parser("run", help="subensemble NRI scenario")
    common(sp)
    sp.add_argument("--setting", help="override wing1_setting: A, B or angle:<radians>")
    sp = sub.add_parser("nosignal", help="compare wing-2 statistics for settings A and B")
    common(sp)
    sp = sub.add_parser("sweep", help="concurrence and max |s| versus wing-1 angle")
    common(sp)
    sp.add_argument("--points", type=int, default=19, help="grid points over [0, pi]")
    sp = sub.add_parser("enumerate-hv", help="tabulate the 16 noncontextual assignments")
    common(sp, file=False)
    sp.set_defaults(format="text")
    sp.add_argument("--text", dest="format", action="store_const", const="text")
    sp = sub.add_parser("optimize", help="optimal NRI settings per subensemble")
    common(sp)
    sp.add_argument("--setting")
    sp.add_argument("--constraint", choices=CONSTRAINTS, action="append")
    return p


def _execute(args) -> tuple:
    """Return (text, exit status)."""
    if args.command == "enumerate-hv":
        return enumerate_hv_cmd(args.format), EXIT_OK
    spec = load_apparatus(args.apparatus)
    overrides = {"seed": args.seed, "shots": args.shots}
    if getattr(args, "setting", None):
        try:
            overrides["wing1_setting"] = parse_setting(args.setting)
        except ValueError:
            raise ApparatusValidationError(f"bad --setting {args.setting!r}") from None
    spec = apply_overrides(spec, overrides)
    if args.command == "run":
        report = run_scenario(spec)
        _check_report(report)
        text = _dumps(report) if args.format == "json" else _run_csv(report)
        ns = report["no_signaling"]
        return text, EXIT_OK if ns["exact_ok"] else EXIT_INVARIANT
    if args.command == "nosignal":
        report = nosignal_check(spec)
        report.update(version=__version__, config_hash=spec.config_hash(), seed=resolve_seed(spec))
        text = _dumps(report) if args.format == "json" else _kv_csv(report)
        return text, EXIT_OK if report["exact_ok"] and report["sampled_ok"] else EXIT_INVARIANT
    if args.command == "sweep":
        if args.points < 2:
            raise ApparatusValidationError("--points must be at least 2")
        rows = sweep_wing1_angle(spec, np.linspace(0, math.pi, args.points))
        if args.format == "csv":
            return _sweep_csv(rows), EXIT_OK
        return _dumps({"version": __version__, "config_hash": spec.config_hash(), "rows": rows}), EXIT_OK
    if args.command == "optimize":
        report = optimize_report(spec, tuple(args.constraint or CONSTRAINTS))
        return (_dumps(report) if args.format == "json" else _kv_csv(report)), EXIT_OK
    raise AssertionError(args.command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text, status = _execute(args)
    except (ApparatusSyntaxError, OSError, UnicodeDecodeError) as exc:
        print(f"pathspin: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ApparatusValidationError, ValueError) as exc:
        print(f"pathspin: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (InvariantError, ArithmeticError) as exc:
        print(f"pathspin: numerical invariant failed: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if status == EXIT_INVARIANT:
        print("pathspin: numerical invariant failed (see report)", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())

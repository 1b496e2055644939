"""``gridsentry`` command line: simulate, learn, detect, evaluate, db.

Exit codes::

    0  success; detect: every device genuine
    1  detect: some device compromised; learn: profile rejected; replay: outputs differ
    2  usage error (bad flag or value, unknown scenario, bad config file)
    3  traces of mixed device classes given to learn
    4  no profile stored for a device's class
    5  any other failure (unreadable trace or profile, session error)

A config file holds ``key=value`` lines (``#`` starts a comment); keys are
long option names of the chosen subcommand, and flags given on the command
line win over the file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .detection import REPORT_HEADER, DetectorConfig, Escalation, detect
from .errors import ClassMismatch, DomainError, GridSentryError, NoProfile
from .evaluation import DEFAULT_BETAS, DETECTORS, SOURCES, ExperimentPlan, collect_scores, learn_profiles, \
    report_from_scores
from .learning import ProfileDatabase, SigmaPolicy, build_gtp
from .sim.session import SCENARIO_IDS, SimConfig, ThreatScenario, run_session
from .traces import DeviceClass, Source, Tier, WeightScheme, read_trace, write_trace

EXIT_OK, EXIT_FLAGGED, EXIT_USAGE, EXIT_MIXED, EXIT_NOPROFILE, EXIT_ERROR = 0, 1, 2, 3, 4, 5
GENUINE_SCENARIOS = {"genuine-limited": Tier.LIMITED, "genuine-rich": Tier.RICH}
DEFAULT_DB = "gridsentry-db"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common():
    p = _Parser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="base random seed (default 0)")
    g.add_argument("--config", help="key=value file with option defaults")
    g.add_argument("--out", help="output directory (detect: report file)")
    g.add_argument("--db", help=f"profile database directory (default $GRIDSENTRY_DB or ./{DEFAULT_DB})")
    g.add_argument("--manifest", help="where to write the run manifest")
    return p


def _sim_options(p):
    p.add_argument("--duration", type=float, default=60.0, help="session length in seconds")
    p.add_argument("--period", type=float, default=1.0, help="publish period in seconds")
    p.add_argument("--jitter", type=float, default=0.05)
    p.add_argument("--kernel-jitter", type=float, default=0.15,
                   help="jitter for resource-limited kernel-hook traces")
    p.add_argument("--transport", choices=("auto", "loopback", "inproc"), default="auto")
    p.add_argument("--device-type", default="ied")
    p.add_argument("--task-context", default="goose")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="gridsentry", description="Detect compromised substation devices from call traces.")
    parser.add_argument("--version", action="version", version=f"gridsentry {__version__}")
    parser.add_argument("--replay", metavar="MANIFEST", help="re-run the command recorded in a manifest")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="generate labeled call traces")
    p.add_argument("--scenario", help="CD1..CD6, genuine-limited or genuine-rich (required)")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--lam", type=float, default=6.0, help="mean attack activations per session")
    _sim_options(p)

    p = sub.add_parser("learn", parents=[common], help="build and store a ground-truth profile")
    p.add_argument("--input", help="directory of genuine trace files")
    p.add_argument("--class", dest="device_class", help="simulate training runs for tier/type/context")
    p.add_argument("--runs", type=int, default=30, help="training runs when simulating")
    p.add_argument("--sigma", type=float, help="fixed acceptance threshold instead of the adaptive policy")
    p.add_argument("--sigma-floor", type=float, default=SigmaPolicy().floor)
    p.add_argument("--weight-seed", type=int, help="seed for uniform-random weights (default --seed)")
    p.add_argument("--weights", help="name=weight table; switches to adaptive weighting")
    _sim_options(p)

    p = sub.add_parser("detect", parents=[common], help="classify devices from their traces")
    p.add_argument("inputs", nargs="+", help="trace files or directories")
    _detector_options(p)

    p = sub.add_parser("evaluate", parents=[common], help="run a labeled experiment and write metrics")
    p.add_argument("--scenarios", default=",".join(SCENARIO_IDS))
    p.add_argument("--runs", type=int, default=30, help="compromised runs per scenario (genuine controls 1:1)")
    p.add_argument("--betas", default=",".join(str(b) for b in DEFAULT_BETAS))
    p.add_argument("--lam", type=float, default=6.0)
    p.add_argument("--detectors", default=",".join(DETECTORS))
    p.add_argument("--sources", default=",".join(SOURCES))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--learn", action="store_true", help="learn and store profiles before evaluating")
    p.add_argument("--train-runs", type=int, default=30)
    _detector_options(p)
    _sim_options(p)

    p = sub.add_parser("db", parents=[common], help="inspect stored profiles")
    p.add_argument("action", choices=("list", "show", "remove"))
    p.add_argument("device_class", nargs="?", help="tier/type/context")
    return parser


def _detector_options(p):
    p.add_argument("--beta", type=float, default=0.6)
    p.add_argument("--h", type=int, default=4, help="IOC-advanced window size")
    p.add_argument("--escalation", choices=[e.value for e in Escalation], default="auto")
    p.add_argument("--band-low", type=float, default=2.0 / 3.0)
    p.add_argument("--band-high", type=float, default=1.5)


def read_config(path) -> dict:
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{no}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.replay or args.command is None or not getattr(args, "config", None):
        return parser, args
    sp = _subparser(parser, args.command)
    cfg = read_config(args.config)
    actions = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, raw in cfg.items():
        a = actions.get(key)
        if a is None or key in ("config", "help"):
            raise UsageError(f"{args.config}: unknown key {key!r} for {args.command}")
        if isinstance(a, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            continue
        try:
            val = a.type(raw) if a.type else raw
        except ValueError as exc:
            raise UsageError(f"{args.config}: bad value for {key}: {raw!r}") from exc
        if a.choices is not None and val not in a.choices:
            raise UsageError(f"{args.config}: {key} must be one of {', '.join(map(str, a.choices))}")
        defaults[key] = val
    sp.set_defaults(**defaults)
    return parser, parser.parse_args(argv)


# -- helpers ------------------------------------------------------------------------


def _db(args) -> ProfileDatabase:
    return ProfileDatabase(args.db or os.environ.get("GRIDSENTRY_DB") or DEFAULT_DB)


def _sim_config(args, seed) -> SimConfig:
    return SimConfig(args.duration, args.period, seed, args.jitter, args.kernel_jitter, args.transport)


def _detector_config(args) -> DetectorConfig:
    return DetectorConfig(args.beta, (args.band_low, args.band_high), args.h, Escalation(args.escalation))


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _trace_files(inputs) -> list:
    files = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files += sorted(p.glob("*.trace"))
        elif p.exists():
            files.append(p)
        else:
            raise UsageError(f"no such file or directory: {item}")
    if not files:
        raise UsageError("no trace files found")
    return files


def _write_manifest(args, argv, outputs, inputs=(), seeds=(), base_dir=None, extra=None):
    resolved = {k: v for k, v in vars(args).items() if k not in ("replay", "manifest")}
    doc = {
        "command": args.command,
        "argv": list(argv),
        "config": resolved,
        "seeds": list(seeds),
        "inputs": [str(p) for p in inputs],
        "outputs": {str(p): _sha256(p) for p in outputs},
        "version": __version__,
    }
    if extra:
        doc.update(extra)
    if args.manifest:
        path = Path(args.manifest)
    elif base_dir is not None:
        path = Path(base_dir) / "manifest.json"
    else:
        key = hashlib.sha256(json.dumps(resolved, sort_keys=True, default=str).encode()).hexdigest()[:12]
        path = Path(_db(args).root) / "manifests" / f"{args.command}-{key}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n")
    return path


# -- subcommands ----------------------------------------------------------------------


def cmd_simulate(args, argv):
    if not args.scenario:
        raise UsageError("simulate needs --scenario")
    if args.runs < 1:
        raise UsageError("--runs must be at least 1")
    if args.scenario in GENUINE_SCENARIOS:
        tier, scenario = GENUINE_SCENARIOS[args.scenario], None
    elif args.scenario in SCENARIO_IDS:
        scenario = ThreatScenario(args.scenario, lam=args.lam)
        tier = scenario.tier
    else:
        raise UsageError(f"unknown scenario {args.scenario!r}; expected one of "
                         f"{', '.join(SCENARIO_IDS + tuple(GENUINE_SCENARIOS))}")
    out = Path(args.out or "traces")
    out.mkdir(parents=True, exist_ok=True)
    cls = DeviceClass(tier, args.device_type, args.task_context)
    written, seeds = [], []
    for i in range(args.runs):
        seed = args.seed + i
        seeds.append(seed)
        kernel, user = run_session(_sim_config(args, seed), cls, scenario,
                                   device_id=f"{args.scenario}-r{i:03d}", run_id=i)
        for trace, tag in ((kernel, "kernel"), (user, "user")):
            path = out / f"{args.scenario}-r{i:03d}-{tag}.trace"
            write_trace(trace, path)
            written.append(path)
    print(f"wrote {len(written)} trace files to {out}")
    _write_manifest(args, argv, written, seeds=seeds, base_dir=out)
    return EXIT_OK


def _load_weights(path) -> WeightScheme:
    table = {}
    for no, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        name, _, w = line.partition("=")
        try:
            table[name.strip()] = float(w)
        except ValueError:
            raise UsageError(f"{path}:{no}: expected name=weight") from None
    return WeightScheme.adaptive(table)


def cmd_learn(args, argv):
    inputs = []
    if args.input:
        files = _trace_files([args.input])
        inputs = files
        traces = [read_trace(p) for p in files]
        classes = sorted({str(t.device_class) for t in traces})
        if len(classes) > 1:
            raise ClassMismatch(f"input mixes device classes: {', '.join(classes)}")
        cls = traces[0].device_class
        if args.device_class and DeviceClass.parse(args.device_class) != cls:
            raise ClassMismatch(f"traces are {cls}, --class says {args.device_class}")
        seeds = []
    elif args.device_class:
        cls = DeviceClass.parse(args.device_class)
        traces, seeds = [], []
        for i in range(args.runs):
            seed = args.seed + i
            seeds.append(seed)
            traces += run_session(_sim_config(args, seed), cls, run_id=i)
    else:
        raise UsageError("learn needs --input or --class")
    kernel = [t for t in traces if t.source is Source.KERNEL]
    user = [t for t in traces if t.source is Source.USER]
    if args.weights:
        scheme = _load_weights(args.weights)
        inputs = list(inputs) + [Path(args.weights)]
    else:
        scheme = WeightScheme.uniform_random(args.seed if args.weight_seed is None else args.weight_seed)
    policy = args.sigma if args.sigma is not None else replace(SigmaPolicy(), floor=args.sigma_floor)
    result = build_gtp(kernel, user, cls, scheme, policy)
    outputs = []
    if result.accepted:
        db = _db(args)
        path = db.replace(result)
        outputs.append(path)
        print(f"accepted {cls} sigma={result.sigma:g} ili_kernel={result.ili_kernel:.6f} "
              f"ili_user={result.ili_user:.6f} -> {path}")
        code = EXIT_OK
    else:
        print(f"rejected {cls} ili_kernel={result.ili_kernel:.6f} ili_user={result.ili_user:.6f} "
              f"sigma_floor={result.sigma:g}")
        code = EXIT_FLAGGED
    _write_manifest(args, argv, outputs, inputs=inputs, seeds=seeds,
                    base_dir=Path(args.out) if args.out else None,
                    extra={"accepted": result.accepted})
    return code


def cmd_detect(args, argv):
    files = _trace_files(args.inputs)
    devices = {}
    for p in files:
        t = read_trace(p)
        devices.setdefault((t.device_id, str(t.device_class), t.task_id, t.run_id), []).append(t)
    cfg = _detector_config(args)
    db = _db(args)
    lines = [REPORT_HEADER]
    any_flagged = False
    for key in sorted(devices):
        v = detect(devices[key], db, cfg)
        any_flagged |= v.compromised
        lines.append(v.report_line())
    text = "\n".join(lines) + "\n"
    outputs = []
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        outputs.append(out)
        if not args.manifest:
            args.manifest = str(out) + ".manifest.json"
    else:
        sys.stdout.write(text)
    _write_manifest(args, argv, outputs, inputs=files)
    return EXIT_FLAGGED if any_flagged else EXIT_OK


def _csv_list(text, conv=str):
    return [conv(x.strip()) for x in text.split(",") if x.strip()]


def cmd_evaluate(args, argv):
    try:
        betas = _csv_list(args.betas, float)
    except ValueError:
        raise UsageError(f"bad --betas {args.betas!r}") from None
    scenarios = _csv_list(args.scenarios)
    for sc in scenarios:
        if sc not in SCENARIO_IDS:
            raise UsageError(f"unknown scenario {sc!r}; expected one of {', '.join(SCENARIO_IDS)}")
    try:
        plan = ExperimentPlan(tuple(scenarios), args.runs, args.seed, args.lam, _sim_config(args, 0),
                              args.device_type, args.task_context, tuple(_csv_list(args.detectors)),
                              tuple(_csv_list(args.sources)), args.workers)
    except (DomainError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    cfg = _detector_config(args)
    db = _db(args)
    if args.learn:
        for cls, result in learn_profiles(plan, db, args.train_runs).items():
            if not result.accepted:
                print(f"warning: {result}", file=sys.stderr)
    report = report_from_scores(plan, collect_scores(plan, db, cfg), betas, cfg)
    out = Path(args.out or "evaluation")
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    report.write_csv(metrics_path)
    scores_path = out / "scores.csv"
    scores_path.write_text(report.scores_csv())
    curves = report.write_curves(out / "curves")
    print(f"wrote {metrics_path} ({len(report.rows)} rows), {scores_path} and {len(curves)} curve files")
    _write_manifest(args, argv, [metrics_path, scores_path, *curves], base_dir=out,
                    seeds=[args.seed])
    return EXIT_OK


def cmd_db(args, argv):
    db = _db(args)
    if args.action == "list":
        for cls in db.classes():
            print(cls)
        return EXIT_OK
    if not args.device_class:
        raise UsageError(f"db {args.action} needs a device class")
    try:
        cls = DeviceClass.parse(args.device_class)
    except DomainError as exc:
        raise UsageError(str(exc)) from None
    if args.action == "show":
        p = db.lookup(cls)
        if p is None:
            raise NoProfile(cls)
        print(f"class       {cls}")
        print(f"sigma       {p.sigma:g}")
        print(f"ili         kernel-hook={p.ili_kernel:.6f} user-hook={p.ili_user:.6f}")
        print(f"runs        kernel-hook={len(p.scl_kernel)} user-hook={len(p.scl_user)}")
        print(f"weights     {p.weight_scheme.mode} ({len(p.weight_scheme.table)} names)")
        for src in Source:
            top = sorted(p.mean_histogram(src).counts.items(), key=lambda kv: -kv[1])[:8]
            print(f"{src.value:11s} " + " ".join(f"{n}={c:g}" for n, c in top))
        return EXIT_OK
    if not db.remove(cls):
        raise NoProfile(cls)
    print(f"removed {cls}")
    _write_manifest(args, argv, [])
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "learn": cmd_learn, "detect": cmd_detect, "evaluate": cmd_evaluate,
            "db": cmd_db}


def replay(path) -> int:
    """Re-run a recorded command from its resolved options and compare outputs with the recorded digests."""
    try:
        doc = json.loads(Path(path).read_text())
        options = dict(doc["config"])
        recorded = doc["outputs"]
        command = COMMANDS[doc["command"]]
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read manifest {path}: {exc}") from exc
    options.update(replay=None, manifest=None, config=None)
    code = command(argparse.Namespace(**options), doc.get("argv", []))
    differing = [p for p, digest in recorded.items() if not Path(p).exists() or _sha256(p) != digest]
    if differing:
        for p in differing:
            print(f"replay: {p} differs from the recorded output", file=sys.stderr)
        return EXIT_FLAGGED
    print(f"replay: {len(recorded)} outputs identical")
    return code


def run(argv) -> int:
    parser, args = parse(argv)
    if args.replay:
        return replay(args.replay)
    if args.command is None:
        raise UsageError("a subcommand is required (simulate, learn, detect, evaluate, db)")
    return COMMANDS[args.command](args, argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return run(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ClassMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MIXED
    except NoProfile as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOPROFILE
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GridSentryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

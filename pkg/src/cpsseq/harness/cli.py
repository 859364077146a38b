"""``cpsseq`` command line.

Exit status: 0 on success, 1 on usage or validation errors (bad flags,
missing or malformed input files), 2 on runtime failures (an invariant
violation mid-run, an unavailable store, an I/O error while writing).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .. import __version__
from ..config import answers_from_json, bundled_path, key_transcript, load_answers, load_config, parse_json, read_json
from ..errors import ConfigurationError, CPSError, ValidationError
from ..identification import IdentityRegistry, classify, identify
from ..ledger import ConsensusConfig, run_attack
from ..proxy import QualityOfData, SamplingPolicy, adapt_policy, certify_policy
from .runner import render_text, run_scenario
from .scenario import ScenarioError, load_scenario


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cpsseq", description="Identify, sequence and mirror physical assets.")
    p.add_argument("--version", action="version", version=f"cpsseq {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    run = sub.add_parser("run", help="run a scenario file (or a bundled scenario by name)")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--out", default=None, help="report directory (default runs/<name>-seed<seed>)")

    cl = sub.add_parser("classify", help="rank catalog classes for an answers file")
    cl.add_argument("answers_file")
    cl.add_argument("--config", default=None, help="catalog configuration (default: built-in)")

    mint = sub.add_parser("mint", help="identify an observation and resolve or mint its identity")
    mint.add_argument("observation_file")
    mint.add_argument("--registry", default=None, help="registry JSON file, created if missing and updated")
    mint.add_argument("--config", default=None)
    mint.add_argument("--threshold", type=float, default=3.0, help="match threshold in sigma units")
    mint.add_argument("--min-confidence", type=float, default=0.5)

    led = sub.add_parser("ledger", help="ledger experiments")
    led_sub = led.add_subparsers(dest="ledger_command", metavar="subcommand", parser_class=_Parser)
    atk = led_sub.add_parser("attack", help="one parasite double-mint attack run")
    atk.add_argument("--fraction", type=float, required=True, help="adversary share of issuance in [0, 1)")
    atk.add_argument("--rounds", type=int, default=5000)
    atk.add_argument("--seed", type=int, default=0)
    atk.add_argument("--honest", type=int, default=10, help="honest node count")
    atk.add_argument("--threshold", type=int, default=10, help="confirmation weight threshold")
    atk.add_argument("--alpha", type=float, default=0.5, help="tip-selection bias")

    px = sub.add_parser("proxy", help="data proxy tools")
    px_sub = px.add_subparsers(dest="proxy_command", metavar="subcommand", parser_class=_Parser)
    ad = px_sub.add_parser("adapt", help="find the leanest certified sampling policy for a QoD bound")
    ad.add_argument("--class", dest="class_label", required=True)
    ad.add_argument("--qod", required=True, help='JSON file: {"<state>": max stddev, ...}')
    ad.add_argument("--config", default=None)
    ad.add_argument("--period", type=int, default=1, help="starting period")
    ad.add_argument("--channels", default=None, help="comma-separated starting channels (default: all)")

    rep = sub.add_parser("report", help="print the report of a finished run")
    rep.add_argument("run_dir")
    return p


# --------------------------------------------------------------------------


def _cmd_run(args, out):
    path = Path(args.scenario)
    if not path.exists() and "/" not in args.scenario and not path.suffix:
        bundled = bundled_path(f"scenarios/{args.scenario}.json")
        if bundled.is_file():
            path = Path(str(bundled))
    scenario = load_scenario(path)
    seed = scenario.seed if args.seed is None else args.seed
    out_dir = Path(args.out) if args.out else Path("runs") / f"{scenario.name}-seed{seed}"
    report = run_scenario(scenario, seed=seed)
    try:
        report.write(out_dir)
    except OSError as exc:
        raise CPSError(f"cannot write report to {out_dir}: {exc}") from None
    out.write(report.text)
    out.write(f"\nreport written to {out_dir}\n")


def _cmd_classify(args, out):
    catalog = load_config(args.config).catalog
    post = classify(load_answers(args.answers_file), catalog)
    for label, p in post.entries:
        out.write(f"{label}\t{p:.6f}\n")


def _cmd_mint(args, out):
    cfg = load_config(args.config)
    data = read_json(args.observation_file)
    if not isinstance(data, dict) or "features" not in data:
        raise ValidationError(f"{args.observation_file}: expected an object with 'features'")
    answers = data.get("answers", [])
    answers = key_transcript() if answers == "key-transcript" else answers_from_json(answers)
    reg_path = Path(args.registry) if args.registry else None
    registry = IdentityRegistry()
    if reg_path is not None and reg_path.exists():
        try:
            registry = IdentityRegistry.from_json(read_json(reg_path))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"{reg_path}: malformed registry ({exc})") from None
    post, fv, ident, kind = identify(answers, data["features"], cfg.catalog, cfg.schemas, registry,
                                     min_confidence=args.min_confidence, match_threshold=args.threshold,
                                     at=data.get("at"))
    if reg_path is not None:
        try:
            reg_path.write_text(json.dumps(registry.to_json(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
        except OSError as exc:
            raise CPSError(f"cannot write registry {reg_path}: {exc}") from None
    out.write(f"{kind.value} {ident.identity_id}\n")
    out.write(f"class {post.top} ({post.confidence:.4f})\n")
    out.write(f"digest {ident.physical_hash.digest}\n")


def _cmd_attack(args, out):
    cfg = ConsensusConfig(args.threshold, args.fraction, args.alpha)
    report = run_attack(args.honest, args.fraction, args.rounds, args.seed, cfg)
    out.write(report.to_text())


def _cmd_adapt(args, out):
    cfg = load_config(args.config)
    model = cfg.models[args.class_label]
    bounds = read_json(args.qod)
    if not isinstance(bounds, dict):
        raise ValidationError(f"{args.qod}: expected an object of per-state bounds")
    qod = QualityOfData.from_mapping(model, bounds)
    if args.channels:
        names = [c.strip() for c in args.channels.split(",")]
        unknown = [c for c in names if c not in model.channels]
        if unknown:
            raise ValidationError(f"unknown channels {unknown}; model has {list(model.channels)}")
        start = SamplingPolicy(args.period, tuple(model.channels.index(c) for c in names))
    else:
        start = SamplingPolicy(args.period, tuple(range(model.n_channels)))
    start_cert = certify_policy(model, start, qod)
    out.write(f"start  period={start.period} channels={_chan(model, start)} cost={start.cost:g} "
              f"certified={bool(start_cert)}\n")
    if not start_cert:
        out.write(f"reason {start_cert.reason}\n")
        return
    best = adapt_policy(model, start, qod)
    cert = certify_policy(model, best, qod)
    out.write(f"adapted period={best.period} channels={_chan(model, best)} cost={best.cost:g} "
              f"certified={bool(cert)}\n")
    for name, sd, b in zip(model.state_names, cert.steady_stddevs, qod.bounds):
        out.write(f"  {name:<16} stddev={sd:.6g} bound={b:g}\n")


def _chan(model, policy) -> str:
    return ",".join(model.channels[c] for c in policy.active_channels)


def _cmd_report(args, out):
    path = Path(args.run_dir) / "summary.json"
    if not path.is_file():
        raise ValidationError(f"{args.run_dir}: no summary.json (not a run directory?)")
    try:
        summary = parse_json(path.read_text(encoding="utf-8"), str(path))
    except OSError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    try:
        out.write(render_text(summary))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: not a run summary ({exc})") from None


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(err)
            raise UsageError("cpsseq: a command is required")
        if args.command == "ledger" and args.ledger_command is None:
            raise UsageError("cpsseq ledger: a subcommand is required (attack)")
        if args.command == "proxy" and args.proxy_command is None:
            raise UsageError("cpsseq proxy: a subcommand is required (adapt)")
        handler = {
            "run": _cmd_run, "classify": _cmd_classify, "mint": _cmd_mint, "report": _cmd_report,
            "ledger": _cmd_attack, "proxy": _cmd_adapt,
        }[args.command]
        handler(args, out)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (ValidationError, ConfigurationError, ScenarioError) as exc:
        err.write(f"error: {exc}\n")
        return 1
    except CPSError as exc:
        err.write(f"failure: {type(exc).__name__}: {exc}\n")
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        err.write(f"failure: {type(exc).__name__}: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

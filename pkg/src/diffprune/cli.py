"""Command-line entry point: ``diffprune <command> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import checkpoint as ckpt_io
from . import pipeline
from .config import ExperimentConfig, load_config, save_config
from .structure import group_report

COMMANDS = ("gen-data", "train", "profile", "prune", "finetune", "sample", "eval", "sweep")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="experiment JSON")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="diffprune", description="Structural pruning for diffusion models.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common], help="write the configured dataset as DTNS")
    p = sub.add_parser("train", parents=[common], help="pretrain a denoiser")
    p.add_argument("--ckpt", help="resume from this checkpoint")
    p = sub.add_parser("profile", parents=[common], help="per-timestep loss profile")
    p.add_argument("--ckpt", required=True)
    p = sub.add_parser("prune", parents=[common], help="one-shot structural pruning")
    p.add_argument("--ckpt", required=True, help="teacher checkpoint")
    p = sub.add_parser("finetune", parents=[common], help="finetune a pruned checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scratch", action="store_true", help="train the same architecture from a fresh init instead")
    p = sub.add_parser("sample", parents=[common], help="write a PGM grid or scatter CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("-n", type=int, help="number of samples")
    p = sub.add_parser("eval", parents=[common], help="teacher/student consistency and quality")
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", required=True)
    p = sub.add_parser("sweep", parents=[common], help="prune+evaluate over a grid of one setting")
    p.add_argument("--teacher", "--ckpt", dest="teacher", required=True)
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        if args.seed < 0:
            raise CliError("--seed must be non-negative")
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
        if args.command != "gen-data" and not cfg.dataset.path:
            # keep reading the dataset from where gen-data put it
            overrides["dataset"] = {"path": str(cfg.data_path)}
    return cfg.replace(**overrides) if overrides else cfg


def run(args) -> dict:
    cfg = resolve_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / f"{args.command}_config.json")
    cmd = args.command

    if cmd == "gen-data":
        return {"dataset": str(pipeline.gen_data(cfg))}

    if cmd == "train":
        resume = ckpt_io.load(args.ckpt) if args.ckpt else None
        path = out / "teacher.dpck"
        ck, history = pipeline.train(cfg, resume, save_to=path)
        ckpt_io.save(path, ck)
        pipeline._write_loss_log(out / "train_log.csv", history)
        return {"checkpoint": str(path), "step": ck.step}

    if cmd == "profile":
        prof = pipeline.profile(ckpt_io.load(args.ckpt), cfg)
        prof.to_csv(out / "profile.csv")
        return {"profile": str(out / "profile.csv"), "l_max": prof.l_max}

    if cmd == "prune":
        student, report = pipeline.prune(ckpt_io.load(args.ckpt), cfg)
        path = out / "pruned.dpck"
        ckpt_io.save(path, student)
        report.save(out)
        report.extras["scores"].to_csv(out / "scores.csv", report.extras["groups"], report.removed_groups)
        report.extras["profile"].to_csv(out / "profile.csv")
        (out / "groups.txt").write_text(group_report(report.extras["groups"]))
        return {"checkpoint": str(path), "params_after": report.params_after, "macs_after": report.macs_after,
                "kept_steps": report.kept_steps}

    if cmd == "finetune":
        src = ckpt_io.load(args.ckpt)
        if args.scratch:
            ck, report = pipeline.scratch(src, cfg)
            path = out / "scratch.dpck"
        else:
            ck, report = pipeline.finetune(src, cfg)
            path = out / "finetuned.dpck"
        ckpt_io.save(path, ck)
        report.save(out)
        pipeline._write_loss_log(out / f"{report.stage}_log.csv", report.extras.get("history", []))
        return {"checkpoint": str(path), "finetune_steps": report.finetune_steps}

    if cmd == "sample":
        return {"samples": str(pipeline.sample(ckpt_io.load(args.ckpt), cfg, out, args.n))}

    if cmd == "eval":
        report = pipeline.evaluate(ckpt_io.load(args.teacher), ckpt_io.load(args.student), cfg)
        report.save(out)
        report.extras["consistency"].to_csv(out / "consistency.csv")
        return {"report": str(out / "eval_report.csv"), **report.metrics}

    if cmd == "sweep":
        rows = pipeline.sweep(cfg, args.teacher)
        path = out / f"sweep_{cfg.sweep.axis}.csv"
        pipeline.write_sweep_csv(path, rows)
        return {"report": str(path), "runs": len(rows), "failed": sum(1 for r in rows if r.get("error"))}

    raise CliError(f"unknown command {cmd}")


def _diagnostic(command: str | None, exc: BaseException) -> str:
    message = " ".join(str(exc).split()) or type(exc).__name__
    return json.dumps({"status": "error", "command": command, "error": type(exc).__name__, "message": message})


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    command = next((a for a in argv if a in COMMANDS), None)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        result = run(args)
    except KeyboardInterrupt:
        print(_diagnostic(command, RuntimeError("interrupted")), file=sys.stderr)
        return 130
    except CliError as exc:
        print(_diagnostic(command, exc), file=sys.stderr)
        return 2
    except Exception as exc:
        print(_diagnostic(command, exc), file=sys.stderr)
        return 1
    print(json.dumps({"status": "ok", "command": args.command, **result}, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())

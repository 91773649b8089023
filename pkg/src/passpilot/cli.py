"""``passpilot`` command line.

Exit codes: 0 ok, 1 training or runtime failure, 2 unreadable / unparseable
input, 3 checkpoint and configuration disagree.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from passpilot.agents import (
    CoreSet,
    LatentPolicy,
    SearchBudget,
    coreset_select,
    guided_search,
    policy_rollout,
    random_search,
)
from passpilot.autodiff.checkpoint import ActionSpaceMismatch, CheckpointError
from passpilot.autophase import FEATURE_NAMES, extract_autophase
from passpilot.config import RunConfig, load_programs
from passpilot.env import ActionSpace, CompilerEnv
from passpilot.evaluation import Corpus, brute_force_oracle, evaluate
from passpilot.ir import ParseError, parse_ir
from passpilot.synthetic import smoke_corpus
from passpilot.training import Trainer, TrainingDiverged, load_agent

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_MISMATCH = 0, 1, 2, 3

log = logging.getLogger("passpilot")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- helpers ------------------------------------------------------------------

def _run_config(args, program_ref: str | None = None) -> RunConfig:
    if getattr(args, "config", None):
        try:
            cfg = RunConfig.load(args.config)
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot load config: {exc}", EXIT_PARSE) from exc
    else:
        cfg = RunConfig()
        if program_ref is not None and not program_ref.startswith("smoke:"):
            cfg.env.backend = "opt"
    if getattr(args, "action_space", None):
        cfg.env.action_space_file = args.action_space
    if getattr(args, "tool", None):
        cfg.env.tool = args.tool
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _config_base(args) -> Path | None:
    return Path(args.config).parent if getattr(args, "config", None) else None


def _load_program(ref: str, cfg: RunConfig):
    """``smoke:<i>`` selects a synthetic program; anything else is an IR file."""
    if ref.startswith("smoke:"):
        progs = smoke_corpus(cfg.corpus.synthetic_programs, cfg.corpus.synthetic_seed)
        try:
            return progs[int(ref.split(":", 1)[1])]
        except (ValueError, IndexError) as exc:
            raise CliError(f"no synthetic program {ref!r}", EXIT_PARSE) from exc
    try:
        text = Path(ref).read_text(encoding="utf-8")
        parse_ir(text)
    except OSError as exc:
        raise CliError(f"cannot read {ref}: {exc}", EXIT_PARSE) from exc
    except ParseError as exc:
        raise CliError(f"{ref}: {exc}", EXIT_PARSE) from exc
    return text


def _make_env(cfg: RunConfig, base=None) -> CompilerEnv:
    return CompilerEnv(cfg.env.env_config(base))


def _load_checkpoint(path: str, space: ActionSpace):
    try:
        return load_agent(path, space.hash)
    except ActionSpaceMismatch as exc:
        raise CliError(str(exc), EXIT_MISMATCH) from exc
    except (OSError, CheckpointError) as exc:
        raise CliError(f"cannot load checkpoint: {exc}", EXIT_MISMATCH) from exc


def _parse_mode(mode: str):
    kind, _, arg = mode.partition(":")
    if kind == "rollout":
        return kind, None
    if kind == "guided":
        return kind, SearchBudget.parse(arg if arg.endswith(("s", "p")) else f"{arg or 60}s")
    if kind == "coreset":
        if not arg:
            raise CliError("coreset mode needs a file: coreset:<path>", EXIT_PARSE)
        return kind, arg
    raise CliError(f"unknown mode {mode!r}", EXIT_PARSE)


def _runner(mode: str, wm, ac, space: ActionSpace, seed: int):
    kind, arg = _parse_mode(mode)
    policy = LatentPolicy(wm, ac)
    if kind == "rollout":
        return lambda env, prog, base: policy_rollout(env, prog, policy, "argmax", seed,
                                                      baseline_count=base)
    if kind == "guided":
        return lambda env, prog, base: guided_search(env, prog, policy, arg, seed,
                                                     baseline_count=base)
    try:
        cs = CoreSet.from_file(arg, space)
    except (OSError, ValueError) as exc:
        raise CliError(f"bad core-set file: {exc}", EXIT_PARSE) from exc
    return lambda env, prog, base: coreset_select(env, prog, cs, wm, baseline_count=base)


# -- commands -----------------------------------------------------------------

def cmd_features(args) -> int:
    try:
        text = Path(args.ir_path).read_text(encoding="utf-8")
        feats = extract_autophase(parse_ir(text))
    except OSError as exc:
        raise CliError(f"cannot read {args.ir_path}: {exc}", EXIT_PARSE) from exc
    except ParseError as exc:
        raise CliError(f"{args.ir_path}: {exc}", EXIT_PARSE) from exc
    for i, (name, v) in enumerate(zip(FEATURE_NAMES, feats)):
        print(f"{i},{name},{int(v)}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    if args.steps is not None:
        cfg.train.train_steps = args.steps
    if args.output_dir:
        cfg.output_dir = args.output_dir
    base = _config_base(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    effective = cfg.dumps()
    (out / "effective_config.json").write_text(effective, encoding="utf-8")
    if not args.quiet:
        print(effective, end="")
    programs, baselines = load_programs(cfg, base)
    env = _make_env(cfg, base)
    trainer = Trainer(env, programs, cfg.world_model, cfg.agent, cfg.train_config(), baselines)
    ckdir = out / "checkpoints"
    if args.resume:
        src = Path(args.resume)
        try:
            trainer.load(src)
        except ActionSpaceMismatch as exc:
            raise CliError(str(exc), EXIT_MISMATCH) from exc
        log.info("resumed at step %d", trainer.step)
    else:
        trainer.save(ckdir / "init")
    try:
        trainer.run(metrics_path=out / "metrics.csv", checkpoint_dir=ckdir)
    except TrainingDiverged as exc:
        raise CliError(f"training aborted: {exc}", EXIT_FAIL) from exc
    print(json.dumps({"steps": trainer.step, "env_steps": trainer.env_steps,
                      "checkpoint": str(ckdir / "final")}))
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = _run_config(args, args.program)
    env = _make_env(cfg, _config_base(args))
    space = env.config.action_space
    wm, ac, _ = _load_checkpoint(args.checkpoint, space)
    prog = _load_program(args.program, cfg)
    runner = _runner(args.mode, wm, ac, space, cfg.seed)
    out = runner(env, prog, None)
    if hasattr(out, "counts"):
        seq, final = [int(a) for a in out.actions], int(out.counts[-1])
    else:
        seq, final = list(out.sequence), int(out.count)
    ratio = env.baseline_count / final if final > 0 else float("inf")
    print("sequence: " + " ".join(space.pass_names[a] for a in seq))
    print(f"instructions: {env.initial_count} -> {final} (baseline {env.baseline_count})")
    print(f"ratio: {ratio:.6f}")
    return EXIT_OK


def _eval_programs(manifest: str, cfg: RunConfig, split: str | None):
    try:
        data = json.loads(Path(manifest).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read manifest: {exc}", EXIT_PARSE) from exc
    if isinstance(data, dict) and "synthetic" in data:
        cfg.env.backend = "synthetic"
        return smoke_corpus(int(data.get("n_programs", 10)), int(data.get("seed", 0)))
    cfg.env.backend = "opt"
    corpus = Corpus.from_manifest(manifest)
    entries = corpus.entries if split in (None, "all") else corpus.split(split)
    return [corpus.read(e) for e in entries]


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    programs = _eval_programs(args.manifest, cfg, args.split)
    base = _config_base(args)
    env_factory = lambda: _make_env(cfg, base)  # noqa: E731
    space = cfg.env.action_space(base)
    wm, ac, _ = _load_checkpoint(args.checkpoint, space)
    runner = _runner(args.mode, wm, ac, space, cfg.seed)
    out = Path(args.out)
    report = evaluate(runner, programs, env_factory, label="agent", workers=args.workers)
    report.write(out, "report", space.pass_names, timing=not args.no_timing)
    summary = {"agent": report.summary()}
    if args.baseline:
        kind, _, trials = args.baseline.partition(":")
        if kind != "random-search":
            raise CliError(f"unknown baseline {args.baseline!r}", EXIT_PARSE)
        budget = SearchBudget(episodes=int(trials or 1))
        rs = lambda env, prog, b: random_search(env, prog, budget, cfg.seed, baseline_count=b)  # noqa: E731
        brep = evaluate(rs, programs, env_factory, label="random-search", workers=args.workers)
        brep.write(out, "baseline", space.pass_names, timing=not args.no_timing)
        summary["random-search"] = brep.summary()
    (out / "comparison.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_search(args) -> int:
    cfg = _run_config(args, args.program)
    env = _make_env(cfg, _config_base(args))
    prog = _load_program(args.program, cfg)
    res = random_search(env, prog, SearchBudget.parse(args.budget), cfg.seed)
    print(res.to_record(env.config.action_space.pass_names))
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _run_config(args, args.program)
    if cfg.env.backend != "synthetic":
        raise CliError("the oracle runs on synthetic programs only", EXIT_FAIL)
    cfg.env.episode_limit = max(cfg.env.episode_limit, args.max_len)
    env = _make_env(cfg, _config_base(args))
    prog = _load_program(args.program, cfg)
    seq, value = brute_force_oracle(env, prog, args.max_len, cap=args.cap)
    names = env.config.action_space.pass_names
    print(json.dumps({"program": env.program_id, "sequence": [names[a] for a in seq],
                      "value": value}))
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="passpilot", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("features", help="print the 56 static features of an IR file")
    s.add_argument("ir_path")
    s.set_defaults(func=cmd_features)

    def common(sp):
        sp.add_argument("--config")
        sp.add_argument("--action-space")
        sp.add_argument("--tool")

    s = sub.add_parser("train", help="train world model and agent")
    s.add_argument("config", nargs="?")
    s.add_argument("--steps", type=int)
    s.add_argument("--output-dir")
    s.add_argument("--resume", help="checkpoint directory to continue from")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("optimize", help="optimize one program with a trained agent")
    s.add_argument("checkpoint")
    s.add_argument("program", help="IR file or smoke:<index>")
    s.add_argument("--mode", default="rollout", help="rollout | guided:<seconds> | coreset:<file>")
    common(s)
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("eval", help="evaluate over a corpus manifest")
    s.add_argument("checkpoint")
    s.add_argument("manifest")
    s.add_argument("--mode", default="rollout")
    s.add_argument("--split", default=None)
    s.add_argument("--baseline", help="random-search:<trials>")
    s.add_argument("--out", default="eval")
    s.add_argument("--no-timing", action="store_true", help="write 0 for wall time")
    common(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("search", help="uniform random search")
    s.add_argument("program")
    s.add_argument("--budget", default="100", help="<n> episodes, <n>p passes or <x>s seconds")
    common(s)
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("oracle", help="exhaustive search (synthetic programs)")
    s.add_argument("program")
    s.add_argument("--max-len", type=int, default=4)
    s.add_argument("--cap", type=int, default=10**6)
    common(s)
    s.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

"""Operator entry point: train / eval / gen / checkgrad subcommands.

Configuration is a flat ``key=value`` text file; any CLI flag overrides
the corresponding key.  Metrics go to stdout as JSON lines, diagnostics
to stderr.  Exit codes: 0 success, 1 runtime failure, 2 input or config
error, 3 checkpoint incompatibility.
"""

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from .config import HyperParams
from .data import LogParseError, build_dataset
from .evaluate import evaluate
from .meta import init_state, train_loop
from .model import check_gradients
from .snapshot import SnapshotError, load_params, save_params
from .synthetic import MarkovSpec, gen_dataset, write_tsv
from .tasks import EmptyPopulationError

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INPUT = 2
EXIT_CHECKPOINT = 3


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    # model / training hyperparameters
    dim: int = 64
    task_lr: float = 0.05
    meta_lr: float = 0.0025
    margin: float = 1.0
    k: int = 3
    inner_steps: int = 1
    meta_batch: int = 32
    negatives_per_pair: int = 1
    eval_negatives: int = 100
    seed: int = 0
    outer_opt: str = "sgd"
    second_order: bool = False
    mode: str = "metatl"  # "metatl" | "metatl-minus"
    # run shape
    epochs: int = 10
    tasks_per_epoch: int = 1000
    workers: int = 0  # 0: use all available processors
    # data handling
    data: str = ""
    split_time: int = 1_000_000_000
    min_item_count: int = 10
    boundary: str = "test"
    checkpoint: str = ""
    out: str = ""
    per_user_csv: str = ""
    # synthetic generation
    gen_items: int = 500
    gen_train_users: int = 2000
    gen_test_users: int = 200
    gen_seq_min: int = 8
    gen_seq_max: int = 16
    gen_noise: float = 0.0
    # gradient checking
    trials: int = 100

    def hyper(self) -> HyperParams:
        hp = HyperParams(dim=self.dim, task_lr=self.task_lr,
                         meta_lr=self.meta_lr, margin=self.margin, k=self.k,
                         inner_steps=self.inner_steps,
                         meta_batch=self.meta_batch,
                         negatives_per_pair=self.negatives_per_pair,
                         eval_negatives=self.eval_negatives, seed=self.seed,
                         outer_opt=self.outer_opt,
                         second_order=self.second_order)
        if self.mode == "metatl-minus":
            hp.inner_steps = 0  # ablated at train and test alike
        try:
            hp.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return hp

    def markov_spec(self) -> MarkovSpec:
        spec = MarkovSpec(n_items=self.gen_items,
                          n_train_users=self.gen_train_users,
                          n_test_users=self.gen_test_users,
                          seq_len_range=(self.gen_seq_min, self.gen_seq_max),
                          noise=self.gen_noise,
                          split_time=self.split_time)
        try:
            spec.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return spec


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _convert(key: str, raw: str):
    typ = _FIELD_TYPES[key]
    if typ == "bool" or typ is bool:
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"bad boolean for {key}: {raw!r}")
    try:
        if typ == "int" or typ is int:
            return int(raw)
        if typ == "float" or typ is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def load_config_file(path) -> dict:
    out = {}
    try:
        with open(path, encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{line_no}: expected key=value")
                key, _, raw = stripped.partition("=")
                key = key.strip().replace("-", "_")
                if key not in _FIELD_TYPES:
                    raise ConfigError(f"{path}:{line_no}: unknown key "
                                      f"{key!r}")
                out[key] = _convert(key, raw.strip())
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        for key, val in load_config_file(args.config).items():
            setattr(cfg, key, val)
    for key in _FIELD_TYPES:
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    if cfg.mode not in ("metatl", "metatl-minus"):
        raise ConfigError(f"mode must be 'metatl' or 'metatl-minus', "
                          f"got {cfg.mode!r}")
    if cfg.workers == 0:
        cfg.workers = os.cpu_count() or 1
    if cfg.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {cfg.workers}")
    return cfg


def _emit(obj):
    print(json.dumps(obj), flush=True)


def _diag(msg):
    print(msg, file=sys.stderr, flush=True)


def _load_split(cfg: RunConfig):
    if not cfg.data:
        raise ConfigError("no dataset given (set data=... or --data)")
    try:
        ds = build_dataset(cfg.data, cfg.split_time, cfg.min_item_count,
                           cfg.boundary)
    except FileNotFoundError as exc:
        raise ConfigError(f"dataset file not found: {cfg.data}") from exc
    except LogParseError as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    for w in ds.warnings:
        _diag(f"warning: {w}")
    return ds


def cmd_train(cfg: RunConfig) -> int:
    if not cfg.checkpoint:
        raise ConfigError("no checkpoint output path (set checkpoint=...)")
    hp = cfg.hyper()
    ds = _load_split(cfg)
    state = init_state(hp, ds.n_items)
    t0 = time.perf_counter()

    def on_step(step, epoch, stats, elapsed):
        _emit({"step": step, "epoch": epoch,
               "support_loss": stats.support_loss,
               "query_loss": stats.query_loss,
               "wall_time": round(elapsed, 6)})

    train_loop(state, ds.train, cfg.epochs, cfg.tasks_per_epoch,
               workers=cfg.workers, on_step=on_step)
    save_params(state.params, cfg.checkpoint)
    _diag(f"trained {state.step} meta-steps in "
          f"{time.perf_counter() - t0:.1f}s; checkpoint -> {cfg.checkpoint}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    if not cfg.checkpoint:
        raise ConfigError("no checkpoint path (set checkpoint=...)")
    hp = cfg.hyper()
    ds = _load_split(cfg)
    try:
        params = load_params(cfg.checkpoint)
    except FileNotFoundError as exc:
        raise ConfigError(f"checkpoint not found: {cfg.checkpoint}") from exc
    if params.n_items != ds.n_items:
        raise SnapshotError(
            f"checkpoint has {params.n_items} items but the dataset "
            f"vocabulary has {ds.n_items}")
    hp.dim = params.dim
    rows = [] if cfg.per_user_csv else None
    result = evaluate(params, ds.test, hp, per_user=rows)
    payload = {"mrr": result.mrr, "hit_at_1": result.hit_at_1,
               "users_evaluated": result.users_evaluated,
               "users_skipped": result.users_skipped, "k": hp.k}
    if result.users_evaluated == 0:
        payload["warning"] = "no test user has enough interactions"
    _emit(payload)
    if cfg.per_user_csv:
        with open(cfg.per_user_csv, "w", encoding="utf-8") as f:
            f.write("user,rank,reciprocal_rank\n")
            for user, rank, rr in rows:
                f.write(f"{ds.user_ids[user]},{rank},{rr}\n")
    return EXIT_OK


def cmd_gen(cfg: RunConfig) -> int:
    if not cfg.out:
        raise ConfigError("no output path (set out=... or --out)")
    spec = cfg.markov_spec()
    log = gen_dataset(spec, cfg.seed)
    write_tsv(log, cfg.out)
    _diag(f"wrote {len(log)} interactions for "
          f"{spec.n_train_users}+{spec.n_test_users} users -> {cfg.out}")
    return EXIT_OK


def cmd_checkgrad(cfg: RunConfig) -> int:
    hp = cfg.hyper()
    report = check_gradients(hp, cfg.trials)
    print(report.summary(), flush=True)
    return EXIT_OK if report.passed else EXIT_RUNTIME


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--dim", type=int)
    p.add_argument("--task-lr", dest="task_lr", type=float)
    p.add_argument("--meta-lr", dest="meta_lr", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--inner-steps", dest="inner_steps", type=int)
    p.add_argument("--meta-batch", dest="meta_batch", type=int)
    p.add_argument("--negatives-per-pair", dest="negatives_per_pair",
                   type=int)
    p.add_argument("--eval-negatives", dest="eval_negatives", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--outer-opt", dest="outer_opt", choices=["sgd", "adam"])
    p.add_argument("--mode", choices=["metatl", "metatl-minus"])
    p.add_argument("--split-time", dest="split_time", type=int)
    p.add_argument("--min-item-count", dest="min_item_count", type=int)
    p.add_argument("--boundary", choices=["test", "train"])
    p.add_argument("--workers", type=int)
    p.add_argument("--data")
    p.add_argument("--checkpoint")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metatl",
        description="meta-learned translation model for cold-start "
                    "next-item recommendation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="meta-train on an interaction log")
    _add_common(p_train)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--tasks-per-epoch", dest="tasks_per_epoch",
                         type=int)

    p_eval = sub.add_parser("eval", help="rank held-out items for test users")
    _add_common(p_eval)
    p_eval.add_argument("--per-user-csv", dest="per_user_csv")

    p_gen = sub.add_parser("gen", help="generate a synthetic interaction log")
    _add_common(p_gen)
    p_gen.add_argument("--out")
    p_gen.add_argument("--gen-items", dest="gen_items", type=int)
    p_gen.add_argument("--gen-train-users", dest="gen_train_users", type=int)
    p_gen.add_argument("--gen-test-users", dest="gen_test_users", type=int)
    p_gen.add_argument("--gen-seq-min", dest="gen_seq_min", type=int)
    p_gen.add_argument("--gen-seq-max", dest="gen_seq_max", type=int)
    p_gen.add_argument("--gen-noise", dest="gen_noise", type=float)

    p_chk = sub.add_parser("checkgrad",
                           help="finite-difference gradient check")
    _add_common(p_chk)
    p_chk.add_argument("--trials", type=int)
    return parser


_COMMANDS = {"train": cmd_train, "eval": cmd_eval, "gen": cmd_gen,
             "checkgrad": cmd_checkgrad}


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        return _COMMANDS[args.command](cfg)
    except (ConfigError, EmptyPopulationError) as exc:
        _diag(f"error: {exc}")
        return EXIT_INPUT
    except SnapshotError as exc:
        _diag(f"checkpoint error: {exc}")
        return EXIT_CHECKPOINT
    except Exception as exc:  # runtime failure
        _diag(f"failure: {type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

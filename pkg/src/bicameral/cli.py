"""Command-line pipeline: pretrain, synthesize labelled data, train the
shadow tower, generate with per-token scores, run the dominance demo,
and finite-difference the gradients.

One JSON config file is the canonical record of a run; flags override
single values and the merged config is echoed verbatim to a
``<artifact>.config.json`` sidecar next to every written artifact.

Exit codes: 0 success, 2 config error, 3 contract refusal (unfrozen
language tower, incompatible checkpoint), 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import training
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .doppelganger import (BicameralModel, DoppelConfig, init_doppelganger,
                           named_parameters as doppel_named)
from .doppelganger import load_parameters as doppel_load
from .generation import SamplerConfig, generate, render_plain
from .gradcheck import run_model_check, run_op_battery
from .language import (CharTokenizer, FrozenModelError, LMConfig, SequenceError,
                       freeze, init_language_model, named_parameters as lm_named,
                       pretrain)
from .language import load_parameters as lm_load
from .optim import OptimConfig
from .reward_theory import (SplitLanguageFunction, random_instance,
                            verify_supremacy)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_REFUSED = 3
EXIT_NUMERIC = 4

CHECKPOINT_KIND = "bicameral-checkpoint"


class ConfigError(ValueError):
    """Missing, malformed, or inconsistent run configuration."""


class RefusalError(RuntimeError):
    """A command declined to run because a contract would be violated."""


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc


def _merge_flags(config: dict, args: argparse.Namespace) -> dict:
    merged = json.loads(json.dumps(config))  # deep copy, JSON-clean
    if args.seed is not None:
        merged["seed"] = args.seed
    if "seed" not in merged:
        raise ConfigError("a seed must be given, in the config file or via --seed")
    merged.setdefault("paths", {})
    return merged


def _path(config: dict, key: str, must_exist: bool = False) -> Path:
    paths = config.get("paths", {})
    if key not in paths:
        raise ConfigError(f"config is missing paths.{key}")
    p = Path(paths[key])
    if must_exist and not p.exists():
        raise ConfigError(f"paths.{key} does not exist: {p}")
    return p


def _lm_config(config: dict, vocab_size: int) -> LMConfig:
    try:
        return LMConfig(vocab_size=vocab_size, **config.get("lm", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad lm config: {exc}") from exc


def _doppel_config(config: dict) -> DoppelConfig:
    try:
        return DoppelConfig(**config.get("doppel", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad doppel config: {exc}") from exc


def _optim_config(config: dict, section: str, seed_offset: int,
                  drop: tuple[str, ...] = ()) -> OptimConfig:
    try:
        fields = dict(config.get(section, {}))
        for key in drop:
            fields.pop(key, None)
        fields.setdefault("seed", int(config["seed"]) + seed_offset)
        return OptimConfig(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {section} config: {exc}") from exc


def _write_sidecar(artifact: Path, merged_config: dict) -> None:
    sidecar = artifact.parent / (artifact.name + ".config.json")
    sidecar.write_text(json.dumps(merged_config, sort_keys=True, indent=2) + "\n",
                       encoding="utf-8")


def _save_models(path: Path, merged: dict, tokenizer: CharTokenizer,
                 lm, doppel=None) -> None:
    block = {"kind": CHECKPOINT_KIND,
             "lm": lm.config.to_dict(),
             "doppel": doppel.config.to_dict() if doppel is not None else None,
             "frozen": bool(lm.frozen),
             "alphabet": tokenizer.to_lines(),
             "run": merged}
    entries = [("lm." + n, p) for n, p in lm_named(lm)]
    if doppel is not None:
        entries += [("doppel." + n, p) for n, p in doppel_named(doppel)]
    save_checkpoint(path, block, entries)
    _write_sidecar(path, merged)


def _load_models(path: Path, need_doppel: bool = False):
    ckpt = load_checkpoint(path)
    block = ckpt.config
    if block.get("kind") != CHECKPOINT_KIND:
        raise RefusalError(f"{path} is not a {CHECKPOINT_KIND}")
    tokenizer = CharTokenizer(block["alphabet"])
    lm = init_language_model(LMConfig(**block["lm"]))
    lm_load(lm, ckpt.params, prefix="lm.")
    if block.get("frozen"):
        freeze(lm)
    doppel = None
    if block.get("doppel") is not None:
        doppel = init_doppelganger(lm.config, DoppelConfig(**block["doppel"]))
        doppel_load(doppel, ckpt.params, prefix="doppel.")
    if need_doppel and doppel is None:
        raise RefusalError(f"{path} has no shadow-tower parameters; train one first")
    return lm, doppel, tokenizer, block


def _corpus_windows(text: str, tokenizer: CharTokenizer, window: int) -> list[list[int]]:
    ids = tokenizer.encode(text)
    if len(ids) < 2:
        raise ConfigError("corpus is too short to train on")
    out = []
    for start in range(0, len(ids), window):
        chunk = ids[start:start + window + 1]
        if len(chunk) >= 2:
            out.append(chunk)
    return out


def _chars_to_ids(tokenizer: CharTokenizer, chars: list[str], what: str) -> tuple[int, ...]:
    try:
        return tuple(tokenizer.encode(c)[0] for c in chars)
    except ValueError as exc:
        raise ConfigError(f"bad {what}: {exc}") from exc


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_pretrain(merged: dict, do_freeze: bool = True) -> int:
    tokenizer = CharTokenizer.from_file(_path(merged, "alphabet", must_exist=True))
    corpus_text = _path(merged, "corpus", must_exist=True).read_text(encoding="utf-8")
    out_path = _path(merged, "checkpoint_out")

    lm_cfg = _lm_config(merged, tokenizer.vocab_size)
    opt = _optim_config(merged, "pretrain", seed_offset=2, drop=("window",))
    window = int(merged.get("pretrain", {}).get("window", min(64, lm_cfg.max_seq_len - 1)))

    rng = np.random.default_rng(int(merged["seed"]))
    lm = init_language_model(lm_cfg, rng)
    sequences = _corpus_windows(corpus_text, tokenizer, window)
    log = pretrain(lm, sequences, opt)
    if do_freeze:
        freeze(lm)
    _save_models(out_path, merged, tokenizer, lm)
    if "log" in merged.get("paths", {}):
        log_path = _path(merged, "log")
        log_path.write_text("".join(json.dumps(e) + "\n" for e in log), encoding="utf-8")
        _write_sidecar(log_path, merged)
    last = log[-1]["train_loss"] if log else float("nan")
    print(f"pretrained {lm_cfg.n_layers} modules on {len(sequences)} windows, "
          f"final loss {last:.4f}, frozen={do_freeze}, wrote {out_path}")
    return EXIT_OK


def _task_spec(merged: dict, tokenizer: CharTokenizer) -> training.SyntheticTaskSpec:
    task = dict(merged.get("task", {}))
    kind = task.pop("kind", None)
    if kind is None:
        raise ConfigError("config is missing task.kind")
    ids = {}
    for field, what in (("forbidden_chars", "forbidden_ids"),
                        ("parity_chars", "parity_ids"),
                        ("positive_chars", "positive_ids"),
                        ("negative_chars", "negative_ids")):
        if field in task:
            ids[what] = _chars_to_ids(tokenizer, task.pop(field), field)
    task.setdefault("seed", int(merged["seed"]))
    try:
        return training.SyntheticTaskSpec(kind=kind, vocab_size=tokenizer.vocab_size,
                                          **ids, **task)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad task config: {exc}") from exc


def cmd_make_data(merged: dict) -> int:
    tokenizer = CharTokenizer.from_file(_path(merged, "alphabet", must_exist=True))
    train_path = _path(merged, "dataset_train")
    val_path = _path(merged, "dataset_val")
    spec = _task_spec(merged, tokenizer)
    train, val = training.generate_synthetic_dataset(spec)
    training.save_dataset(train_path, train)
    training.save_dataset(val_path, val)
    _write_sidecar(train_path, merged)
    print(f"wrote {len(train)} train / {len(val)} val sequences for "
          f"{spec.kind} to {train_path} and {val_path}")
    return EXIT_OK


def cmd_train_doppel(merged: dict) -> int:
    lm, doppel, tokenizer, block = _load_models(_path(merged, "checkpoint_in",
                                                      must_exist=True))
    if not block.get("frozen"):
        raise RefusalError("checkpoint's language section is not frozen; "
                           "refusing to train the shadow tower against it")
    train = training.load_dataset(_path(merged, "dataset_train", must_exist=True))
    val = training.load_dataset(_path(merged, "dataset_val", must_exist=True))
    if doppel is None:
        rng = np.random.default_rng(int(merged["seed"]) + 1)
        doppel = init_doppelganger(lm.config, _doppel_config(merged), rng)
    bm = BicameralModel(language=lm, doppel=doppel)
    opt = _optim_config(merged, "train", seed_offset=3)
    log = training.train_doppelganger(bm, train, val, opt)

    out_path = _path(merged, "checkpoint_out")
    _save_models(out_path, merged, tokenizer, lm, doppel)
    if "log" in merged.get("paths", {}):
        log_path = _path(merged, "log")
        log_path.write_text("".join(json.dumps(e) + "\n" for e in log), encoding="utf-8")
        _write_sidecar(log_path, merged)
    final = log[-1]
    print(f"trained shadow tower for {final['epoch']} epochs, val loss "
          f"{final['val_loss']:.4f}, val acc {final['val_acc']}, wrote {out_path}")
    return EXIT_OK


def cmd_generate(merged: dict, prompt: str, max_new: int, fmt: str) -> int:
    lm, doppel, tokenizer, _ = _load_models(_path(merged, "checkpoint_in",
                                                  must_exist=True), need_doppel=True)
    bm = BicameralModel(language=lm, doppel=doppel)
    sampler_cfg = dict(merged.get("sampler", {}))
    sampler_cfg.setdefault("seed", int(merged["seed"]))
    try:
        sampler = SamplerConfig(**sampler_cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad sampler config: {exc}") from exc
    try:
        prompt_ids = tokenizer.encode(prompt)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    for event in generate(bm, prompt_ids, max_new, sampler, tokenizer):
        if fmt == "jsonl":
            print(event.to_json())
        else:
            print(render_plain(event))
    return EXIT_OK


def cmd_lemma_demo(merged: dict, instances: int, report: str | None) -> int:
    seed = int(merged["seed"])
    report_path = Path(report) if report else _path(merged, "report")
    lines = []
    holds = 0
    for k in range(instances):
        f, cr = random_instance(seed * 100_003 + k)
        rep = verify_supremacy(f, SplitLanguageFunction.from_shared(f), cr,
                               description=f"seeded instance {k}")
        holds += int(rep.verdict and rep.pointwise_ok and all(rep.per_objective_dominance))
        lines.append(rep.to_json())
    report_path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    _write_sidecar(report_path, merged)
    print(f"dominance held on {holds}/{instances} instances, wrote {report_path}")
    return EXIT_OK if holds == instances else EXIT_NUMERIC


def cmd_gradcheck(merged: dict) -> int:
    seed = int(merged["seed"])
    results = run_op_battery(seed)
    results.append(run_model_check(seed))
    for res in results:
        print(res.row())
    failed = [r for r in results if not r.ok]
    if failed:
        print(f"{len(failed)} gradient check(s) FAILED")
        return EXIT_NUMERIC
    print(f"all {len(results)} gradient checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bicameral",
        description="two-tower language model with per-token supervision scores")
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="override the config seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train and freeze the language tower")
    p.add_argument("--no-freeze", action="store_true",
                   help="leave the language tower trainable (not usable for "
                        "shadow training)")
    sub.add_parser("make-data", help="synthesize a per-prefix labelled dataset")
    sub.add_parser("train-doppel", help="train the shadow tower on a frozen checkpoint")

    p = sub.add_parser("generate", help="decode with per-token scores")
    p.add_argument("--prompt", required=True)
    p.add_argument("--max-new", type=int, default=32)
    p.add_argument("--format", choices=("jsonl", "plain"), default="jsonl")

    p = sub.add_parser("lemma-demo", help="run the split-objective dominance demo")
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--report", help="override paths.report")

    sub.add_parser("gradcheck", help="finite-difference every operation")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        merged = _merge_flags(_load_config(args.config), args)
        if args.command == "pretrain":
            return cmd_pretrain(merged, do_freeze=not args.no_freeze)
        if args.command == "make-data":
            return cmd_make_data(merged)
        if args.command == "train-doppel":
            return cmd_train_doppel(merged)
        if args.command == "generate":
            return cmd_generate(merged, args.prompt, args.max_new, args.format)
        if args.command == "lemma-demo":
            return cmd_lemma_demo(merged, args.instances, args.report)
        if args.command == "gradcheck":
            return cmd_gradcheck(merged)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RefusalError, FrozenModelError, CheckpointError) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (SequenceError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

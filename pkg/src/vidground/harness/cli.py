"""Command-line entry point: ``vidground <subcommand> ...``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from ..encoders import EOS
from ..metrics import score_corpus
from ..synthdata import CorpusConfig, generate_splits, load_split, read_corpus, save_splits
from .config import RunConfig, apply_overrides, desk_preset, load_config, save_config


def _run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "preset", None) == "desk":
        cfg = desk_preset()
    else:
        cfg = RunConfig()
    apply_overrides(cfg, getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "toggles", None) is not None:
        cfg = cfg.with_toggles(args.toggles.split(",") if args.toggles else [])
    return cfg


def _add_run_flags(p: argparse.ArgumentParser, toggles: bool = True) -> None:
    p.add_argument("--config", help="JSON run config (see README for the schema)")
    p.add_argument("--preset", choices=["desk"], help="named settings for CPU-scale training")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field, e.g. contrastive.beta=0.3")
    p.add_argument("--seed", type=int)
    if toggles:
        p.add_argument("--toggles", help="comma list from ts,vm,c (empty string for none)")


def _split_path(data: str, split: str) -> Path:
    path = Path(data)
    if path.is_dir():
        path = path / f"{split}.jsonl"
    if not path.exists():
        raise SystemExit(f"error: split file {path} not found")
    return path


def _words(corpus, ids) -> str:
    return " ".join(corpus.vocab.decode([i for i in ids if i != EOS]))


# ---------------------------------------------------------------- subcommands

def cmd_gen_data(args) -> int:
    fields = {f.name for f in dataclasses.fields(CorpusConfig)}
    kw = {}
    for item in args.set or []:
        key, _, raw = item.partition("=")
        if key not in fields:
            raise SystemExit(f"error: unknown corpus key {key!r}")
        kw[key] = type(getattr(CorpusConfig(), key))(raw)
    if args.n_train is not None:
        kw["n_dialogs"] = args.n_train
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.revisit is not None:
        kw["revisit"] = args.revisit
    splits = generate_splits(CorpusConfig(**kw), args.n_val, args.n_test)
    save_splits(splits, args.out, args.inline_features)
    print(f"wrote {len(splits.train)}/{len(splits.val)}/{len(splits.test)} dialogs to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .train import train

    corpus, dialogs = load_split(_split_path(args.data, "train"))
    run = _run_config(args)
    run.model.vocab_size = len(corpus.vocab)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(run, out / "config.json")
    trainer = train(run, corpus, dialogs, out, resume=args.resume, max_steps=args.max_steps)
    print(f"saved {out / 'model.ckpt'} after {trainer.state.global_step} steps")
    return 0


def _load_model(args):
    from .evaluate import Model

    model = Model.load(args.ckpt)
    if getattr(args, "toggles", None) is not None:
        model.run = model.run.with_toggles(args.toggles.split(",") if args.toggles else [])
    return model


def cmd_ground(args) -> int:
    from .evaluate import ground_dialogs
    from .model import history_records, select_for

    corpus, dialogs = load_split(_split_path(args.data, args.split))
    model = _load_model(args)
    for d, ivs in zip(dialogs, ground_dialogs(model, corpus, dialogs)):
        for i, iv in enumerate(ivs):
            cols = [d.video_id, str(i + 1), f"{iv.start:.3f}", f"{iv.end:.3f}"]
            if args.select:
                hist = history_records(d, i, ivs)
                cols.append(",".join(map(str, select_for(model.run, hist, iv).chosen)))
            print("\t".join(cols))
    return 0


def cmd_answer(args) -> int:
    from .evaluate import answer, ground_dialogs

    corpus, dialogs = load_split(_split_path(args.data, args.split))
    model = _load_model(args)
    grounded = ground_dialogs(model, corpus, dialogs)
    for d, ivs in zip(dialogs, grounded):
        if args.oracle:
            ivs = [t.interval for t in d.turns]
        last = len(d.turns) - 1
        print(f"{d.video_id}\t{_words(corpus, answer(model, corpus, d, last, ivs, args.beam_size))}")
    return 0


def cmd_eval(args) -> int:
    if args.ckpt:
        from .evaluate import evaluate

        corpus, dialogs = load_split(_split_path(args.data, args.split))
        report = evaluate(_load_model(args), corpus, dialogs, oracle=args.oracle, beam_size=args.beam_size).report
    else:
        if not (args.hyp and args.ref):
            raise SystemExit("error: give --hyp and --ref files, or --ckpt and --data")
        hyps = [line.split() for line in Path(args.hyp).read_text().splitlines()]
        refs = [line.split() for line in Path(args.ref).read_text().splitlines()]
        if len(hyps) != len(refs):
            raise SystemExit(f"error: {len(hyps)} hypotheses but {len(refs)} references")
        report = score_corpus(hyps, [[r] for r in refs])
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    from .ablate import ablate

    corpus, train = load_split(_split_path(args.data, "train"))
    _, test = load_split(_split_path(args.data, args.split))
    run = _run_config(args)
    run.model.vocab_size = len(corpus.vocab)
    seeds = list(range(run.seed, run.seed + args.seeds))
    out = Path(args.out)
    table = ablate(run, corpus, train, test, seeds, cache_dir=out / "stage1")
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(table.to_dict(), indent=2, sort_keys=True) + "\n")
    print(table.format())
    return 0


def cmd_stats(args) -> int:
    from .stats import coverage_histogram, frame_span, histogram_csv

    corpus, dialogs = load_split(_split_path(args.data, args.split))
    if args.ckpt:
        from .evaluate import ground_dialogs

        intervals = ground_dialogs(_load_model(args), corpus, dialogs)
    else:
        intervals = [[t.interval for t in d.turns] for d in dialogs]
    spans, durs = [], []
    for d, ivs in zip(dialogs, intervals):
        for iv in ivs:
            spans.append(frame_span(iv))
            durs.append(float(d.m))
    text = histogram_csv(coverage_histogram(spans, durs, args.bin_width))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidground", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic train/val/test corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-val", type=int, default=200)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--revisit", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--inline-features", action="store_true")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="corpus setting, e.g. sigma=0.2")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True, help="dataset directory or train .jsonl")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--max-steps", type=int)
    _add_run_flags(p)
    p.set_defaults(fn=cmd_train)

    for name, fn, helptext in (("ground", cmd_ground, "predict per-turn intervals"),
                               ("answer", cmd_answer, "answer the final turn of each dialog")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--ckpt", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--split", default="test")
        p.add_argument("--toggles")
        if name == "ground":
            p.add_argument("--select", action="store_true", help="also print the selected history turns")
        else:
            p.add_argument("--oracle", action="store_true")
            p.add_argument("--beam-size", type=int)
        p.set_defaults(fn=fn)

    p = sub.add_parser("eval", help="score hypothesis/reference files or a checkpoint")
    p.add_argument("--hyp")
    p.add_argument("--ref")
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--split", default="test")
    p.add_argument("--toggles")
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--beam-size", type=int)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="component ablation table, medians over seeds")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--seeds", type=int, default=5)
    _add_run_flags(p, toggles=False)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("stats", help="interval coverage histogram as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--ckpt", help="use predicted intervals instead of labels")
    p.add_argument("--bin-width", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

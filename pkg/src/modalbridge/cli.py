"""Batch command-line front end.

Subcommands: ``synth`` (write a synthetic corpus), ``train`` (fit and
checkpoint), ``eval`` (retrieval scoring of a checkpoint), ``gradcheck``
(finite-difference verification), ``report`` (aggregate eval CSVs).

Exit codes: 0 success, 2 input/config error (argparse uses the same
code for bad flags), 3 numerical divergence during training, 4
gradient-check tolerance failure. Every command is a pure function of
its flags and input files.
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import data as data_mod
from . import gradcheck as gradcheck_mod
from . import retrieval as retrieval_mod
from . import trainer as trainer_mod
from .errors import (DegenerateInputError, DivergenceError,
                     FeatureFormatError, InvalidStateError,
                     UndefinedQueryError)
from .network import (Ablation, NetworkConfig, common_representation,
                      load_checkpoint, save_checkpoint)
from .tensor import make_rng


def _parse_ablation(text: str) -> Ablation:
    try:
        return Ablation(text.replace("-", "_"))
    except ValueError:
        choices = ", ".join(a.value.replace("_", "-") for a in Ablation)
        raise ValueError(f"ablation must be one of {choices}; got {text!r}") \
            from None


def _cmd_synth(args) -> int:
    cfg = (data_mod.synth_config_from_file(args.config)
           if args.config else data_mod.SynthConfig())
    source, target = data_mod.generate_synthetic(cfg)
    # The split stream is separate from the generator stream so that
    # adding generator draws never reshuffles the split.
    split_rng = make_rng(np.random.SeedSequence([cfg.seed, 1]))
    train, test = data_mod.split(target, cfg.n_train_pairs, cfg.n_test_pairs,
                                 split_rng)
    os.makedirs(args.out, exist_ok=True)
    fmt = args.format

    def path(name):
        ext = "csv" if fmt == "csv" else "bin"
        return os.path.join(args.out, f"{name}.{ext}")

    data_mod.save_features(path("source"), source, fmt)
    data_mod.save_features(path("train_img"), train.img, fmt)
    data_mod.save_features(path("train_txt"), train.txt, fmt)
    data_mod.save_matrix(path("test_img"), test.img, fmt)
    data_mod.save_matrix(path("test_txt"), test.txt, fmt)
    data_mod.save_labels(os.path.join(args.out, "test_labels.csv"),
                         test.labels, cfg.c_tgt)
    print(f"wrote {source.n} source rows, {train.n} training pairs, "
          f"{test.labels.shape[0]} test pairs to {args.out}")
    return 0


def _cmd_train(args) -> int:
    src = data_mod.load_features(args.src)
    img = data_mod.load_features(args.tgt_img)
    txt = data_mod.load_features(args.tgt_txt)
    paired = data_mod.PairedDataset(img=img, txt=txt)

    train_cfg = (trainer_mod.train_config_from_file(args.config)
                 if args.config else trainer_mod.TrainConfig())
    ablation = train_cfg.ablation or Ablation.FULL
    if args.ablation is not None:
        ablation = _parse_ablation(args.ablation)
    # The resolved ablation lives on the network config; clear the train
    # config's copy so a config-file value cannot override the flag.
    train_cfg = dataclasses.replace(train_cfg, ablation=None)

    net_cfg = NetworkConfig(d_img_src=src.d, d_img_tgt=img.d, d_txt=txt.d,
                            c_src=src.class_count, c_tgt=img.class_count,
                            h=args.hidden, ablation=ablation)

    snapshot_fn = None
    if args.snapshot_every > 0:
        def snapshot_fn(iteration, params):
            save_checkpoint(f"{args.out}.iter{iteration}", params, net_cfg)

    params, log = trainer_mod.train(src, paired, net_cfg, train_cfg,
                                    snapshot_every=args.snapshot_every,
                                    snapshot_fn=snapshot_fn)
    save_checkpoint(args.out, params, net_cfg)
    history_path = args.history or f"{args.out}.history.csv"
    trainer_mod.write_history_csv(history_path, log.history)
    last = log.history[-1] if log.history else None
    tail = f", final total loss {last.total:.6f}" if last else ""
    print(f"trained {train_cfg.iterations} iterations in "
          f"{log.wall_time:.2f}s{tail}; checkpoint: {args.out}")
    return 0


def _one_hot(labels, c):
    reps = np.zeros((labels.shape[0], c))
    reps[np.arange(labels.shape[0]), labels] = 1.0
    return reps


def _cmd_eval(args) -> int:
    params, net_cfg = load_checkpoint(args.checkpoint)
    img = data_mod.load_matrix(args.test_img)
    txt = data_mod.load_matrix(args.test_txt)
    labels, c = data_mod.load_labels(args.labels)
    if img.shape[0] != txt.shape[0] or img.shape[0] != labels.shape[0]:
        raise ValueError("test images, texts, and labels must be row-aligned")
    if c != net_cfg.c_tgt:
        raise ValueError(f"labels declare {c} classes, checkpoint expects "
                         f"{net_cfg.c_tgt}")

    if args.oracle_reps:
        img_reps = _one_hot(labels, c)
        txt_reps = img_reps.copy()
    else:
        img_reps = common_representation(img, "image", params, net_cfg)
        txt_reps = common_representation(txt, "text", params, net_cfg)

    report = retrieval_mod.evaluate(img_reps, txt_reps, labels, labels)
    retrieval_mod.write_report_csv(args.out, report)
    if args.per_query:
        retrieval_mod.write_per_query_csv(args.per_query, report)
    print(retrieval_mod.format_report_table(report))
    return 0


def _cmd_gradcheck(args) -> int:
    config = gradcheck_mod.TOY_CONFIG
    if args.dims:
        parts = args.dims.split(",")
        if len(parts) != 6:
            raise ValueError("--dims wants 6 integers: "
                             "d_img_src,d_img_tgt,d_txt,h,c_src,c_tgt")
        try:
            d_is, d_it, d_t, h, c_s, c_t = (int(p) for p in parts)
        except ValueError:
            raise ValueError(f"--dims must be integers, got {args.dims!r}") \
                from None
        config = NetworkConfig(d_img_src=d_is, d_img_tgt=d_it, d_txt=d_t,
                               c_src=c_s, c_tgt=c_t, h=h)
    report = gradcheck_mod.run_suite(base_seed=args.seed,
                                     instances=args.instances,
                                     config=config, tol=args.tol,
                                     corrupt=args.corrupt)
    print(report.format_table())
    if report.passed:
        print("gradcheck: PASS")
        return 0
    w = report.worst
    print(f"gradcheck: FAIL — {w.term}/{w.block} relative error "
          f"{w.max_rel_err:.3e} exceeds {report.tol:g}", file=sys.stderr)
    return 4


def _cmd_report(args) -> int:
    names = args.names.split(",") if args.names else None
    if names and len(names) != len(args.csvs):
        raise ValueError("--names must list one name per CSV")
    rows = []
    for i, path in enumerate(args.csvs):
        values = {}
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip()
            if header != retrieval_mod.REPORT_HEADER:
                raise FeatureFormatError(
                    f"{path}:1: expected header "
                    f"{retrieval_mod.REPORT_HEADER!r}, got {header!r}")
            for lineno, line in enumerate(f, start=2):
                line = line.strip()
                if not line:
                    continue
                task, _, value = line.partition(",")
                try:
                    values[task] = float(value)
                except ValueError:
                    raise FeatureFormatError(
                        f"{path}:{lineno}: bad MAP value {value!r}") from None
        missing = [t for t in ("img2txt", "txt2img", "average")
                   if t not in values]
        if missing:
            raise FeatureFormatError(f"{path}: missing tasks {missing}")
        name = names[i] if names else os.path.splitext(os.path.basename(path))[0]
        rows.append((name, values))

    width = max(len("Run"), *(len(name) for name, _ in rows))
    lines = [f"{'Run':<{width}} {'Image->Text':>12} {'Text->Image':>12} "
             f"{'Average':>12}", "-" * (width + 40)]
    for name, values in rows:
        lines.append(f"{name:<{width}} {values['img2txt']:>12.4f} "
                     f"{values['txt2img']:>12.4f} {values['average']:>12.4f}")
    table = "\n".join(lines)
    print(table)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write("run,img2txt,txt2img,average\n")
            for name, values in rows:
                f.write(f"{name},{repr(values['img2txt'])},"
                        f"{repr(values['txt2img'])},"
                        f"{repr(values['average'])}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modalbridge",
        description="Hybrid-transfer representation learning for "
                    "cross-modal retrieval on feature-vector inputs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--config", help="key=value synthesis config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", choices=("csv", "binary"), default="csv")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train and write a checkpoint")
    p.add_argument("--src", required=True, help="labeled source features")
    p.add_argument("--tgt-img", required=True, help="labeled target image features")
    p.add_argument("--tgt-txt", required=True, help="labeled target text features")
    p.add_argument("--config", help="key=value training config file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="loss history CSV path "
                                     "(default: <out>.history.csv)")
    p.add_argument("--ablation",
                   help="full, only-cross, no-share, or no-src-sp "
                        "(overrides the config file)")
    p.add_argument("--hidden", type=int, default=64, help="hidden width")
    p.add_argument("--snapshot-every", type=int, default=0,
                   help="write <out>.iterN checkpoints every N iterations")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-img", required=True, help="test image features")
    p.add_argument("--test-txt", required=True, help="test text features")
    p.add_argument("--labels", required=True, help="test pair labels")
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--per-query", help="optional per-query AP dump CSV")
    p.add_argument("--oracle-reps", action="store_true",
                   help="debug: score one-hot label indicators instead of "
                        "network outputs (MAP must be 1)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims",
                   help="d_img_src,d_img_tgt,d_txt,h,c_src,c_tgt "
                        "(toy sizes only; <= 5000 parameters)")
    p.add_argument("--instances", type=int, default=5,
                   help="random instances to sweep")
    p.add_argument("--tol", type=float, default=gradcheck_mod.DEFAULT_TOLERANCE)
    p.add_argument("--corrupt", action="store_true",
                   help="debug: corrupt one gradient block (must fail)")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("report", help="aggregate eval CSVs into one table")
    p.add_argument("csvs", nargs="+", help="eval report CSVs")
    p.add_argument("--names", help="comma-separated run names")
    p.add_argument("--out", help="optional aggregate CSV path")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (FeatureFormatError, DegenerateInputError, UndefinedQueryError,
            InvalidStateError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

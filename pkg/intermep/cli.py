"""
CLI
---
The ``intermep`` command line tool.

    intermep gen-data    synthetic train/val/test JSONL files and a vocabulary
    intermep train       train a detector, write a checkpoint and run manifest
    intermep eval        evaluate a checkpoint, with or without the MEP
    intermep gradcheck   finite-difference check of the micro model
    intermep mep-replay  run the MEP over a stored embedding stream
    intermep ablate      train and evaluate one ablation variant

Exit codes: 0 success, 1 invalid configuration or input, 2 runtime failure
(including a failed gradient check).

"""

__all__ = [
    'build_parser',
    'main',
    ]

import argparse
import io as _stdio
import logging
import os
import sys

from intermep import __version__
from intermep import io
from intermep import metrics as mt
from intermep.config import RunConfig, resolve_config
from intermep.data import Vocab, gen_synthetic, load_jsonl, save_jsonl
from intermep.fit import ABLATION_VARIANTS, ablate, train
from intermep.gradcheck import run_gradcheck
from intermep.mep import load_stream, mep_run, write_predictions
from intermep.model import InteractionMode, load_detector, save_detector
from intermep.sampling import split
from intermep.utils import ConfigError, configure_logging, parse_int_list, vprint

log = logging.getLogger(__name__)

DEFAULTS = RunConfig()

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2

SPLIT_FILES = {"train": "train.jsonl", "val": "val.jsonl", "test": "test.jsonl"}
VOCAB_FILE = "vocab.txt"
CHECKPOINT_FILE = "model.json"


def _default(name):
    value = getattr(DEFAULTS, name)
    if isinstance(value, tuple):
        value = ",".join(str(v) for v in value)
    return f"(default: {value})"


def _common_parser():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", metavar="PATH",
                        help="JSON/YAML run config (default: $INTERCLIP_MEP_CONFIG)")
    parser.add_argument("--preset", choices=("toy", "paper"), help="model preset (default: none)")
    parser.add_argument("--seed", type=int, help=f"random seed {_default('seed')}")
    parser.add_argument("--out", metavar="DIR", help=f"output directory {_default('out')}")
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level (default: off)")
    parser.add_argument("--quiet", action="store_true", help="do not print result tables (default: off)")
    return parser


def _model_parser():
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group("model")
    group.add_argument("--mode", dest="interaction_mode", choices=[m.value for m in InteractionMode],
                       help=f"interaction mode {_default('interaction_mode')}")
    group.add_argument("--top-n", type=int, help=f"conditioned top layers {_default('top_n')}")
    group.add_argument("--lora-rank", type=int, help=f"LoRA rank, 0 disables {_default('lora_rank')}")
    group.add_argument("--lora-targets", help=f"attention matrices with LoRA {_default('lora_targets')}")
    group.add_argument("--lora-alpha", type=float, help="LoRA scale numerator (default: the rank)")
    group.add_argument("--d-f", type=int, help=f"projection width {_default('d_f')}")
    return parser


def _train_parser():
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group("training")
    group.add_argument("--epochs", type=int, help=f"training epochs {_default('epochs')}")
    group.add_argument("--batch-size", type=int, help=f"batch size {_default('batch_size')}")
    group.add_argument("--lr", type=float, help=f"learning rate {_default('lr')}")
    group.add_argument("--lora-lr", type=float, help=f"LoRA learning rate {_default('lora_lr')}")
    group.add_argument("--weight-decay", type=float, help=f"AdamW weight decay {_default('weight_decay')}")
    group.add_argument("--data", metavar="DIR", default=".",
                       help="directory with train/val/test JSONL and vocab.txt (default: .)")
    return parser


def _memory_parser():
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group("memory-enhanced predictor")
    group.add_argument("--memory-size", type=int, help=f"MEP memory size L {_default('memory_size')}")
    group.add_argument("--normalize-memory", action="store_true", default=None,
                       help="average similarities per channel instead of summing (default: off)")
    return parser


def build_parser():
    """The argument parser of the ``intermep`` tool."""
    parser = argparse.ArgumentParser(prog="intermep", description="Multimodal sarcasm detection "
                                     "with interactive dual encoders and a memory-enhanced predictor.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True
    common, model, training, memory = _common_parser(), _model_parser(), _train_parser(), _memory_parser()

    gen = commands.add_parser("gen-data", parents=[common], help="generate the synthetic dataset")
    gen.add_argument("--n", type=int, help=f"number of samples {_default('n')}")
    gen.add_argument("--text-noise", type=float, help=f"distractor word probability {_default('text_noise')}")
    gen.add_argument("--image-noise", type=float, help=f"pixel flip probability {_default('image_noise')}")
    gen.add_argument("--shortcut", type=float, help=f"sarcasm marker word probability {_default('shortcut')}")
    gen.add_argument("--fractions", help=f"train,val,test fractions {_default('fractions')}")
    gen.add_argument("--image-side", type=int, help=f"image side in pixels {_default('image_side')}")
    gen.add_argument("--patch-size", type=int, help=f"patch side in pixels {_default('patch_size')}")
    gen.set_defaults(handler=cmd_gen_data)

    tr = commands.add_parser("train", parents=[common, model, training], help="train a detector")
    tr.set_defaults(handler=cmd_train)

    ev = commands.add_parser("eval", parents=[common, model, memory], help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", metavar="PATH",
                    help=f"checkpoint manifest (default: <out>/{CHECKPOINT_FILE})")
    ev.add_argument("--data", metavar="FILE", required=True, help="labelled JSONL evaluation file")
    ev.add_argument("--val-data", metavar="FILE", help="validation JSONL for the memory sweep (default: none)")
    ev.add_argument("--mep", dest="mep", action="store_true", default=None,
                    help=f"use the memory-enhanced predictor {_default('mep')}")
    ev.add_argument("--no-mep", dest="mep", action="store_false", help="classifier only")
    ev.add_argument("--sweep", nargs="?", const="", metavar="L1,L2,...",
                    help=f"sweep memory sizes {_default('sweep')}")
    ev.set_defaults(handler=cmd_eval)

    gc = commands.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    gc.set_defaults(handler=cmd_gradcheck)

    rp = commands.add_parser("mep-replay", parents=[common, memory], help="replay an embedding stream")
    rp.add_argument("--stream", metavar="FILE", required=True, help="embedding-stream JSONL file")
    rp.set_defaults(handler=cmd_mep_replay)

    ab = commands.add_parser("ablate", parents=[common, model, training, memory],
                             help="train and evaluate an ablation variant")
    ab.add_argument("--variant", choices=ABLATION_VARIANTS, default="baseline",
                    help="ablation variant (default: baseline)")
    ab.set_defaults(handler=cmd_ablate)
    return parser


CONFIG_FLAGS = {f for f in RunConfig.__dataclass_fields__} - {"sweep"}


def _resolve(args):
    overrides = {key: value for key, value in vars(args).items() if key in CONFIG_FLAGS}
    return resolve_config(args.config, overrides)


def _table(rows):
    buffer = _stdio.StringIO()
    for row in rows:
        io.write_row(buffer, row)
    return buffer.getvalue()


def _print(args, text):
    vprint(text, end="", verbose=not args.quiet)


def _out_dir(config):
    os.makedirs(config.out, exist_ok=True)
    return config.out


def _load_split(data_dir, name, vocab, image_side, required=True):
    path = os.path.join(data_dir, SPLIT_FILES[name])
    if not os.path.exists(path):
        if required:
            raise FileNotFoundError(f"missing dataset file {path}")
        return None
    return load_jsonl(path, vocab=vocab, image_side=image_side)


def _load_splits(data_dir, config):
    vocab_path = os.path.join(data_dir, VOCAB_FILE)
    vocab = Vocab.load(vocab_path) if os.path.exists(vocab_path) else None
    train_set = _load_split(data_dir, "train", vocab, config.image_side)
    vocab = train_set.vocab
    val_set = _load_split(data_dir, "val", vocab, config.image_side, required=False)
    test_set = _load_split(data_dir, "test", vocab, config.image_side, required=False)
    return train_set, val_set, test_set


def cmd_gen_data(args):
    config = _resolve(args)
    dataset = gen_synthetic(config.synth_spec())
    parts = split(dataset, config.fractions, config.seed)
    vocab = Vocab.build(sample.text for sample in parts[0])
    out = _out_dir(config)
    for name, part in zip(SPLIT_FILES, parts):
        save_jsonl(part, os.path.join(out, SPLIT_FILES[name]))
    vocab.save(os.path.join(out, VOCAB_FILE))

    rows = [("split", "samples", "sarcastic", "non-sarc.")]
    for name, part in zip(SPLIT_FILES, parts):
        negatives, positives, _ = part.label_counts()
        rows.append((name, len(part), positives, negatives))
    negatives, positives, _ = dataset.label_counts()
    rows.append(("total", len(dataset), positives, negatives))
    _print(args, _table(rows))
    log.info("wrote %d samples and a %d-token vocabulary to %s", len(dataset), len(vocab), out)
    return EXIT_OK


def cmd_train(args):
    config = _resolve(args)
    train_set, val_set, _ = _load_splits(args.data, config)
    run = train(config.model_config(), config.train_config(), train_set, val_set)
    out = _out_dir(config)
    save_detector(os.path.join(out, CHECKPOINT_FILE), run.detector)

    manifest = {
        "command": "train",
        "config": config.to_dict(),
        "seed": config.seed,
        "data": {"train": train_set.provenance,
                 "val": val_set.provenance if val_set is not None else None},
        "checkpoint": CHECKPOINT_FILE,
        "training": run.summary(),
    }
    if val_set is not None and len(val_set):
        report = mt.evaluate(run.detector, val_set, batch_size=config.batch_size)
        manifest["val_metrics"] = report.to_dict()
        _print(args, mt.format_table([report]))
    io.dump_json(os.path.join(out, "run.json"), manifest)
    return EXIT_OK


def cmd_eval(args):
    config = _resolve(args)
    checkpoint = args.checkpoint or os.path.join(config.out, CHECKPOINT_FILE)
    detector, _ = load_detector(checkpoint)
    if args.d_f is not None and args.d_f != detector.config.d_f:
        raise ValueError(f"d_f mismatch: checkpoint has d_f={detector.config.d_f}, requested {args.d_f}")
    image_side = detector.config.image_side
    dataset = load_jsonl(args.data, vocab=detector.vocab, image_side=image_side)
    out = _out_dir(config)
    result = {"command": "eval", "checkpoint": os.path.basename(checkpoint),
              "data": dataset.provenance}

    if args.sweep is not None:
        candidates = parse_int_list(args.sweep) if args.sweep else config.sweep
        if not candidates or min(candidates) < 1:
            raise ConfigError("sweep candidates must be memory sizes >= 1")
        sweeps = []
        if args.val_data:
            val_set = load_jsonl(args.val_data, vocab=detector.vocab, image_side=image_side)
            sweeps.append(mt.sweep_memory(detector, val_set, candidates, config.normalize_memory,
                                          config.batch_size, split="val"))
        sweeps.append(mt.sweep_memory(detector, dataset, candidates, config.normalize_memory,
                                      config.batch_size, split="test"))
        for sweep in sweeps:
            note = " (selected on test labels)" if sweep.leaks_labels else ""
            _print(args, f"memory sweep on {sweep.split}; best L = {sweep.best_memory_size}{note}\n")
            _print(args, mt.format_table(sweep.rows, sweep.best_memory_size))
        result["sweeps"] = [s.to_dict() for s in sweeps]
    else:
        report = mt.evaluate(detector, dataset, use_mep=config.mep,
                             memory_size=config.memory_size if config.mep else None,
                             normalize=config.normalize_memory, batch_size=config.batch_size)
        _print(args, mt.format_table([report]))
        result["metrics"] = report.to_dict()
    io.dump_json(os.path.join(out, "metrics.json"), result)
    return EXIT_OK


def cmd_gradcheck(args):
    config = _resolve(args)
    results = run_gradcheck(seed=config.seed)
    rows = [("mode", "max_error", "entries", "passed")]
    rows += [(r.mode, f"{r.max_error:.3e}", r.n_parameters, "yes" if r.passed else "NO")
             for r in results]
    _print(args, _table(rows))
    if not all(result.passed for result in results):
        log.error("gradient check failed")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_mep_replay(args):
    config = _resolve(args)
    records = load_stream(args.stream)
    d_f = records[0].feature.shape[0] if records else 1
    predictions = mep_run(((r.probs, r.feature) for r in records), config.memory_size, d_f,
                          normalize=config.normalize_memory)
    out = _out_dir(config)
    write_predictions(os.path.join(out, "predictions.jsonl"), [r.id for r in records], predictions)

    rows = [("id", "prediction", "p0", "p1")]
    rows += [(r.id, p.final_label, *p.final_probs) for r, p in zip(records, predictions)]
    _print(args, _table(rows))

    if records and all(r.label is not None for r in records):
        report = mt.metrics([p.final_label for p in predictions], [r.label for r in records],
                            mode=f"mep(L={config.memory_size})", memory_size=config.memory_size)
        _print(args, mt.format_table([report]))
        io.dump_json(os.path.join(out, "metrics.json"),
                     {"command": "mep-replay", "stream": args.stream, "metrics": report.to_dict()})
    return EXIT_OK


def cmd_ablate(args):
    config = _resolve(args)
    train_set, val_set, test_set = _load_splits(args.data, config)
    if test_set is None:
        raise FileNotFoundError(f"missing dataset file {os.path.join(args.data, SPLIT_FILES['test'])}")
    result = ablate(args.variant, config.model_config(), config.train_config(), train_set,
                    test_set, val_set, memory_size=config.memory_size,
                    normalize=config.normalize_memory)
    out = _out_dir(config)
    _print(args, mt.format_table([result.report]))
    io.dump_json(os.path.join(out, f"ablation_{args.variant}.json"),
                 {"command": "ablate", "variant": args.variant, "config": config.to_dict(),
                  "training": result.run.summary(), "metrics": result.report.to_dict()})
    return EXIT_OK


def main(argv=None):
    """
    Runs the ``intermep`` tool.

    Returns
    -------
    exit_code : int

    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    configure_logging(args.verbose)
    try:
        return args.handler(args)
    except ConfigError as err:
        for problem in err.problems:
            log.error("config: %s", problem)
        return EXIT_INVALID
    except ValueError as err:
        log.error("%s", err)
        return EXIT_INVALID
    except Exception as err:
        log.error("%s: %s", type(err).__name__, err)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

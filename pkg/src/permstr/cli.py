"""``permstr`` command line: synth, train, eval, predict, dump-masks, bench.

Every subcommand reads an optional flat ``key=value`` config file
(``--config``); flags override file values, which override defaults.  The
effective config is echoed to stderr in the same format at startup.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model as M
from .permute import INTERIOR, LTR, RTL, check_permutation, cloze_mask, format_mask, ltr_mask, mask_from_permutation, nar_mask
from .pipeline import bench as B
from .pipeline.data import load_dataset, read_manifest
from .pipeline.decode import AR, DEFAULT_REFINE, NAR, decode
from .pipeline.imageio import DataError, read_pnm, to_model_input
from .pipeline.synth import GenerationError, render_synthetic
from .pipeline.train import TrainConfig, TrainingError, evaluate, train_loop
from .textcodec import TokenCodec, charset_slice

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
CHARSETS = (36, 62, 94)


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Key:
    type: type
    default: object
    help: str
    choices: tuple | None = None


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


_T = TrainConfig()
TRAIN_KEYS = {
    "K": Key(int, _T.K, "permutations per batch (1 or even)"),
    "batch_size": Key(int, _T.batch_size, "samples per step"),
    "total_steps": Key(int, _T.total_steps, "optimizer steps"),
    "max_lr": Key(float, _T.max_lr, "peak learning rate of the 1cycle schedule"),
    "swa_start_frac": Key(float, _T.swa_start_frac, "fraction of steps after which weights are averaged"),
    "swa_every": Key(int, _T.swa_every, "steps between averaged snapshots"),
    "warmup_frac": Key(float, _T.warmup_frac, "fraction of steps spent warming up"),
    "div_factor": Key(float, _T.div_factor, "initial lr = max_lr / div_factor"),
    "final_div_factor": Key(float, _T.final_div_factor, "final lr = initial lr / final_div_factor"),
    "seed": Key(int, _T.seed, "master seed"),
    "preset": Key(str, _T.preset, "model size", tuple(M.PRESETS)),
    "charset": Key(int, _T.charset_size, "training charset size", CHARSETS),
    "dropout_p": Key(float, _T.dropout_p, "decoder dropout probability"),
    "val_every": Key(int, _T.val_every, "steps between validation log lines"),
    "val_samples": Key(int, _T.val_samples, "training samples reused for validation when no split is given"),
}
DECODE_KEYS = {
    "scheme": Key(str, AR, "decoding scheme", (AR, NAR)),
    "refine": Key(int, None, f"cloze refinement passes (default {DEFAULT_REFINE[AR]} for ar, {DEFAULT_REFINE[NAR]} for nar)"),
    "charset": Key(int, None, "restrict output to this charset slice (default: the model's)", CHARSETS),
}
SYNTH_KEYS = {
    "count": Key(int, 512, "number of samples"),
    "seed": Key(int, 0, "generator seed"),
    "charset": Key(int, 36, "charset the labels are drawn from", CHARSETS),
    "min_len": Key(int, 1, "shortest label"),
    "max_len": Key(int, 8, "longest label"),
    "width": Key(int, 64, "canvas width"),
    "height": Key(int, 16, "canvas height"),
}
BENCH_KEYS = {
    "lengths": Key(_int_list, B.DEFAULT_LENGTHS, "forced output lengths, comma separated"),
    "reps": Key(int, 10, "timed decodes per length and scheme"),
    "preset": Key(str, "tiny64", "model size for stub weights", tuple(M.PRESETS)),
    "seed": Key(int, 0, "seed for stub weights and the input image"),
}
COMMAND_KEYS = {
    "synth": SYNTH_KEYS,
    "train": TRAIN_KEYS,
    "eval": DECODE_KEYS,
    "predict": DECODE_KEYS,
    "dump-masks": {},
    "bench": BENCH_KEYS,
}


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return "" if value is None else str(value)


def read_config(path, keys: dict) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment; empty value means default."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = (s.strip() for s in line.partition("="))
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        if key not in keys:
            valid = ", ".join(keys) or "(none)"
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}; valid keys: {valid}")
        if raw == "":
            continue
        key_def = keys[key]
        try:
            value = key_def.type(raw)
        except (ValueError, argparse.ArgumentTypeError):
            raise UsageError(f"{path}:{lineno}: bad value {raw!r} for {key}") from None
        if key_def.choices and value not in key_def.choices:
            raise UsageError(f"{path}:{lineno}: {key} must be one of {', '.join(map(str, key_def.choices))}")
        out[key] = value
    return out


def effective_config(args, keys: dict) -> dict:
    cfg = {k: key_def.default for k, key_def in keys.items()}
    if getattr(args, "config", None):
        cfg.update(read_config(args.config, keys))
    for k in keys:
        v = getattr(args, k)
        if v is not None:
            cfg[k] = v
    return cfg


def format_config(cfg: dict) -> str:
    return "\n".join(f"{k}={_fmt(v)}" for k, v in cfg.items())


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="permstr", description="Permuted autoregressive scene text recognition.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def command(name, help, keys):
        p = sub.add_parser(name, help=help, description=help)
        if keys:
            p.add_argument("--config", metavar="FILE", help="key=value config file; flags override it")
        for k, key_def in keys.items():
            default = f"default: {_fmt(key_def.default)}" if key_def.default is not None else ""
            p.add_argument(
                _flag(k), dest=k, type=key_def.type, choices=key_def.choices, default=None, metavar=k.upper(),
                help=f"{key_def.help} ({default})" if default else key_def.help,
            )
        return p

    p = command("synth", "render a synthetic corpus of PGM images plus manifest.tsv", SYNTH_KEYS)
    p.add_argument("--out", required=True, help="output directory")

    p = command("train", "train a model and write a checkpoint", TRAIN_KEYS)
    p.add_argument("--manifest", required=True, help="training manifest (file or corpus directory)")
    p.add_argument("--val-manifest", help="optional validation manifest")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="also append training log lines to this file")

    p = command("eval", "evaluate a checkpoint on a manifest", DECODE_KEYS)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--records", help="write one JSON line per sample to this file")

    p = command("predict", "decode a single PGM/PPM image", DECODE_KEYS)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)

    p = command("dump-masks", "print an attention mask", {})
    p.add_argument("--t", type=int, required=True, help="label length T")
    p.add_argument("--perm", type=_int_list, help="permutation of 1..T, comma separated (mask kind 'perm')")
    p.add_argument("--kind", choices=("perm", "ltr", "cloze", "nar"), default=None,
                   help="mask kind (default: perm when --perm is given, else ltr)")
    p.add_argument("--role", choices=(LTR, RTL, INTERIOR), default=INTERIOR,
                   help="permutation role deciding the [E] row (default: %(default)s)")

    p = command("bench", "time AR and NAR decoding against forced output length", BENCH_KEYS)
    p.add_argument("--checkpoint", help="time these weights instead of forced-length stubs")
    return parser


def _charset_for(model_cfg: M.ModelConfig, requested):
    size = requested or model_cfg.charset_size
    if size > model_cfg.charset_size:
        raise M.ConfigError(f"model was trained on {model_cfg.charset_size} characters; cannot evaluate on {size}")
    return size


def cmd_synth(args, cfg, out):
    charset = charset_slice(cfg["charset"])
    manifest = render_synthetic(
        cfg["count"], np.random.default_rng(cfg["seed"]), args.out,
        width=cfg["width"], height=cfg["height"], charset=charset,
        max_len=cfg["max_len"], min_len=cfg["min_len"],
    )
    print(f"wrote {len(manifest)} samples to {manifest.base_dir}", file=out)


def cmd_train(args, cfg, out):
    kw = {k: v for k, v in cfg.items() if k != "charset"}
    tcfg = TrainConfig(charset_size=cfg["charset"], **kw)
    log_file = open(args.log, "a", encoding="utf-8") if args.log else None

    def log(line):
        print(line, file=out, flush=True)
        if log_file:
            print(line, file=log_file, flush=True)

    try:
        val = read_manifest(args.val_manifest) if args.val_manifest else None
        res = train_loop(tcfg, read_manifest(args.manifest), val, log=log)
    finally:
        if log_file:
            log_file.close()
    meta = {"swa_snapshots": res.swa_count, **{f"train.{k}": v for k, v in tcfg.as_dict().items()}}
    M.save_checkpoint(args.out, res.params, res.model_cfg, meta)
    print(f"checkpoint written to {args.out}", file=out)


def cmd_eval(args, cfg, out):
    params, mcfg, _ = M.load_checkpoint(args.checkpoint)
    size = _charset_for(mcfg, cfg["charset"])
    data = load_dataset(read_manifest(args.manifest), mcfg, TokenCodec(charset_slice(size), mcfg.max_len))
    if len(data) == 0:
        raise DataError(f"{args.manifest}: no usable samples")
    report = evaluate(params, mcfg, data, cfg["scheme"], cfg["refine"], size)
    if data.skipped:
        print(f"skipped {data.skipped} samples with labels outside the charset or too long", file=out)
    print(report.summary(), file=out)
    if args.records:
        Path(args.records).write_text("".join(r + "\n" for r in report.records()), encoding="utf-8")


def cmd_predict(args, cfg, out):
    params, mcfg, _ = M.load_checkpoint(args.checkpoint)
    size = _charset_for(mcfg, cfg["charset"])
    x = to_model_input(read_pnm(args.image), mcfg.image_w, mcfg.image_h, mcfg.channels)
    z = M.encode_image(x[None].astype(np.float32), params, mcfg)
    r = decode(z, params, mcfg, cfg["scheme"], cfg["refine"], size)[0]
    per_char = " ".join(f"{c:.4f}" for c in r.confidences)
    print(f"{r.text}\t{r.confidence:.4f}", file=out)
    print(f"per-position confidence: {per_char}", file=out)


def cmd_dump_masks(args, cfg, out):
    t = args.t
    if t < 1:
        raise UsageError("--t must be positive")
    kind = args.kind or ("perm" if args.perm else "ltr")
    if kind == "perm":
        if not args.perm:
            raise UsageError("--kind perm needs --perm")
        try:
            check_permutation(args.perm)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if len(args.perm) != t:
            raise UsageError(f"--perm has {len(args.perm)} entries but --t is {t}")
        mask = mask_from_permutation(args.perm, args.role)
        title = f"permutation {','.join(map(str, args.perm))} ({args.role})"
    else:
        mask = {"ltr": ltr_mask, "cloze": cloze_mask, "nar": nar_mask}[kind](t)
        title = kind
    print(f"# {title}, T={t}; rows are output positions, columns are context tokens", file=out)
    print(format_mask(mask), file=out)


def cmd_bench(args, cfg, out):
    lengths = cfg["lengths"]
    if not lengths or min(lengths) < 0:
        raise UsageError("--lengths must be non-negative integers")
    if args.checkpoint:
        params, mcfg, _ = M.load_checkpoint(args.checkpoint)
        source = params
    else:
        mcfg = M.preset(cfg["preset"], max_len=max(lengths))
        if mcfg.d_model < mcfg.max_len + 1:
            raise UsageError(f"preset {cfg['preset']} cannot force lengths beyond {mcfg.d_model - 1}")
        cache = {}
        source = lambda n: cache.setdefault(n, B.forced_length_params(mcfg, n, cfg["seed"]))  # noqa: E731
    rows = B.latency_bench(source, mcfg, lengths, cfg["reps"], seed=cfg["seed"])
    print(B.format_bench(rows), file=out)
    for k, v in B.shape_summary(rows).items():
        print(f"# {k} {v:.4f}", file=out)
    print("# length\tscheme\tmean_ms\tmedian_ms\treps", file=out)
    print("\n".join(B.bench_records(rows)), file=out)


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "dump-masks": cmd_dump_masks,
    "bench": cmd_bench,
}


def run_command(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        keys = COMMAND_KEYS[args.command]
        cfg = effective_config(args, keys)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        if keys:
            print("# effective config", file=err)
            print(format_config(cfg), file=err)
        COMMANDS[args.command](args, cfg, out)
    except UsageError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_USAGE
    except (DataError, GenerationError, M.CheckpointError, M.ConfigError, TrainingError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_DATA
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    return EXIT_OK


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()

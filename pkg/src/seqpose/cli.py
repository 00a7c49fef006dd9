"""Command-line interface: data generation, training, evaluation, checks.

Commands: ``gen-data``, ``train``, ``eval``, ``gradcheck``, ``sweep-heads``,
``export-curve``.  Options come from a flat ``key = value`` config file
(``--config``, or the SEQPOSE_CONFIG environment variable) overridden by
command-line flags; every run writes its fully resolved configuration next
to its outputs.

Exit codes: 0 success, 1 contract/config error, 2 training divergence,
3 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from .data import (FormatError, GenSpec, SplitManifest, generate_dataset,
                   read_dataset, write_dataset)
from .gradcheck import CHECKS, run_suite
from .pipeline import (DivergenceError, ModelConfig, ModelParams,
                       apply_state, evaluate, load_checkpoint, save_checkpoint,
                       train_step1, train_step2)
from .tensor import ContractError

ENV_CONFIG = "SEQPOSE_CONFIG"
GRADCHECK_THRESHOLD = 1e-4

_MODEL_FIELDS = {f.name: f for f in dataclasses.fields(ModelConfig)}
_GEN_FIELDS = {f.name: f for f in dataclasses.fields(GenSpec)}
_PATH_KEYS = ("dataset", "checkpoint", "checkpoint_out", "out_dir", "stage",
              "split")


class ConfigError(ContractError):
    pass


# ------------------------------------------------------------- config file

def _parse_value(raw: str, kind):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got '{raw}'")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is tuple:
        if not raw:
            return ()
        return tuple(int(v) for v in raw.replace(",", " ").split())
    return raw


def _field_kind(field) -> type:
    if isinstance(field.default, bool):
        return bool
    if isinstance(field.default, int):
        return int
    if isinstance(field.default, float):
        return float
    if isinstance(field.default, tuple):
        return tuple
    return str


def load_config_file(path) -> dict:
    """Parse a flat ``key = value`` file into typed settings.

    Model keys use their ModelConfig names; generator keys carry a ``gen_``
    prefix; path/command keys are free-form strings.  Unknown keys raise
    ConfigError naming the offender.
    """
    out = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got '{stripped}'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        out[key] = raw.strip()
    typed = {}
    for key, raw in out.items():
        if key in _MODEL_FIELDS:
            typed[key] = _parse_value(raw, _field_kind(_MODEL_FIELDS[key]))
        elif key.startswith("gen_") and key[4:] in _GEN_FIELDS:
            typed[key] = _parse_value(raw, _field_kind(_GEN_FIELDS[key[4:]]))
        elif key in _PATH_KEYS:
            typed[key] = raw
        else:
            raise ConfigError(f"unknown config key '{key}' in {path}")
    return typed


def write_resolved(path, settings: dict):
    lines = [f"{k} = {_format_value(v)}" for k, v in sorted(settings.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return " ".join(str(x) for x in v)
    return str(v)


def _gather(args, parser_keys) -> dict:
    """Merge config file (if any) with explicit command-line overrides."""
    settings = {}
    cfg_path = args.config or os.environ.get(ENV_CONFIG)
    if cfg_path:
        settings.update(load_config_file(cfg_path))
    for key in parser_keys:
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            settings[key] = val
    return settings


def _model_config(settings: dict) -> ModelConfig:
    kwargs = {k: v for k, v in settings.items() if k in _MODEL_FIELDS}
    return ModelConfig(**kwargs)


def _gen_spec(settings: dict) -> GenSpec:
    kwargs = {k[4:]: v for k, v in settings.items()
              if k.startswith("gen_") and k[4:] in _GEN_FIELDS}
    return GenSpec(**kwargs)


def _model_settings(cfg: ModelConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in dataclasses.fields(ModelConfig)}


def _gen_settings(spec: GenSpec) -> dict:
    return {"gen_" + f.name: getattr(spec, f.name)
            for f in dataclasses.fields(GenSpec)}


# ------------------------------------------------------------ subcommands

def _resolve_out_dir(settings) -> Path:
    out = Path(settings.get("out_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_samples(settings, split: str):
    path = settings.get("dataset")
    if not path:
        raise ConfigError("no dataset path configured (set 'dataset' or --dataset)")
    header, samples = read_dataset(path)
    manifest_path = Path(path).with_suffix(".split.json")
    if split == "all" or not manifest_path.exists():
        return header, samples
    manifest = SplitManifest.load(manifest_path)
    idx = manifest.train if split == "train" else manifest.test
    return header, [samples[i] for i in idx]


def cmd_gen_data(args) -> int:
    settings = _gather(args, [])
    for key in _GEN_FIELDS:
        val = getattr(args, key, None)
        if val is not None:
            settings["gen_" + key] = val
    spec = _gen_spec(settings)
    samples, manifest = generate_dataset(spec)
    out = Path(args.out or settings.get("dataset") or "dataset.sthd")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, samples, spec)
    manifest.save(out.with_suffix(".split.json"))
    resolved = _gen_settings(spec)
    resolved["dataset"] = str(out)
    write_resolved(out.with_suffix(".resolved.cfg"), resolved)
    print(f"wrote {len(samples)} sequences ({spec.mode}, N={spec.n_frames}) to {out}")
    print(f"split by {manifest.split_by}: {len(manifest.train)} train / "
          f"{len(manifest.test)} test (test ids {manifest.test_ids})")
    return 0


def cmd_train(args) -> int:
    settings = _gather(args, ("dataset", "checkpoint", "checkpoint_out",
                              "out_dir", "stage", "split", "seed"))
    cfg = _model_config(settings)
    stage = str(settings.get("stage", "both"))
    if stage not in ("1", "2", "both"):
        raise ConfigError(f"stage must be 1, 2 or both, got '{stage}'")
    split = settings.get("split", "train")
    header, samples = _load_samples(settings, split)
    if header.n_frames != cfg.n_frames:
        raise ConfigError(f"dataset holds {header.n_frames}-frame sequences but "
                          f"n_frames = {cfg.n_frames}")
    out_dir = _resolve_out_dir(settings)

    model = ModelParams.build(cfg)
    if settings.get("checkpoint"):
        apply_state(model, load_checkpoint(settings["checkpoint"]))
    if stage in ("1", "both"):
        hist = train_step1(model, samples, log_path=out_dir / "loss_stage1.csv")
        print(f"stage 1: {len(hist)} steps, final loss {hist[-1][1]:.6f}")
    if stage in ("2", "both"):
        hist = train_step2(model, samples, log_path=out_dir / "loss_stage2.csv")
        print(f"stage 2: {len(hist)} steps, final loss {hist[-1][1]:.6f}")
    ck = Path(settings.get("checkpoint_out") or out_dir / "model.sthp")
    save_checkpoint(ck, model)
    res = evaluate(model, samples)
    print(f"train-set epe3d {res['epe3d']:.6f}  auc {res['auc']:.6f}")
    resolved = _model_settings(cfg)
    resolved.update({"dataset": settings["dataset"], "stage": stage,
                     "split": split, "checkpoint_out": str(ck)})
    if settings.get("checkpoint"):
        resolved["checkpoint"] = settings["checkpoint"]
    write_resolved(out_dir / "train.resolved.cfg", resolved)
    print(f"checkpoint -> {ck}")
    return 0


def _thresholds(args):
    if args.pck_lo is None and args.pck_hi is None and args.pck_points is None:
        return None  # evaluate() applies the normalized-unit default
    lo = args.pck_lo if args.pck_lo is not None else 0.01
    hi = args.pck_hi if args.pck_hi is not None else 0.5
    points = args.pck_points or 100
    if hi <= lo:
        raise ConfigError(f"pck range must have hi > lo, got [{lo}, {hi}]")
    return np.linspace(lo, hi, points)


def cmd_eval(args) -> int:
    settings = _gather(args, ("dataset", "checkpoint", "out_dir", "split"))
    cfg = _model_config(settings)
    split = settings.get("split", "test")
    header, samples = _load_samples(settings, split)
    out_dir = _resolve_out_dir(settings)
    model = ModelParams.build(cfg)
    if settings.get("checkpoint"):
        apply_state(model, load_checkpoint(settings["checkpoint"]))
    elif not args.use_gt:
        raise ConfigError("no checkpoint configured (set 'checkpoint' or --checkpoint)")
    res = evaluate(model, samples, ablation=args.ablation, use_gt=args.use_gt,
                   thresholds=_thresholds(args))
    variant = "ground-truth" if args.use_gt else ("ablation" if args.ablation else "full")
    print(f"{variant} on {split} split ({len(samples)} sequences):")
    print(f"epe3d {res['epe3d']:.6f}")
    print(f"epe2d {res['epe2d']:.6f}")
    print(f"auc   {res['auc']:.6f}")
    res["curve"].to_csv(out_dir / "pck.csv")
    (out_dir / "metrics.csv").write_text(
        "metric,value\n"
        f"epe3d,{res['epe3d']:.6f}\nepe2d,{res['epe2d']:.6f}\nauc,{res['auc']:.6f}\n")
    resolved = _model_settings(cfg)
    resolved.update({"dataset": settings["dataset"], "split": split})
    if settings.get("checkpoint"):
        resolved["checkpoint"] = settings["checkpoint"]
    write_resolved(out_dir / "eval.resolved.cfg", resolved)
    return 0


def cmd_gradcheck(args) -> int:
    groups = args.groups.split(",") if args.groups else None
    report = run_suite(seed=args.seed or 0, groups=groups)
    worst = 0.0
    for name, err in report.items():
        status = "ok" if err < GRADCHECK_THRESHOLD else "FAIL"
        print(f"{name:16s} {err:12.4e}  {status}")
        worst = max(worst, err)
    print(f"worst {worst:.4e} (threshold {GRADCHECK_THRESHOLD:g})")
    return 0 if worst < GRADCHECK_THRESHOLD else 1


def cmd_sweep_heads(args) -> int:
    settings = _gather(args, ("dataset", "out_dir", "split"))
    base = _model_config(settings)
    header, samples = _load_samples(settings, settings.get("split", "train"))
    out_dir = _resolve_out_dir(settings)
    heads_list = [int(h) for h in (args.heads or "1,2,4,8,16").split(",")]
    rows = []
    for h in heads_list:
        if base.embed_dim % h:
            print(f"skipping H={h}: embed_dim {base.embed_dim} not divisible")
            continue
        cfg = dataclasses.replace(base, heads=h)
        model = ModelParams.build(cfg)
        train_step1(model, samples)
        train_step2(model, samples)
        res = evaluate(model, samples)
        rows.append((h, res["epe3d"], res["auc"]))
        print(f"H={h}: epe3d {res['epe3d']:.6f}  auc {res['auc']:.6f}")
    table = "heads,epe3d,auc\n" + "".join(
        f"{h},{e:.6f},{a:.6f}\n" for h, e, a in rows)
    (out_dir / "heads.csv").write_text(table)
    resolved = _model_settings(base)
    resolved.update({"dataset": settings["dataset"],
                     "split": settings.get("split", "train")})
    write_resolved(out_dir / "sweep.resolved.cfg", resolved)
    return 0


def cmd_export_curve(args) -> int:
    settings = _gather(args, ("dataset", "checkpoint", "out_dir", "split"))
    cfg = _model_config(settings)
    header, samples = _load_samples(settings, settings.get("split", "test"))
    out_dir = _resolve_out_dir(settings)
    model = ModelParams.build(cfg)
    if settings.get("checkpoint"):
        apply_state(model, load_checkpoint(settings["checkpoint"]))
    elif not args.use_gt:
        raise ConfigError("no checkpoint configured (set 'checkpoint' or --checkpoint)")
    res = evaluate(model, samples, ablation=args.ablation, use_gt=args.use_gt,
                   thresholds=_thresholds(args))
    out = Path(args.out or out_dir / "pck.csv")
    res["curve"].to_csv(out)
    print(f"pck curve ({len(res['curve'].thresholds)} points) -> {out}")
    return 0


# ------------------------------------------------------------------ parser

def _add_common(p):
    p.add_argument("--config", help="flat key=value config file "
                   f"(default: ${ENV_CONFIG})")
    p.add_argument("--out-dir", dest="out_dir", help="directory for outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqpose",
        description="Sequential 3D hand pose estimation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", help="output dataset path (.sthd)")
    for name, field in _GEN_FIELDS.items():
        kind = _field_kind(field)
        flag = "--" + name.replace("_", "-")
        if kind is bool:
            p.add_argument(flag, dest=name, action="store_const", const=True)
        elif kind is tuple:
            p.add_argument(flag, dest=name,
                           type=lambda s: tuple(int(v) for v in s.split(",") if v))
        else:
            p.add_argument(flag, dest=name, type=kind)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run stage 1/2 training")
    _add_common(p)
    p.add_argument("--dataset")
    p.add_argument("--stage", choices=("1", "2", "both"))
    p.add_argument("--split", choices=("train", "test", "all"))
    p.add_argument("--checkpoint", help="starting checkpoint (required for --stage 2)")
    p.add_argument("--checkpoint-out", dest="checkpoint_out")
    p.add_argument("--seed", dest="seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=("train", "test", "all"))
    p.add_argument("--ablation", action="store_true",
                   help="evaluate the single-frame variant")
    p.add_argument("--use-gt", action="store_true",
                   help="debug: score ground truth against itself")
    p.add_argument("--pck-lo", type=float)
    p.add_argument("--pck-hi", type=float)
    p.add_argument("--pck-points", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int)
    p.add_argument("--groups", help=f"comma list from: {', '.join(CHECKS)}")
    p.set_defaults(func=cmd_gradcheck, config=None)

    p = sub.add_parser("sweep-heads", help="train/evaluate across head counts")
    _add_common(p)
    p.add_argument("--dataset")
    p.add_argument("--split", choices=("train", "test", "all"))
    p.add_argument("--heads", help="comma list, default 1,2,4,8,16")
    p.set_defaults(func=cmd_sweep_heads)

    p = sub.add_parser("export-curve", help="write a PCK curve CSV")
    _add_common(p)
    p.add_argument("--dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=("train", "test", "all"))
    p.add_argument("--ablation", action="store_true")
    p.add_argument("--use-gt", action="store_true")
    p.add_argument("--out")
    p.add_argument("--pck-lo", type=float)
    p.add_argument("--pck-hi", type=float)
    p.add_argument("--pck-points", type=int)
    p.set_defaults(func=cmd_export_curve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as e:
        print(f"divergence: {e}", file=sys.stderr)
        return 2
    except (ContractError, FormatError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

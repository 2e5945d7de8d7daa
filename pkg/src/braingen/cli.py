"""Command-line entry point.

Commands: validate, train, generate, eval-within, eval-cross,
compare-fusion, topo, synth-data. Configuration is a YAML document with
nested sections; `--set key.path=value` overrides take precedence. Every
run writes a resolved-config snapshot beside its outputs.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error.
"""
from __future__ import annotations

import argparse
import copy
import importlib.resources
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch
import yaml

from . import checkpoint as ckpt
from . import evaluator, sampler, store, synth, topoviz
from .conditioning import FusionMode
from .embeddings import load_embedding_file, synthetic_index
from .errors import BrainGenError, ConfigError, DataError
from .schedule import build_linear_schedule
from .trainer import TrainConfig, train
from .unet import DenoiserConfig, build_denoiser, param_count

DEFAULT_CONFIG = {
    "archive": None,
    "embeddings": None,        # path to embeddings.f32, or "synthetic"
    "montage": None,           # path, or None to build a disk layout
    "out_dir": "runs/default",
    "seed": 0,
    "subjects": "all",
    "fusion": "cross_attention",
    "model": {
        "level_channels": [128, 256, 512, 512],
        "attn_levels": [3, 4],
        "heads": 8,
        "cross_attn_dim": 768,
        "time_embed_dim": 128,
    },
    "schedule": {"T": 1000, "beta_start": 1e-4, "beta_end": 0.02},
    "train": {
        "learning_rate": 1e-4,
        "weight_decay": 1e-5,
        "epochs": 50,
        "batch_size": 16,
        "max_steps": None,
    },
    "eval": {"samples_per_image": 1},
    "topo": {"window_ms": 100.0, "grid_res": 64},
}


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override must be key.path=value, got {item!r}")
    keypath, raw = item.split("=", 1)
    value = yaml.safe_load(raw)
    node = cfg
    parts = keypath.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override path {keypath!r} crosses a scalar")
    node[parts[-1]] = value


def load_config(config_path=None, preset=None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if preset:
        ref = importlib.resources.files("braingen").joinpath(f"presets/{preset}.yaml")
        if not ref.is_file():
            raise ConfigError(f"unknown preset {preset!r}")
        cfg = _deep_merge(cfg, yaml.safe_load(ref.read_text()))
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        cfg = _deep_merge(cfg, yaml.safe_load(path.read_text()) or {})
    for item in overrides:
        _apply_override(cfg, item)
    return cfg


def _out_dir(cfg: dict) -> Path:
    root = os.environ.get("BRAINGEN_RUN_ROOT", "")
    path = Path(root) / cfg["out_dir"] if root else Path(cfg["out_dir"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def _snapshot(cfg: dict, out_dir: Path, command: str) -> None:
    with open(out_dir / f"{command}-config.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)


def _open_dataset(cfg: dict):
    if not cfg.get("archive"):
        raise ConfigError("config field 'archive' is required")
    archive = store.open_archive(cfg["archive"])
    dim = cfg["model"]["cross_attn_dim"]
    emb = cfg.get("embeddings")
    if emb == "synthetic":
        ids = sorted({r.image_id for r in archive.index})
        provider = synthetic_index(cfg["seed"], ids, dim)
    elif emb:
        provider = load_embedding_file(emb, expected_dim=dim)
    else:
        raise ConfigError("config field 'embeddings' is required (path or 'synthetic')")
    return archive, provider


def _subjects(cfg: dict, archive: store.Archive) -> list[str]:
    sel = cfg.get("subjects", "all")
    if sel == "all":
        return list(archive.manifest.subjects)
    missing = [s for s in sel if s not in archive.manifest.subjects]
    if missing:
        raise DataError(f"subjects not in archive: {missing}")
    return list(sel)


def _model_config(cfg: dict, archive: store.Archive) -> DenoiserConfig:
    m = cfg["model"]
    return DenoiserConfig(
        sample_shape=(archive.manifest.n_channels, archive.manifest.n_timepoints),
        level_channels=tuple(m["level_channels"]),
        attn_levels=tuple(m["attn_levels"]),
        cross_attn_dim=m["cross_attn_dim"],
        heads=m["heads"],
        time_embed_dim=m["time_embed_dim"],
        fusion=FusionMode(cfg["fusion"]),
    )


def _schedule(cfg: dict):
    s = cfg["schedule"]
    return build_linear_schedule(s["T"], s["beta_start"], s["beta_end"]), dict(s)


def _train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        learning_rate=t["learning_rate"], weight_decay=t["weight_decay"],
        epochs=t["epochs"], batch_size=t["batch_size"], seed=cfg["seed"],
        max_steps=t.get("max_steps"),
    )


def _check_compat(header: dict, model_cfg: DenoiserConfig, schedule_params: dict) -> None:
    stored = header["denoiser_config"]
    current = ckpt._config_dict(model_cfg)
    diffs = [f"{k}: checkpoint={stored[k]!r} config={current[k]!r}"
             for k in current if _norm(stored.get(k)) != _norm(current[k])]
    diffs += [f"schedule.{k}: checkpoint={header['schedule'].get(k)!r} "
              f"config={schedule_params[k]!r}"
              for k in schedule_params
              if _norm(header["schedule"].get(k)) != _norm(schedule_params[k])]
    if diffs:
        raise ConfigError("checkpoint incompatible with config: " + "; ".join(diffs))


def _norm(v):
    return list(v) if isinstance(v, (tuple, list)) else v


def _load_subject_models(cfg: dict, archive, subjects):
    out_dir = _out_dir(cfg)
    model_cfg = _model_config(cfg, archive)
    _, schedule_params = _schedule(cfg)
    models = {}
    for subject in subjects:
        path = out_dir / "train" / subject / "checkpoint_final.bgck"
        if not path.exists():
            raise DataError(f"no checkpoint for subject {subject} at {path}; run train first")
        model, header, stats = ckpt.load_checkpoint(path)
        _check_compat(header, model_cfg, schedule_params)
        models[subject] = (model, stats)
    return models


# ---------------------------------------------------------------- commands

def cmd_validate(cfg: dict) -> int:
    archive, provider = _open_dataset(cfg)
    subjects = _subjects(cfg, archive)
    model_cfg = _model_config(cfg, archive)
    _schedule(cfg)
    model = build_denoiser(model_cfg, cfg["seed"])
    for subject in subjects:
        if not archive.rows_for(subject, "train"):
            raise DataError(f"subject {subject} has no train split")
    print(f"ok: {len(archive)} trials, {len(subjects)} subjects, "
          f"{param_count(model)} parameters")
    return 0


def cmd_train(cfg: dict) -> int:
    archive, provider = _open_dataset(cfg)
    out_dir = _out_dir(cfg)
    _snapshot(cfg, out_dir, "train")
    sched, schedule_params = _schedule(cfg)
    model_cfg = _model_config(cfg, archive)
    train_cfg = _train_config(cfg)
    for subject in _subjects(cfg, archive):
        model = build_denoiser(model_cfg, cfg["seed"])
        path, trace = train(train_cfg, model, archive, provider, sched,
                            out_dir / "train" / subject, subject,
                            schedule_params=schedule_params)
        print(f"{subject}: {len(trace.records)} steps, "
              f"final loss {trace.losses[-1]:.4f}, checkpoint {path}")
    return 0


def cmd_generate(cfg: dict) -> int:
    archive, provider = _open_dataset(cfg)
    out_dir = _out_dir(cfg)
    _snapshot(cfg, out_dir, "generate")
    sched, _ = _schedule(cfg)
    subjects = _subjects(cfg, archive)
    n = cfg["eval"]["samples_per_image"]
    models = _load_subject_models(cfg, archive, subjects)
    man = archive.manifest
    for subject in subjects:
        model, stats = models[subject]
        image_ids = sorted({archive.index[r].image_id
                            for r in archive.rows_for(subject, "test")})
        records, splits = [], {subject: {"generated": []}}
        for image_id in image_ids:
            samples = sampler.generate(model, provider.get(image_id), sched,
                                       cfg["seed"], n, stats)
            for k, y in enumerate(samples):
                row = len(records)
                records.append(store.TrialRecord(
                    trial_id=f"{subject}_gen_{image_id}_r{k}", subject=subject,
                    image_id=image_id, repetition=k, split="generated", row=row,
                    samples=y.astype(np.float32)))
                splits[subject]["generated"].append(row)
        gen_manifest = store.ArchiveManifest(
            dataset_id=man.dataset_id + "-generated",
            n_channels=man.n_channels, n_timepoints=man.n_timepoints,
            sampling_rate_hz=man.sampling_rate_hz,
            channel_names=man.channel_names, subjects=[subject], splits=splits,
            stim_onset_sample=man.stim_onset_sample)
        path = store.write_archive(out_dir / "generated" / subject, gen_manifest,
                                   records)
        print(f"{subject}: wrote {len(records)} generated trials to {path}")
    return 0


def cmd_eval_within(cfg: dict) -> int:
    archive, provider = _open_dataset(cfg)
    out_dir = _out_dir(cfg)
    _snapshot(cfg, out_dir, "eval-within")
    sched, _ = _schedule(cfg)
    subjects = _subjects(cfg, archive)
    models = _load_subject_models(cfg, archive, subjects)
    report = evaluator.within_subject_eval(
        models, archive, provider, sched, seed=cfg["seed"],
        samples_per_image=cfg["eval"]["samples_per_image"])
    dest = out_dir / "reports" / f"{archive.manifest.dataset_id}_within.csv"
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(report.to_csv(), encoding="utf-8")
    print(report.to_csv(), end="")
    print(f"wrote {dest}")
    return 0


def cmd_eval_cross(cfg: dict) -> int:
    archive, provider = _open_dataset(cfg)
    out_dir = _out_dir(cfg)
    _snapshot(cfg, out_dir, "eval-cross")
    sched, _ = _schedule(cfg)
    subjects = _subjects(cfg, archive)
    models = _load_subject_models(cfg, archive, subjects)
    mse_mat, pcc_mat = evaluator.cross_subject_eval(
        models, archive, provider, sched, seed=cfg["seed"],
        samples_per_image=cfg["eval"]["samples_per_image"])
    dataset = archive.manifest.dataset_id
    for name, mat in (("mse", mse_mat), ("pcc", pcc_mat)):
        dest = out_dir / "reports" / f"{dataset}_{name}_cross.csv"
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_text(mat.to_csv(), encoding="utf-8")
        print(f"wrote {dest}")
    return 0


def cmd_compare_fusion(cfg: dict) -> int:
    archive, provider = _open_dataset(cfg)
    out_dir = _out_dir(cfg)
    _snapshot(cfg, out_dir, "compare-fusion")
    sched, _ = _schedule(cfg)
    subjects = _subjects(cfg, archive)
    results = evaluator.strategy_comparison(
        _model_config(cfg, archive), _train_config(cfg), archive, provider, sched,
        subjects, out_dir / "fusion",
        samples_per_image=cfg["eval"]["samples_per_image"])
    dataset = archive.manifest.dataset_id
    for metric in ("mse", "pcc"):
        dest = out_dir / "reports" / f"{dataset}_{metric}_fusion.csv"
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_text(evaluator.strategy_table_csv(results, metric),
                        encoding="utf-8")
        print(f"wrote {dest}")
    return 0


def cmd_topo(cfg: dict) -> int:
    archive, provider = _open_dataset(cfg)
    out_dir = _out_dir(cfg)
    _snapshot(cfg, out_dir, "topo")
    man = archive.manifest
    if cfg.get("montage"):
        montage = topoviz.load_montage(cfg["montage"])
    else:
        montage = topoviz.disk_montage(man.channel_names)
    window_ms = cfg["topo"]["window_ms"]
    for subject in _subjects(cfg, archive):
        _, train_avg = store.average_repetitions(archive, subject, "train")
        _, test_avg = store.average_repetitions(archive, subject, "test")
        gen_dir = out_dir / "generated" / subject
        if not gen_dir.exists():
            raise DataError(f"no generated archive at {gen_dir}; run generate first")
        gen_archive = store.open_archive(gen_dir)
        _, gen_avg = store.average_repetitions(gen_archive, subject, "generated")
        dest = topoviz.render_comparison(
            train_avg, test_avg, gen_avg, montage, man.channel_names,
            window_ms, man.sampling_rate_hz,
            out_dir / "topo" / f"{man.dataset_id}_{subject}.png",
            grid_res=cfg["topo"]["grid_res"])
        print(f"wrote {dest}")
    return 0


def cmd_synth_data(cfg: dict, args) -> int:
    out = Path(args.out)
    archive_path, emb_path, montage_path = synth.make_synthetic_dataset(
        out, n_subjects=args.subjects, n_images=args.images,
        test_reps=args.test_reps, n_channels=args.channels,
        n_timepoints=args.timepoints, seed=args.seed,
        embed_dim=args.embed_dim, n_train_trials=args.trials)
    print(f"wrote {archive_path}, {emb_path}, {montage_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="braingen")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = ["validate", "train", "generate", "eval-within", "eval-cross",
                "compare-fusion", "topo"]
    for name in commands:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--preset", default=None,
                       help="eeg-things2 or meg-things")
        p.add_argument("--set", action="append", default=[], dest="overrides",
                       metavar="KEY.PATH=VALUE")
    p = sub.add_parser("synth-data")
    p.add_argument("--out", required=True)
    p.add_argument("--trials", type=int, default=None,
                   help="total train trials per subject")
    p.add_argument("--images", type=int, default=8)
    p.add_argument("--subjects", type=int, default=1)
    p.add_argument("--test-reps", type=int, default=2)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--timepoints", type=int, default=32)
    p.add_argument("--embed-dim", type=int, default=768)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth-data":
            return cmd_synth_data({}, args)
        cfg = load_config(args.config, args.preset, args.overrides)
        handler = {
            "validate": cmd_validate,
            "train": cmd_train,
            "generate": cmd_generate,
            "eval-within": cmd_eval_within,
            "eval-cross": cmd_eval_cross,
            "compare-fusion": cmd_compare_fusion,
            "topo": cmd_topo,
        }[args.command]
        return handler(cfg)
    except BrainGenError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

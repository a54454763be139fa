"""Command-line entry point tying the pipeline together.

Subcommands: score2, gen-data, pretrain, probe, finetune, ablate, gradcheck,
eval, inspect. Every run writes into a run directory: the effective config is
echoed as JSON, metrics land in CSV files, and reruns with the same config
and seed reproduce outputs byte-for-byte (modulo file timestamps).

Exit codes: 0 success; 2 config error (parse failure or unknown keys);
3 missing input file; 4 non-finite loss abort; 1 anything else.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_NAN = 4


class CliError(click.ClickException):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {path}", EXIT_MISSING_INPUT)
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"config parse error: {exc}", EXIT_CONFIG)


def _dataclass_from(section: dict, cls, overrides: dict):
    from riskclr.losses import LossSpec

    known = {f.name for f in dataclasses.fields(cls)}
    merged = dict(section)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(merged) - known
    if unknown:
        raise CliError(f"unknown {cls.__name__} keys: {sorted(unknown)}", EXIT_CONFIG)
    if "loss" in merged and isinstance(merged["loss"], dict):
        merged["loss"] = LossSpec(**merged["loss"])
    if "stages" in merged:
        merged["stages"] = tuple(tuple(s) for s in merged["stages"])
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad {cls.__name__}: {exc}", EXIT_CONFIG)


def _echo_config(run_dir: Path, payload: dict) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True,
                                                    default=str) + "\n")


def _encoder_config(name: str):
    from riskclr.encoder import STANDARD_CONFIGS

    key = name.lower()
    if key not in STANDARD_CONFIGS:
        raise CliError(f"unknown encoder config {name!r}; choices: "
                       f"{sorted(STANDARD_CONFIGS)}", EXIT_CONFIG)
    return STANDARD_CONFIGS[key]


@click.group()
def main() -> None:
    """Risk-guided contrastive pretraining for single-lead ECG encoders."""


@main.command("score2")
@click.option("--input", "input_path", required=True, help="metadata CSV (age,gender,smoking,sbp,diabetes,tchol,hdl)")
@click.option("--output", "output_path", default="-", help="output CSV path or - for stdout")
@click.option("--seed", default=42, show_default=True)
@click.option("--deterministic/--stochastic", default=True, show_default=True,
              help="imputation mode for missing covariates")
def score2_cmd(input_path, output_path, seed, deterministic):
    """Score metadata rows; emits r and m per row."""
    from riskclr.risk_score import CSV_COLUMNS, record_from_csv_row, risk_from_record

    path = Path(input_path)
    if not path.exists():
        raise CliError(f"input not found: {input_path}", EXIT_MISSING_INPUT)
    rows_out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for i, row in enumerate(reader):
            try:
                record = record_from_csv_row(row)
            except ValueError as exc:
                raise CliError(f"row {i}: {exc}", EXIT_CONFIG)
            rs = risk_from_record(record, rng=np.random.default_rng([seed, i]),
                                  deterministic=deterministic)
            out = {c: row.get(c, "") for c in CSV_COLUMNS}
            out["r"] = repr(rs.r)
            out["m"] = rs.missing_count
            rows_out.append(out)
    target = sys.stdout if output_path == "-" else open(output_path, "w", newline="")
    writer = csv.DictWriter(target, fieldnames=list(CSV_COLUMNS) + ["r", "m"])
    writer.writeheader()
    writer.writerows(rows_out)
    if target is not sys.stdout:
        target.close()


@main.command("gen-data")
@click.option("--config", "config_path", default=None, help="JSON config file (section 'synthetic')")
@click.option("--out-dir", required=True)
@click.option("--n-subjects", type=int, default=None)
@click.option("--n-downstream", type=int, default=None)
@click.option("--seed", type=int, default=None)
def gen_data_cmd(config_path, out_dir, n_subjects, n_downstream, seed):
    """Generate the synthetic pretraining + downstream datasets."""
    from riskclr.data import SyntheticConfig, generate_synthetic, save

    section = _load_config_file(config_path).get("synthetic", {})
    cfg = _dataclass_from(section, SyntheticConfig,
                          {"n_subjects": n_subjects, "n_downstream": n_downstream, "seed": seed})
    run_dir = Path(out_dir)
    _echo_config(run_dir, {"synthetic": dataclasses.asdict(cfg)})
    pre, down = generate_synthetic(cfg)
    save(pre, run_dir / "pretrain.rds")
    save(down, run_dir / "downstream.rds")
    from riskclr.data import export_metadata_csv

    export_metadata_csv(pre, run_dir / "metadata.csv")
    click.echo(f"wrote {len(pre)} pretraining records and {len(down)} downstream samples to {run_dir}")


def _load_dataset(path: str, kind):
    from riskclr import data as data_mod

    p = Path(path)
    if not p.exists() and not p.is_absolute():
        candidate = Path(data_mod.data_root()) / p
        if candidate.exists():
            p = candidate
    if not p.exists():
        raise CliError(f"dataset not found: {path}", EXIT_MISSING_INPUT)
    try:
        ds = data_mod.load(p)
    except data_mod.DataFormatError as exc:
        raise CliError(str(exc), EXIT_MISSING_INPUT)
    if not isinstance(ds, kind):
        raise CliError(f"{path} holds the wrong dataset kind", EXIT_CONFIG)
    return ds


@main.command("pretrain")
@click.option("--config", "config_path", default=None, help="JSON config (section 'pretrain')")
@click.option("--data", "data_path", required=True, help="pretraining dataset container")
@click.option("--run-dir", required=True)
@click.option("--encoder", "encoder_name", default="tiny", show_default=True)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--resume", "resume_path", default=None, help="checkpoint to resume from")
def pretrain_cmd(config_path, data_path, run_dir, encoder_name, epochs, batch_size, lr, seed, resume_path):
    """Contrastive pretraining; writes best/last checkpoints and metrics.csv."""
    from riskclr.data import Dataset
    from riskclr.encoder import build
    from riskclr.train import NanLossError, PreparedPretrain, PretrainConfig, pretrain

    section = _load_config_file(config_path).get("pretrain", {})
    cfg = _dataclass_from(section, PretrainConfig,
                          {"epochs": epochs, "batch_size": batch_size, "lr": lr, "seed": seed})
    enc_cfg = _encoder_config(encoder_name)
    ds = _load_dataset(data_path, Dataset)
    run = Path(run_dir)
    _echo_config(run, {"pretrain": dataclasses.asdict(cfg), "encoder": dataclasses.asdict(enc_cfg),
                       "dataset_hash": ds.content_hash()})
    prep = PreparedPretrain.from_dataset(ds, seed=cfg.seed,
                                         deterministic_impute=cfg.deterministic_impute)
    encoder = build(enc_cfg, seed=cfg.seed, dtype=np.dtype(cfg.dtype))
    try:
        result = pretrain(prep, encoder, cfg, run_dir=run, resume_from=resume_path)
    except NanLossError as exc:
        raise CliError(str(exc), EXIT_NAN)
    click.echo(f"best epoch {result.best_epoch} val_loss {result.best_val:.6f} "
               f"checkpoint {result.checkpoint_path}")


def _downstream_setup(config_path, data_path, overrides):
    from riskclr.data import DownstreamDataset, split
    from riskclr.train import DownstreamConfig

    raw = _load_config_file(config_path)
    cfg = _dataclass_from(raw.get("downstream", {}), DownstreamConfig, overrides)
    ds = _load_dataset(data_path, DownstreamDataset)
    fractions = tuple(raw.get("downstream_split", (0.6, 0.2, 0.2)))
    tr, va, te = split(ds, fractions, mode="by-subject", seed=cfg.seed)
    return cfg, tr, va, te


@main.command("probe")
@click.option("--config", "config_path", default=None)
@click.option("--checkpoint", "ckpt_path", required=True)
@click.option("--data", "data_path", required=True, help="downstream dataset container")
@click.option("--run-dir", required=True)
@click.option("--task", default=None, help="binary | regression")
@click.option("--seed", type=int, default=None)
def probe_cmd(config_path, ckpt_path, data_path, run_dir, task, seed):
    """Linear probing on frozen embeddings."""
    _probe_or_finetune(config_path, ckpt_path, data_path, run_dir, task, seed, finetune_mode=False)


@main.command("finetune")
@click.option("--config", "config_path", default=None)
@click.option("--checkpoint", "ckpt_path", required=True)
@click.option("--data", "data_path", required=True)
@click.option("--run-dir", required=True)
@click.option("--task", default=None)
@click.option("--seed", type=int, default=None)
def finetune_cmd(config_path, ckpt_path, data_path, run_dir, task, seed):
    """Joint encoder + head training on the downstream task."""
    _probe_or_finetune(config_path, ckpt_path, data_path, run_dir, task, seed, finetune_mode=True)


def _probe_or_finetune(config_path, ckpt_path, data_path, run_dir, task, seed, finetune_mode):
    from riskclr.encoder import CheckpointError, load_checkpoint
    from riskclr.train import evaluate_head, finetune, linear_probe

    if not Path(ckpt_path).exists():
        raise CliError(f"checkpoint not found: {ckpt_path}", EXIT_MISSING_INPUT)
    try:
        encoder, _, _ = load_checkpoint(ckpt_path)
    except CheckpointError as exc:
        raise CliError(str(exc), EXIT_MISSING_INPUT)
    cfg, tr, va, te = _downstream_setup(config_path, data_path,
                                        {"task": task, "seed": seed})
    run = Path(run_dir)
    _echo_config(run, {"downstream": dataclasses.asdict(cfg), "checkpoint": str(ckpt_path),
                       "mode": "finetune" if finetune_mode else "probe"})
    fn = finetune if finetune_mode else linear_probe
    head, val_metrics = fn(encoder, tr, va, cfg)
    test_metrics = evaluate_head(encoder, head, te)
    rows = [{"split": "val", **{k: v for k, v in val_metrics.items()}},
            {"split": "test", **test_metrics}]
    with open(run / "metrics.csv", "w", newline="") as fh:
        keys = sorted({k for r in rows for k in r})
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
    click.echo(json.dumps({"val": val_metrics, "test": test_metrics}, default=float))


@main.command("ablate")
@click.option("--config", "config_path", default=None)
@click.option("--pretrain-data", "pre_path", required=True)
@click.option("--downstream-data", "down_path", required=True)
@click.option("--run-dir", required=True)
@click.option("--encoder", "encoder_name", default="tiny", show_default=True)
@click.option("--epochs", type=int, default=None)
@click.option("--lambda-mixes", "lam_mixes", is_flag=True,
              help="also run the normalized w+d mixtures (5,2,1,0.5,0.2)")
def ablate_cmd(config_path, pre_path, down_path, run_dir, encoder_name, epochs, lam_mixes):
    """Pretrain+probe each loss variant under identical seeds; emit a table."""
    from riskclr.data import Dataset, DownstreamDataset, split
    from riskclr.train import (ABLATION_VARIANTS, DownstreamConfig, PreparedPretrain,
                               PretrainConfig, ablate, lambda_mix_variants,
                               write_ablation_csv)

    raw = _load_config_file(config_path)
    cfg = _dataclass_from(raw.get("pretrain", {}), PretrainConfig, {"epochs": epochs})
    probe_cfg = _dataclass_from(raw.get("downstream", {}), DownstreamConfig, {})
    enc_cfg = _encoder_config(encoder_name)
    pre = _load_dataset(pre_path, Dataset)
    down = _load_dataset(down_path, DownstreamDataset)
    tr, va, te = split(down, (0.6, 0.2, 0.2), mode="by-subject", seed=probe_cfg.seed)
    run = Path(run_dir)
    variants = ABLATION_VARIANTS + (lambda_mix_variants() if lam_mixes else ())
    _echo_config(run, {"pretrain": dataclasses.asdict(cfg),
                       "downstream": dataclasses.asdict(probe_cfg),
                       "encoder": dataclasses.asdict(enc_cfg),
                       "variants": [v.label() for v in variants]})
    prep = PreparedPretrain.from_dataset(pre, seed=cfg.seed,
                                         deterministic_impute=cfg.deterministic_impute)
    rows = ablate(prep, enc_cfg, tr, va, te, cfg, probe_cfg, variants=variants,
                  encoder_seed=cfg.seed)
    write_ablation_csv(run / "ablation.csv", rows)
    for row in rows:
        click.echo(json.dumps(row, default=float))


@main.command("gradcheck")
@click.option("--tolerance", default=1e-4, show_default=True)
@click.option("--dump-weights", "dump_w", default=None,
              help="also dump a random batch's weight matrix to this CSV")
@click.option("--seed", default=0, show_default=True)
@click.option("--with-encoder/--losses-only", default=False, show_default=True,
              help="include the end-to-end encoder+loss check (slower)")
def gradcheck_cmd(tolerance, dump_w, seed, with_encoder):
    """Finite-difference gradient checks; exits nonzero above tolerance."""
    from riskclr.validation import encoder_gradcheck, loss_gradchecks, random_weight_batch

    worst = loss_gradchecks(seed=seed)
    for name, err in worst.items():
        click.echo(f"{name}: max rel err {err:.3e}")
    if with_encoder:
        err = encoder_gradcheck(seed=seed)
        worst["encoder+total"] = err
        click.echo(f"encoder+total: max rel err {err:.3e}")
    if dump_w:
        W = random_weight_batch(seed=seed)
        np.savetxt(dump_w, W, delimiter=",")
        click.echo(f"wrote weight matrix {W.shape} to {dump_w}")
    if max(worst.values()) > tolerance:
        raise CliError(f"gradient check failed tolerance {tolerance}", 1)


@main.command("eval")
@click.option("--pred", "pred_path", required=True,
              help="CSV with columns score,label (binary) or pred,truth (regression)")
@click.option("--task", default="binary", show_default=True)
def eval_cmd(pred_path, task):
    """Compute metrics from a predictions CSV."""
    from riskclr.metrics import auroc_binary, mae

    p = Path(pred_path)
    if not p.exists():
        raise CliError(f"predictions not found: {pred_path}", EXIT_MISSING_INPUT)
    with open(p, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if task == "binary":
        scores = np.array([float(r["score"]) for r in rows])
        labels = np.array([int(r["label"]) for r in rows])
        click.echo(json.dumps({"task": task, "metric": "auroc",
                               "value": auroc_binary(scores, labels), "n": len(rows)}))
    elif task == "regression":
        pred = np.array([float(r["pred"]) for r in rows])
        truth = np.array([float(r["truth"]) for r in rows])
        click.echo(json.dumps({"task": task, "metric": "mae",
                               "value": mae(pred, truth), "n": len(rows)}))
    else:
        raise CliError(f"unknown task {task!r}", EXIT_CONFIG)


@main.command("inspect")
@click.option("--encoder", "encoder_name", default=None, help="standard config name")
@click.option("--checkpoint", "ckpt_path", default=None)
def inspect_cmd(encoder_name, ckpt_path):
    """Dump parameter counts per module for a config or checkpoint."""
    from riskclr.encoder import load_checkpoint, param_count, parameter_breakdown

    if (encoder_name is None) == (ckpt_path is None):
        raise CliError("pass exactly one of --encoder / --checkpoint", EXIT_CONFIG)
    if ckpt_path is not None:
        if not Path(ckpt_path).exists():
            raise CliError(f"checkpoint not found: {ckpt_path}", EXIT_MISSING_INPUT)
        encoder, _, meta = load_checkpoint(ckpt_path)
        cfg = encoder.config
        click.echo(f"checkpoint meta: {json.dumps(meta, default=str)}")
    else:
        cfg = _encoder_config(encoder_name)
    for module, count in parameter_breakdown(cfg).items():
        click.echo(f"{module}: {count}")
    click.echo(f"total: {param_count(cfg)}")


if __name__ == "__main__":
    main()

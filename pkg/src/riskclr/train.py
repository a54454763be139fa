"""Pretraining loop, downstream heads, optimizers, and the ablation harness.

Reproducibility scheme: every random stream is derived statelessly from
(seed, purpose, indices) via SeedSequence, so augmentation draws do not
depend on scheduling order and a resumed run continues the exact stream of
an uninterrupted one. Checkpoints carry encoder parameters, optimizer
moments, and the epoch cursor.
"""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import Dataset, DownstreamDataset
from .encoder import Encoder, build, load_checkpoint, save_checkpoint
from .losses import DEFAULT_ALPHA, DEFAULT_TAU, EmbeddingBatch, LossSpec
from .metrics import TargetScaler, auroc_binary, mae
from .risk_score import risk_from_record
from .signal import NoiseBank, SignalView, augment, preprocess, random_mask
from .weighting import BatchRiskInfo, batch_weights, pairs_involution


class NanLossError(RuntimeError):
    """Loss became non-finite; message carries the diagnostic dump."""


# ---------------------------------------------------------------------------
# optimizers and schedules


class Adam:
    """Adam with either decoupled (AdamW) or L2-coupled weight decay."""

    def __init__(self, params: dict[str, Tensor], lr: float, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 decoupled: bool = True):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.decoupled = decoupled
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if self.weight_decay and not self.decoupled:
                g = g + self.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if self.weight_decay and self.decoupled:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= (lr / b1c) * m / (np.sqrt(v / b2c) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": v for k, v in self.m.items()}
        out.update({f"v/{k}": v for k, v in self.v.items()})
        out["step_count"] = np.array([float(self.step_count)])
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays["step_count"][0])
        for k in self.m:
            self.m[k] = np.asarray(arrays[f"m/{k}"], dtype=self.m[k].dtype).reshape(self.m[k].shape).copy()
            self.v[k] = np.asarray(arrays[f"v/{k}"], dtype=self.v[k].dtype).reshape(self.v[k].shape).copy()


@dataclass
class Schedule:
    """Cosine learning-rate schedules over epochs."""

    mode: str  # "cosine-anneal" | "cosine-warm-restarts"
    base_lr: float
    period: int

    def lr(self, epoch: int) -> float:
        if self.mode == "cosine-anneal":
            frac = min(epoch, self.period) / max(self.period, 1)
            return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
        if self.mode == "cosine-warm-restarts":
            frac = (epoch % self.period) / max(self.period, 1)
            return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
        raise ValueError(f"unknown schedule mode {self.mode!r}")


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class PretrainConfig:
    batch_size: int = 64
    epochs: int = 100  # desk-scale runs set 20
    lr: float = 1e-4
    weight_decay: float = 5e-5
    tau: float = DEFAULT_TAU
    alpha: float = DEFAULT_ALPHA
    patience: int = 20
    seed: int = 42
    lead_mode: str = "all-12"  # or "fixed-lead"
    fixed_lead: int = 1
    val_fraction: float = 0.1
    loss: LossSpec = field(default_factory=LossSpec)
    noise_intensity: float = 0.02
    mask_prob: float = 0.2
    mask_fraction: float = 0.10
    mask_mode: str = "contiguous"
    deterministic_impute: bool = False
    dtype: str = "float32"  # storage mode for training tensors

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2")
        if min(self.lr, self.weight_decay, self.tau) <= 0 and self.weight_decay != 0:
            raise ValueError("rates must be positive")


@dataclass(frozen=True)
class DownstreamConfig:
    task: str = "binary"  # or "regression"
    batch_size: int = 64
    epochs: int = 100
    lr: float = 1e-3
    weight_decay: float = 1e-5
    patience: int = 5
    restart_period: int = 10
    seed: int = 42


# ---------------------------------------------------------------------------
# derived RNG streams


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0x7FFFFFFF for k in key]))


_PURPOSE = {"impute": 1, "order": 2, "lead": 3, "aug": 4, "mask": 5, "val": 6, "head": 7}


def _stream(seed: int, purpose: str, *idx) -> np.random.Generator:
    return _rng(seed, _PURPOSE[purpose], *idx)


# ---------------------------------------------------------------------------
# prepared pretraining data (preprocess once, reuse across runs)


@dataclass
class PreparedPretrain:
    """Preprocessed leads plus per-subject risk info for the trainer."""

    signals: np.ndarray  # (N, 12, T) float32, resample->bandpass->zscore applied
    risks: np.ndarray  # (N,)
    missing: np.ndarray  # (N,)
    subject_ids: list[str]
    fs: float

    @classmethod
    def from_dataset(cls, ds: Dataset, seed: int = 42,
                     deterministic_impute: bool = False) -> "PreparedPretrain":
        if len(ds) == 0:
            raise ValueError("empty pretraining dataset")
        raw = np.stack([rec.leads for rec in ds.records]).astype(np.float64)
        n, n_leads, _ = raw.shape
        flat, _ = preprocess(raw.reshape(n * n_leads, -1), fs_in=ds.fs)
        signals = flat.reshape(n, n_leads, -1).astype(np.float32)
        risks = np.empty(n)
        missing = np.empty(n, dtype=np.int64)
        for i, rec in enumerate(ds.records):
            rs = risk_from_record(rec.metadata, rng=_stream(seed, "impute", i),
                                  deterministic=deterministic_impute)
            risks[i] = rs.r
            missing[i] = rs.missing_count
        return cls(signals=signals, risks=risks, missing=missing,
                   subject_ids=[r.subject_id for r in ds.records], fs=500.0)

    def __len__(self) -> int:
        return self.signals.shape[0]

    def subset(self, n: int) -> "PreparedPretrain":
        """First-n-subjects slice (reuses the preprocessing work)."""
        return PreparedPretrain(signals=self.signals[:n], risks=self.risks[:n],
                                missing=self.missing[:n],
                                subject_ids=self.subject_ids[:n], fs=self.fs)


@dataclass
class PretrainResult:
    encoder: Encoder
    history: list[dict]
    best_epoch: int
    best_val: float
    checkpoint_path: str | None


def _make_views(prep: PreparedPretrain, subjects: np.ndarray, cfg: PretrainConfig,
                bank: NoiseBank, epoch: int, validation: bool = False) -> np.ndarray:
    """Two augmented views per subject, interleaved (2i, 2i+1 are positives).

    Streams are keyed by (seed, purpose, phase, epoch, subject, view) so the
    result is independent of batch composition and scheduling; validation
    views are epoch-independent to keep the early-stopping signal stable.
    """
    t = prep.signals.shape[2]
    out = np.empty((2 * len(subjects), t), dtype=np.float32)
    phase = 1 if validation else 0
    ep = 0 if validation else epoch
    for j, s in enumerate(subjects):
        s = int(s)
        if cfg.lead_mode == "fixed-lead":
            lead = cfg.fixed_lead
        else:
            lead = int(_stream(cfg.seed, "lead", phase, ep, s).integers(12)) + 1
        for v in (0, 1):
            view = SignalView(samples=prep.signals[s, lead - 1].astype(np.float64),
                              fs=prep.fs, lead_id=lead,
                              source_id=prep.subject_ids[s])
            rng = _stream(cfg.seed, "aug", phase, ep, s, v)
            view = augment(view, bank, rng, phi=cfg.noise_intensity)
            view = random_mask(view, _stream(cfg.seed, "mask", phase, ep, s, v),
                               p=cfg.mask_prob, frac=cfg.mask_fraction,
                               mode=cfg.mask_mode)
            out[2 * j + v] = view.samples.astype(np.float32)
    return out


def _batch_loss(encoder: Encoder, views: np.ndarray, info: BatchRiskInfo,
                cfg: PretrainConfig):
    wm = batch_weights(info, cfg.alpha)
    z = encoder.forward(views)
    batch = EmbeddingBatch(z, info.positive_of, tau=cfg.tau)
    return cfg.loss.evaluate(batch, wm)


def _iter_batches(order: np.ndarray, batch_size: int):
    for lo in range(0, len(order) - 1, batch_size):
        chunk = order[lo : lo + batch_size]
        if len(chunk) >= 2:
            yield chunk


def pretrain(
    prep: PreparedPretrain,
    encoder: Encoder,
    cfg: PretrainConfig,
    bank: NoiseBank | None = None,
    run_dir: str | os.PathLike | None = None,
    resume_from: str | os.PathLike | None = None,
    session_epochs: int | None = None,
) -> PretrainResult:
    """Contrastive pretraining with early stopping on held-out total loss.

    Per batch: lead selection, two augmented views per sample, encode,
    build the pairwise weights from risks and missingness, evaluate the
    configured loss, backpropagate, AdamW step; cosine-annealed learning
    rate per epoch. The best-validation parameter set is retained.

    ``session_epochs`` caps how many epochs this call runs (simulating an
    interruption); the schedule and stopping logic always follow
    ``cfg.epochs``, so resuming from the written checkpoint continues the
    exact trajectory of an uninterrupted run.
    """
    if bank is None:
        bank = NoiseBank.synthetic(fs=prep.fs, seed=cfg.seed)
    n = len(prep)
    idx = np.arange(n)
    n_val = int(round(cfg.val_fraction * n))
    val_idx = idx[n - n_val :] if n_val else idx[:0]
    train_idx = idx[: n - n_val]
    if len(train_idx) < 2:
        raise ValueError("not enough subjects to form a training batch")

    optimizer = Adam(encoder.params, lr=cfg.lr, weight_decay=cfg.weight_decay, decoupled=True)
    schedule = Schedule(mode="cosine-anneal", base_lr=cfg.lr, period=cfg.epochs)
    start_epoch = 0
    best_val = math.inf
    best_epoch = -1
    best_params = encoder.state_arrays()
    bad_epochs = 0
    history: list[dict] = []

    if resume_from is not None:
        enc2, extra, meta = load_checkpoint(resume_from)
        if enc2.config != encoder.config:
            raise ValueError("resume checkpoint was built for a different encoder config")
        encoder.load_state_arrays(enc2.state_arrays())
        optimizer.load_state_arrays({k[len("opt/") :]: v for k, v in extra.items()
                                     if k.startswith("opt/")})
        start_epoch = int(meta["next_epoch"])
        best_val = float(meta["best_val"])
        best_epoch = int(meta["best_epoch"])
        bad_epochs = int(meta["bad_epochs"])
        best_params = {k[len("best/") :]: v for k, v in extra.items() if k.startswith("best/")}
        if not best_params:
            best_params = encoder.state_arrays()

    run_path = Path(run_dir) if run_dir is not None else None
    if run_path is not None:
        run_path.mkdir(parents=True, exist_ok=True)

    def _validation_loss(epoch_tag: int) -> float:
        if len(val_idx) < 2:
            return math.nan
        total, count = 0.0, 0
        for chunk in _iter_batches(val_idx, cfg.batch_size):
            views = _make_views(prep, chunk, cfg, bank, epoch_tag, validation=True)
            info = BatchRiskInfo(r=np.repeat(prep.risks[chunk], 2),
                                 m=np.repeat(prep.missing[chunk], 2),
                                 positive_of=pairs_involution(len(chunk)))
            loss = _batch_loss(encoder, views, info, cfg)
            total += loss.item() * len(chunk)
            count += len(chunk)
        return total / count

    end_epoch = cfg.epochs if session_epochs is None else min(cfg.epochs,
                                                              start_epoch + session_epochs)
    for epoch in range(start_epoch, end_epoch):
        lr = schedule.lr(epoch)
        order = train_idx[_stream(cfg.seed, "order", epoch).permutation(len(train_idx))]
        epoch_loss, seen = 0.0, 0
        for bi, chunk in enumerate(_iter_batches(order, cfg.batch_size)):
            views = _make_views(prep, chunk, cfg, bank, epoch)
            info = BatchRiskInfo(r=np.repeat(prep.risks[chunk], 2),
                                 m=np.repeat(prep.missing[chunk], 2),
                                 positive_of=pairs_involution(len(chunk)))
            with Tape() as tape:
                loss = _batch_loss(encoder, views, info, cfg)
            value = loss.item()
            if not math.isfinite(value):
                wm = batch_weights(info, cfg.alpha)
                raise NanLossError(
                    f"non-finite loss at epoch {epoch} batch {bi} (seed {cfg.seed}); "
                    f"W stats: min={wm.W.min():.3g} max={wm.W.max():.3g} "
                    f"mean={wm.W.mean():.3g}; risks [{info.r.min():.3g}, {info.r.max():.3g}]"
                )
            tape.backward(loss)
            optimizer.step(lr=lr)
            optimizer.zero_grad()
            epoch_loss += value * len(chunk)
            seen += len(chunk)

        val_loss = _validation_loss(epoch)
        history.append({"epoch": epoch, "lr": lr, "train_loss": epoch_loss / max(seen, 1),
                        "val_loss": val_loss})
        monitored = val_loss if not math.isnan(val_loss) else epoch_loss / max(seen, 1)
        if monitored < best_val:
            best_val = monitored
            best_epoch = epoch
            best_params = encoder.state_arrays()
            bad_epochs = 0
        else:
            bad_epochs += 1

        if run_path is not None:
            extra = {f"opt/{k}": v for k, v in optimizer.state_arrays().items()}
            extra.update({f"best/{k}": v for k, v in best_params.items()})
            save_checkpoint(run_path / "last.ckpt", encoder, extra=extra,
                            meta={"next_epoch": epoch + 1, "best_val": best_val,
                                  "best_epoch": best_epoch, "bad_epochs": bad_epochs})
            _write_history(run_path / "metrics.csv", history)

        if bad_epochs > cfg.patience:
            break

    encoder.load_state_arrays(best_params)
    ckpt_path = None
    if run_path is not None:
        ckpt_path = str(run_path / "best.ckpt")
        save_checkpoint(ckpt_path, encoder,
                        meta={"best_epoch": best_epoch, "best_val": best_val,
                              "epochs_run": len(history)})
    return PretrainResult(encoder=encoder, history=history, best_epoch=best_epoch,
                          best_val=best_val, checkpoint_path=ckpt_path)


def _write_history(path: Path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "lr", "train_loss", "val_loss"])
        writer.writeheader()
        writer.writerows(history)


# ---------------------------------------------------------------------------
# downstream heads


@dataclass
class LinearHead:
    """Affine readout over raw embeddings."""

    w: np.ndarray  # (h,)
    b: float
    task: str
    scaler: TargetScaler | None = None

    def predict(self, embeddings: np.ndarray) -> np.ndarray:
        raw = embeddings @ self.w + self.b
        if self.task == "regression" and self.scaler is not None:
            return self.scaler.denormalize(raw)
        return raw


def preprocess_downstream(ds: DownstreamDataset) -> np.ndarray:
    """Pipeline-preprocessed signals for a downstream dataset (N, T)."""
    raw = np.stack([s.signal for s in ds.samples]).astype(np.float64)
    out, _ = preprocess(raw, fs_in=ds.fs)
    return out.astype(np.float32)


def _head_loss(logits: Tensor, targets: np.ndarray, task: str) -> Tensor:
    y = targets.astype(logits.data.dtype)
    if task == "binary":
        # mean BCE-with-logits: softplus(s) - y * s
        return ad.mean(ad.sub(ad.softplus(logits), ad.mul(logits, y)))
    return ad.mean(ad.abs_(ad.sub(logits, y)))  # L1 on z-scored targets


def _train_head(emb_tr: np.ndarray, y_tr: np.ndarray, emb_va: np.ndarray,
                y_va: np.ndarray, task: str, cfg: DownstreamConfig):
    h = emb_tr.shape[1]
    rng = _stream(cfg.seed, "head")
    w = ad.parameter(rng.normal(0.0, 1.0 / math.sqrt(h), size=(h, 1)))
    b = ad.parameter(np.zeros(1))
    params = {"w": w, "b": b}
    optimizer = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay, decoupled=False)
    schedule = Schedule(mode="cosine-warm-restarts", base_lr=cfg.lr, period=cfg.restart_period)

    def head_logits(x: np.ndarray) -> Tensor:
        return ad.reshape(ad.dense(Tensor(x), w, b), (x.shape[0],))

    def val_loss() -> float:
        return _head_loss(head_logits(emb_va), y_va, task).item()

    best = (math.inf, w.data.copy(), float(b.data[0]))
    bad = 0
    n = emb_tr.shape[0]
    for epoch in range(cfg.epochs):
        lr = schedule.lr(epoch)
        order = _stream(cfg.seed, "order", epoch, 77).permutation(n)
        for lo in range(0, n, cfg.batch_size):
            sel = order[lo : lo + cfg.batch_size]
            with Tape() as tape:
                loss = _head_loss(head_logits(emb_tr[sel]), y_tr[sel], task)
            tape.backward(loss)
            optimizer.step(lr=lr)
            optimizer.zero_grad()
        vl = val_loss()
        if vl < best[0]:
            best = (vl, w.data.copy(), float(b.data[0]))
            bad = 0
        else:
            bad += 1
            if bad > cfg.patience:
                break
    return best


def linear_probe(encoder: Encoder, train_ds: DownstreamDataset, val_ds: DownstreamDataset,
                 cfg: DownstreamConfig, signals_train: np.ndarray | None = None,
                 signals_val: np.ndarray | None = None) -> tuple[LinearHead, dict]:
    """Train an affine head on frozen embeddings; returns head and val metrics.

    ``signals_*`` short-circuit preprocessing when the caller already ran it.
    """
    if signals_train is None:
        signals_train = preprocess_downstream(train_ds)
    if signals_val is None:
        signals_val = preprocess_downstream(val_ds)
    emb_tr = encoder.embed(signals_train).astype(np.float64)
    emb_va = encoder.embed(signals_val).astype(np.float64)
    y_tr = train_ds.labels(cfg.task).astype(np.float64)
    y_va = val_ds.labels(cfg.task).astype(np.float64)
    if cfg.task == "binary" and len(set(y_tr.tolist())) < 2:
        raise ValueError("binary probe needs both classes in the training labels")

    scaler = None
    if cfg.task == "regression":
        scaler = TargetScaler.fit(y_tr)
        y_tr = scaler.normalize(y_tr)
        y_va_n = scaler.normalize(y_va)
    else:
        y_va_n = y_va

    best_vl, best_w, best_b = _train_head(emb_tr, y_tr, emb_va, y_va_n,
                                          cfg.task, cfg)
    head = LinearHead(w=best_w.reshape(-1), b=best_b, task=cfg.task, scaler=scaler)
    preds = head.predict(emb_va.astype(np.float64))
    if cfg.task == "binary":
        metrics = {"val_auroc": auroc_binary(preds, y_va.astype(int)), "val_loss": best_vl}
    else:
        metrics = {"val_mae": mae(preds, y_va), "val_loss": best_vl}
    return head, metrics


def evaluate_head(encoder: Encoder, head: LinearHead, ds: DownstreamDataset,
                  signals: np.ndarray | None = None) -> dict:
    if signals is None:
        signals = preprocess_downstream(ds)
    emb = encoder.embed(signals).astype(np.float64)
    preds = head.predict(emb)
    if head.task == "binary":
        return {"auroc": auroc_binary(preds, ds.labels("binary")), "n": len(ds)}
    return {"mae": mae(preds, ds.labels("regression")), "n": len(ds)}


def finetune(encoder: Encoder, train_ds: DownstreamDataset, val_ds: DownstreamDataset,
             cfg: DownstreamConfig) -> tuple[LinearHead, dict]:
    """Joint training of encoder and head on the downstream task."""
    x_tr = preprocess_downstream(train_ds)
    x_va = preprocess_downstream(val_ds)
    y_tr = train_ds.labels(cfg.task).astype(np.float64)
    y_va = val_ds.labels(cfg.task).astype(np.float64)
    scaler = None
    if cfg.task == "regression":
        scaler = TargetScaler.fit(y_tr)
        y_tr = scaler.normalize(y_tr)
        y_va_n = scaler.normalize(y_va)
    else:
        y_va_n = y_va

    h = encoder.config.output_dim
    rng = _stream(cfg.seed, "head")
    w = ad.parameter(rng.normal(0.0, 1.0 / math.sqrt(h), size=(h, 1)).astype(encoder.dtype))
    b = ad.parameter(np.zeros(1, dtype=encoder.dtype))
    params = dict(encoder.params)
    params.update({"head.w": w, "head.b": b})
    optimizer = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay, decoupled=False)
    schedule = Schedule(mode="cosine-warm-restarts", base_lr=cfg.lr, period=cfg.restart_period)

    def forward_loss(x: np.ndarray, y: np.ndarray) -> Tensor:
        z = encoder.forward(x)
        logits = ad.reshape(ad.dense(z, w, b), (x.shape[0],))
        return _head_loss(logits, y, cfg.task)

    best = (math.inf, encoder.state_arrays(), w.data.copy(), float(b.data[0]))
    bad = 0
    n = x_tr.shape[0]
    for epoch in range(cfg.epochs):
        lr = schedule.lr(epoch)
        order = _stream(cfg.seed, "order", epoch, 99).permutation(n)
        for lo in range(0, n, cfg.batch_size):
            sel = order[lo : lo + cfg.batch_size]
            with Tape() as tape:
                loss = forward_loss(x_tr[sel], y_tr[sel])
            tape.backward(loss)
            optimizer.step(lr=lr)
            optimizer.zero_grad()
        vl = forward_loss(x_va, y_va_n).item()
        if vl < best[0]:
            best = (vl, encoder.state_arrays(), w.data.copy(), float(b.data[0]))
            bad = 0
        else:
            bad += 1
            if bad > cfg.patience:
                break
    encoder.load_state_arrays(best[1])
    head = LinearHead(w=best[2].reshape(-1).astype(np.float64), b=best[3],
                      task=cfg.task, scaler=scaler)
    preds = head.predict(encoder.embed(x_va).astype(np.float64))
    if cfg.task == "binary":
        metrics = {"val_auroc": auroc_binary(preds, y_va.astype(int)), "val_loss": best[0]}
    else:
        metrics = {"val_mae": mae(preds, y_va), "val_loss": best[0]}
    return head, metrics


# ---------------------------------------------------------------------------
# ablation harness


ABLATION_VARIANTS: tuple[LossSpec, ...] = (
    LossSpec("nce"),
    LossSpec("w"),
    LossSpec("d"),
    LossSpec("nce+d", lam=1.0, normalize=True),
    LossSpec("w+d", lam=1.0, normalize=True),
)


def lambda_mix_variants(lams=(5.0, 2.0, 1.0, 0.5, 0.2)) -> tuple[LossSpec, ...]:
    """w+d mixtures normalized by the sum of their coefficients."""
    return tuple(LossSpec("w+d", lam=l, normalize=True) for l in lams)


def ablate(prep: PreparedPretrain, encoder_config, down_train: DownstreamDataset,
           down_val: DownstreamDataset, down_test: DownstreamDataset,
           cfg: PretrainConfig, probe_cfg: DownstreamConfig,
           variants: tuple[LossSpec, ...] = ABLATION_VARIANTS,
           encoder_seed: int = 0) -> list[dict]:
    """One pretrain+probe per loss variant under identical seeds and data order."""
    if not variants:
        raise ValueError("variants must be non-empty")
    rows = []
    for spec in variants:
        enc = build(encoder_config, seed=encoder_seed, dtype=np.dtype(cfg.dtype))
        run_cfg = replace(cfg, loss=spec)
        t0 = time.time()
        result = pretrain(prep, enc, run_cfg)
        head, _ = linear_probe(enc, down_train, down_val, probe_cfg)
        test = evaluate_head(enc, head, down_test)
        rows.append({
            "variant": spec.label(),
            "lam": spec.lam if spec.kind in ("nce+d", "w+d") else "",
            "normalized": spec.normalize,
            "final_train_loss": result.history[-1]["train_loss"],
            "test_auroc" if probe_cfg.task == "binary" else "test_mae":
                test.get("auroc", test.get("mae")),
            "seconds": round(time.time() - t0, 2),
        })
    return rows


def write_ablation_csv(path, rows: list[dict]) -> None:
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)

"""Training loop, evaluation reports and trajectory export."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..autograd import Adam, Tensor, load_checkpoint, no_grad, save_checkpoint
from ..embed import embed_text_hashed, load_embedding
from ..features import gcc_phat_stack, load_feature, permute_gcc, save_feature
from ..models import build_model
from ..objectives import circular_mae, decode_argmax, emd_loss, encode_doa_targets
from ..signal import read_wav
from ..util import atomic_write_text
from .config import ExperimentConfig
from .synth import load_manifest

log = logging.getLogger(__name__)


@dataclass
class Example:
    id: str
    split: str
    gcc: np.ndarray  # (pairs, frames, lags)
    query: np.ndarray
    audio_emb: np.ndarray | None
    labels: np.ndarray  # azimuth per label frame, or a single static azimuth
    static: bool

    @property
    def n_frames(self) -> int:
        return self.gcc.shape[1]


def _feature_cache_path(rec: dict, cfg: ExperimentConfig) -> Path:
    p = rec["audio_path"]
    return p.with_name(f"{p.stem}.gcc{cfg.n_fft}_{cfg.hop}_{cfg.num_lags}.tqgc")


def load_examples(manifest, cfg: ExperimentConfig, cache: bool = True) -> list[Example]:
    """GCC features and query vectors for every record; features are cached next to the audio."""
    records = load_manifest(manifest) if isinstance(manifest, (str, Path)) else manifest
    dtype = np.dtype(cfg.dtype)
    out = []
    for rec in records:
        cpath = _feature_cache_path(rec, cfg)
        if cache and cpath.exists():
            gcc = load_feature(cpath).values
        else:
            w = read_wav(rec["audio_path"])
            if w.sample_rate != cfg.sample_rate:
                raise ValueError(f"{rec['audio_path']}: sample rate {w.sample_rate} != config {cfg.sample_rate}")
            feat = gcc_phat_stack(w, cfg.stft, cfg.num_lags)
            if cache:
                save_feature(feat, cpath)
            gcc = feat.values
        if "query_embedding_path" in rec:
            query = load_embedding(rec["query_embedding_path"]).vector
        else:
            query = embed_text_hashed(rec["query_text"]).vector
        audio_emb = None
        if "audio_embedding_path" in rec:
            audio_emb = load_embedding(rec["audio_embedding_path"], kind="audio").vector.astype(dtype)
        static = "target_deg" in rec
        labels = np.array([rec["target_deg"]] if static else rec["target_series"], dtype=np.float64)
        out.append(Example(rec["id"], rec["split"], np.asarray(gcc, dtype=dtype), query.astype(dtype),
                           audio_emb, labels, static))
    return out


def frame_label_index(n_frames: int, n_labels: int, cfg: ExperimentConfig) -> np.ndarray:
    """Label window containing each STFT frame center (clipped to the last window)."""
    centers = cfg.stft.frame_centers(n_frames, cfg.sample_rate)
    idx = np.floor(centers / cfg.label_hop_s + 1e-9).astype(int)
    return np.minimum(idx, n_labels - 1)


def pool_to_labels(frame_logits: np.ndarray, n_labels: int, cfg: ExperimentConfig) -> np.ndarray:
    """Mean of frame logits within each label window; empty windows take the nearest frame."""
    n_frames = frame_logits.shape[0]
    idx = frame_label_index(n_frames, n_labels, cfg)
    sums = np.zeros((n_labels, frame_logits.shape[1]))
    np.add.at(sums, idx, frame_logits)
    counts = np.bincount(idx, minlength=n_labels)
    pooled = np.empty_like(sums)
    filled = counts > 0
    pooled[filled] = sums[filled] / counts[filled, None]
    if not filled.all():
        centers = cfg.stft.frame_centers(n_frames, cfg.sample_rate)
        for j in np.flatnonzero(~filled):
            near = int(np.argmin(np.abs(centers - (j + 0.5) * cfg.label_hop_s)))
            pooled[j] = frame_logits[near]
    return pooled


# -- model plumbing ----------------------------------------------------------

def _model_hparams(cfg: ExperimentConfig) -> dict:
    hp = dict(cfg.model_params)
    hp.setdefault("seed", cfg.seed)
    hp.setdefault("num_lags", cfg.num_lags)
    return hp


def make_model(cfg: ExperimentConfig):
    return build_model(cfg.model, dtype=np.dtype(cfg.dtype).type, **_model_hparams(cfg))


def _check_compatible(model, examples: list[Example]) -> None:
    hp = model.hparams
    for ex in examples:
        n_pairs, _, n_lags = ex.gcc.shape
        if n_pairs != hp["n_pairs"] or n_lags != hp["num_lags"]:
            raise ValueError(
                f"example {ex.id}: features ({n_pairs} pairs, {n_lags} lags) do not match the model "
                f"({hp['n_pairs']} pairs, {hp['num_lags']} lags)"
            )
        if getattr(model, "use_audio_semantic", False) and ex.audio_emb is None:
            raise ValueError(f"example {ex.id}: model needs an audio embedding but the manifest has none")
        if not ex.static and not _is_frame_model(model):
            raise ValueError(f"example {ex.id} has a moving target; clip-level models need static targets")


def _is_frame_model(model) -> bool:
    return model.kind == "frame_cross_attn"


def forward_batch(model, cfg: ExperimentConfig, batch: list[Example]) -> Tensor:
    g = Tensor(np.stack([ex.gcc for ex in batch]))
    q = np.stack([ex.query for ex in batch])
    if _is_frame_model(model):
        return model(g, q, cfg.frame_mode)
    a = np.stack([ex.audio_emb for ex in batch]) if getattr(model, "use_audio_semantic", False) else None
    return model(g, q, a)


def batch_targets(model, cfg: ExperimentConfig, batch: list[Example]) -> np.ndarray:
    if not _is_frame_model(model) or cfg.frame_mode == "cls_pooled":
        if not all(ex.static for ex in batch):
            raise ValueError("clip-level prediction needs static targets; use the frame model per_frame mode")
        az = np.array([ex.labels[0] for ex in batch])
        y = encode_doa_targets(az, cfg.sigma_sq)
        return y[:, None, :] if _is_frame_model(model) else y
    rows = []
    for ex in batch:
        if ex.static:
            rows.append(np.full(ex.n_frames, ex.labels[0]))
        else:
            rows.append(ex.labels[frame_label_index(ex.n_frames, len(ex.labels), cfg)])
    return encode_doa_targets(np.stack(rows), cfg.sigma_sq)


def _batches(examples: list[Example], batch_size: int, rng) -> list[list[Example]]:
    """Shuffled batches; examples are grouped by frame count so each batch stacks."""
    order = rng.permutation(len(examples))
    groups: dict = {}
    for i in order:
        groups.setdefault(examples[i].gcc.shape, []).append(examples[i])
    batches = []
    for members in groups.values():
        batches += [members[k:k + batch_size] for k in range(0, len(members), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def square_symmetry(ex: Example, element: int) -> Example:
    """Apply one of the 8 symmetries of the square 4-mic array to an example.

    ``element = 2 * r + f``: mirror y -> -y if ``f`` (mics k -> 3 - k, azimuth
    -> -azimuth), then relabel mics k -> k + r (azimuth -> azimuth - 90 r).
    """
    r, f = divmod(element, 2)
    if element == 0:
        return ex
    if ex.gcc.shape[0] != 6:
        raise ValueError("square-array augmentation needs 4-mic (6-pair) features")
    perm = [(3 - (k + r) % 4) if f else (k + r) % 4 for k in range(4)]
    labels = ((-ex.labels if f else ex.labels) - 90.0 * r) % 360.0
    return Example(ex.id, ex.split, permute_gcc(ex.gcc, perm), ex.query, ex.audio_emb, labels, ex.static)


def lr_at_epoch(cfg: ExperimentConfig, epoch: int) -> float:
    """Step schedule: lr0 * decay ** floor((epoch - 1) / decay_every), epochs counted from 1."""
    return cfg.lr * cfg.lr_decay ** ((epoch - 1) // cfg.lr_decay_every)


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a strictly lower metric."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, metric: float) -> bool:
        if metric < self.best:
            self.best, self.best_epoch, self.bad_epochs = metric, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


# -- evaluation ---------------------------------------------------------------

def predict(model, cfg: ExperimentConfig, examples: list[Example], batch_size: int | None = None) -> list:
    """Per example: a predicted azimuth (static) or a per-label-frame series (moving)."""
    _check_compatible(model, examples)
    batch_size = batch_size or cfg.batch_size
    preds: list = [None] * len(examples)
    order = sorted(range(len(examples)), key=lambda i: (examples[i].gcc.shape, i))
    with no_grad():
        for k in range(0, len(order), batch_size):
            idx = [i for i in order[k:k + batch_size]]
            if len({examples[i].gcc.shape for i in idx}) > 1:
                idx_groups = [[i] for i in idx]
            else:
                idx_groups = [idx]
            for grp in idx_groups:
                logits = forward_batch(model, cfg, [examples[i] for i in grp]).data.astype(np.float64)
                for row, i in zip(logits, grp):
                    preds[i] = _decode(model, cfg, examples[i], row)
    return preds


def _decode(model, cfg, ex: Example, logits: np.ndarray):
    if logits.ndim == 1:
        return float(decode_argmax(logits))
    if ex.static or cfg.frame_mode == "cls_pooled":
        return float(decode_argmax(logits.mean(axis=0)))
    pooled = pool_to_labels(logits, len(ex.labels), cfg)
    return [float(decode_argmax(p)) for p in pooled]


def score_predictions(records, predictions) -> list[float]:
    """Per-example circular MAE; ``records`` carry ``target_deg`` or ``target_series``."""
    errors = []
    for rec, pred in zip(records, predictions, strict=True):
        gt = np.asarray(rec["target_series"] if "target_series" in rec else [rec["target_deg"]], dtype=float)
        p = np.broadcast_to(np.asarray(pred, dtype=float), gt.shape)
        errors.append(circular_mae(p, gt))
    return errors


@dataclass
class EvalReport:
    mae: float
    per_split: dict
    per_example: list
    config_hash: str
    checkpoint: str = ""
    manifest: str = ""

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        atomic_write_text(path, self.to_json())


def make_report(examples: list[Example], preds: list, cfg: ExperimentConfig, **kw) -> EvalReport:
    recs = [{"target_deg": ex.labels[0]} if ex.static else {"target_series": ex.labels} for ex in examples]
    errors = score_predictions(recs, preds)
    per_split = {}
    for split in sorted({ex.split for ex in examples}):
        vals = [e for e, ex in zip(errors, examples) if ex.split == split]
        per_split[split] = float(np.mean(vals))
    per_example = [
        {"id": ex.id, "split": ex.split, "mae": float(e), "pred_deg": p}
        for ex, e, p in zip(examples, errors, preds)
    ]
    return EvalReport(float(np.mean(errors)), per_split, per_example, cfg.config_hash(), **kw)


# -- checkpoints ---------------------------------------------------------------

def _sidecar(ckpt) -> Path:
    return Path(ckpt).with_suffix(".json")


def load_trained(ckpt):
    """(model, cfg, sidecar dict) from a checkpoint written by :func:`train`."""
    info = json.loads(_sidecar(ckpt).read_text(encoding="utf-8"))
    cfg = ExperimentConfig.from_dict(info["config"])
    model = make_model(cfg)
    load_checkpoint(ckpt, model)
    return model, cfg, info


def evaluate(ckpt, manifest, report_path=None) -> EvalReport:
    model, cfg, _ = load_trained(ckpt)
    examples = load_examples(manifest, cfg)
    _check_compatible(model, examples)
    report = make_report(examples, predict(model, cfg, examples), cfg,
                         checkpoint=str(ckpt), manifest=str(manifest))
    if report_path is not None:
        report.save(report_path)
    return report


# -- training ------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Path
    best_epoch: int
    best_mae: float
    epochs_run: int
    history: list = field(default_factory=list)


def _dump_and_abort(out_dir: Path, cfg: ExperimentConfig, epoch: int, step: int, msg: str):
    dump = {"error": msg, "epoch": epoch, "step": step, "seed": cfg.seed, "config": cfg.to_dict()}
    atomic_write_text(out_dir / "nan_dump.json", json.dumps(dump, indent=2, sort_keys=True) + "\n")
    raise FloatingPointError(f"{msg} (epoch {epoch}, step {step}); config dumped to {out_dir / 'nan_dump.json'}")


def train_epoch(model, opt, cfg: ExperimentConfig, examples, epoch: int, out_dir: Path) -> float:
    rng = np.random.default_rng([cfg.seed, epoch])
    opt.lr = lr_at_epoch(cfg, epoch)
    total, count = 0.0, 0
    if cfg.augment == "square_dihedral":
        examples = [square_symmetry(ex, int(k)) for ex, k in zip(examples, rng.integers(0, 8, len(examples)))]
    for step, batch in enumerate(_batches(examples, cfg.batch_size, rng)):
        y = batch_targets(model, cfg, batch)
        try:
            loss = emd_loss(forward_batch(model, cfg, batch), y)
        except FloatingPointError as exc:
            _dump_and_abort(out_dir, cfg, epoch, step, str(exc))
        value = float(loss.data)
        if not math.isfinite(value):
            _dump_and_abort(out_dir, cfg, epoch, step, "non-finite training loss")
        loss.backward()
        try:
            opt.step()
        except FloatingPointError as exc:
            _dump_and_abort(out_dir, cfg, epoch, step, str(exc))
        total += value * len(batch)
        count += len(batch)
    return total / count


def train(cfg: ExperimentConfig, train_manifest, eval_manifest, out_dir, max_epochs: int | None = None) -> TrainResult:
    """Adam + step decay + early stopping on eval MAE; keeps ``best.tqck`` and ``train_log.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_ex = load_examples(train_manifest, cfg)
    eval_ex = load_examples(eval_manifest, cfg)
    model = make_model(cfg)
    _check_compatible(model, train_ex)
    _check_compatible(model, eval_ex)
    opt = Adam(list(model.named_parameters()), lr=cfg.lr)
    stopper = EarlyStopping(cfg.patience)
    ckpt = out_dir / "best.tqck"
    history = []
    epochs = max_epochs or cfg.max_epochs
    epoch = 0
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        loss = train_epoch(model, opt, cfg, train_ex, epoch, out_dir)
        mae = make_report(eval_ex, predict(model, cfg, eval_ex), cfg).mae
        improved = stopper.update(epoch, mae)
        row = {"epoch": epoch, "lr": opt.lr, "loss": loss, "eval_mae": mae,
               "seconds": round(time.perf_counter() - t0, 3)}
        history.append(row)
        log.info("epoch %d lr %.2e loss %.6f eval MAE %.2f%s", epoch, opt.lr, loss, mae, " *" if improved else "")
        if improved:
            save_checkpoint(ckpt, model, opt, meta={"epoch": epoch, "best_mae": mae})
            sidecar = {
                "config": cfg.to_dict(), "config_hash": cfg.config_hash(), "epoch": epoch,
                "best_mae": mae, "train_manifest": str(train_manifest), "eval_manifest": str(eval_manifest),
            }
            atomic_write_text(_sidecar(ckpt), json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        _write_log(out_dir / "train_log.csv", history)
        if stopper.should_stop:
            break
    return TrainResult(ckpt, stopper.best_epoch, stopper.best, epoch, history)


def _write_log(path: Path, history: list) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(history[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(history)
    atomic_write_text(path, buf.getvalue())


# -- trajectory export -----------------------------------------------------------

def export_trajectory(ckpt, example_id: str, manifest=None, out=None) -> list[tuple]:
    """Rows (label_frame, gt_deg, pred_deg) for a moving example; writes CSV when ``out`` is given.

    ``manifest`` defaults to the eval manifest recorded with the checkpoint.
    """
    model, cfg, info = load_trained(ckpt)
    manifest = manifest or info["eval_manifest"]
    recs = [r for r in load_manifest(manifest) if r["id"] == example_id]
    if not recs:
        raise KeyError(f"example {example_id!r} not in {manifest}")
    rec = recs[0]
    if "target_series" not in rec:
        raise ValueError(
            f"example {example_id!r} is static (single target azimuth); use `tqsel eval` for clip-level reports"
        )
    ex = load_examples([rec], cfg)[0]
    if not _is_frame_model(model) or cfg.frame_mode != "per_frame":
        raise ValueError("trajectory export needs a frame model trained in per_frame mode")
    pred = predict(model, cfg, [ex])[0]
    rows = [(j, g, p) for j, (g, p) in enumerate(zip(rec["target_series"], pred))]
    if out is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame", "gt_deg", "pred_deg"])
        for j, g, p in rows:
            w.writerow([j, repr(float(g)), repr(float(p))])
        atomic_write_text(out, buf.getvalue())
    return rows

"""Two-stage training: contrastive + MaskMSE pre-training, then SQA fine-tuning.

Adam with bias correction, a reduce-on-plateau schedule on the validation
loss, global-norm gradient clipping and resumable epoch-boundary
checkpoints (model file plus an optimizer/scheduler sidecar).
"""

import json
import queue
import threading
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .contrastive import build_group, contrastive_backward, contrastive_forward, group_spectra
from .datagen.corpus import GenConfig, load_example
from .dsp import DEFAULT_FRAME, FrameConfig, stft
from .losses import FinetuneConfig, LossBreakdown, finetune_objective, mask_mse, total_loss
from .masks import CIRM_EPS, MASK_CLIP, error_spectrum, true_cirm
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.model import AecModel, ModelConfig

STAGE_DEFAULTS = {
    "pretrain": {"lr_init": 1e-3, "alpha": 1.0},
    "finetune": {"lr_init": 1e-5, "alpha": 0.0},
}


@dataclass
class TrainConfig:
    stage: str = "pretrain"
    lr_init: float | None = None
    alpha: float | None = None
    patience: int = 5
    factor: float = 0.1
    lr_min: float = 1e-10
    plateau_threshold: float = 1e-6
    batch_size: int = 4
    epochs: int = 10
    max_steps: int | None = None
    seed: int = 0
    positives: int = 1
    negatives: int = 4
    contrastive_anchors: int | None = None
    grad_clip: float = 5.0
    mask_clip: float = MASK_CLIP
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    sdw_n: float = 2.0
    sdw_bound: float = 10.0
    esw_n: float = -1.0
    esw_bound: float = 10.0
    lambda_err: float = 0.1
    error_mode: str = "product"

    def __post_init__(self):
        if self.stage not in STAGE_DEFAULTS:
            raise ValueError(f"stage must be 'pretrain' or 'finetune', got {self.stage!r}")
        if self.lr_init is None:
            self.lr_init = STAGE_DEFAULTS[self.stage]["lr_init"]
        if self.alpha is None:
            self.alpha = STAGE_DEFAULTS[self.stage]["alpha"]
        if not self.lr_init > self.lr_min:
            raise ValueError("lr_init must exceed lr_min")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0 < self.factor < 1:
            raise ValueError("factor must be in (0, 1)")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)

    def sqa(self) -> FinetuneConfig:
        return FinetuneConfig(self.sdw_n, self.sdw_bound, self.esw_n, self.esw_bound,
                              self.lambda_err, self.error_mode)


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_update(params: dict, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam step, applied to ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}; step aborted")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params, state


def clip_global_norm(grads: dict, max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total


# -- schedule -----------------------------------------------------------------

@dataclass
class PlateauScheduler:
    lr: float
    patience: int = 5
    factor: float = 0.1
    lr_min: float = 1e-10
    threshold: float = 1e-6
    best: float = float("inf")
    bad_epochs: int = 0

    def step(self, val_loss: float) -> float:
        """Record one epoch's validation loss; returns the learning rate to use next."""
        if val_loss < self.best * (1.0 - self.threshold) or self.best == float("inf"):
            self.best = val_loss
            self.bad_epochs = 0
            return self.lr
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.lr = max(self.lr * self.factor, self.lr_min)
            self.bad_epochs = 0
        return self.lr


def plateau_schedule(history, cfg: TrainConfig) -> float:
    """Learning rate after replaying a list of per-epoch validation losses."""
    if len(history) == 0:
        raise ValueError("validation history is empty")
    sched = PlateauScheduler(cfg.lr_init, cfg.patience, cfg.factor, cfg.lr_min, cfg.plateau_threshold)
    for loss in history:
        sched.step(loss)
    return sched.lr


# -- batches ----------------------------------------------------------------------

@dataclass
class Batch:
    Y: np.ndarray
    X: np.ndarray
    S: np.ndarray
    M: np.ndarray
    E: np.ndarray
    ids: list


def prepare_example(ex, frame_cfg=DEFAULT_FRAME, mask_clip=MASK_CLIP):
    Y = stft(ex.mic.astype(np.float64), frame_cfg)
    X = stft(ex.far_end.astype(np.float64), frame_cfg)
    S = stft(ex.near_end.astype(np.float64), frame_cfg)
    M = true_cirm(S, Y, CIRM_EPS, mask_clip)
    # complex64 halves the cache footprint; targets are computed in float64 first
    out = {"Y": Y, "X": X, "S": S, "M": M, "E": error_spectrum(Y, S)}
    return {k: v.astype(np.complex64) for k, v in out.items()}


def make_batch(prepared, ids) -> Batch:
    return Batch(
        *(np.stack([p[k] for p in prepared]) for k in ("Y", "X", "S", "M", "E")),
        ids=list(ids),
    )


def batch_from_examples(examples, frame_cfg=DEFAULT_FRAME, mask_clip=MASK_CLIP) -> Batch:
    prepared = [prepare_example(ex, frame_cfg, mask_clip) for ex in examples]
    return make_batch(prepared, [ex.meta.get("id", str(i)) for i, ex in enumerate(examples)])


@dataclass
class GroupData:
    mic: np.ndarray
    far: np.ndarray
    n_pos: int


def group_data(group, frame_cfg=DEFAULT_FRAME) -> GroupData:
    mic, far = group_spectra(group, frame_cfg)
    return GroupData(mic, far, len(group.positives))


# -- steps ------------------------------------------------------------------------

def _apply(model, opt, lr, cfg):
    grads = model.grads()
    clip_global_norm(grads, cfg.grad_clip)
    adam_update(model.params(), grads, opt, lr)


def pretrain_step(model: AecModel, batch: Batch, groups, opt: AdamState, lr: float,
                  cfg: TrainConfig, update: bool = True) -> LossBreakdown:
    """MaskMSE plus ``alpha`` times the mean contrastive loss over the groups.

    ``groups`` maps a batch position to its :class:`GroupData`; positions
    without a group contribute only to the mask loss.
    """
    model.zero_grad()
    mask, _, feats, cache = model.forward(batch.Y, batch.X)
    mse, g_mask = mask_mse(batch.M, mask, with_grad=True)
    con = 0.0
    d_feats = None
    groups = groups or {}
    if cfg.alpha > 0 and groups:
        d_feats = np.zeros_like(feats)
        losses = []
        for i in sorted(groups):
            gd = groups[i]
            loss_i, _, ccache = contrastive_forward(model, feats[i], gd.mic, gd.far, gd.n_pos)
            d_feats[i] = contrastive_backward(model, ccache, scale=cfg.alpha / len(groups))
            losses.append(loss_i)
        con = float(np.mean(losses))
    model.backward(g_mask, cache, d_features=d_feats)
    out = LossBreakdown(mask_mse=mse, contrastive=con, total=total_loss(mse, con, cfg.alpha),
                        alpha=cfg.alpha, lambda_err=0.0)
    if update:
        _apply(model, opt, lr, cfg)
    return out


def finetune_step(model: AecModel, batch: Batch, opt: AdamState, lr: float,
                  cfg: TrainConfig, update: bool = True) -> LossBreakdown:
    """SQA-weighted mask loss plus error-reduction loss; no contrastive term."""
    model.zero_grad()
    mask, _, _, cache = model.forward(batch.Y, batch.X)
    out, g_mask = finetune_objective(batch.M, mask, batch.E, cfg.sqa(), with_grad=True)
    model.backward(g_mask, cache)
    if update:
        _apply(model, opt, lr, cfg)
    return out


def evaluate_loss(model: AecModel, batches, cfg: TrainConfig) -> dict:
    """Mean stage objective (and MaskMSE) over pre-built batches, without updates."""
    tot, mse, n = 0.0, 0.0, 0
    for b in batches:
        mask, _, _, _ = model.forward(b.Y, b.X)
        k = len(b.ids)
        m = mask_mse(b.M, mask)
        if cfg.stage == "finetune":
            t = finetune_objective(b.M, mask, b.E, cfg.sqa()).total
        else:
            t = m
        tot += t * k
        mse += m * k
        n += k
    return {"loss": tot / n, "mask_mse": mse / n}


# -- run ----------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: AecModel
    epochs: list
    steps: list
    best_val: float
    out_dir: Path | None = None


class _Loader:
    """Produces batches for one epoch ahead of the training loop (bounded queue)."""

    def __init__(self, fetch, order, batch_size, depth=2):
        self._q = queue.Queue(maxsize=depth)
        self._chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
        self._fetch = fetch
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self):
        try:
            for chunk in self._chunks:
                self._q.put((chunk, self._fetch(chunk)))
        except BaseException as exc:  # surfaced in the consumer
            self._q.put(exc)
        self._q.put(None)

    def __iter__(self):
        while True:
            item = self._q.get()
            if item is None:
                return
            if isinstance(item, BaseException):
                raise item
            yield item


def _write_lines(path, lines, mode="a"):
    if path is None:
        return
    with open(path, mode) as fh:
        for line in lines:
            fh.write(line + "\n")


def _kv(**kw):
    return " ".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in kw.items())


def _save_state(path, opt: AdamState, sched: PlateauScheduler, epoch, step, history):
    arrays = {}
    for name in opt.m:
        arrays[f"m/{name}"] = opt.m[name]
        arrays[f"v/{name}"] = opt.v[name]
    meta = {
        "adam_step": opt.step, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
        "sched": asdict(sched), "epoch": epoch, "global_step": step, "history": history,
    }
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def _load_state(path):
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        opt = AdamState(step=meta["adam_step"], beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"])
        for key in z.files:
            if key.startswith("m/"):
                opt.m[key[2:]] = z[key].copy()
            elif key.startswith("v/"):
                opt.v[key[2:]] = z[key].copy()
    sched = PlateauScheduler(**meta["sched"])
    return opt, sched, meta


def run_training(cfg: TrainConfig, rows, model: AecModel | None = None, out_dir=None,
                 model_cfg: ModelConfig | None = None, gen_cfg: GenConfig | None = None,
                 frame_cfg: FrameConfig = DEFAULT_FRAME, resume: bool = False,
                 corpus_root=None, stop_after_epoch: int | None = None,
                 cache_limit: int = 32, log=None) -> TrainResult:
    """Epoch loop with per-epoch validation, plateau schedule and best-checkpoint retention.

    Validation uses the ``val`` split, or the training rows when the
    manifest has none. ``stop_after_epoch`` ends the run early at an epoch
    boundary (used to exercise resume).
    """
    train_rows = [r for r in rows if r["split"] == "train"]
    val_rows = [r for r in rows if r["split"] == "val"] or train_rows
    if not train_rows:
        raise ValueError("manifest has no training rows")
    for r in train_rows + val_rows:
        if r.get("segment_len") is None:
            raise ValueError(f"manifest row {r.get('id')} lacks segment_len")
    seg = {r["segment_len"] for r in train_rows + val_rows}
    if len(seg) != 1:
        raise ValueError(f"manifest mixes segment lengths {sorted(seg)}")
    if cfg.stage == "finetune" and model is None:
        raise ValueError("fine-tuning needs an input model (pre-trained checkpoint)")
    gen_cfg = gen_cfg or GenConfig()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    epoch_log = out_dir / "metrics.log" if out_dir else None
    step_log = out_dir / "steps.log" if out_dir else None

    start_epoch, global_step = 0, 0
    epochs_hist, steps_hist = [], []
    if resume:
        if out_dir is None or not (out_dir / "last.aecl").exists():
            raise FileNotFoundError("nothing to resume: last.aecl missing")
        model, _, _ = load_checkpoint(out_dir / "last.aecl")
        opt, sched, meta = _load_state(out_dir / "last.state.npz")
        start_epoch, global_step = meta["epoch"] + 1, meta["global_step"]
        epochs_hist = meta["history"]
    else:
        if model is None:
            model = AecModel(model_cfg or ModelConfig(seed=cfg.seed))
        opt = AdamState(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
        sched = PlateauScheduler(cfg.lr_init, cfg.patience, cfg.factor, cfg.lr_min, cfg.plateau_threshold)
        if out_dir is not None:
            _write_lines(epoch_log, [], mode="w")
            _write_lines(step_log, [], mode="w")

    cache = {}

    def prepared(row):
        key = row["id"]
        if key in cache:
            return cache[key]
        p = prepare_example(load_example(row, corpus_root), frame_cfg, cfg.mask_clip)
        if len(cache) < cache_limit:
            cache[key] = p
        return p

    gcache = {}

    def groups_for(chunk):
        if cfg.stage != "pretrain" or cfg.alpha == 0:
            return {}
        n = len(chunk) if cfg.contrastive_anchors is None else min(cfg.contrastive_anchors, len(chunk))
        out = {}
        for i, row in enumerate(chunk[:n]):
            if row["id"] not in gcache:
                g = build_group(rows, row["id"], cfg.positives, cfg.negatives, cfg.seed, gen_cfg)
                gd = group_data(g, frame_cfg)
                if len(gcache) < cache_limit:
                    gcache[row["id"]] = gd
                out[i] = gd
            else:
                out[i] = gcache[row["id"]]
        return out

    def fetch(chunk):
        return make_batch([prepared(r) for r in chunk], [r["id"] for r in chunk]), groups_for(chunk)

    val_batches = None
    best_val = min((e["val_loss"] for e in epochs_hist), default=float("inf"))
    done = False
    for epoch in range(start_epoch, cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = [train_rows[i] for i in rng.permutation(len(train_rows))]
        lr = sched.lr
        train_losses = []
        for chunk, (batch, groups) in _Loader(fetch, order, cfg.batch_size):
            if cfg.stage == "pretrain":
                lb = pretrain_step(model, batch, groups, opt, lr, cfg)
            else:
                lb = finetune_step(model, batch, opt, lr, cfg)
            global_step += 1
            rec = dict(asdict(lb), step=global_step, epoch=epoch, lr=lr)
            steps_hist.append(rec)
            train_losses.append(lb.total)
            _write_lines(step_log, [lb.log_line(step=global_step, stage=cfg.stage, epoch=epoch, lr=lr)])
            if log:
                log(rec)
            if cfg.max_steps is not None and global_step >= cfg.max_steps:
                done = True
                break
        if val_batches is None:
            val_batches = [
                make_batch([prepared(r) for r in val_rows[i : i + cfg.batch_size]],
                           [r["id"] for r in val_rows[i : i + cfg.batch_size]])
                for i in range(0, len(val_rows), cfg.batch_size)
            ]
        val = evaluate_loss(model, val_batches, cfg)
        next_lr = sched.step(val["loss"])
        ep = {"epoch": epoch, "train_loss": float(np.mean(train_losses)), "val_loss": val["loss"],
              "val_mask_mse": val["mask_mse"], "lr": lr, "next_lr": next_lr, "global_step": global_step}
        epochs_hist.append(ep)
        _write_lines(epoch_log, [
            _kv(epoch=epoch, stage=cfg.stage, kind="train", loss=ep["train_loss"], lr=lr, step=global_step),
            _kv(epoch=epoch, stage=cfg.stage, kind="val", loss=val["loss"], mask_mse=val["mask_mse"], next_lr=next_lr),
        ])
        if out_dir is not None:
            if val["loss"] < best_val:
                save_checkpoint(out_dir / "best.aecl", model, frame_cfg, {"epoch": epoch, "val_loss": val["loss"]})
            save_checkpoint(out_dir / "last.aecl", model, frame_cfg, {"epoch": epoch})
            _save_state(out_dir / "last.state.npz", opt, sched, epoch, global_step, epochs_hist)
        best_val = min(best_val, val["loss"])
        if done or (stop_after_epoch is not None and epoch >= stop_after_epoch):
            break
    return TrainResult(model, epochs_hist, steps_hist, best_val, out_dir)

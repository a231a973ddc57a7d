"""Training loop, sliding-window inference, and evaluation.

One `train` call is a pure function of (configs, dataset, seed): model
init, patch shuffling, and augmentation all draw from seeded generators,
so identical inputs give bitwise-identical histories and checkpoints
within one build of the conv kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .errors import ConfigError, TrainingDiverged
from .losses import LossConfig, combined_loss
from .metrics import SegMetrics, dice_score, evaluate_pair
from .morphology import build_prior
from .network import NetworkConfig, WaveSegNet
from .optim import Adam, cosine_lr
from .patches import extract, plan_patches, stitch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    patience: int = 15
    batch_size: int = 2
    patch: Tuple[int, int, int] = (32, 32, 32)
    overlap: Tuple[int, int, int] = (8, 8, 8)
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    threshold: float = 0.5
    prior_radius: int = 2
    flip_prob: float = 0.5

    def __post_init__(self):
        if self.epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ConfigError("epochs, patience, and batch_size must be >= 1")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")


@dataclass
class Sample:
    """One prepared volume: normalized image, float masks, prior."""
    name: str
    image: np.ndarray
    vessels: np.ndarray
    prior: np.ndarray
    spacing: Tuple[float, float, float]


@dataclass
class TrainResult:
    model: WaveSegNet
    history: List[dict]
    best_epoch: int
    best_val_dsc: float
    best_state: Dict[str, np.ndarray]
    stopped_early: bool


def normalize_volume(image: np.ndarray) -> np.ndarray:
    """Per-volume min-max rescale to [0, 1]; constant volumes map to 0."""
    img = image.astype(np.float32)
    lo = float(img.min())
    hi = float(img.max())
    if hi <= lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def prepare_sample(name: str, image: np.ndarray, vessels: np.ndarray,
                   myo: np.ndarray, spacing, prior_radius: int = 2) -> Sample:
    return Sample(
        name=name,
        image=normalize_volume(image),
        vessels=vessels.astype(np.float32),
        prior=build_prior(myo, radius=prior_radius).astype(np.float32),
        spacing=tuple(float(s) for s in spacing),
    )


def prepare_records(records, prior_radius: int = 2) -> List[Sample]:
    return [prepare_sample(r.name, r.image, r.vessels, r.myocardium,
                           r.spacing, prior_radius) for r in records]


def random_flip(arrays: Sequence[np.ndarray], rng: np.random.Generator,
                prob: float = 0.5) -> List[np.ndarray]:
    """Flip all arrays together along the W axis with probability `prob`."""
    if rng.random() < prob:
        return [np.ascontiguousarray(a[..., ::-1]) for a in arrays]
    return list(arrays)


def _check_trainable(samples: List[Sample], patch, divisor: int) -> None:
    for p in patch:
        if p % divisor:
            raise ConfigError(
                f"patch size {patch} not divisible by 2**scales = {divisor}")
    for s in samples:
        for d, p in zip(s.image.shape, patch):
            if p > d:
                raise ConfigError(
                    f"patch {patch} larger than volume {s.image.shape} ({s.name})")


def predict_volume(model: WaveSegNet, image: np.ndarray,
                   prior: Optional[np.ndarray], cfg: TrainConfig) -> np.ndarray:
    """Sliding-window inference; returns stitched logits, full volume size."""
    was_training = model.training
    model.eval()
    starts = plan_patches(image.shape, cfg.patch, cfg.overlap)
    pieces = []
    with ad.no_grad():
        for i in range(0, len(starts), cfg.batch_size):
            chunk = starts[i:i + cfg.batch_size]
            xs = np.stack([extract(image, s, cfg.patch) for s in chunk])[:, None]
            pr = None
            if prior is not None:
                pr = np.stack([extract(prior, s, cfg.patch) for s in chunk])[:, None]
                pr = ad.Tensor(pr.astype(np.float32))
            logits = model(ad.Tensor(xs.astype(np.float32)), pr).data
            for j, s in enumerate(chunk):
                pieces.append((s, logits[j, 0]))
    if was_training:
        model.train()
    return stitch(image.shape, cfg.patch, cfg.overlap, pieces)


def predict_mask(model: WaveSegNet, sample: Sample, cfg: TrainConfig) -> np.ndarray:
    prior = sample.prior if model.cfg.use_mpe else None
    logits = predict_volume(model, sample.image, prior, cfg)
    return (expit(logits) >= cfg.threshold).astype(np.uint8)


def evaluate_model(model: WaveSegNet, samples: List[Sample],
                   cfg: TrainConfig) -> List[SegMetrics]:
    return [evaluate_pair(predict_mask(model, s, cfg), s.vessels, s.spacing)
            for s in samples]


def mean_metrics(per_volume: List[SegMetrics]) -> SegMetrics:
    if not per_volume:
        raise ConfigError("cannot average an empty metrics list")
    return SegMetrics(
        dsc=float(np.mean([m.dsc for m in per_volume])),
        sensitivity=float(np.mean([m.sensitivity for m in per_volume])),
        precision=float(np.mean([m.precision for m in per_volume])),
        hd95_mm=float(np.mean([m.hd95_mm for m in per_volume])),
    )


def train(net_cfg: NetworkConfig, train_samples: List[Sample],
          val_samples: List[Sample], loss_cfg: LossConfig = LossConfig(),
          cfg: TrainConfig = TrainConfig(), log=None) -> TrainResult:
    """Train a fresh network; early-stops on stalled validation DSC.

    Keeps the best-validation state and returns with it loaded.
    """
    net_cfg.validate()
    if not train_samples:
        raise ConfigError("no training samples")
    if not val_samples:
        raise ConfigError("no validation samples; early stopping needs them")
    _check_trainable(train_samples + val_samples, cfg.patch, net_cfg.divisor)

    model = WaveSegNet(net_cfg, seed=cfg.seed)
    model.train()
    opt = Adam(model.parameters(), lr=cfg.lr,
               betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])

    inventory = [(vi, s) for vi, smp in enumerate(train_samples)
                 for s in plan_patches(smp.image.shape, cfg.patch, cfg.overlap)]

    history: List[dict] = []
    best_state: Dict[str, np.ndarray] = {}
    best_val = -1.0
    best_epoch = -1
    stall = 0
    stopped_early = False

    for epoch in range(cfg.epochs):
        lr = cosine_lr(cfg.lr, epoch, cfg.epochs)
        opt.set_lr(lr)
        order = rng.permutation(len(inventory))
        losses = []
        for b0 in range(0, len(order), cfg.batch_size):
            idxs = order[b0:b0 + cfg.batch_size]
            xs, ts, ps = [], [], []
            for k in idxs:
                vi, start = inventory[k]
                smp = train_samples[vi]
                img = extract(smp.image, start, cfg.patch)
                ves = extract(smp.vessels, start, cfg.patch)
                pri = extract(smp.prior, start, cfg.patch)
                img, ves, pri = random_flip([img, ves, pri], rng, cfg.flip_prob)
                xs.append(img)
                ts.append(ves)
                ps.append(pri)
            x = ad.Tensor(np.stack(xs)[:, None].astype(np.float32))
            t = np.stack(ts)[:, None].astype(np.float32)
            prior = (ad.Tensor(np.stack(ps)[:, None].astype(np.float32))
                     if net_cfg.use_mpe else None)
            logits = model(x, prior)
            loss = combined_loss(logits, t, loss_cfg)
            val = float(loss.data)
            if not np.isfinite(val):
                culprit = ad.first_nonfinite_op(loss)
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} step {b0 // cfg.batch_size}"
                    + (f"; first non-finite op: {culprit}" if culprit else ""))
            model.zero_grad()
            loss.backward()
            opt.step()
            losses.append(val)

        val_dsc = _validation_dsc(model, val_samples, cfg)
        train_loss = float(np.mean(losses))
        history.append({"epoch": epoch, "lr": lr,
                        "train_loss": train_loss, "val_dsc": val_dsc})
        if log:
            log(f"epoch {epoch:3d}  lr {lr:.6f}  loss {train_loss:.4f}  "
                f"val_dsc {val_dsc:.4f}")
        if val_dsc > best_val:
            best_val = val_dsc
            best_epoch = epoch
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                stopped_early = True
                break

    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model=model, history=history, best_epoch=best_epoch,
                       best_val_dsc=best_val, best_state=best_state,
                       stopped_early=stopped_early)


def _validation_dsc(model: WaveSegNet, samples: List[Sample],
                    cfg: TrainConfig) -> float:
    scores = [dice_score(predict_mask(model, s, cfg), s.vessels)
              for s in samples]
    return float(np.mean(scores))


def save_history(path, history: List[dict]) -> None:
    """History CSV: epoch, lr, train_loss, val_dsc. Floats are written
    with repr so identical runs produce identical bytes."""
    with open(path, "w") as f:
        f.write("epoch,lr,train_loss,val_dsc\n")
        for row in history:
            f.write(f"{row['epoch']},{row['lr']!r},"
                    f"{row['train_loss']!r},{row['val_dsc']!r}\n")


def load_history(path) -> List[dict]:
    rows = []
    with open(path) as f:
        header = f.readline().strip()
        if header != "epoch,lr,train_loss,val_dsc":
            raise ConfigError(f"{path}: unexpected history header {header!r}")
        for line in f:
            e, lr, tl, vd = line.strip().split(",")
            rows.append({"epoch": int(e), "lr": float(lr),
                         "train_loss": float(tl), "val_dsc": float(vd)})
    return rows


def train_config_asdict(cfg: TrainConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


def _coerce(d: dict, cls, what: str):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {what} field '{sorted(unknown)[0]}'")
    kwargs = dict(d)
    for key in ("patch", "overlap"):
        if key in kwargs and isinstance(kwargs[key], (list, tuple)):
            kwargs[key] = tuple(int(v) for v in kwargs[key])
    return cls(**kwargs)


def configs_from_dict(d: dict) -> Tuple[NetworkConfig, LossConfig, TrainConfig]:
    """Parse {"network": {...}, "loss": {...}, "train": {...}} with strict
    field checking; absent sections fall back to defaults."""
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(d) - {"network", "loss", "train"}
    if unknown:
        raise ConfigError(f"unknown config section '{sorted(unknown)[0]}'")
    net = _coerce(d.get("network", {}), NetworkConfig, "network")
    net.validate()
    loss = _coerce(d.get("loss", {}), LossConfig, "loss")
    tr = _coerce(d.get("train", {}), TrainConfig, "train")
    return net, loss, tr


def configs_to_dict(net: NetworkConfig, loss: LossConfig, tr: TrainConfig) -> dict:
    return {
        "network": {f.name: getattr(net, f.name) for f in fields(net)},
        "loss": {f.name: getattr(loss, f.name) for f in fields(loss)},
        "train": train_config_asdict(tr),
    }

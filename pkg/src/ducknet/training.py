"""Training loop, evaluation and single-image prediction."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .datapipe.augment import AugmentConfig, augment, sample_rng
from .datapipe.dataset import Sample, resize_sample, stack
from .datapipe.imageio import read_image, read_mask, to_uint8, write_mask, write_rgb_u8
from .datapipe.lanczos import lanczos_resize, nearest_resize
from .metrics import MetricsReport, confusion_counts, dice, dice_loss_soft
from .network import Network, NetSpec, build_network, checkpoint_bytes
from .tensorcore import Mode, NumericalError, RmspropState, Tensor4, rmsprop_update
from .util import atomic_write


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 4
    epochs: int = 600
    input_size: tuple[int, int] = (352, 352)
    seed: int = 0
    filters: int = 17
    block: str = "duck"
    depth: int = 5
    augment: bool = True
    smooth: float = 1e-6
    threshold: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (self.lr > 0 and self.smooth > 0):
            raise ValueError("lr and smooth must be positive")
        if min(self.input_size) < 1 or self.filters < 1 or self.depth < 1:
            raise ValueError("input_size, filters and depth must be positive")

    def net_spec(self) -> NetSpec:
        return NetSpec(filters=self.filters, depth=self.depth, input_size=self.input_size,
                       block_kind=self.block)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_dice: float

    def line(self) -> str:
        return f"{self.epoch} {self.train_loss:.8f} {self.val_dice:.8f}"


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_epoch: int
    best_val_dice: float
    best_state: list[tuple[str, np.ndarray]]
    optimizer: RmspropState
    final_state: list[tuple[str, np.ndarray]] = field(default_factory=list)

    def history_text(self) -> str:
        return "".join(r.line() + "\n" for r in self.history)


def snapshot(net: Network) -> list[tuple[str, np.ndarray]]:
    return [(k, a.copy()) for k, a in net.store.named_arrays()]


def restore(net: Network, state: list[tuple[str, np.ndarray]]) -> None:
    for (k, a), (k2, b) in zip(net.store.named_arrays(), state):
        if k != k2 or a.shape != b.shape:
            raise ValueError(f"state entry {k2} {b.shape} does not fit {k} {a.shape}")
        a[...] = b


def optimizer_entries(net: Network, opt: RmspropState) -> list[tuple[str, np.ndarray]]:
    names = list(net.store.params)
    return [(f"rmsprop.{n}", sq) for n, sq in zip(names, opt.sq_avg)]


def train_step(net: Network, images: np.ndarray, masks: np.ndarray, opt: RmspropState,
               smooth: float = 1e-6, where: str = "") -> float:
    """One forward/backward/update on a batch; returns the loss before the update."""
    net.store.zero_grad()
    out = net.forward(Tensor4(images), Mode.TRAIN)
    loss = dice_loss_soft(out, masks, smooth)
    value = loss.item()
    if not math.isfinite(value):
        raise NumericalError(f"non-finite loss {value}{' at ' + where if where else ''}")
    loss.backward()
    try:
        rmsprop_update(net.store.trainable(), opt)
    except NumericalError as exc:
        raise NumericalError(f"{exc}{' at ' + where if where else ''}") from None
    return value


def batch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def mean_dice(net: Network, samples: Sequence[Sample], threshold: float = 0.5,
              batch_size: int = 4) -> float:
    probs = predict_batch(net, samples, batch_size)
    return math.fsum(dice(confusion_counts(p, s.mask[0], threshold))
                     for p, s in zip(probs, samples)) / len(samples)


def predict_batch(net: Network, samples: Sequence[Sample], batch_size: int = 4) -> list[np.ndarray]:
    out = []
    for k in range(0, len(samples), batch_size):
        images, _ = stack(list(samples[k:k + batch_size]))
        out.extend(net.forward(Tensor4(images), Mode.INFER).data)
    return out


def train(net: Network, train_set: Sequence[Sample], val_set: Sequence[Sample],
          cfg: TrainConfig, aug: AugmentConfig | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Train ``net`` in place; keeps the weights of the best-validation-Dice epoch.

    Without a validation set the selection rule has nothing to compare, so the
    recorded Dice is NaN and the best state is the final one.
    """
    if not train_set:
        raise ValueError("training split is empty")
    aug = aug or AugmentConfig()
    opt = RmspropState(lr=cfg.lr)
    history: list[EpochRecord] = []
    best_state, best_epoch, best_dice = None, 0, -math.inf
    n = len(train_set)
    for epoch in range(1, cfg.epochs + 1):
        if cfg.augment:
            epoch_set = [augment(s, aug, sample_rng(cfg.seed, epoch, s.id)) for s in train_set]
        else:
            epoch_set = list(train_set)
        order = batch_order(n, cfg.seed, epoch)
        losses = []
        for step, k in enumerate(range(0, n, cfg.batch_size)):
            images, masks = stack([epoch_set[j] for j in order[k:k + cfg.batch_size]])
            losses.append(train_step(net, images, masks, opt, cfg.smooth,
                                     where=f"epoch {epoch} step {step}"))
        val = mean_dice(net, val_set, cfg.threshold, cfg.batch_size) if val_set else math.nan
        rec = EpochRecord(epoch, math.fsum(losses) / len(losses), val)
        history.append(rec)
        if on_epoch:
            on_epoch(rec)
        if val_set and val > best_dice:
            best_dice, best_epoch, best_state = val, epoch, snapshot(net)
    final = snapshot(net)
    if best_state is None:
        best_state, best_epoch, best_dice = final, cfg.epochs, math.nan
    return TrainResult(history, best_epoch, best_dice, best_state, opt, final)


def write_training_outputs(net: Network, result: TrainResult, ckpt_path, history_path,
                           final_path=None) -> None:
    """Best-epoch checkpoint at ``ckpt_path``; final weights plus optimizer state at ``final_path``."""
    final = snapshot(net)
    restore(net, result.best_state)
    best_blob = checkpoint_bytes(net)
    restore(net, final)
    if final_path is not None:
        atomic_write(final_path, checkpoint_bytes(net, optimizer_entries(net, result.optimizer)))
    atomic_write(history_path, result.history_text())
    atomic_write(ckpt_path, best_blob)


def prepare(samples: Sequence[Sample], size: tuple[int, int]) -> list[Sample]:
    return [resize_sample(s, size) for s in samples]


def evaluate(net: Network, samples: Sequence[Sample], threshold: float = 0.5,
             batch_size: int = 4) -> MetricsReport:
    """Per-image metrics at the network's input resolution, with mean, SD and pooled counts."""
    if not samples:
        raise ValueError("evaluation split is empty")
    samples = prepare(samples, net.spec.input_size)
    probs = predict_batch(net, samples, batch_size)
    counts = [confusion_counts(p, s.mask[0], threshold) for p, s in zip(probs, samples)]
    return MetricsReport.from_counts([s.id for s in samples], counts)


def predict_mask(net: Network, image: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Binary (h, w) mask for a (3, h, w) image at its own resolution."""
    h, w = image.shape[1:]
    size = net.spec.input_size
    x = np.stack([lanczos_resize(ch, size) for ch in image]) if (h, w) != size else image
    x = np.clip(x, 0, 1).astype(np.float32)[None]
    prob = net.forward(Tensor4(x), Mode.INFER).data[0, 0]
    fg = (prob >= threshold).astype(np.float32)
    return nearest_resize(fg, (h, w)) >= 0.5


def predict(net: Network, image_path, out_path, threshold: float = 0.5, panel_path=None,
            gt_path=None) -> np.ndarray:
    """Write a {0, 255} mask the size of the input; optionally an image | truth | prediction panel."""
    image = read_image(image_path)
    mask = predict_mask(net, image, threshold)
    write_mask(out_path, mask)
    if panel_path is not None:
        h, w = mask.shape
        gt = read_mask(gt_path) if gt_path is not None else np.zeros((h, w))
        if gt.shape != (h, w):
            raise ValueError(f"ground-truth mask {gt.shape} does not match image {(h, w)}")
        gray = lambda m: np.repeat(to_uint8(np.asarray(m, dtype=np.float64))[None], 3, axis=0)
        panel = np.concatenate([to_uint8(image), gray(gt), gray(mask)], axis=2)
        write_rgb_u8(panel_path, np.ascontiguousarray(panel.transpose(1, 2, 0)))
    return mask


@dataclass(frozen=True)
class OverfitOutcome:
    seed: int
    mean_dice: float
    soft_loss: float
    last_train_loss: float

    def passed(self, dice_min: float = 0.95, loss_max: float = 0.05) -> bool:
        return self.mean_dice >= dice_min and self.soft_loss <= loss_max

    def line(self) -> str:
        return (f"seed {self.seed}: mean dice {self.mean_dice:.4f}, soft loss {self.soft_loss:.4f}, "
                f"last train-mode loss {self.last_train_loss:.4f}")


def overfit_trial(samples: Sequence[Sample], seed: int, epochs: int = 200, filters: int = 8,
                  on_epoch: Callable[[EpochRecord], None] | None = None) -> OverfitOutcome:
    """Fit ``samples`` with no augmentation and score the same samples in inference mode."""
    size = samples[0].size
    cfg = TrainConfig(epochs=epochs, filters=filters, input_size=size, seed=seed, augment=False)
    net = build_network(cfg.net_spec(), seed=seed)
    result = train(net, samples, [], cfg, on_epoch=on_epoch)
    probs = np.stack(predict_batch(net, samples, cfg.batch_size))
    _, masks = stack(list(samples))
    dices = [dice(confusion_counts(p, s.mask[0], cfg.threshold)) for p, s in zip(probs, samples)]
    soft = dice_loss_soft(Tensor4(probs), masks, cfg.smooth).item()
    return OverfitOutcome(seed, math.fsum(dices) / len(dices), soft, result.history[-1].train_loss)

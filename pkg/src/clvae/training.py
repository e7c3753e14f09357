"""Siamese self-supervised training: KL + reconstruction + contrastive."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .model import CLVAE, LatentDistribution, ModelConfig, save_checkpoint
from .patching import TimeSeriesStack, augment_batch, default_padding, gather_patches, pad_reflect

logger = logging.getLogger(__name__)

HISTORY_FIELDS = ["epoch", "lr", "kl", "recon", "contrastive", "total"]


@dataclass
class LossWeights:
    alpha: float = 0.1  # KL
    beta: float = 0.7  # reconstruction
    margin: float = 1.0  # contrastive hinge margin, normalized-intensity units

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.alpha + self.beta > 1 + 1e-12:
            raise ValueError(f"alpha + beta must not exceed 1, got {self.alpha + self.beta}")
        if self.margin <= 0:
            raise ValueError("margin must be positive")

    @property
    def gamma(self) -> float:
        return 1.0 - self.alpha - self.beta


@dataclass
class TrainSchedule:
    initial_lr: float = 1e-3
    min_lr: float = 1e-5
    plateau_patience: int = 2
    stop_patience: int = 4
    max_epochs: int = 10
    batch_size: int = 512
    improvement_tolerance: float = 1e-3
    decay_factor: float = 0.1
    pairs_per_epoch: int = 4096
    augment: bool = True

    def __post_init__(self):
        if not self.min_lr < self.initial_lr:
            raise ValueError("min_lr must be below initial_lr")
        if self.plateau_patience < 1 or self.stop_patience < 1:
            raise ValueError("patience values must be >= 1")
        if self.max_epochs < 1 or self.batch_size < 1 or self.pairs_per_epoch < 1:
            raise ValueError("max_epochs, batch_size and pairs_per_epoch must be >= 1")
        if not 0 < self.decay_factor < 1:
            raise ValueError("decay_factor must be in (0, 1)")


# -- loss terms -------------------------------------------------------------------

def kl_loss(dist: LatentDistribution) -> torch.Tensor:
    """KL(q || N(0, I)) summed over latent dims, averaged over the batch."""
    lv, mu = dist.log_variance, dist.mean
    return (-0.5 * torch.sum(1 + lv - mu**2 - torch.exp(lv), dim=-1)).mean()


def recon_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return torch.mean((x - x_hat) ** 2)


def contrastive_loss(x_hat1: torch.Tensor, x_hat2: torch.Tensor, margin: float = 1.0) -> torch.Tensor:
    """Negative-pair hinge ``max(0, margin - rmse)^2``, rmse per sample, batch mean.

    A single patch (no batch axis) is accepted too.
    """
    if x_hat1.shape != x_hat2.shape:
        raise ValueError(f"shape mismatch: {tuple(x_hat1.shape)} vs {tuple(x_hat2.shape)}")
    d = (x_hat1 - x_hat2) ** 2
    mse = d.reshape(d.shape[0], -1).mean(dim=1) if d.dim() == 5 else d.mean().reshape(1)
    # clamp keeps the sqrt gradient finite at identical inputs
    rmse = torch.sqrt(mse.clamp_min(1e-30))
    return (torch.clamp(margin - rmse, min=0.0) ** 2).mean()


def total_loss(p1: torch.Tensor, p2: torch.Tensor, model: CLVAE,
               noise: tuple[torch.Tensor, torch.Tensor],
               weights: LossWeights | None = None) -> tuple[torch.Tensor, dict]:
    """Weighted objective over two patch batches sharing one model.

    Returns the total and a dict of the (unweighted) ``kl``, ``recon`` and
    ``contrastive`` terms, where kl and recon are summed over both streams.
    """
    w = weights or LossWeights()
    x1, d1 = model(p1, noise[0])
    x2, d2 = model(p2, noise[1])
    kl = kl_loss(d1) + kl_loss(d2)
    rec = recon_loss(p1, x1) + recon_loss(p2, x2)
    con = contrastive_loss(x1, x2, w.margin)
    total = w.alpha * kl + w.beta * rec + w.gamma * con
    return total, {"kl": kl, "recon": rec, "contrastive": con}


# -- data -----------------------------------------------------------------------------

class PairSampler:
    """Draws patch pairs from distinct locations of padded pre-event stacks."""

    def __init__(self, stacks: list[TimeSeriesStack], patch_size: int):
        if not stacks:
            raise ValueError("training needs at least one pre-event stack")
        self.patch_size = patch_size
        top, bottom = default_padding(patch_size)
        self.padded = [pad_reflect(s, top, bottom).values for s in stacks]
        self.shapes = [s.spatial_shape for s in stacks]

    def sample_anchors(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Two (n, 3) arrays of (stack, row, col); rows of a pair never share a location."""
        out = []
        for _ in range(2):
            k = rng.integers(len(self.padded), size=n)
            h = np.array([self.shapes[i][0] for i in k])
            w = np.array([self.shapes[i][1] for i in k])
            out.append(np.column_stack([k, rng.integers(h), rng.integers(w)]))
        a, b = out
        clash = (a[:, 1] == b[:, 1]) & (a[:, 2] == b[:, 2])
        while clash.any():
            idx = np.flatnonzero(clash)
            w = np.array([self.shapes[i][1] for i in b[idx, 0]])
            b[idx, 2] = (b[idx, 2] + rng.integers(1, np.maximum(w, 2), size=idx.size)) % w
            clash = (a[:, 1] == b[:, 1]) & (a[:, 2] == b[:, 2])
        return a, b

    def gather(self, anchors: np.ndarray) -> np.ndarray:
        out = np.empty((len(anchors), self.padded[0].shape[0], self.patch_size,
                        self.patch_size, 3), dtype=np.float32)
        for k in np.unique(anchors[:, 0]):
            sel = anchors[:, 0] == k
            out[sel] = gather_patches(self.padded[k], anchors[sel, 1:], self.patch_size)
        return out


# -- schedule ------------------------------------------------------------------------

class PlateauScheduler:
    """Reduce-on-plateau learning rate with early stopping.

    An epoch counts as "no learning" when its loss fails to improve on the
    best so far by at least ``improvement_tolerance`` (relative).
    """

    def __init__(self, schedule: TrainSchedule):
        self.s = schedule
        self.lr = schedule.initial_lr
        self.best = math.inf
        self.since_decay = 0
        self.since_best = 0

    def step(self, loss: float) -> bool:
        """Record one epoch's loss; returns True when training should stop."""
        if loss < self.best - self.s.improvement_tolerance * abs(self.best) or self.best == math.inf:
            self.best = loss
            self.since_decay = self.since_best = 0
            return False
        self.since_decay += 1
        self.since_best += 1
        if self.since_best >= self.s.stop_patience:
            return True
        if self.since_decay >= self.s.plateau_patience:
            self.lr = max(self.lr * self.s.decay_factor, self.s.min_lr)
            self.since_decay = 0
        return False


# -- loop ----------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    lr: float
    kl: float
    recon: float
    contrastive: float
    total: float


@dataclass
class TrainResult:
    model: CLVAE
    history: list[EpochRecord] = field(default_factory=list)
    parameter_count: int = 0

    def write_history_csv(self, path) -> None:
        write_history_csv(self.history, path)


def write_history_csv(history: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        w.writeheader()
        for rec in history:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in asdict(rec).items()})


def read_history_csv(path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        return [EpochRecord(int(r["epoch"]), *(float(r[k]) for k in HISTORY_FIELDS[1:]))
                for r in csv.DictReader(fh)]


def configure_determinism(deterministic: bool = True) -> None:
    if deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def train(stacks: list[TimeSeriesStack], config: ModelConfig | None = None,
          schedule: TrainSchedule | None = None, weights: LossWeights | None = None,
          seed: int = 0, checkpoint_dir=None, history_csv=None,
          deterministic: bool = True) -> TrainResult:
    """Train a fresh model on pre-event stacks; returns it in eval mode."""
    config = config or ModelConfig()
    schedule = schedule or TrainSchedule()
    weights = weights or LossWeights()
    if not stacks:
        raise ValueError("empty training dataset")
    for s in stacks:
        if s.timesteps != config.timesteps:
            raise ValueError(f"stack has {s.timesteps} timesteps, model expects {config.timesteps}")
    configure_determinism(deterministic)
    torch.manual_seed(seed)
    model = CLVAE(config)
    n_params = sum(p.numel() for p in model.parameters() if p.requires_grad)
    logger.info("trainable parameters: %d", n_params)
    optimizer = torch.optim.Adam(model.parameters(), lr=schedule.initial_lr)
    sampler = PairSampler(stacks, config.patch_size)
    rng = np.random.default_rng(seed)
    noise_gen = torch.Generator().manual_seed(seed)
    plateau = PlateauScheduler(schedule)
    result = TrainResult(model, parameter_count=n_params)
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None

    for epoch in range(1, schedule.max_epochs + 1):
        lr = plateau.lr
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        a, b = sampler.sample_anchors(schedule.pairs_per_epoch, rng)
        p1, p2 = sampler.gather(a), sampler.gather(b)
        if schedule.augment:
            p1 = augment_batch(p1, (seed, epoch, 1))
            p2 = augment_batch(p2, (seed, epoch, 2))
        sums = dict.fromkeys(("kl", "recon", "contrastive", "total"), 0.0)
        n_batches = 0
        for start in range(0, len(p1), schedule.batch_size):
            x1 = torch.from_numpy(p1[start:start + schedule.batch_size])
            x2 = torch.from_numpy(p2[start:start + schedule.batch_size])
            if len(x1) < 2:
                continue  # batch norm needs more than one sample
            shape = (len(x1), config.latent_dim)
            noise = (torch.randn(shape, generator=noise_gen), torch.randn(shape, generator=noise_gen))
            optimizer.zero_grad()
            loss, terms = total_loss(x1, x2, model, noise, weights)
            loss.backward()
            optimizer.step()
            sums["total"] += loss.item()
            for k, v in terms.items():
                sums[k] += v.item()
            n_batches += 1
        rec = EpochRecord(epoch, lr, **{k: v / max(n_batches, 1) for k, v in sums.items()})
        result.history.append(rec)
        logger.info("epoch %d lr %.2e total %.5f kl %.4f recon %.5f contrastive %.5f",
                    epoch, lr, rec.total, rec.kl, rec.recon, rec.contrastive)
        if ckpt_dir is not None:
            save_checkpoint(model, ckpt_dir / f"epoch_{epoch:03d}.ckpt", {"epoch": epoch})
        if history_csv is not None:
            write_history_csv(result.history, history_csv)
        if plateau.step(rec.total):
            logger.info("no improvement for %d epochs; stopping", schedule.stop_patience)
            break
    model.eval()
    return result

"""Contrastive window encoder.

A 1D-convolutional base network (three conv blocks, each convolution ->
ReLU -> batch norm -> dropout, then global max pooling over time) feeds
a three-layer fully-connected projection head. The projection output is
the embedding used everywhere downstream. Training minimizes the
normalized temperature-scaled cross entropy over batches of time-aligned
cross-device pairs with SGD and a cosine-decayed learning rate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DegenerateBatch, NonFiniteLoss, NotEnoughPairs, ShapeMismatch
from .pairs import AlignmentIndex, ContrastiveBatch, build_contrastive_batch
from .sensors import SensorKind, Window

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int
    conv_filters: tuple[int, int, int] = (32, 64, 96)
    conv_kernels: tuple[int, int, int] = (24, 16, 8)
    dropout: float = 0.1
    proj_dims: tuple[int, int, int] = (256, 128, 64)

    @property
    def embedding_dim(self) -> int:
        return self.proj_dims[-1]


# slimmer profile for single-core training; same topology
def small_encoder_config(in_channels: int) -> EncoderConfig:
    return EncoderConfig(
        in_channels=in_channels,
        conv_filters=(16, 24, 32),
        conv_kernels=(16, 12, 8),
        proj_dims=(128, 96, 64),
    )


@dataclass
class TrainConfig:
    initial_lr: float = 0.1
    momentum: float = 0.9
    batch_size: int = 64
    temperature: float = 0.1
    max_epochs: int = 200
    convergence_window: int = 10
    convergence_tol: float = 1e-4
    val_fraction: float = 0.15
    # batches per epoch as a multiple of dataset coverage; batches resample
    # keys with replacement across steps, so >1 just sees more pairings
    epoch_oversample: float = 1.0
    seed: int = 0


@dataclass(eq=False)
class Embedding:
    """The wearer embedding of one window plus its source metadata."""

    values: np.ndarray
    user_id: str
    device_id: str
    placement: object
    start_time: float
    sensor_set: frozenset[SensorKind]

    @property
    def dim(self) -> int:
        return len(self.values)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float


@dataclass
class TrainingLog:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf


class WindowEncoder(nn.Module):
    """Conv base + projection head mapping a window to an embedding."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        blocks = []
        prev = config.in_channels
        for filters, kernel in zip(config.conv_filters, config.conv_kernels):
            blocks += [
                nn.Conv1d(prev, filters, kernel),
                nn.ReLU(),
                nn.BatchNorm1d(filters),
                nn.Dropout(config.dropout),
            ]
            prev = filters
        self.blocks = nn.Sequential(*blocks)
        p0, p1, p2 = config.proj_dims
        self.projection = nn.Sequential(
            nn.Linear(prev, p0), nn.ReLU(), nn.Linear(p0, p1), nn.ReLU(), nn.Linear(p1, p2)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3 or x.shape[1] != self.config.in_channels:
            raise ShapeMismatch(
                f"expected (batch, {self.config.in_channels}, samples), got {tuple(x.shape)}"
            )
        h = self.blocks(x)
        h = h.amax(dim=2)  # global max pool over time
        return self.projection(h)


def cosine_lr(epoch: int, config: TrainConfig) -> float:
    """lr(e) = 0.5 * lr0 * (1 + cos(pi * e / max_epochs)), clamped at the end."""
    e = min(epoch, config.max_epochs)
    return 0.5 * config.initial_lr * (1.0 + math.cos(math.pi * e / config.max_epochs))


def nt_xent_loss(embeddings: torch.Tensor, temperature: float) -> torch.Tensor:
    """Contrastive loss over 2B embeddings with positives at i <-> i+B.

    Rows are L2-normalized, so similarity is cosine. Every other row in
    the batch acts as a negative.

    Raises:
        DegenerateBatch: fewer than two pairs, or an odd row count.
    """
    n = embeddings.shape[0]
    if n < 4 or n % 2 != 0:
        raise DegenerateBatch(f"need 2B rows with B >= 2, got {n}")
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    b = n // 2
    z = F.normalize(embeddings, dim=1)
    sim = z @ z.T / temperature
    sim.fill_diagonal_(float("-inf"))
    targets = (torch.arange(n, device=z.device) + b) % n
    return F.cross_entropy(sim, targets)


def windows_to_tensor(windows: list[Window], dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.stack([w.data for w in windows])).to(dtype)


def batch_tensor(batch: ContrastiveBatch) -> torch.Tensor:
    return windows_to_tensor(batch.anchors + batch.positives)


def train_encoder(
    index: AlignmentIndex,
    enc_config: EncoderConfig,
    train_config: TrainConfig,
    rng: np.random.Generator,
    val_index: AlignmentIndex | None = None,
) -> tuple[WindowEncoder, TrainingLog]:
    """Train an encoder on an alignment index of one sensor set.

    Each epoch draws fresh batches from the training keys while
    validation batches stay fixed; the checkpoint with the best
    validation loss wins. With ``val_index`` given (e.g. windows of
    users held out of ``index``), validation measures alignment on
    unseen wearers, which is the quantity deployment cares about;
    otherwise a random key split of ``index`` is used. Deterministic
    for fixed seeds when single-threaded.

    Raises:
        NotEnoughPairs: too few aligned keys for one batch.
        NonFiniteLoss: training diverged.
    """
    valid = sorted(k for k, entry in index.items() if len(entry) >= 2)
    if len(valid) < train_config.batch_size:
        raise NotEnoughPairs(
            f"need {train_config.batch_size} aligned keys, have {len(valid)}"
        )
    torch.manual_seed(train_config.seed)
    model = WindowEncoder(enc_config)

    if val_index is None:
        n_val = int(round(len(valid) * train_config.val_fraction))
        perm = rng.permutation(len(valid))
        val_keys = {valid[i] for i in perm[:n_val]}
        train_index = {k: v for k, v in index.items() if k not in val_keys}
        val_index = {k: v for k, v in index.items() if k in val_keys}
    else:
        train_index = index

    val_batches = []
    n_val_keys = len(val_index)
    val_b = min(train_config.batch_size, n_val_keys)
    if val_b >= 2:
        # several fixed batches (device pairs re-rolled) so checkpoint
        # selection is not hostage to one batch's noise
        n_val_batches = max(3, n_val_keys // val_b)
        for _ in range(n_val_batches):
            val_batches.append(batch_tensor(build_contrastive_batch(val_index, val_b, rng)))

    opt = torch.optim.SGD(
        model.parameters(), lr=train_config.initial_lr, momentum=train_config.momentum
    )
    n_train = len([k for k, e in train_index.items() if len(e) >= 2])
    batch_size = min(train_config.batch_size, n_train)
    steps = max(1, int(round(train_config.epoch_oversample * n_train / batch_size)))

    log = TrainingLog()
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    stale = 0
    for epoch in range(train_config.max_epochs):
        lr = cosine_lr(epoch, train_config)
        for group in opt.param_groups:
            group["lr"] = lr
        model.train()
        train_loss = 0.0
        for _ in range(steps):
            batch = build_contrastive_batch(train_index, batch_size, rng)
            x = batch_tensor(batch)
            loss = nt_xent_loss(model(x), train_config.temperature)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss.item()} at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            train_loss += loss.item()
        train_loss /= steps

        if val_batches:
            model.eval()
            with torch.no_grad():
                val_loss = float(
                    np.mean(
                        [nt_xent_loss(model(x), train_config.temperature).item() for x in val_batches]
                    )
                )
        else:
            val_loss = train_loss
        log.epochs.append(EpochStats(epoch, lr, train_loss, val_loss))

        if val_loss < log.best_val_loss - train_config.convergence_tol:
            log.best_val_loss = val_loss
            log.best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            stale = 0
        else:
            stale += 1
            if stale >= train_config.convergence_window:
                logger.info("early stop at epoch %d (best %d)", epoch, log.best_epoch)
                break

    model.load_state_dict(best_state)
    model.eval()
    return model, log


def embed_array(model: WindowEncoder, windows: list[Window], batch_size: int = 256) -> np.ndarray:
    """Embed windows in inference mode; rows follow input order."""
    model.eval()
    out = []
    with torch.no_grad():
        for lo in range(0, len(windows), batch_size):
            x = windows_to_tensor(windows[lo : lo + batch_size])
            out.append(model(x).numpy())
    return np.concatenate(out) if out else np.empty((0, model.config.embedding_dim), np.float32)


def embed_window(model: WindowEncoder, window: Window) -> Embedding:
    values = embed_array(model, [window])[0]
    return Embedding(
        values=values,
        user_id=window.user_id,
        device_id=window.device_id,
        placement=window.placement,
        start_time=window.start_time,
        sensor_set=window.sensor_set,
    )


def gradient_check(
    model: WindowEncoder,
    x: torch.Tensor,
    temperature: float = 0.5,
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs in float64 with dropout disabled (batch norm stays in batch
    mode so the loss is a deterministic function of the parameters).
    Intended for small models; every parameter coordinate is checked.
    """
    model = model.double()
    model.train()
    for module in model.modules():
        if isinstance(module, nn.Dropout):
            module.p = 0.0
    x = x.double()

    def loss_value() -> torch.Tensor:
        return nt_xent_loss(model(x), temperature)

    loss = loss_value()
    model.zero_grad()
    loss.backward()

    worst = 0.0
    with torch.no_grad():
        for param in model.parameters():
            grad = param.grad
            flat = param.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_value().item()
                flat[i] = orig - step
                down = loss_value().item()
                flat[i] = orig
                fd = (up - down) / (2 * step)
                an = grad.view(-1)[i].item()
                denom = max(abs(fd), abs(an))
                if denom > 1e-10:
                    worst = max(worst, abs(fd - an) / denom)
    return worst

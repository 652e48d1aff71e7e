"""Spatial-latent VAE: DenseNet encoder, stereo-conditioned decoder, ELBO.

The encoder maps a 5-channel magnitude spectrogram to the parameters of a
J-dimensional Gaussian over the spatial latent. The decoder receives a
stereo magnitude spectrogram plus the latent broadcast over every
time-frequency bin and emits a 5-channel magnitude spectrogram.

Magnitudes are compressed as log(1 + x/eps) on the way in and expanded on
the way out; the reconstruction likelihood (unit-variance Gaussian, i.e.
MSE) is taken in the compressed domain.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn


@dataclass(frozen=True)
class ArchConfig:
    latent_dim: int = 50  # J
    growth: int = 20  # conv channels added per dense layer
    dense_blocks: int = 5
    layers_per_block: int = 5
    freq_bins: int = 513
    frames: int = 384
    compress_eps: float = 1e-3

    def __post_init__(self):
        if self.latent_dim < 1 or self.growth < 1:
            raise ValueError("latent_dim and growth must be positive")
        if self.dense_blocks < 1 or self.layers_per_block < 1:
            raise ValueError("block counts must be positive")

    @property
    def transitions(self) -> int:
        return self.dense_blocks - 1

    def to_dict(self) -> dict:
        return asdict(self)


# full-scale architecture as trained for real runs
FULL_ARCH = ArchConfig()
# desk-scale architecture matching TOY_PROFILE spectrograms
TOY_ARCH = ArchConfig(
    latent_dim=8, growth=8, dense_blocks=3, layers_per_block=2,
    freq_bins=129, frames=96,
)
# minimal shapes for the finite-difference gradient check
GRADCHECK_ARCH = ArchConfig(
    latent_dim=3, growth=2, dense_blocks=2, layers_per_block=2,
    freq_bins=9, frames=8,
)


@dataclass(frozen=True)
class LatentCode:
    mu: np.ndarray
    logvar: np.ndarray
    h: np.ndarray
    eps: np.ndarray


class DenseBlock(nn.Module):
    """Stack of 3x3 convs, each seeing the concat of all previous outputs."""

    def __init__(self, in_channels: int, growth: int, layers: int):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv2d(in_channels + i * growth, growth, 3, padding=1)
            for i in range(layers)
        )
        self.out_channels = in_channels + layers * growth

    def forward(self, x):
        feats = [x]
        for conv in self.convs:
            feats.append(torch.relu(conv(torch.cat(feats, dim=1))))
        return torch.cat(feats, dim=1)


def _transition(in_ch: int, stride: int) -> nn.Conv2d:
    # 1x1 conv; stride 2 halves spatial dims (ceil) in the encoder,
    # stride 1 keeps the decoder at full resolution
    return nn.Conv2d(in_ch, max(in_ch // 2, 4), 1, stride=stride)


class _DenseStack(nn.Module):
    def __init__(self, in_channels: int, cfg: ArchConfig, stride: int):
        super().__init__()
        mods = []
        ch = in_channels
        for i in range(cfg.dense_blocks):
            block = DenseBlock(ch, cfg.growth, cfg.layers_per_block)
            mods.append(block)
            ch = block.out_channels
            if i < cfg.dense_blocks - 1:
                tr = _transition(ch, stride)
                mods.append(tr)
                ch = tr.out_channels
        self.stack = nn.Sequential(*mods)
        self.out_channels = ch

    def forward(self, x):
        out = x
        for mod in self.stack:
            out = mod(out)
            if isinstance(mod, nn.Conv2d):
                out = torch.relu(out)
        return out


class SpatialVAE(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = _DenseStack(5, cfg, stride=2)
        self.enc_head = nn.Linear(self.encoder.out_channels, 2 * cfg.latent_dim)
        self.decoder = _DenseStack(2 + cfg.latent_dim, cfg, stride=1)
        self.dec_head = nn.Conv2d(self.decoder.out_channels, 5, 1)

    def compress(self, x):
        return torch.log1p(x / self.cfg.compress_eps)

    def expand(self, y):
        return self.cfg.compress_eps * torch.expm1(y)

    def encode(self, x5):
        """Raw 5-channel magnitudes (B, 5, F, T) -> (mu, logvar), each (B, J)."""
        self._check_shape(x5, 5)
        feats = self.encoder(self.compress(x5))
        pooled = feats.mean(dim=(2, 3))
        out = self.enc_head(pooled)
        return out.chunk(2, dim=-1)

    def decode_compressed(self, stereo, h):
        """Decoder output in the compressed domain (nonnegative)."""
        self._check_shape(stereo, 2)
        b, _, f, t = stereo.shape
        if h.shape != (b, self.cfg.latent_dim):
            raise ValueError(f"latent shape {tuple(h.shape)} does not match config")
        tiled = h[:, :, None, None].expand(b, self.cfg.latent_dim, f, t)
        x = torch.cat([self.compress(stereo), tiled], dim=1)
        return nn.functional.softplus(self.dec_head(self.decoder(x)))

    def decode(self, stereo, h):
        """Raw 5-channel magnitudes (B, 5, F, T), nonnegative."""
        return self.expand(self.decode_compressed(stereo, h))

    def _check_shape(self, x, channels):
        if x.ndim != 4 or x.shape[1:] != (channels, self.cfg.freq_bins, self.cfg.frames):
            raise ValueError(
                f"expected (B, {channels}, {self.cfg.freq_bins}, {self.cfg.frames}), "
                f"got {tuple(x.shape)}"
            )


def init_params(cfg: ArchConfig, seed: int = 0) -> SpatialVAE:
    """Build a model with fan-in-scaled (Kaiming) init, deterministic under seed."""
    model = SpatialVAE(cfg)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                fan_in = m.weight[0].numel()
                std = math.sqrt(2.0 / fan_in)
                m.weight.normal_(0.0, std, generator=gen)
                m.bias.zero_()
    return model


def reparameterize(mu, logvar, eps):
    """h = mu + exp(logvar / 2) * eps."""
    return mu + torch.exp(0.5 * logvar) * eps


def kl_divergence(mu, logvar, free_bits: float = 0.0):
    """KL(N(mu, diag exp(logvar)) || N(0, I)), summed over latent dims.

    free_bits > 0 floors each dimension's batch-mean KL at that many nats
    before summing, which removes the optimizer's incentive to prune whole
    dimensions to zero (the classic posterior-collapse failure mode).
    """
    per_dim = -0.5 * (1.0 + logvar - mu**2 - torch.exp(logvar))
    if free_bits > 0.0:
        floored = per_dim.mean(dim=0).clamp(min=free_bits)
        return floored.sum() * mu.shape[0]
    return per_dim.sum()


def recon_loss(pred, target):
    """Mean squared error over all bins."""
    if pred.shape != target.shape:
        raise ValueError("shape mismatch")
    return torch.mean((pred - target) ** 2)


def elbo_loss(model: SpatialVAE, enc_input, dec_stereo, target, beta: float,
              generator: torch.Generator = None, free_bits: float = 0.0):
    """Negative ELBO (to minimize): compressed-domain MSE + beta * KL.

    Inputs are raw-magnitude tensors (B, C, F, T). Returns (loss, LatentCode).
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    mu, logvar = model.encode(enc_input)
    eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    h = reparameterize(mu, logvar, eps)
    pred_c = model.decode_compressed(dec_stereo, h)
    loss = recon_loss(pred_c, model.compress(target))
    loss = loss + beta * kl_divergence(mu, logvar, free_bits) / mu.shape[0]
    code = LatentCode(
        mu.detach().numpy().copy(), logvar.detach().numpy().copy(),
        h.detach().numpy().copy(), eps.numpy().copy(),
    )
    return loss, code


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.005
    epochs: int = 10
    beta: float = 1.0
    # anneal beta linearly from 0 over this many epochs; 0 disables.
    # Keeps latent dimensions in use early so they don't collapse before
    # the decoder learns to read them.
    beta_warmup_epochs: int = 0
    # per-dimension KL floor in nats; 0 disables. See kl_divergence.
    free_bits: float = 0.0
    batch_size: int = 8
    seed: int = 0
    patience: int = 10
    checkpoint_dir: str = None
    resume_from: str = None  # path to an epochNNNN.u5ck written by train()


def _batches(n, batch_size, order):
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def train(model: SpatialVAE, train_examples, val_examples=None,
          cfg: TrainConfig = TrainConfig()) -> dict:
    """Adam training loop; returns {"train": [...], "val": [...]} mean losses.

    Deterministic under cfg.seed for a fixed thread count. Writes a
    checkpoint per epoch when cfg.checkpoint_dir is set. Aborts on NaN loss.
    """
    if not train_examples:
        raise ValueError("empty training set")
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)

    start_epoch = 0
    if cfg.resume_from:
        resumed, _ = load_checkpoint(cfg.resume_from)
        model.load_state_dict(resumed.state_dict())
        side = torch.load(
            Path(cfg.resume_from).with_suffix(".resume.pt"), weights_only=False
        )
        opt.load_state_dict(side["optimizer"])
        gen.set_state(side["rng_state"])
        start_epoch = side["epoch"] + 1

    def to_tensors(ex):
        return (
            torch.from_numpy(np.ascontiguousarray(ex.enc_input)).float(),
            torch.from_numpy(np.ascontiguousarray(ex.dec_stereo)).float(),
        )

    train_t = [to_tensors(ex) for ex in train_examples]
    val_t = [to_tensors(ex) for ex in val_examples] if val_examples else []

    history = {"train": [], "val": []}
    best_val, bad_epochs = float("inf"), 0
    for epoch in range(start_epoch, cfg.epochs):
        if cfg.beta_warmup_epochs > 0:
            beta_t = cfg.beta * min(1.0, (epoch + 1) / cfg.beta_warmup_epochs)
        else:
            beta_t = cfg.beta
        model.train()
        order = torch.randperm(len(train_t), generator=gen).tolist()
        epoch_losses = []
        for batch_idx in _batches(len(train_t), cfg.batch_size, order):
            enc = torch.stack([train_t[i][0] for i in batch_idx])
            dec = torch.stack([train_t[i][1] for i in batch_idx])
            loss, _ = elbo_loss(model, enc, dec, enc, beta_t, gen,
                                free_bits=cfg.free_bits)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.detach()))
        history["train"].append(float(np.mean(epoch_losses)))

        if val_t:
            model.eval()
            with torch.no_grad():
                val_losses = []
                for enc, dec in val_t:
                    mu, logvar = model.encode(enc[None])
                    pred_c = model.decode_compressed(dec[None], mu)
                    vl = recon_loss(pred_c, model.compress(enc[None]))
                    vl = vl + beta_t * kl_divergence(mu, logvar, cfg.free_bits)
                    val_losses.append(float(vl))
            val_loss = float(np.mean(val_losses))
            history["val"].append(val_loss)
        else:
            val_loss = history["train"][-1]

        if cfg.checkpoint_dir:
            ckpt = Path(cfg.checkpoint_dir) / f"epoch{epoch:04d}.u5ck"
            save_checkpoint(
                ckpt, model, {"epoch": epoch, "train_loss": history["train"][-1]}
            )
            # side file so training can resume bit-identically
            torch.save(
                {"optimizer": opt.state_dict(), "rng_state": gen.get_state(),
                 "epoch": epoch},
                ckpt.with_suffix(".resume.pt"),
            )
        if val_loss < best_val - 1e-12:
            best_val, bad_epochs = val_loss, 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                break
    return history


_CKPT_MAGIC = b"U5CK"


def config_fingerprint(cfg: ArchConfig) -> str:
    return hashlib.sha256(
        json.dumps(cfg.to_dict(), sort_keys=True).encode()
    ).hexdigest()[:16]


def save_checkpoint(path, model: SpatialVAE, meta: dict = None) -> None:
    """Little-endian float32 tensors behind a JSON header."""
    state = model.state_dict()
    names = sorted(state)
    header = {
        "arch": model.cfg.to_dict(),
        "fingerprint": config_fingerprint(model.cfg),
        "tensors": [{"name": n, "shape": list(state[n].shape)} for n in names],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for n in names:
            f.write(state[n].numpy().astype("<f4").tobytes())


def load_checkpoint(path):
    """Returns (model, meta). Fails on fingerprint/shape mismatch."""
    with open(path, "rb") as f:
        if f.read(4) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen))
        cfg = ArchConfig(**header["arch"])
        if header["fingerprint"] != config_fingerprint(cfg):
            raise ValueError(f"{path}: config fingerprint mismatch")
        model = SpatialVAE(cfg)
        state = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(4 * count), dtype="<f4").reshape(shape)
            state[entry["name"]] = torch.from_numpy(data.copy())
        model.load_state_dict(state)
    model.eval()
    return model, header["meta"]

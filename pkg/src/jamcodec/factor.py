"""Factorized VAE on small spectrogram images, with latent classifier heads.

A convolutional VAE is trained with the reconstruction + KL objective plus a
total-correlation term estimated by a discriminator that tells joint latents
from dimension-wise permuted ones. Training alternates one VAE update and one
discriminator update per batch, with separate Adam optimizers. Frozen models
feed latent classifier heads (1-3 linear layers with ReLU or batch
normalization in between) over the mu / mu+logvar / sampled-z sources.
"""

from dataclasses import dataclass, field
import csv
import math

import numpy as np

from . import features as feat
from . import signals
from .errors import InvalidSpecError, ShapeError, TrainingDivergedError
from .nn import (
    AdamState,
    Dense,
    Reshape,
    _act,
    _act_grad,
    _kaiming_uniform,
    adam_step,
    gaussian_kl,
    mse_loss,
)
from .signals import derived_rng

LOGVAR_CLAMP = 10.0

SMALL_CONV = "small_conv"
DEEP_RESIDUAL = "deep_residual"

SOURCE_MU = "mu"
SOURCE_MULOGVAR = "mulogvar"
SOURCE_REP = "rep"
INTER_RELU = "relu"
INTER_BATCH_NORM = "batch_norm"


def _conv2d_geometry(h, w, kernel, stride):
    out_h, out_w = -(-h // stride), -(-w // stride)
    pad_h = max(0, (out_h - 1) * stride + kernel - h)
    pad_w = max(0, (out_w - 1) * stride + kernel - w)
    top, left = pad_h // 2, pad_w // 2
    return out_h, out_w, (top, pad_h - top, left, pad_w - left)


class Conv2d:
    """2-D convolution over (batch, height, width, channels), 'same' padding."""

    kind = "conv2d"

    def __init__(self, in_ch, out_ch, kernel=3, stride=1, activation="relu", rng=None):
        self.in_ch, self.out_ch, self.kernel, self.stride = in_ch, out_ch, kernel, stride
        self.activation = activation
        rng = rng or np.random.default_rng(0)
        self.w = _kaiming_uniform(rng, in_ch * kernel * kernel, (kernel, kernel, in_ch, out_ch))
        self.b = np.zeros(out_ch, dtype=np.float64)
        self.grads = [np.zeros(self.w.shape, dtype=np.float64), np.zeros(self.b.shape, dtype=np.float64)]
        self._cache = None

    @property
    def params(self):
        return [self.w, self.b]

    def set_params(self, arrays):
        self.w, self.b = arrays[0].astype(np.float64), arrays[1].astype(np.float64)

    def _tap_view(self, arr, ti, tj, out_h, out_w):
        s = self.stride
        return arr[:, ti : ti + (out_h - 1) * s + 1 : s, tj : tj + (out_w - 1) * s + 1 : s, :]

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[3] != self.in_ch:
            raise ShapeError(f"conv2d expects (B, H, W, {self.in_ch}), got {x.shape}")
        batch, h, w, _ = x.shape
        out_h, out_w, pads = _conv2d_geometry(h, w, self.kernel, self.stride)
        xp = np.pad(x, ((0, 0), (pads[0], pads[1]), (pads[2], pads[3]), (0, 0)))
        # one strided view per kernel tap instead of a scatter/gather im2col
        cols_x = np.empty((batch, out_h, out_w, self.kernel, self.kernel, self.in_ch))
        for ti in range(self.kernel):
            for tj in range(self.kernel):
                cols_x[:, :, :, ti, tj, :] = self._tap_view(xp, ti, tj, out_h, out_w)
        flat = cols_x.reshape(batch, out_h * out_w, -1)
        wmat = self.w.astype(np.float64).reshape(-1, self.out_ch)
        z = (flat @ wmat + self.b.astype(np.float64)).reshape(batch, out_h, out_w, self.out_ch)
        if train:
            self._cache = (flat, z, x.shape, pads)
        return _act(self.activation, z)

    def backward(self, grad_out):
        flat, z, x_shape, pads = self._cache
        batch, h, w, _ = x_shape
        out_h, out_w = z.shape[1], z.shape[2]
        gz = (grad_out * _act_grad(self.activation, z)).reshape(batch, out_h * out_w, self.out_ch)
        self.grads[0] = (flat.reshape(-1, flat.shape[-1]).T @ gz.reshape(-1, self.out_ch)).reshape(self.w.shape)
        self.grads[1] = gz.reshape(-1, self.out_ch).sum(axis=0)
        wmat = self.w.astype(np.float64).reshape(-1, self.out_ch)
        gcols = (gz @ wmat.T).reshape(batch, out_h, out_w, self.kernel, self.kernel, self.in_ch)
        gpad = np.zeros((batch, h + pads[0] + pads[1], w + pads[2] + pads[3], self.in_ch))
        for ti in range(self.kernel):
            for tj in range(self.kernel):
                self._tap_view(gpad, ti, tj, out_h, out_w)[...] += gcols[:, :, :, ti, tj, :]
        return gpad[:, pads[0] : pads[0] + h, pads[2] : pads[2] + w, :]

    def spec(self):
        return {"kind": "conv2d", "in_ch": self.in_ch, "out_ch": self.out_ch,
                "kernel": self.kernel, "stride": self.stride, "activation": self.activation}


class Upsample2x:
    """Nearest-neighbour 2x upsampling on (B, H, W, C)."""

    kind = "upsample2x"

    def __init__(self):
        self.grads = []
        self._in_shape = None

    @property
    def params(self):
        return []

    def set_params(self, arrays):
        pass

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=np.float64)
        if train:
            self._in_shape = x.shape
        return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)

    def backward(self, grad_out):
        b, h, w, c = self._in_shape
        return grad_out.reshape(b, h, 2, w, 2, c).sum(axis=(2, 4))

    def spec(self):
        return {"kind": "upsample2x"}


class ResBlock2d:
    """Two 3x3 convolutions with an identity skip; ReLU after the addition."""

    kind = "resblock2d"

    def __init__(self, channels, rng=None):
        self.conv1 = Conv2d(channels, channels, 3, 1, activation="relu", rng=rng)
        self.conv2 = Conv2d(channels, channels, 3, 1, activation="linear", rng=rng)
        self._cache = None

    @property
    def params(self):
        return self.conv1.params + self.conv2.params

    @property
    def grads(self):
        return self.conv1.grads + self.conv2.grads

    def set_params(self, arrays):
        self.conv1.set_params(arrays[:2])
        self.conv2.set_params(arrays[2:])

    def forward(self, x, train=False):
        h = self.conv2.forward(self.conv1.forward(x, train=train), train=train)
        s = h + x
        if train:
            self._cache = s
        return np.maximum(s, 0.0)

    def backward(self, grad_out):
        gs = grad_out * (self._cache > 0.0)
        gx_branch = self.conv1.backward(self.conv2.backward(gs))
        return gx_branch + gs

    def spec(self):
        return {"kind": "resblock2d", "channels": self.conv1.in_ch}


class BatchNorm1d:
    """Feature-wise batch normalization with running statistics for eval."""

    kind = "batch_norm"

    def __init__(self, dim, momentum=0.1, eps=1e-5):
        self.dim = dim
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(dim, dtype=np.float64)
        self.beta = np.zeros(dim, dtype=np.float64)
        self.running_mean = np.zeros(dim, dtype=np.float64)
        self.running_var = np.ones(dim, dtype=np.float64)
        self.grads = [np.zeros(dim, dtype=np.float64), np.zeros(dim, dtype=np.float64)]
        self._cache = None

    @property
    def params(self):
        return [self.gamma, self.beta]

    def set_params(self, arrays):
        self.gamma, self.beta = arrays[0].astype(np.float64), arrays[1].astype(np.float64)

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=np.float64)
        if train:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        if train:
            self._cache = (xhat, inv)
        return self.gamma.astype(np.float64) * xhat + self.beta.astype(np.float64)

    def backward(self, grad_out):
        xhat, inv = self._cache
        n = xhat.shape[0]
        self.grads[0] = np.sum(grad_out * xhat, axis=0)
        self.grads[1] = np.sum(grad_out, axis=0)
        g = grad_out * self.gamma.astype(np.float64)
        return inv / n * (n * g - np.sum(g, axis=0) - xhat * np.sum(g * xhat, axis=0))

    def spec(self):
        return {"kind": "batch_norm", "dim": self.dim}


@dataclass(frozen=True)
class FactorVaeConfig:
    latent_dim: int = 8
    tc_weight: float = 6.4
    epochs: int = 250
    lr_vae: float = 1e-4
    betas_vae: tuple = (0.9, 0.999)
    lr_disc: float = 1e-5
    betas_disc: tuple = (0.5, 0.9)
    encoder_kind: str = SMALL_CONV
    batch_size: int = 32
    seed: int = 0
    disc_width: int = 256
    disc_layers: int = 4

    def __post_init__(self):
        if self.tc_weight < 0:
            raise InvalidSpecError("tc_weight must be non-negative")
        if self.encoder_kind not in (SMALL_CONV, DEEP_RESIDUAL):
            raise InvalidSpecError(f"unknown encoder kind {self.encoder_kind!r}")


class Discriminator:
    """MLP mapping a latent batch to two logits (joint vs permuted)."""

    def __init__(self, latent_dim, width=256, n_layers=4, seed=0, zero_init=False):
        rng = derived_rng(seed, 0xD15C)
        dims = [latent_dim] + [width] * (n_layers - 1)
        self.layers = [Dense(a, b, activation="leaky_relu", rng=rng) for a, b in zip(dims, dims[1:])]
        self.layers.append(Dense(dims[-1], 2, activation="linear", rng=rng))
        if zero_init:
            for layer in self.layers:
                layer.set_params([np.zeros_like(p) for p in layer.params])

    def parameters(self):
        return [p for l in self.layers for p in l.params]

    def gradients(self):
        return [g for l in self.layers for g in l.grads]

    def set_parameters(self, arrays):
        i = 0
        for l in self.layers:
            l.set_params(arrays[i : i + 2])
            i += 2

    def forward(self, z, train=False):
        h = np.asarray(z, dtype=np.float64)
        for l in self.layers:
            h = l.forward(h, train=train)
        return h

    def backward(self, grad_logits):
        g = grad_logits
        for l in reversed(self.layers):
            g = l.backward(g)
        return g


def softmax_cross_entropy(logits, labels):
    """Mean CE and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    probs = expz / expz.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    loss = float(-np.mean(np.log(probs[np.arange(n), labels] + 1e-300)))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def permute_dims(z, seed) -> np.ndarray:
    """Independently permute each latent dimension across the batch axis.

    Dimension j uses the generator seeded by (seed, j), so per-dimension
    multisets of values are preserved exactly.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    out = np.empty_like(z)
    for j in range(z.shape[1]):
        perm = derived_rng(seed, j).permutation(z.shape[0])
        out[:, j] = z[perm, j]
    return out


def tc_loss(disc: Discriminator, z_true, z_perm) -> tuple:
    """Discriminator CE (true=0, permuted=1) and the raw generator TC term.

    The generator term mean(logit0 - logit1) over the true latents equals the
    discriminator's log-density-ratio estimate; the caller scales it by the
    configured weight before adding it to the VAE loss.
    """
    z_true = np.atleast_2d(np.asarray(z_true, dtype=np.float64))
    z_perm = np.atleast_2d(np.asarray(z_perm, dtype=np.float64))
    if z_true.shape[0] != z_perm.shape[0]:
        raise ShapeError("true/permuted batch sizes differ")
    logits_t = disc.forward(z_true)
    logits_p = disc.forward(z_perm)
    loss_t, _ = softmax_cross_entropy(logits_t, np.zeros(len(logits_t), dtype=np.int64))
    loss_p, _ = softmax_cross_entropy(logits_p, np.ones(len(logits_p), dtype=np.int64))
    disc_loss = 0.5 * (loss_t + loss_p)
    tc_raw = float(np.mean(logits_t[:, 0] - logits_t[:, 1]))
    return disc_loss, tc_raw


class ImageVae:
    """Convolutional VAE over (B, H, W) images in [0, 1]."""

    def __init__(self, image_hw, latent_dim, encoder_kind=SMALL_CONV, seed=0):
        h, w = image_hw
        if h % 8 != 0 or w % 8 != 0:
            raise InvalidSpecError("image sides must be divisible by 8")
        rng = derived_rng(seed, 0xE4C)
        self.image_hw = (h, w)
        self.latent_dim = latent_dim
        self.encoder_kind = encoder_kind

        if encoder_kind == SMALL_CONV:
            self.encoder = [
                Conv2d(1, 8, 3, 2, activation="relu", rng=rng),
                Conv2d(8, 16, 3, 2, activation="relu", rng=rng),
                Conv2d(16, 32, 3, 2, activation="relu", rng=rng),
            ]
        else:
            self.encoder = [
                Conv2d(1, 12, 3, 2, activation="relu", rng=rng),
                ResBlock2d(12, rng=rng),
                ResBlock2d(12, rng=rng),
                Conv2d(12, 24, 3, 2, activation="relu", rng=rng),
                ResBlock2d(24, rng=rng),
                ResBlock2d(24, rng=rng),
                Conv2d(24, 32, 3, 2, activation="relu", rng=rng),
            ]
        fh, fw = h // 8, w // 8
        flat = fh * fw * 32
        self.encoder.append(Reshape((flat,)))
        self.mu_head = Dense(flat, latent_dim, activation="linear", rng=rng)
        self.logvar_head = Dense(flat, latent_dim, activation="linear", rng=rng)
        self.decoder = [
            Dense(latent_dim, flat, activation="relu", rng=rng),
            Reshape((fh, fw, 32)),
            Upsample2x(),
            Conv2d(32, 16, 3, 1, activation="relu", rng=rng),
            Upsample2x(),
            Conv2d(16, 8, 3, 1, activation="relu", rng=rng),
            Upsample2x(),
            Conv2d(8, 1, 3, 1, activation="linear", rng=rng),
        ]

    def _vae_layers(self):
        return self.encoder + [self.mu_head, self.logvar_head] + self.decoder

    def parameters(self):
        return [p for l in self._vae_layers() for p in l.params]

    def gradients(self):
        return [g for l in self._vae_layers() for g in l.grads]

    def set_parameters(self, arrays):
        i = 0
        for l in self._vae_layers():
            k = len(l.params)
            if k:
                l.set_params(arrays[i : i + k])
            i += k

    def _to_nhwc(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim == 3:
            x = x[..., None]
        if x.shape[1:3] != self.image_hw:
            raise ShapeError(f"expected {self.image_hw} images, got {x.shape[1:3]}")
        return x

    def encode(self, x, train=False):
        h = self._to_nhwc(x)
        for l in self.encoder:
            h = l.forward(h, train=train)
        mu = self.mu_head.forward(h, train=train)
        logvar = np.clip(self.logvar_head.forward(h, train=train), -LOGVAR_CLAMP, LOGVAR_CLAMP)
        return mu, logvar

    def decode(self, z, train=False):
        h = np.atleast_2d(np.asarray(z, dtype=np.float64))
        for l in self.decoder:
            h = l.forward(h, train=train)
        return h[..., 0]

    def reconstruct(self, x):
        mu, _ = self.encode(x)
        return self.decode(mu)


def pad_to_square(images) -> np.ndarray:
    """Zero-pad the shorter image side ('extended to quadratic input')."""
    images = np.asarray(images, dtype=np.float64)
    _, h, w = images.shape
    side = max(h, w)
    side += (-side) % 8
    out = np.zeros((images.shape[0], side, side), dtype=np.float64)
    top, left = (side - h) // 2, (side - w) // 2
    out[:, top : top + h, left : left + w] = images
    return out


def train_factorvae(cfg: FactorVaeConfig, images, history_out=None) -> tuple:
    """Alternating VAE/discriminator training; returns (model, disc, history).

    Per batch: one VAE update on recon + KL + tc_weight * TC (discriminator
    parameters frozen), then one discriminator update on its cross-entropy
    against dimension-permuted latents. Deterministic for a fixed config.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3:
        raise ShapeError(f"expected (N, H, W) images, got {images.shape}")
    n = images.shape[0]
    model = ImageVae(images.shape[1:3], cfg.latent_dim, cfg.encoder_kind, seed=cfg.seed)
    disc = Discriminator(cfg.latent_dim, cfg.disc_width, cfg.disc_layers, seed=cfg.seed)
    opt_vae = AdamState(model.parameters(), lr=cfg.lr_vae,
                        beta1=cfg.betas_vae[0], beta2=cfg.betas_vae[1])
    opt_disc = AdamState(disc.parameters(), lr=cfg.lr_disc,
                         beta1=cfg.betas_disc[0], beta2=cfg.betas_disc[1])
    history = []

    for epoch in range(cfg.epochs):
        order = derived_rng(cfg.seed, 0xEB0C, epoch).permutation(n)
        sums = np.zeros(4)
        n_batches = 0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            batch = images[order[start : start + cfg.batch_size]]
            x = model._to_nhwc(batch)
            bsz = x.shape[0]

            # --- VAE update (discriminator frozen) ---
            h = x
            for l in model.encoder:
                h = l.forward(h, train=True)
            mu = model.mu_head.forward(h, train=True)
            logvar_raw = model.logvar_head.forward(h, train=True)
            logvar = np.clip(logvar_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
            clamp_mask = (logvar_raw > -LOGVAR_CLAMP) & (logvar_raw < LOGVAR_CLAMP)
            eps = derived_rng(cfg.seed, 0x5A3, epoch, bi).standard_normal(mu.shape)
            sigma = np.exp(0.5 * logvar)
            z = mu + sigma * eps

            dh = z
            for l in model.decoder:
                dh = l.forward(dh, train=True)
            recon = dh
            # Reconstruction term sums squared error over pixels (per sample,
            # batch-averaged); a per-pixel mean would let the KL term crush
            # the latent code. The logged "recon" metric stays per-pixel MSE.
            recon_loss = mse_loss(x, recon)
            kl = gaussian_kl(mu, logvar)

            grad_z_tc = np.zeros_like(z)
            tc_raw = 0.0
            if cfg.tc_weight > 0.0:
                logits = disc.forward(z, train=True)
                tc_raw = float(np.mean(logits[:, 0] - logits[:, 1]))
                gl = np.zeros_like(logits)
                gl[:, 0] = cfg.tc_weight / bsz
                gl[:, 1] = -cfg.tc_weight / bsz
                grad_z_tc = disc.backward(gl)

            grad = 2.0 * (recon - x) / bsz
            for l in reversed(model.decoder):
                grad = l.backward(grad)
            grad_z = grad + grad_z_tc
            grad_mu = grad_z + mu / bsz
            grad_logvar = (grad_z * (0.5 * sigma * eps) - 0.5 * (1.0 - np.exp(logvar)) / bsz)
            grad_logvar = grad_logvar * clamp_mask
            gh = model.mu_head.backward(grad_mu) + model.logvar_head.backward(grad_logvar)
            for l in reversed(model.encoder):
                gh = l.backward(gh)
            model.set_parameters(adam_step(model.parameters(), model.gradients(), opt_vae))

            # --- discriminator update on detached latents ---
            disc_loss = math.log(2.0)
            if cfg.tc_weight > 0.0:
                z_perm = permute_dims(z, _permute_seed(cfg.seed, epoch, bi))
                logits_t = disc.forward(z, train=True)
                loss_t, gt = softmax_cross_entropy(logits_t, np.zeros(bsz, dtype=np.int64))
                disc.backward(0.5 * gt)
                grads_t = [g.copy() for g in disc.gradients()]
                logits_p = disc.forward(z_perm, train=True)
                loss_p, gp = softmax_cross_entropy(logits_p, np.ones(bsz, dtype=np.int64))
                disc.backward(0.5 * gp)
                grads = [a + b for a, b in zip(grads_t, disc.gradients())]
                disc.set_parameters(adam_step(disc.parameters(), grads, opt_disc))
                disc_loss = 0.5 * (loss_t + loss_p)

            sums += (recon_loss, kl, tc_raw, disc_loss)
            n_batches += 1
            if not np.isfinite(recon_loss + kl + tc_raw):
                raise TrainingDivergedError(
                    f"FactorVAE loss non-finite at epoch {epoch}", last_finite_epoch=epoch - 1
                )
        means = sums / n_batches
        pixels = images.shape[1] * images.shape[2]
        history.append({
            "epoch": epoch,
            "recon": float(means[0]),
            "kl": float(means[1]),
            "tc": float(means[2]),
            "disc_loss": float(means[3]),
            "objective": float(means[0] * pixels + means[1] + cfg.tc_weight * means[2]),
        })
        if history_out is not None:
            history_out.append(history[-1])
    return model, disc, history


def _permute_seed(seed, epoch, batch):
    return (int(seed) * 0x9E3779B1 + epoch * 131_071 + batch * 8191) & 0x7FFF_FFFF


def interpolate(model: ImageVae, x_a, x_b, steps: int) -> np.ndarray:
    """Decode evenly spaced points on the segment between two latent means.

    The endpoints are the direct decodings of mu_a and mu_b, bit for bit.
    """
    if steps < 2:
        raise InvalidSpecError("interpolation needs at least 2 steps")
    mu_a, _ = model.encode(np.asarray(x_a)[None] if np.asarray(x_a).ndim == 2 else x_a)
    mu_b, _ = model.encode(np.asarray(x_b)[None] if np.asarray(x_b).ndim == 2 else x_b)
    out = []
    for t in np.linspace(0.0, 1.0, steps):
        out.append(model.decode(mu_a + t * (mu_b - mu_a))[0])
    return np.asarray(out)


@dataclass(frozen=True)
class HeadSpec:
    """Latent classifier head: depth, inter-layer op, and input source."""

    n_linear: int = 2
    inter_op: str = INTER_RELU
    input_source: str = SOURCE_MU
    hidden: int = 32

    def __post_init__(self):
        if self.n_linear not in (1, 2, 3):
            raise InvalidSpecError("head depth must be 1, 2, or 3")
        if self.inter_op not in (INTER_RELU, INTER_BATCH_NORM):
            raise InvalidSpecError(f"unknown inter op {self.inter_op!r}")
        if self.input_source not in (SOURCE_MU, SOURCE_MULOGVAR, SOURCE_REP):
            raise InvalidSpecError(f"unknown input source {self.input_source!r}")


def _head_inputs(model, images, source, seed):
    mu, logvar = model.encode(images)
    if source == SOURCE_MU:
        return mu
    if source == SOURCE_MULOGVAR:
        return np.concatenate([mu, logvar], axis=1)
    eps = derived_rng(seed, 0x4E9).standard_normal(mu.shape)
    return mu + np.exp(0.5 * logvar) * eps


def _build_head(in_dim, n_classes, spec: HeadSpec, seed):
    rng = derived_rng(seed, 0x6EAD)
    layers = []
    if spec.n_linear == 1:
        layers.append(Dense(in_dim, n_classes, activation="linear", rng=rng))
        return layers
    dims = [in_dim] + [spec.hidden] * (spec.n_linear - 1) + [n_classes]
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        last = i == len(dims) - 2
        if spec.inter_op == INTER_RELU:
            layers.append(Dense(a, b, activation="linear" if last else "relu", rng=rng))
        else:
            layers.append(Dense(a, b, activation="linear", rng=rng))
            if not last:
                layers.append(BatchNorm1d(b))
    return layers


def _head_forward(layers, x, train=False):
    h = x
    for l in layers:
        h = l.forward(h, train=train)
    return h


def train_latent_head(model: ImageVae, images, labels, head: HeadSpec,
                      seed=0, epochs=200, lr=1e-2, holdout=0.25) -> dict:
    """Train a classifier head on frozen latents; report held-out metrics.

    The reparameterized source draws a fresh noise sample every epoch (and an
    independent one for evaluation), so its scores genuinely include the
    sampling noise.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    classes = tuple(sorted(set(labels.tolist())))
    y = np.searchsorted(np.asarray(classes, dtype=labels.dtype), labels).astype(np.int64)

    order = derived_rng(seed, 0x51).permutation(len(y))
    n_eval = max(1, int(len(y) * holdout))
    eval_idx, train_idx = order[:n_eval], order[n_eval:]

    base = _head_inputs(model, images, head.input_source, seed)
    layers = _build_head(base.shape[1], len(classes), head, seed)
    params = [p for l in layers for p in l.params]
    opt = AdamState(params, lr=lr)

    for epoch in range(epochs):
        if head.input_source == SOURCE_REP:
            x_all = _head_inputs(model, images, SOURCE_REP, _permute_seed(seed, epoch, 0))
        else:
            x_all = base
        logits = _head_forward(layers, x_all[train_idx], train=True)
        _, grad = softmax_cross_entropy(logits, y[train_idx])
        g = grad
        for l in reversed(layers):
            g = l.backward(g)
        params = [p for l in layers for p in l.params]
        grads = [gg for l in layers for gg in l.grads]
        new = adam_step(params, grads, opt)
        i = 0
        for l in layers:
            k = len(l.params)
            if k:
                l.set_params(new[i : i + k])
            i += k

    if head.input_source == SOURCE_REP:
        x_eval = _head_inputs(model, images, SOURCE_REP, _permute_seed(seed, epochs, 1))[eval_idx]
    else:
        x_eval = base[eval_idx]
    pred = np.argmax(_head_forward(layers, x_eval, train=False), axis=1)
    truth = y[eval_idx]
    accuracy = float(np.mean(pred == truth))

    from .forest import confusion_matrix, fbeta  # local import avoids a cycle

    cm = confusion_matrix(truth, pred, labels=tuple(range(len(classes))))
    return {
        "head": head,
        "layers": layers,
        "accuracy": accuracy,
        "f2": fbeta(cm, 2.0).macro,
        "n_eval": int(n_eval),
        "classes": classes,
    }


def ablation_grid(model: ImageVae, images, labels, specs, seeds, epochs=200) -> list:
    """Evaluate every head spec across seeds; rows mirror the results figure."""
    rows = []
    for spec in specs:
        for seed in seeds:
            r = train_latent_head(model, images, labels, spec, seed=seed, epochs=epochs)
            rows.append({
                "encoder": model.encoder_kind,
                "latent_dim": model.latent_dim,
                "n_linear": spec.n_linear,
                "inter_op": spec.inter_op,
                "source": spec.input_source,
                "seed": seed,
                "accuracy": r["accuracy"],
                "f2": r["f2"],
            })
    return rows


def write_ablation_csv(path, rows) -> None:
    cols = ["encoder", "latent_dim", "n_linear", "inter_op", "source", "seed", "accuracy", "f2"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] for c in cols])


def _desk_waveform(label, spec, rng):
    """Waveform draws for the spectrogram dataset: tighter grids than the
    classification dataset so classes stay geometrically distinct images."""
    fs = spec.sample_rate_hz
    half = fs / 2.0
    if label == signals.CHIRP:
        return signals.WaveformSpec(
            signals.CHIRP,
            f_start_hz=float(rng.uniform(-0.30, -0.22)) * half,
            f_stop_hz=float(rng.uniform(0.22, 0.30)) * half,
            sweep_period_s=float(rng.uniform(0.28, 0.38)) * spec.duration_s,
        )
    if label == signals.MULTITONE:
        # one or two lines; the single-tone case sits where the modulated
        # carrier lives, so the two classes differ mainly in line width
        n_tones = int(rng.integers(1, 3))
        freqs = [float(rng.uniform(0.18, 0.26)) * half]
        if n_tones == 2:
            freqs.append(float(rng.uniform(-0.26, -0.18)) * half)
        amp = math.sqrt(1.0 / n_tones)
        return signals.WaveformSpec(signals.MULTITONE, tones=tuple(
            signals.ToneSpec.from_polar(f, amp, float(rng.uniform(0, 2 * math.pi)))
            for f in freqs
        ))
    if label == signals.PULSED:
        return signals.WaveformSpec(
            signals.PULSED,
            duty=float(rng.uniform(0.24, 0.26)),
            pulse_rate_hz=8.0 / spec.duration_s,
            pulse_freq_hz=float(rng.uniform(-0.06, 0.06)) * half,
        )
    if label == signals.HOPPER:
        base = np.array([-0.30, 0.0, 0.30])
        jitter = rng.uniform(-0.015, 0.015, size=3)
        return signals.WaveformSpec(
            signals.HOPPER,
            hop_freqs_hz=tuple((base + jitter) * half),
            dwell_s=float(rng.uniform(0.24, 0.26)) * spec.duration_s,
        )
    if label == signals.MODULATED:
        return signals.WaveformSpec(
            signals.MODULATED,
            symbol_rate_hz=float(rng.uniform(0.022, 0.028)) * fs,
            carrier_hz=float(rng.uniform(0.18, 0.26)) * half,
        )
    if label == signals.NOISE:
        return signals.WaveformSpec(
            signals.NOISE, bandwidth_hz=float(rng.uniform(0.50, 0.65)) * half
        )
    return signals.random_waveform(label, spec, rng)


def make_spectrogram_dataset(classes, per_class, seed, image_hw=(32, 32),
                             sample_rate_hz=1_000_000.0, n_avg=2) -> tuple:
    """Labeled spectrogram images of synthetic waveforms, scaled to [0, 1]."""
    n_time, n_freq = image_hw
    n_samples = n_time * n_avg * 2 * n_freq
    spec = signals.SampleSpec.from_samples(sample_rate_hz, n_samples)
    images, labels = [], []
    for ci, label in enumerate(classes):
        for rep in range(per_class):
            rng = derived_rng(seed, ci, rep)
            w = _desk_waveform(label, spec, rng)
            iq = signals.synth_waveform(w, spec, int(rng.integers(0, 2**63)))
            images.append(feat.spectrogram_image(iq, n_time=n_time, n_freq=n_freq, n_avg=n_avg))
            labels.append(label)
    images = np.asarray(images)
    lo, hi = images.min(), images.max()
    if hi > lo:
        images = (images - lo) / (hi - lo)
    return images, np.asarray(labels)

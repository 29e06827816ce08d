"""Latent world model: conv encoder/decoder, recurrent latent dynamics,
reward and continuation heads, and the combined training loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import ParamSet, he_init

ACTION_DIM = 2
OBS_SCALE = 5.0  # meters; scans are normalized to [0,1]


@dataclass
class WorldModelConfig:
    obs_len: int = 360
    latent_dim: int = 32
    deter_dim: int = 256
    kl_beta: float = 1.5
    reward_loss_weight: float = 1.0
    discount_loss_weight: float = 1.0
    encoder_channels: tuple = (32, 64, 128)
    encoder_kernels: tuple = (5, 5, 3)
    encoder_strides: tuple = (2, 2, 1)
    head_hidden: int = 200
    stddev_floor: float = 1e-4
    decode_uses_h: bool = True
    discount_gamma: float = 0.99     # scaling of the continue target
    prior_stddev_pinned: bool = False  # deterministic-transition ablation
    pin_recurrent: bool = False        # memoryless ablation: h stays zero

    def conv_lengths(self) -> list[int]:
        lens = [self.obs_len]
        for k, s in zip(self.encoder_kernels, self.encoder_strides):
            lens.append(-(-lens[-1] // s))
        return lens

    @property
    def embed_dim(self) -> int:
        return self.conv_lengths()[-1] * self.encoder_channels[-1]

    def validate(self):
        if min(self.latent_dim, self.deter_dim, self.head_hidden, self.obs_len) <= 0:
            raise ValueError("world model dimensions must be positive")
        if self.kl_beta <= 0 or self.reward_loss_weight < 0 or self.discount_loss_weight < 0:
            raise ValueError("loss weights must be positive")
        if not (len(self.encoder_channels) == len(self.encoder_kernels) == len(self.encoder_strides)):
            raise ValueError("encoder channel/kernel/stride lists must align")
        # the decoder must be able to walk the lengths back up to obs_len
        lens = self.conv_lengths()
        for i, s in enumerate(self.encoder_strides):
            if -(-lens[i] // s) != lens[i + 1]:
                raise ValueError("encoder length algebra does not close")


@dataclass
class DiagonalGaussian:
    mean: Tensor
    stddev: Tensor

    def detach(self) -> "DiagonalGaussian":
        return DiagonalGaussian(self.mean.detach(), self.stddev.detach())


@dataclass
class LatentState:
    h: np.ndarray
    z: np.ndarray

    @property
    def concat(self) -> np.ndarray:
        return np.concatenate([self.h, self.z], axis=-1)


@dataclass
class ModelLossReport:
    reconstruction: float
    kl_vae: float
    kl_dynamics: float
    reward_loss: float
    discount_loss: float
    total: float = field(init=False)
    kl_beta: float = 1.5
    reward_weight: float = 1.0
    discount_weight: float = 1.0

    def __post_init__(self):
        self.total = (self.reconstruction + self.kl_beta * self.kl_vae + self.kl_dynamics
                      + self.reward_weight * self.reward_loss
                      + self.discount_weight * self.discount_loss)


@dataclass
class ObserveResult:
    h_states: np.ndarray  # [B,T,deter]
    z_states: np.ndarray  # [B,T,latent]
    posteriors: list
    priors: list
    report: ModelLossReport
    loss: Tensor


def kl_diag_gaussians(q: DiagonalGaussian, p: DiagonalGaussian) -> Tensor:
    """KL(q || p) for diagonal Gaussians, summed over dimensions -> [B]."""
    var_term = ad.div(ad.add(ad.square(q.stddev), ad.square(ad.sub(q.mean, p.mean))),
                      ad.mul(ad.square(p.stddev), 2.0))
    per_dim = ad.sub(ad.add(ad.log(ad.div(p.stddev, q.stddev)), var_term), 0.5)
    return ad.sum_(per_dim, axis=-1)


def standard_normal(shape) -> DiagonalGaussian:
    return DiagonalGaussian(Tensor(np.zeros(shape, np.float32)),
                            Tensor(np.ones(shape, np.float32)))


def vae_loss(obs: Tensor, recon: Tensor, kl_to_standard: Tensor) -> tuple[Tensor, Tensor]:
    """(mean squared reconstruction error, mean KL to the unit Gaussian)."""
    return ad.mean(ad.square(ad.sub(recon, obs))), ad.mean(kl_to_standard)


def rssm_kl_loss(posteriors: list, priors: list) -> Tensor:
    """Mean over time of KL(posterior_t || prior_t); gradients reach both."""
    if len(posteriors) != len(priors):
        raise ValueError(f"sequence length mismatch: {len(posteriors)} posteriors vs {len(priors)} priors")
    terms = [kl_diag_gaussians(q, p) for q, p in zip(posteriors, priors)]
    return ad.mean(ad.concat(terms, axis=0))


class WorldModel:
    """Owns the model parameters and the forward passes."""

    def __init__(self, config: WorldModelConfig, init_rng: np.random.Generator):
        config.validate()
        self.config = config
        self.params = ParamSet()
        c = config
        ps = self.params

        in_ch = 1
        for i, (ch, k) in enumerate(zip(c.encoder_channels, c.encoder_kernels)):
            ps.add(f"enc.conv{i}.w", he_init(init_rng, (ch, in_ch, k), in_ch * k))
            ps.add(f"enc.conv{i}.b", np.zeros(ch, np.float32))
            in_ch = ch

        def head(prefix, in_dim, out_dim):
            ps.add(f"{prefix}.w1", he_init(init_rng, (in_dim, c.head_hidden), in_dim))
            ps.add(f"{prefix}.b1", np.zeros(c.head_hidden, np.float32))
            ps.add(f"{prefix}.w2", he_init(init_rng, (c.head_hidden, out_dim), c.head_hidden))
            ps.add(f"{prefix}.b2", np.zeros(out_dim, np.float32))

        head("post.mean", c.deter_dim + c.embed_dim, c.latent_dim)
        # mean and stddev heads share the hidden layer
        ps.add("post.wstd", he_init(init_rng, (c.head_hidden, c.latent_dim), c.head_hidden))
        ps.add("post.bstd", np.zeros(c.latent_dim, np.float32))
        head("prior.mean", c.deter_dim, c.latent_dim)
        ps.add("prior.wstd", he_init(init_rng, (c.head_hidden, c.latent_dim), c.head_hidden))
        ps.add("prior.bstd", np.zeros(c.latent_dim, np.float32))

        gin = c.deter_dim + c.latent_dim + ACTION_DIM
        for gate in ("wz", "wr", "wn"):
            ps.add(f"gru.{gate}", he_init(init_rng, (gin, c.deter_dim), gin))
        for gate in ("bz", "br", "bn"):
            ps.add(f"gru.{gate}", np.zeros(c.deter_dim, np.float32))

        lens = c.conv_lengths()
        dec_in = c.latent_dim + (c.deter_dim if c.decode_uses_h else 0)
        ps.add("dec.proj.w", he_init(init_rng, (dec_in, lens[-1] * c.encoder_channels[-1]), dec_in))
        ps.add("dec.proj.b", np.zeros(lens[-1] * c.encoder_channels[-1], np.float32))
        chans = (1,) + tuple(c.encoder_channels)
        for i in reversed(range(len(c.encoder_channels))):
            # transposed conv i maps channels[i+1] -> channels[i], length lens[i+1] -> lens[i]
            k = c.encoder_kernels[i]
            ps.add(f"dec.conv{i}.w", he_init(init_rng, (chans[i + 1], chans[i], k), chans[i + 1] * k))
            ps.add(f"dec.conv{i}.b", np.zeros(chans[i], np.float32))

        head("reward", c.deter_dim + c.latent_dim, 1)
        head("disc", c.deter_dim + c.latent_dim, 1)

    # -- forward passes -----------------------------------------------------

    def initial_h(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, self.config.deter_dim), np.float32))

    def encode(self, obs_norm) -> Tensor:
        """Normalized scans [B, obs_len] -> flat embedding [B, embed_dim]."""
        c = self.config
        x = obs_norm if isinstance(obs_norm, Tensor) else Tensor(obs_norm)
        if x.shape[-1] != c.obs_len:
            raise ValueError(f"encode: expected observation length {c.obs_len}, got {x.shape[-1]}")
        B = x.shape[0]
        x = ad.reshape(x, (B, 1, c.obs_len))
        for i, s in enumerate(c.encoder_strides):
            x = ad.elu(ad.conv1d(x, self.params[f"enc.conv{i}.w"], stride=s,
                                 bias=self.params[f"enc.conv{i}.b"]))
        return ad.reshape(x, (B, c.embed_dim))

    def _gaussian_head(self, prefix: str, x: Tensor, pinned: bool = False) -> DiagonalGaussian:
        p = self.params
        hid = ad.elu(ad.affine(x, p[f"{prefix}.mean.w1"], p[f"{prefix}.mean.b1"]))
        mean = ad.affine(hid, p[f"{prefix}.mean.w2"], p[f"{prefix}.mean.b2"])
        if pinned:
            std = Tensor(np.full(mean.shape, self.config.stddev_floor, np.float32))
        else:
            std = ad.add(ad.softplus(ad.affine(hid, p[f"{prefix}.wstd"], p[f"{prefix}.bstd"])),
                         self.config.stddev_floor)
        return DiagonalGaussian(mean, std)

    def posterior(self, h, e) -> DiagonalGaussian:
        return self._gaussian_head("post", ad.concat([h, e], axis=1))

    def prior(self, h) -> DiagonalGaussian:
        return self._gaussian_head("prior", h, pinned=self.config.prior_stddev_pinned)

    def deterministic_update(self, h, z, a) -> Tensor:
        """GRU step on the concatenated latent sample and normalized action."""
        if self.config.pin_recurrent:
            h = h if isinstance(h, Tensor) else Tensor(h)
            return Tensor(np.zeros_like(h.data))
        gru = {k: self.params[f"gru.{k}"] for k in ("wz", "bz", "wr", "br", "wn", "bn")}
        a = a if isinstance(a, Tensor) else Tensor(a)
        return ad.gru_cell(h, ad.concat([z, a], axis=1), gru)

    def decode(self, z, h=None) -> Tensor:
        c = self.config
        p = self.params
        x = ad.concat([z, h], axis=1) if c.decode_uses_h else z
        B = x.shape[0]
        lens = c.conv_lengths()
        x = ad.elu(ad.affine(x, p["dec.proj.w"], p["dec.proj.b"]))
        x = ad.reshape(x, (B, c.encoder_channels[-1], lens[-1]))
        n = len(c.encoder_channels)
        for i in reversed(range(n)):
            x = ad.conv1d_transpose(x, p[f"dec.conv{i}.w"], out_length=lens[i],
                                    stride=c.encoder_strides[i], bias=p[f"dec.conv{i}.b"])
            if i > 0:
                x = ad.elu(x)
        return ad.sigmoid(ad.reshape(x, (B, c.obs_len)))

    def _mlp_head(self, prefix: str, h, z) -> Tensor:
        p = self.params
        x = ad.concat([h, z], axis=1)
        hid = ad.elu(ad.affine(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"]))
        out = ad.affine(hid, p[f"{prefix}.w2"], p[f"{prefix}.b2"])
        return ad.reshape(out, (x.shape[0],))

    def predict_reward(self, h, z) -> Tensor:
        return self._mlp_head("reward", h, z)

    def predict_discount_logit(self, h, z) -> Tensor:
        return self._mlp_head("disc", h, z)

    def predict_discount(self, h, z) -> Tensor:
        return ad.sigmoid(self.predict_discount_logit(h, z))

    # -- sequence loss ------------------------------------------------------

    def observe_sequence(self, obs: np.ndarray, actions: np.ndarray, rewards: np.ndarray,
                         dones: np.ndarray, rng: np.random.Generator | None = None,
                         noise: np.ndarray | None = None) -> ObserveResult:
        """Run the posterior/update/prior cycle along [B,T] sequences.

        obs: raw scans in meters [B,T,obs_len]; actions normalized to [-1,1];
        rewards are the head's regression targets; dones flag episode ends.
        The recurrent state starts at zero. `noise` [T,B,latent] replaces the
        reparameterization draws (deterministic replay / gradient checks).
        """
        c = self.config
        B, T = obs.shape[0], obs.shape[1]
        obs_flat = np.ascontiguousarray(
            obs.transpose(1, 0, 2).reshape(T * B, c.obs_len), dtype=np.float32) / OBS_SCALE
        obs_t = Tensor(obs_flat)
        e_all = self.encode(obs_t)

        h = self.initial_h(B)
        hs, zs, posteriors, priors = [], [], [], []
        for t in range(T):
            e_t = ad.slice_rows(e_all, t * B, (t + 1) * B)
            q_t = self.posterior(h, e_t)
            p_t = self.prior(h)
            if noise is None:
                z_t = ad.sample_gaussian(q_t.mean, q_t.stddev, rng)
            else:
                z_t = ad.add(q_t.mean, ad.mul(q_t.stddev, Tensor(noise[t])))
            posteriors.append(q_t)
            priors.append(p_t)
            hs.append(h)
            zs.append(z_t)
            a_t = Tensor(np.ascontiguousarray(actions[:, t], dtype=np.float32))
            h = self.deterministic_update(h, z_t, a_t)

        h_all = ad.concat(hs, axis=0)  # [T*B, deter], t-major
        z_all = ad.concat(zs, axis=0)
        recon = self.decode(z_all, h_all)
        std_normal = standard_normal((T * B,) + (c.latent_dim,))
        q_all = DiagonalGaussian(ad.concat([q.mean for q in posteriors], axis=0),
                                 ad.concat([q.stddev for q in posteriors], axis=0))
        recon_term, kl_vae = vae_loss(obs_t, recon, kl_diag_gaussians(q_all, std_normal))
        kl_dyn = rssm_kl_loss(posteriors, priors)

        reward_targets = np.ascontiguousarray(rewards.T.reshape(T * B), dtype=np.float32)
        reward_pred = self.predict_reward(h_all, z_all)
        reward_loss = ad.mean(ad.square(ad.sub(reward_pred, Tensor(reward_targets))))

        disc_targets = np.ascontiguousarray(
            c.discount_gamma * (1.0 - dones.T.reshape(T * B).astype(np.float32)))
        logits = self.predict_discount_logit(h_all, z_all)
        # binary cross-entropy from logits: softplus(x) - d*x
        disc_loss = ad.mean(ad.sub(ad.softplus(logits), ad.mul(logits, Tensor(disc_targets))))

        loss = ad.add(
            ad.add(ad.add(recon_term, ad.mul(kl_vae, c.kl_beta)), kl_dyn),
            ad.add(ad.mul(reward_loss, c.reward_loss_weight),
                   ad.mul(disc_loss, c.discount_loss_weight)))

        report = ModelLossReport(
            reconstruction=float(recon_term.data), kl_vae=float(kl_vae.data),
            kl_dynamics=float(kl_dyn.data), reward_loss=float(reward_loss.data),
            discount_loss=float(disc_loss.data), kl_beta=c.kl_beta,
            reward_weight=c.reward_loss_weight, discount_weight=c.discount_loss_weight)
        if not np.isfinite(report.total):
            raise FloatingPointError(
                "non-finite model loss: " +
                f"recon={report.reconstruction} kl_vae={report.kl_vae} "
                f"kl_dyn={report.kl_dynamics} reward={report.reward_loss} "
                f"discount={report.discount_loss}")

        h_states = np.stack([t.data for t in hs], axis=1)  # [B,T,deter]
        z_states = np.stack([t.data for t in zs], axis=1)
        return ObserveResult(h_states, z_states, posteriors, priors, report, loss)

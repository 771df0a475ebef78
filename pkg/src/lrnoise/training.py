"""Losses, Adam, cosine schedule and the two training loops."""
from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import DataError, PairSet
from .metrics import kld, psnr, residual_histogram
from .models import (CheckpointError, Denoiser, Discriminator, FTDArch, Generator, Network,
                     Record, UNetArch, decode_records, encode_records, network_from_record,
                     network_record)
from .raw import ProfileSet
from .rng import RngStream
from .sensor import shot_noise

DISCRIMINATORS = ("ftd", "transformer")


class DivergenceError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lambda1: float = 0.1
    lambda2: float = 0.01
    penalty_coef: float = 10.0
    lr_init: float = 2e-4
    lr_final: float = 1e-6
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    epochs: int = 60
    batch_size: int = 16
    patch_size: int = 32
    critic_steps_per_gen_step: int = 5
    seed: int = 0
    discriminator: str = "ftd"
    penalty_distance: float = 1e-2
    penalty_pairs: int = 8
    steps_per_epoch: int = 0  # 0 means one pass over the training pairs

    def __post_init__(self):
        for name in ("penalty_coef", "lr_init", "lr_final", "penalty_distance"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be >= 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        for name in ("epochs", "batch_size", "patch_size", "critic_steps_per_gen_step", "penalty_pairs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.steps_per_epoch < 0:
            raise ConfigError("steps_per_epoch must be >= 0")
        if self.discriminator not in DISCRIMINATORS:
            raise ConfigError(f"discriminator must be one of {DISCRIMINATORS}")

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


FULL_SCALE = TrainConfig(batch_size=128, patch_size=64, epochs=100)  # full-size budget; desk budgets live in ``experiments``


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key=value`` lines (``#`` starts a comment); unknown keys are errors."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        conv = {"float": float, "int": int, "str": str}[types[key]]
        try:
            values[key] = conv(val)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {val!r} for {key}") from None
    return dataclasses.replace(base or TrainConfig(), **values)


def format_config(cfg: TrainConfig) -> str:
    return "".join(f"{f.name}={getattr(cfg, f.name)}\n" for f in dataclasses.fields(cfg))


def load_config(path: str | Path) -> TrainConfig:
    return parse_config(Path(path).read_text())


# ---------------------------------------------------------------------------
# Optimizer and schedule
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})

    def flat(self) -> np.ndarray:
        parts = [a.ravel() for a in self.m.values()] + [a.ravel() for a in self.v.values()]
        return np.concatenate(parts) if parts else np.zeros(0)

    @classmethod
    def from_flat(cls, params: Mapping[str, np.ndarray], flat: np.ndarray, step: int) -> "AdamState":
        st = cls.for_params(params)
        off = 0
        for acc in (st.m, st.v):
            for k, a in acc.items():
                a[...] = flat[off:off + a.size].reshape(a.shape)
                off += a.size
        if off != flat.size:
            raise CheckpointError("optimizer state size does not match the parameters")
        st.step = step
        return st


def adam_step(params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update applied in place; parameters without a gradient are skipped."""
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            continue
        m, v = state.m[k], state.v[k]
        if m.shape != p.shape or g.shape != p.shape:
            raise ValueError(f"shape mismatch for parameter {k}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def cosine_lr(t: float, T: float, lr_init: float = 2e-4, lr_final: float = 1e-6) -> float:
    if T <= 0:
        return lr_init
    t = min(max(t, 0.0), T)
    return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + math.cos(math.pi * t / T))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _check_pair(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ad.DimensionError(f"shape mismatch {a.shape} vs {b.shape}")


def denoise_with_taps(denoiser: Denoiser, x: Tensor, frozen: Mapping[str, Tensor] | None = None):
    """Frozen-denoiser pass: gradients reach ``x`` but never the denoiser weights."""
    return denoiser.forward(x, frozen or denoiser.leaves(False))


def loss_l1_aligned(d_hat, d_rn, denoiser: Denoiser, frozen=None) -> Tensor:
    d_hat, d_rn = ad.as_tensor(d_hat), ad.as_tensor(d_rn)
    _check_pair(d_hat, d_rn)
    a = denoise_with_taps(denoiser, d_hat, frozen)[0]
    b = denoise_with_taps(denoiser, d_rn, frozen)[0]
    return ad.reduce_mean(ad.abs(ad.sub(a, b)))


def l1_between(a: Tensor, b: Tensor) -> Tensor:
    _check_pair(a, b)
    return ad.reduce_mean(ad.abs(ad.sub(a, b)))


def perceptual_between(taps_a: Mapping[str, Tensor], taps_b: Mapping[str, Tensor]) -> Tensor:
    """Mean squared tap difference, averaged over the shared tap names."""
    names = sorted(taps_a)
    if not names or set(names) != set(taps_b):
        raise ValueError("feature taps must be non-empty and share names")
    terms = []
    for n in names:
        _check_pair(taps_a[n], taps_b[n])
        terms.append(ad.reduce_mean(ad.square(ad.sub(taps_a[n], taps_b[n]))))
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return ad.mul(out, 1.0 / len(terms))


def loss_perceptual(d_hat, d_rn, features: Callable[[Tensor], Mapping[str, Tensor]] | Denoiser) -> Tensor:
    """``features`` maps an image batch to named feature taps; a denoiser supplies its own."""
    d_hat, d_rn = ad.as_tensor(d_hat), ad.as_tensor(d_rn)
    _check_pair(d_hat, d_rn)
    if isinstance(features, Denoiser):
        den = features
        frozen = den.leaves(False)

        def features(x):
            return denoise_with_taps(den, x, frozen)[1]
    return perceptual_between(features(d_hat), features(d_rn))


def lipschitz_penalty(s1: Tensor, s2: Tensor, dist: np.ndarray | float) -> Tensor:
    """Mean of ``max(0, |s1 - s2| / dist - 1)^2`` over perturbation pairs."""
    q = ad.mul(ad.abs(ad.sub(s1, s2)), 1.0 / np.asarray(dist, dtype=np.float64))
    return ad.reduce_mean(ad.square(ad.relu(ad.sub(q, 1.0))))


def wgan_losses(s_real: Tensor, s_fake: Tensor, s1: Tensor, s2: Tensor, dist,
                penalty_coef: float = 10.0) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (critic_loss, gen_loss, penalty) from critic scores."""
    if s_real.size == 0 or s_fake.size == 0:
        raise ValueError("empty batch")
    gap = ad.sub(ad.reduce_mean(s_fake), ad.reduce_mean(s_real))
    pen = lipschitz_penalty(s1, s2, dist)
    critic = ad.add(gap, ad.mul(pen, penalty_coef))
    gen = ad.mul(ad.reduce_mean(s_fake), -1.0)
    return critic, gen, pen


def interpolate_pairs(real: np.ndarray, fake: np.ndarray, n: int, distance: float,
                      rng: RngStream) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``n`` interpolates ``x1`` between real and fake plus partners ``x2`` at L2 ``distance``."""
    b = real.shape[0]
    idx = rng.spawn(0).integers(0, b, n)
    eps = rng.spawn(1).uniform((n,) + (1,) * (real.ndim - 1))
    x1 = eps * real[idx] + (1.0 - eps) * fake[idx]
    u = rng.spawn(2).normal(x1.shape)
    norms = np.sqrt((u * u).reshape(n, -1).sum(axis=1)).reshape((n,) + (1,) * (real.ndim - 1))
    x2 = x1 + distance * u / norms
    dist = np.sqrt(((x2 - x1) ** 2).reshape(n, -1).sum(axis=1))
    return x1, x2, dist


def loss_adversarial(critic: Callable[[Tensor], Tensor], real, fake, interp_pairs,
                     penalty_coef: float = 10.0) -> tuple[Tensor, Tensor]:
    """``interp_pairs`` is ``(x1, x2)``; returns (critic_loss, gen_loss)."""
    real, fake = ad.as_tensor(real), ad.as_tensor(fake)
    if real.shape[0] == 0 or fake.shape[0] == 0:
        raise ValueError("empty batch")
    _check_pair(real, fake)
    x1, x2 = (np.asarray(x.data if isinstance(x, Tensor) else x) for x in interp_pairs)
    dist = np.sqrt(((x1 - x2) ** 2).reshape(len(x1), -1).sum(axis=1))
    c, g, _ = wgan_losses(critic(real), critic(fake), critic(Tensor(x1)), critic(Tensor(x2)),
                          dist, penalty_coef)
    return c, g


def total_loss(adv, l1, per, lambda1: float = 0.1, lambda2: float = 0.01):
    if isinstance(adv, Tensor) or isinstance(l1, Tensor) or isinstance(per, Tensor):
        return ad.add(ad.add(ad.as_tensor(adv), ad.mul(ad.as_tensor(l1), lambda1)),
                      ad.mul(ad.as_tensor(per), lambda2))
    return adv + lambda1 * l1 + lambda2 * per


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------

# stream keys under the run seed
_KEY_INIT, _KEY_EPOCH, _KEY_STEP, _KEY_VAL = 1, 2, 3, 4


@dataclass
class Batch:
    clean: np.ndarray   # black-subtracted DN
    real: np.ndarray    # normalized real noisy
    y_hat: np.ndarray   # normalized shot-noise-only image
    sigma_r: np.ndarray  # per-image normalized sigma_r, shape [B, 1, 1, 1]


def _crop(pairs: PairSet, idx: np.ndarray, size: int, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    h, w = pairs.clean.shape[2:]
    if size > h or size > w:
        raise DataError(f"patch size {size} exceeds image size {(h, w)}")
    if size == h and size == w:
        return pairs.clean[idx], pairs.noisy[idx]
    oy = rng.integers(0, h - size + 1, len(idx))
    ox = rng.integers(0, w - size + 1, len(idx))
    c = np.stack([pairs.clean[i, :, y:y + size, x:x + size] for i, y, x in zip(idx, oy, ox)])
    n = np.stack([pairs.noisy[i, :, y:y + size, x:x + size] for i, y, x in zip(idx, oy, ox)])
    return c, n


def make_batch(pairs: PairSet, profiles: ProfileSet, idx: np.ndarray, patch: int,
               rng: RngStream) -> Batch:
    clean, noisy = _crop(pairs, np.asarray(idx), patch, rng.spawn(0))
    vr = pairs.value_range
    y_hat = np.empty_like(clean)
    sig = np.empty((len(idx), 1, 1, 1))
    for j, i in enumerate(idx):
        prof = profiles[int(pairs.isos[i])]
        y_hat[j] = shot_noise(clean[j], prof.gain_K, rng.spawn(1, j))
        sig[j] = prof.sigma_r / vr
    return Batch(clean, noisy / vr, y_hat / vr, sig)


def init_noise(batch: Batch, rng: RngStream) -> np.ndarray:
    return rng.normal(batch.real.shape) * batch.sigma_r


# ---------------------------------------------------------------------------
# Logs and checkpoints
# ---------------------------------------------------------------------------

NOISE_LOG_COLUMNS = ("epoch", "step", "critic_loss", "gen_loss", "l1", "perceptual", "lr", "val_kld")
DENOISER_LOG_COLUMNS = ("epoch", "step", "loss", "lr", "val_l1", "val_psnr")


def format_log(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if r.get(c) is None else repr(r[c]) if isinstance(r[c], float) else r[c]
                    for c in columns])
    return buf.getvalue()


@dataclass
class TrainResult:
    networks: dict[str, Network]
    optimizers: dict[str, AdamState]
    log: list[dict]
    config: TrainConfig
    epochs_done: int
    meta: dict = field(default_factory=dict)

    @property
    def generator(self) -> Generator:
        return self.networks["generator"]

    @property
    def critic(self) -> Discriminator:
        return self.networks["ftd"]

    @property
    def denoiser(self) -> Denoiser:
        return self.networks["denoiser"]

    def to_bytes(self) -> bytes:
        recs = [network_record(net) for net in self.networks.values()]
        state = {"config": dataclasses.asdict(self.config), "epochs_done": self.epochs_done,
                 "log": self.log, "meta": self.meta,
                 # a list keeps the payload order; metadata keys are sorted on encode
                 "optimizers": [{"kind": k, "step": s.step} for k, s in self.optimizers.items()]}
        flat = [s.flat() for s in self.optimizers.values()]
        recs.append(Record("state", state, np.concatenate(flat) if flat else np.zeros(0)))
        return encode_records(recs)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, buf: bytes) -> "TrainResult":
        recs = decode_records(buf)
        nets = {r.kind: network_from_record(r) for r in recs if r.kind != "state"}
        states = [r for r in recs if r.kind == "state"]
        if len(states) != 1:
            raise CheckpointError("training checkpoint needs exactly one state record")
        st = states[0]
        opts, off = {}, 0
        for info in st.meta["optimizers"]:
            k = info["kind"]
            if k not in nets:
                raise CheckpointError(f"optimizer state for missing network {k!r}")
            n = 2 * nets[k].num_params()
            opts[k] = AdamState.from_flat(nets[k].params, st.values[off:off + n], int(info["step"]))
            off += n
        if off != st.values.size:
            raise CheckpointError("optimizer payload size mismatch")
        cfg = TrainConfig(**st.meta["config"])
        return cls(nets, opts, st.meta["log"], cfg, int(st.meta["epochs_done"]), st.meta.get("meta", {}))

    @classmethod
    def load(cls, path: str | Path) -> "TrainResult":
        return cls.from_bytes(Path(path).read_bytes())


def _finite(name: str, value: float, epoch: int, step: int) -> float:
    if not np.isfinite(value):
        raise DivergenceError(f"{name} became non-finite at epoch {epoch}, step {step}")
    return value


def _steps_per_epoch(cfg: TrainConfig, n: int) -> int:
    return cfg.steps_per_epoch or max(1, math.ceil(n / cfg.batch_size))


def _epoch_order(cfg: TrainConfig, n: int, epoch: int, spe: int) -> np.ndarray:
    rng = RngStream(cfg.seed, (_KEY_EPOCH, epoch))
    reps = math.ceil(spe * cfg.batch_size / n)
    return np.concatenate([rng.spawn(r).permutation(n) for r in range(reps)])


def _resume_check(resume: TrainResult | None, cfg: TrainConfig, kinds: set[str]):
    if resume is None:
        return
    if set(resume.networks) != kinds:
        raise CheckpointError(f"checkpoint holds {sorted(resume.networks)}, expected {sorted(kinds)}")
    keep = {"epochs"}
    a = {k: v for k, v in dataclasses.asdict(resume.config).items() if k not in keep}
    b = {k: v for k, v in dataclasses.asdict(cfg).items() if k not in keep}
    if a != b:
        raise CheckpointError("resume config differs from the checkpoint's config")


# ---------------------------------------------------------------------------
# Denoiser training
# ---------------------------------------------------------------------------

def evaluate_denoiser(den: Denoiser, pairs: PairSet, batch: int = 32) -> dict[str, float]:
    """Held-out L1 and PSNR of the denoiser output and of the noisy input."""
    vr = pairs.value_range
    frozen = den.leaves(False)
    l1, l1_in, ps, ps_in = [], [], [], []
    for s in range(0, len(pairs), batch):
        y = pairs.clean[s:s + batch] / vr
        x = pairs.noisy[s:s + batch] / vr
        out = np.clip(den.forward(Tensor(x), frozen)[0].data, 0.0, 1.0)
        for o, xi, yi in zip(out, x, y):
            l1.append(np.mean(np.abs(o - yi)))
            l1_in.append(np.mean(np.abs(xi - yi)))
            ps.append(psnr(o, yi))
            ps_in.append(psnr(xi, yi))
    return {"l1": float(np.mean(l1)), "l1_noisy": float(np.mean(l1_in)),
            "psnr": float(np.mean(ps)), "psnr_noisy": float(np.mean(ps_in))}


def train_denoiser(pairs: PairSet, config: TrainConfig, val: PairSet | None = None,
                   resume: TrainResult | None = None, arch: UNetArch | None = None,
                   on_epoch: Callable[[TrainResult], None] | None = None) -> TrainResult:
    """L1 regression from noisy to clean in the normalized domain."""
    if len(pairs) == 0:
        raise DataError("empty training set")
    cfg = config
    _resume_check(resume, cfg, {"denoiser"})
    if resume is not None:
        den, opt = resume.denoiser.copy(), resume.optimizers["denoiser"]
        opt = AdamState.from_flat(den.params, opt.flat(), opt.step)
        log, start = [dict(r) for r in resume.log], resume.epochs_done
    else:
        den = Denoiser.create(RngStream(cfg.seed, (_KEY_INIT, 0)), arch)
        opt, log, start = AdamState.for_params(den.params), [], 0
    vr = pairs.value_range
    n = len(pairs)
    spe = _steps_per_epoch(cfg, n)
    total = cfg.epochs * spe
    result = TrainResult({"denoiser": den}, {"denoiser": opt}, log, cfg, start)
    for epoch in range(start, cfg.epochs):
        order = _epoch_order(cfg, n, epoch, spe)
        losses = []
        for s in range(spe):
            t = epoch * spe + s
            lr = cosine_lr(t, total, cfg.lr_init, cfg.lr_final)
            idx = order[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            clean, noisy = _crop(pairs, idx, cfg.patch_size, RngStream(cfg.seed, (_KEY_STEP, t)))
            leaves = den.leaves(True)
            out, _ = den.forward(Tensor(noisy / vr), leaves)
            loss = l1_between(out, Tensor(clean / vr))
            ad.backward(loss)
            losses.append(_finite("denoiser loss", loss.item(), epoch + 1, t))
            adam_step(den.params, {k: v.grad for k, v in leaves.items()}, opt, lr,
                      cfg.adam_beta1, cfg.adam_beta2)
        row = {"epoch": epoch + 1, "step": (epoch + 1) * spe, "loss": float(np.mean(losses)),
               "lr": lr, "val_l1": None, "val_psnr": None}
        if val is not None and len(val):
            ev = evaluate_denoiser(den, val)
            row["val_l1"], row["val_psnr"] = ev["l1"], ev["psnr"]
        log.append(row)
        result.epochs_done = epoch + 1
        if on_epoch is not None:
            on_epoch(result)
    return result


# ---------------------------------------------------------------------------
# Noise-model training
# ---------------------------------------------------------------------------

def generate_noisy(gen: Generator, y_hat: np.ndarray, n_init: np.ndarray, p=None) -> Tensor:
    """Pseudo-noisy batch ``clip(y_hat + G(n_init), 0, 1)`` in the normalized domain."""
    n_indep = gen.forward(Tensor(n_init), p)
    return ad.clip(ad.add(Tensor(y_hat), n_indep), 0.0, 1.0)


def synthesize_with_generator(gen: Generator, clean: np.ndarray, gain_K: float, sigma_r: float,
                              value_range: float, rng: RngStream, batch: int = 32) -> np.ndarray:
    """Noisy DN images for black-subtracted DN ``clean`` ``[N, 4, H, W]`` at one profile."""
    clean = np.asarray(clean, dtype=np.float64)
    single = clean.ndim == 3
    if single:
        clean = clean[None]
    frozen = gen.leaves(False)
    out = np.empty_like(clean)
    for s in range(0, len(clean), batch):
        chunk = clean[s:s + batch]
        y_hat = np.stack([shot_noise(c, gain_K, rng.spawn(s + j, 0)) for j, c in enumerate(chunk)])
        n_init = np.stack([rng.spawn(s + j, 1).normal(c.shape) for j, c in enumerate(chunk)])
        d = generate_noisy(gen, y_hat / value_range, n_init * (sigma_r / value_range), frozen)
        out[s:s + batch] = d.data * value_range
    return out[0] if single else out


def validation_kld(gen: Generator, val: PairSet, profiles: ProfileSet, seed: int) -> float:
    """Mean per-image KLD of generated vs real residuals with seeds fixed across epochs."""
    rng = RngStream(seed, (_KEY_VAL,))
    vr = val.value_range
    vals = []
    for i in range(len(val)):
        prof = profiles[int(val.isos[i])]
        syn = np.rint(synthesize_with_generator(gen, val.clean[i], prof.gain_K, prof.sigma_r, vr,
                                                rng.spawn(i)))
        h_syn = residual_histogram((syn - val.clean[i]) / vr)
        h_real = residual_histogram((val.noisy[i] - val.clean[i]) / vr)
        vals.append(kld(h_syn, h_real))
    return float(np.mean(vals))


def train_noise_model(pairs: PairSet, profiles: ProfileSet, denoiser: Denoiser | None,
                      config: TrainConfig, val: PairSet | None = None,
                      resume: TrainResult | None = None, gen_arch: UNetArch | None = None,
                      on_epoch: Callable[[TrainResult], None] | None = None) -> TrainResult:
    """Adversarial training of the signal-independent noise generator.

    The denoiser is only read; it may be ``None`` when both alignment
    weights are zero.
    """
    cfg = config
    if len(pairs) == 0:
        raise DataError("empty training set")
    pairs.check_profiles(profiles)
    if val is not None:
        val.check_profiles(profiles)
    use_align = cfg.lambda1 > 0 or cfg.lambda2 > 0
    if use_align and denoiser is None:
        raise ValueError("a trained denoiser is required when lambda1 or lambda2 is positive")
    _resume_check(resume, cfg, {"generator", "ftd"})
    ftd_arch = FTDArch(size=cfg.patch_size, fourier=cfg.discriminator == "ftd")
    if resume is not None:
        gen, critic = resume.generator.copy(), resume.critic.copy()
        if critic.arch != ftd_arch:
            raise CheckpointError("checkpoint discriminator architecture differs from the config")
        opt_g = AdamState.from_flat(gen.params, resume.optimizers["generator"].flat(),
                                    resume.optimizers["generator"].step)
        opt_d = AdamState.from_flat(critic.params, resume.optimizers["ftd"].flat(),
                                    resume.optimizers["ftd"].step)
        log, start = [dict(r) for r in resume.log], resume.epochs_done
    else:
        gen = Generator.create(RngStream(cfg.seed, (_KEY_INIT, 1)), gen_arch)
        critic = Discriminator.create(RngStream(cfg.seed, (_KEY_INIT, 2)), ftd_arch)
        opt_g, opt_d = AdamState.for_params(gen.params), AdamState.for_params(critic.params)
        log, start = [], 0
    frozen = denoiser.leaves(False) if use_align else None
    n = len(pairs)
    spe = _steps_per_epoch(cfg, n)
    total = cfg.epochs * spe
    B, C = cfg.batch_size, cfg.critic_steps_per_gen_step
    result = TrainResult({"generator": gen, "ftd": critic}, {"generator": opt_g, "ftd": opt_d},
                         log, cfg, start)
    if start == 0 and val is not None and len(val):
        log.append({"epoch": 0, "step": 0, "val_kld": validation_kld(gen, val, profiles, cfg.seed)})

    for epoch in range(start, cfg.epochs):
        order = _epoch_order(cfg, n, epoch, spe)
        acc = {"critic_loss": [], "gen_loss": [], "l1": [], "perceptual": []}
        for s in range(spe):
            t = epoch * spe + s
            lr = cosine_lr(t, total, cfg.lr_init, cfg.lr_final)
            srng = RngStream(cfg.seed, (_KEY_STEP, t))
            gfrozen = gen.leaves(False)
            for c in range(C):
                crng = srng.spawn(c)
                idx = crng.spawn(0).integers(0, n, B)
                b = make_batch(pairs, profiles, idx, cfg.patch_size, crng.spawn(1))
                fake = generate_noisy(gen, b.y_hat, init_noise(b, crng.spawn(2)), gfrozen).data
                x1, x2, dist = interpolate_pairs(b.real, fake, cfg.penalty_pairs,
                                                 cfg.penalty_distance, crng.spawn(3))
                leaves = critic.leaves(True)
                scores = critic.forward(Tensor(np.concatenate([b.real, fake, x1, x2])), leaves)
                k = cfg.penalty_pairs
                s_real, s_fake, s1, s2 = ad.split(scores, [B, B, k, k], axis=0)
                c_loss, _, _ = wgan_losses(s_real, s_fake, s1, s2, dist, cfg.penalty_coef)
                ad.backward(c_loss)
                acc["critic_loss"].append(_finite("critic loss", c_loss.item(), epoch + 1, t))
                adam_step(critic.params, {k_: v.grad for k_, v in leaves.items()}, opt_d, lr,
                          cfg.adam_beta1, cfg.adam_beta2)
            grng = srng.spawn(C)
            idx = order[s * B:(s + 1) * B]
            b = make_batch(pairs, profiles, idx, cfg.patch_size, grng.spawn(1))
            leaves = gen.leaves(True)
            fake = generate_noisy(gen, b.y_hat, init_noise(b, grng.spawn(2)), leaves)
            g_adv = ad.mul(ad.reduce_mean(critic.forward(fake)), -1.0)
            if use_align:
                out_f, taps_f = denoiser.forward(fake, frozen)
                out_r, taps_r = denoiser.forward(Tensor(b.real), frozen)
                l1 = l1_between(out_f, out_r)
                per = perceptual_between(taps_f, taps_r)
                loss = total_loss(g_adv, l1, per, cfg.lambda1, cfg.lambda2)
                acc["l1"].append(l1.item())
                acc["perceptual"].append(per.item())
            else:
                loss = g_adv
            ad.backward(loss)
            acc["gen_loss"].append(_finite("generator loss", g_adv.item(), epoch + 1, t))
            adam_step(gen.params, {k_: v.grad for k_, v in leaves.items()}, opt_g, lr,
                      cfg.adam_beta1, cfg.adam_beta2)
        row = {"epoch": epoch + 1, "step": (epoch + 1) * spe, "lr": lr}
        for k_, v in acc.items():
            row[k_] = float(np.mean(v)) if v else None
        row["val_kld"] = validation_kld(gen, val, profiles, cfg.seed) if val is not None and len(val) else None
        log.append(row)
        result.epochs_done = epoch + 1
        if on_epoch is not None:
            on_epoch(result)
    return result

"""Training schedules for SiGAN (three alternating Adam sub-steps) and the
single-loop GieGAN / DieGAN variants."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import nets
from .checkpoint import Checkpoint, save_checkpoint
from .config import TrainConfig
from .data import FaceBatch, IdentityCatalog, PairBatch, sample_face_batch, sample_pair_batch
from .losses import (
    check_gie_weights,
    class_cross_entropy,
    contrastive_loss,
    die_reconstruction_loss,
    gan_discriminator_loss,
    gan_generator_loss,
    gie_total_loss,
    gradients,
    one_hot,
    realism_loss,
    reconstruction_l1,
    require_grad,
)
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class StepMetrics:
    iteration: int
    loss_d: float
    loss_g: float
    loss_c: float
    rec_l1: float
    wall_ms: float


METRIC_FIELDS = ("iteration", "loss_d", "loss_g", "loss_c", "rec_l1", "wall_ms")


@dataclass
class TrainState:
    config: TrainConfig
    num_identities: int
    generator: nets.ModelSpec
    discriminator: nets.ModelSpec
    gen_params: dict
    disc_params: dict
    opt: dict = field(default_factory=dict)
    iteration: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    @property
    def variant(self) -> str:
        return self.config.variant

    def partitions(self) -> dict[str, list[str]]:
        """Parameter names each sub-step may update."""
        g_learn = self.generator.learnable_names()
        return {
            "d": self.discriminator.learnable_names(),
            "g": [n for n in g_learn if not n.startswith("head.")],
            "c": self.generator.prefix_names(),
        }

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint(
            variant=self.variant,
            iteration=self.iteration,
            config=self.config,
            num_identities=self.num_identities,
            generator=self.generator,
            discriminator=self.discriminator,
            gen_params=dict(self.gen_params),
            disc_params=dict(self.disc_params),
            rng_state=self.rng.bit_generator.state,
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "TrainState":
        rng = np.random.default_rng()
        rng.bit_generator.state = ckpt.rng_state
        return cls(
            config=ckpt.config,
            num_identities=ckpt.num_identities,
            generator=ckpt.generator,
            discriminator=ckpt.discriminator,
            gen_params=dict(ckpt.gen_params),
            disc_params=dict(ckpt.disc_params),
            opt={k: AdamState() for k in "dgc"},
            iteration=ckpt.iteration,
            rng=rng,
        )


def build_models(config: TrainConfig, num_identities: int):
    arch = dict(
        tail_channels=config.tail_channels,
        res_before=config.res_before,
        res_between=config.res_between,
    )
    gen = nets.build_generator(config.variant, config.lr_size, num_identities, **arch)
    if config.variant == "diegan":
        disc = nets.build_discriminator("multiclass", config.hr_size, num_identities)
    else:
        channels = 4 if config.variant == "giegan" else 3
        disc = nets.build_discriminator("realfake", config.hr_size, input_channels=channels)
    return gen, disc


def init_state(config: TrainConfig, num_identities: int) -> TrainState:
    gen, disc = build_models(config, num_identities)
    torch_rng = torch.Generator().manual_seed(config.seed)
    return TrainState(
        config=config,
        num_identities=num_identities,
        generator=gen,
        discriminator=disc,
        gen_params=nets.init_parameters(gen, torch_rng),
        disc_params=nets.init_parameters(disc, torch_rng),
        opt={k: AdamState() for k in "dgc"},
        iteration=0,
        rng=np.random.default_rng(config.seed),
    )


def _finite(value: torch.Tensor, state: TrainState, substep: int, name: str) -> float:
    v = float(value.detach())
    if not np.isfinite(v):
        raise TrainingError(f"non-finite loss at iteration {state.iteration + 1}, sub-step {substep} ({name})")
    return v


def _adam(state: TrainState, key: str, params: dict, grads: dict, lr: float):
    cfg = state.config
    return adam_step(params, grads, state.opt[key], lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)


def _discriminator_step(state: TrainState, real_in, fake_in, label_plane=None, targets=None):
    """Shared sub-step 1. Returns (new disc params, adam state, loss value)."""
    dspec, part = state.discriminator, state.partitions()["d"]
    dp = require_grad(state.disc_params, part)
    real = nets.discriminator_forward(dspec, dp, real_in, label_plane, train=True)
    fake = nets.discriminator_forward(dspec, dp, fake_in, label_plane, train=True)
    if targets is None:
        loss = gan_discriminator_loss(real.output, fake.output)
    else:
        fake_class = torch.full_like(targets, dspec.num_classes)
        loss = class_cross_entropy(real.output, targets) + class_cross_entropy(fake.output, fake_class)
    value = _finite(loss, state, 1, "discriminator")
    new, opt = _adam(state, "d", state.disc_params, gradients(loss, dp, part), state.config.lr_d)
    new.update(real.stats)
    return new, opt, value


def sigan_train_step(state: TrainState, batch: PairBatch) -> tuple[TrainState, StepMetrics]:
    """Discriminator step, generator step (adversarial + L1), then a
    contrastive step on the shared generator trunk and perceptual head."""
    if state.variant != "sigan":
        raise TrainingError(f"sigan step called on a {state.variant} state")
    t0 = time.perf_counter()
    cfg, gspec = state.config, state.generator
    parts = state.partitions()
    b = len(batch)
    lr_both = torch.cat([batch.lr1, batch.lr2])
    hr_both = torch.cat([batch.hr1, batch.hr2])

    gp = require_grad(state.gen_params, parts["g"])
    try:
        g_out = nets.generator_forward(gspec, gp, lr_both, train=True)
    except nets.NonFiniteError as exc:
        raise TrainingError(f"iteration {state.iteration + 1}, sub-step 2: {exc}") from exc
    sr = g_out.output

    # 1: discriminator on real HR (both pair sides) vs detached hallucinations
    disc, opt_d, loss_d = _discriminator_step(state, hr_both, sr.detach())

    # 2: generator
    d_fake = nets.discriminator_forward(state.discriminator, disc, sr, train=True).output
    rec = reconstruction_l1(sr[:b], batch.hr1) + reconstruction_l1(sr[b:], batch.hr2)
    loss_g = gan_generator_loss(d_fake, cfg.saturating) + cfg.lambda_r * rec
    loss_g_value = _finite(loss_g, state, 2, "generator")
    gen, opt_g = _adam(state, "g", state.gen_params, gradients(loss_g, gp, parts["g"]), cfg.lr_g)
    gen.update(g_out.stats)

    # 3: contrastive, generator frozen at its post-step-2 values
    opt_c = state.opt["c"]
    if cfg.lambda_c > 0:
        cp = require_grad(gen, parts["c"])
        feats = nets.perceptual_features(gspec, cp, lr_both, train=True).output
        loss_c = cfg.lambda_c * contrastive_loss(feats[:b], feats[b:], batch.y, cfg.margin)
        loss_c_value = _finite(loss_c, state, 3, "contrastive")
        gen, opt_c = _adam(state, "c", gen, gradients(loss_c, cp, parts["c"]), cfg.lr_c)
    else:
        with torch.no_grad():
            feats = nets.perceptual_features(gspec, gen, lr_both, train=True).output
            loss_c_value = float(contrastive_loss(feats[:b], feats[b:], batch.y, cfg.margin))

    new = dataclasses.replace(
        state,
        gen_params=gen,
        disc_params=disc,
        opt={"d": opt_d, "g": opt_g, "c": opt_c},
        iteration=state.iteration + 1,
    )
    metrics = StepMetrics(
        new.iteration, loss_d, loss_g_value, loss_c_value, float(rec.detach()) / 2, 1e3 * (time.perf_counter() - t0)
    )
    return new, metrics


def giegan_train_step(state: TrainState, batch: FaceBatch, labels=None) -> tuple[TrainState, StepMetrics]:
    """Label-conditioned generator (RGB + identity plane in and out) against a
    label-conditioned real/fake discriminator."""
    if state.variant != "giegan":
        raise TrainingError(f"giegan step called on a {state.variant} state")
    t0 = time.perf_counter()
    cfg, gspec = state.config, state.generator
    labels = batch.identity if labels is None else torch.as_tensor(labels)
    C = state.num_identities
    plane_lr = nets.label_plane(labels, C, gspec.input_size)
    plane_hr = nets.label_plane(labels, C, gspec.output_size)
    lr4 = torch.cat([batch.lr, plane_lr], dim=1)
    hr4 = torch.cat([batch.hr, plane_hr], dim=1)
    part_g = state.partitions()["g"]

    gp = require_grad(state.gen_params, part_g)
    g_out = nets.generator_forward(gspec, gp, lr4, train=True)
    sr4 = g_out.output

    disc, opt_d, loss_d = _discriminator_step(state, batch.hr, sr4[:, :3].detach(), plane_hr)

    d_fake = nets.discriminator_forward(state.discriminator, disc, sr4[:, :3], plane_hr, train=True).output
    check_gie_weights(cfg.gamma, cfg.beta)
    loss_g = gie_total_loss(d_fake, sr4, hr4, cfg.gamma, cfg.beta)
    loss_g_value = _finite(loss_g, state, 2, "generator")
    gen, opt_g = _adam(state, "g", state.gen_params, gradients(loss_g, gp, part_g), cfg.lr_g)
    gen.update(g_out.stats)

    new = dataclasses.replace(
        state,
        gen_params=gen,
        disc_params=disc,
        opt={**state.opt, "d": opt_d, "g": opt_g},
        iteration=state.iteration + 1,
    )
    rec = float(reconstruction_l1(sr4[:, :3].detach(), batch.hr))
    metrics = StepMetrics(
        new.iteration, loss_d, loss_g_value, float(realism_loss(d_fake.detach())), rec, 1e3 * (time.perf_counter() - t0)
    )
    return new, metrics


def diegan_train_step(state: TrainState, batch: FaceBatch, labels=None) -> tuple[TrainState, StepMetrics]:
    """(C+1)-class discriminator: real faces target their identity, fakes
    target class C. The generator wants fakes classified as the true identity."""
    if state.variant != "diegan":
        raise TrainingError(f"diegan step called on a {state.variant} state")
    t0 = time.perf_counter()
    cfg, gspec, dspec = state.config, state.generator, state.discriminator
    labels = batch.identity if labels is None else torch.as_tensor(labels)
    labels = labels.long()
    C = state.num_identities
    if (labels < 0).any() or (labels >= C).any():
        raise ValueError(f"identity labels must lie in [0, {C})")
    part_g = state.partitions()["g"]

    gp = require_grad(state.gen_params, part_g)
    g_out = nets.generator_forward(gspec, gp, batch.lr, train=True)
    sr = g_out.output

    disc, opt_d, loss_d = _discriminator_step(state, batch.hr, sr.detach(), targets=labels)

    probs = nets.discriminator_forward(dspec, disc, sr, train=True).output
    identity = class_cross_entropy(probs, labels)
    loss_g = identity + die_reconstruction_loss(probs, one_hot(labels, C + 1, probs.dtype), sr, batch.hr, cfg.gamma)
    loss_g_value = _finite(loss_g, state, 2, "generator")
    gen, opt_g = _adam(state, "g", state.gen_params, gradients(loss_g, gp, part_g), cfg.lr_g)
    gen.update(g_out.stats)

    new = dataclasses.replace(
        state,
        gen_params=gen,
        disc_params=disc,
        opt={**state.opt, "d": opt_d, "g": opt_g},
        iteration=state.iteration + 1,
    )
    rec = float(reconstruction_l1(sr.detach(), batch.hr))
    metrics = StepMetrics(
        new.iteration, loss_d, loss_g_value, float(identity.detach()), rec, 1e3 * (time.perf_counter() - t0)
    )
    return new, metrics


def train_step(state: TrainState, catalog: IdentityCatalog) -> tuple[TrainState, StepMetrics]:
    """Sample a batch from ``catalog`` with the state's RNG and run one step."""
    cfg = state.config
    if cfg.variant == "sigan":
        batch = sample_pair_batch(catalog, cfg.batch_size, cfg.genuine_fraction, state.rng)
        return sigan_train_step(state, batch)
    batch = sample_face_batch(catalog, cfg.batch_size, state.rng)
    step = giegan_train_step if cfg.variant == "giegan" else diegan_train_step
    return step(state, batch, batch.identity)


def write_metrics(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(METRIC_FIELDS) + "\n")
        for r in rows:
            fh.write(f"{r.iteration},{r.loss_d:.8g},{r.loss_g:.8g},{r.loss_c:.8g},{r.rec_l1:.8g},{r.wall_ms:.3f}\n")


def train(config: TrainConfig, catalog: IdentityCatalog, out_dir=None, *, state: TrainState | None = None, log_every: int = 50):
    """Run ``config.iterations`` steps. Returns ``(Checkpoint, metrics)``.

    With ``out_dir`` set, checkpoints land in ``out_dir/checkpoint.sgck``
    every ``checkpoint_every`` steps and at the end, alongside ``metrics.csv``.
    """
    if catalog.hr_size != config.hr_size:
        raise TrainingError(f"catalog HR size {catalog.hr_size} does not match 4 x lr_size = {config.hr_size}")
    catalog.validate()
    if state is None:
        state = init_state(config, catalog.num_identities)
    elif state.num_identities != catalog.num_identities:
        raise TrainingError("catalog identity count differs from the state's")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log.info("training %s: %d iterations, config digest %s", config.variant, config.iterations, config.digest())
    metrics: list[StepMetrics] = []
    for k in range(config.iterations):
        state, row = train_step(state, catalog)
        metrics.append(row)
        if log_every and (k + 1) % log_every == 0:
            log.info(
                "iter %d loss_d=%.4f loss_g=%.4f loss_c=%.4f rec=%.2f (%.0f ms)",
                row.iteration, row.loss_d, row.loss_g, row.loss_c, row.rec_l1, row.wall_ms,
            )
        if out is not None and config.checkpoint_every and (k + 1) % config.checkpoint_every == 0:
            save_checkpoint(state.to_checkpoint(), out / "checkpoint.sgck")
    ckpt = state.to_checkpoint()
    if out is not None:
        save_checkpoint(ckpt, out / "checkpoint.sgck")
        write_metrics(metrics, out / "metrics.csv")
    return ckpt, metrics

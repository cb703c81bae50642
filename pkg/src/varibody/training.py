"""Finetuning: strategic noise schedule, depth losses, GAN losses, train loop.

The loop couples four supervision signals on the generator: score-distillation
gradients injected through (possibly region-cropped) renders, a feature-space
depth smoothness loss, a non-saturating GAN loss against the toy corpus, and
plain R1-regularized discriminator updates. The fresh/fixed latent decision is
the first rng draw of every iteration so changing p never perturbs the other
random streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn

from .body import (
    BodyParams,
    ParamDistributions,
    RegionName,
    ZOOM_REGIONS,
    camera_for_region,
    rewrite_prompt,
    sample_body_params,
    semantic_regions,
)
from .config import RunConfig, config_to_dict
from .errors import ParameterError, TrainingError
from .features import FeaturePyramid
from .fields import FieldConfig, GeneratorModel, RenderedView, draw_latent, render_view
from .geometry import DTYPE, Camera
from .guidance import Corpus, PromptEmbedding, ToyPrior, generate_corpus, sds_grad, sds_proxy, Vocabulary


# --- strategic noise schedule -------------------------------------------------


@dataclass(frozen=True)
class NoiseSchedulePolicy:
    """Fresh latent with probability p, else one fixed latent drawn at setup."""

    p: float
    fixed_z: torch.Tensor

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise ParameterError(f"p must be in [0, 1], got {self.p}")
        z = torch.as_tensor(self.fixed_z, dtype=DTYPE)
        object.__setattr__(self, "fixed_z", z)
        if z.ndim != 1 or not torch.isfinite(z).all():
            raise ParameterError("fixed_z must be a finite vector")

    @staticmethod
    def create(rng: torch.Generator, p: float, dim: int) -> "NoiseSchedulePolicy":
        return NoiseSchedulePolicy(p=p, fixed_z=draw_latent(rng, dim))


def next_latent(policy: NoiseSchedulePolicy, rng: torch.Generator) -> tuple[torch.Tensor, str]:
    """One uniform draw decides fresh vs fixed; a fresh draw consumes dim normals.

    p = 0 and p = 1 are exact: rand() in [0, 1) is never < 0 and always < 1.
    The fixed branch returns the policy's tensor itself (treat as read-only).
    """
    u = torch.rand((), generator=rng, dtype=DTYPE)
    if float(u) < policy.p:
        return draw_latent(rng, policy.fixed_z.shape[0]), "fresh"
    return policy.fixed_z, "fixed"


@dataclass(frozen=True)
class LossWeights:
    lambda_sds: float = 1.0
    lambda_depth: float = 1.0
    lambda_adv: float = 1.0

    def __post_init__(self):
        for name in ("lambda_sds", "lambda_depth", "lambda_adv"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ParameterError(f"{name} must be finite and >= 0, got {v}")


# --- depth supervision ---------------------------------------------------------


def _gaussian_kernel(size: int = 7, sigma: float = 1.5) -> torch.Tensor:
    ax = torch.arange(size, dtype=DTYPE) - (size - 1) / 2
    g = torch.exp(-0.5 * (ax / sigma) ** 2)
    k = g[:, None] * g[None, :]
    return (k / k.sum()).reshape(1, 1, size, size)


_BLUR_KERNEL = _gaussian_kernel()


def guided_blur(depth: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mask-normalized Gaussian blur inside the mask; identity outside.

    out = m * blur(m*d)/blur(m) + (1-m) * d. Detached: the result is a
    pseudo ground truth, constant for the loss.
    """
    if depth.shape != mask.shape or depth.ndim != 2:
        raise ParameterError("depth and mask must be matching (H, W) maps")
    with torch.no_grad():
        d = depth.detach()[None, None]
        m = mask.detach().to(DTYPE)[None, None]
        pad = _BLUR_KERNEL.shape[-1] // 2
        num = nn.functional.conv2d(d * m, _BLUR_KERNEL, padding=pad)
        den = nn.functional.conv2d(m, _BLUR_KERNEL, padding=pad)
        smooth = num / den.clamp(min=1e-12)
        out = mask.detach() * smooth[0, 0] + (1.0 - mask.detach()) * depth.detach()
    return out


def pseudo_gt_depth(view: RenderedView) -> torch.Tensor:
    """Smoothed stand-in ground truth for the rendered depth (no gradient)."""
    return guided_blur(view.depth, view.mask)


def feature_depth_loss(
    pred: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor, extractor: FeaturePyramid
) -> torch.Tensor:
    """Mean |F(pred*m) - F(gt*m)| over feature cells whose receptive field

    touches the mask. Empty mask -> exact 0 (graph-connected). Symmetric in
    (pred, gt) and zero when they agree.
    """
    if pred.shape != gt.shape or pred.shape != mask.shape or pred.ndim != 2:
        raise ParameterError(
            f"pred/gt/mask must be matching (H, W) maps, got {tuple(pred.shape)}, "
            f"{tuple(gt.shape)}, {tuple(mask.shape)}"
        )
    m = mask.to(DTYPE)
    if float(m.sum()) == 0.0:
        return pred.sum() * 0.0
    fa = extractor((pred * m)[None, None])
    fb = extractor((gt * m)[None, None])
    cover = extractor.coverage(m[None, None])
    total = pred.new_zeros(())
    count = 0.0
    for a, b, c in zip(fa, fb, cover):
        sel = c.to(DTYPE)  # (1, 1, h, w) broadcast over channels
        total = total + ((a - b).abs() * sel).sum()
        count += float(sel.sum()) * a.shape[1]
    return total / count


# --- adversarial losses --------------------------------------------------------


class Discriminator(nn.Module):
    """Small strided conv classifier at corpus resolution. SiLU keeps it smooth

    (the R1 penalty needs well-behaved double gradients).
    """

    def __init__(self, height: int = 32, width: int = 16, hidden: int = 16, seed: int = 1):
        super().__init__()
        self.height = height
        self.width = width
        self.conv1 = nn.Conv2d(3, hidden, 3, stride=2, padding=1, dtype=DTYPE)
        self.conv2 = nn.Conv2d(hidden, 2 * hidden, 3, stride=2, padding=1, dtype=DTYPE)
        self.conv3 = nn.Conv2d(2 * hidden, 2 * hidden, 3, stride=2, padding=1, dtype=DTYPE)
        flat = 2 * hidden * math.ceil(height / 8) * math.ceil(width / 8)
        self.head = nn.Linear(flat, 1, dtype=DTYPE)
        gen = torch.Generator().manual_seed(seed)
        for mod in (self.conv1, self.conv2, self.conv3, self.head):
            fan_in = mod.weight.shape[1] * (9 if mod.weight.ndim == 4 else 1)
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                mod.weight.uniform_(-bound, bound, generator=gen)
                mod.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1:] != (3, self.height, self.width):
            raise ParameterError(
                f"discriminator expects (B, 3, {self.height}, {self.width}), got {tuple(x.shape)}"
            )
        h = nn.functional.silu(self.conv1(x))
        h = nn.functional.silu(self.conv2(h))
        h = nn.functional.silu(self.conv3(h))
        return self.head(h.reshape(h.shape[0], -1)).squeeze(-1)


def _as_batch(x) -> torch.Tensor:
    if isinstance(x, RenderedView):
        x = x.rgb
    t = torch.as_tensor(x, dtype=DTYPE)
    if t.ndim == 3 and t.shape[-1] == 3:   # (H, W, 3)
        t = t.permute(2, 0, 1)[None]
    elif t.ndim == 3:                      # (3, H, W)
        t = t[None]
    return t


def gan_losses(
    disc: Discriminator, fake, real, r1_gamma: float = 1.0
) -> tuple[torch.Tensor, torch.Tensor, dict]:
    """Non-saturating logistic losses with an R1 penalty on real samples.

    Returns (generator loss, discriminator loss, scalar parts). At zero logits
    the generator loss is ln 2 and the discriminator loss 2 ln 2 + penalty.
    The generator loss keeps the graph into `fake`; the discriminator loss
    sees the fake batch detached.
    """
    fake_b = _as_batch(fake)
    real_b = _as_batch(real)
    if fake_b.shape[1:] != real_b.shape[1:]:
        raise ParameterError(
            f"fake/real resolutions must agree, got {tuple(fake_b.shape)} vs {tuple(real_b.shape)}"
        )
    g_loss = nn.functional.softplus(-disc(fake_b)).mean()

    real_in = real_b.detach().clone().requires_grad_(True)
    d_real = disc(real_in)
    grad_real = torch.autograd.grad(d_real.sum(), real_in, create_graph=True)[0]
    penalty = 0.5 * r1_gamma * grad_real.pow(2).sum(dim=(1, 2, 3)).mean()
    d_fake = disc(fake_b.detach())
    d_loss = nn.functional.softplus(-d_real).mean() + nn.functional.softplus(d_fake).mean() + penalty
    parts = {
        "d_real": float(d_real.detach().mean()),
        "d_fake": float(d_fake.detach().mean()),
        "r1": float(penalty.detach()),
    }
    return g_loss, d_loss, parts


def total_loss(adv, sds_proxy_val, depth, weights: LossWeights, iteration: int | None = None):
    """adv + lambda_sds * sds_proxy + lambda_depth * depth, with finiteness checks."""
    parts = {"adv": adv, "sds_proxy": sds_proxy_val, "depth": depth}
    for name, v in parts.items():
        val = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(val):
            where = f" at iteration {iteration}" if iteration is not None else ""
            raise TrainingError(f"non-finite loss component {name}={val}{where}")
    if isinstance(adv, torch.Tensor) or isinstance(sds_proxy_val, torch.Tensor) or isinstance(depth, torch.Tensor):
        return torch.as_tensor(adv, dtype=DTYPE) + weights.lambda_sds * torch.as_tensor(
            sds_proxy_val, dtype=DTYPE
        ) + weights.lambda_depth * torch.as_tensor(depth, dtype=DTYPE)
    return adv + weights.lambda_sds * sds_proxy_val + weights.lambda_depth * depth


# --- train state ---------------------------------------------------------------


def resize_hwc(img: torch.Tensor, out_hw: tuple[int, int]) -> torch.Tensor:
    """(H, W, C) -> (C, h, w), average-pooled when the ratio is integer."""
    h, w = img.shape[0], img.shape[1]
    oh, ow = out_hw
    chw = img.permute(2, 0, 1)[None]
    if h % oh == 0 and w % ow == 0 and h // oh == w // ow:
        if h // oh == 1:
            return chw[0]
        out = nn.functional.avg_pool2d(chw, kernel_size=h // oh)
    else:
        out = nn.functional.interpolate(chw, size=(oh, ow), mode="bilinear", align_corners=False)
    return out[0]


def field_config_from(config: RunConfig) -> FieldConfig:
    return FieldConfig(latent_dim=config.latent_dim, hidden_dim=config.hidden_dim)


@dataclass
class TrainState:
    config: RunConfig
    iteration: int
    model: GeneratorModel
    disc: Discriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rng: torch.Generator
    policy: NoiseSchedulePolicy
    weights: LossWeights
    dists: ParamDistributions
    regions: dict
    region_embeddings: dict
    full_embedding: PromptEmbedding
    depth_features: FeaturePyramid
    corpus_images: torch.Tensor
    history: list = field(default_factory=list)


def create_train_state(config: RunConfig, prior: ToyPrior, corpus: Corpus | None = None) -> TrainState:
    """Deterministic setup. Setup rng draws, in order: generator init seed,

    discriminator init seed, then the policy's fixed latent.
    """
    rng = torch.Generator().manual_seed(config.seed)
    model_seed = int(torch.randint(2**31 - 1, (1,), generator=rng))
    disc_seed = int(torch.randint(2**31 - 1, (1,), generator=rng))
    policy = NoiseSchedulePolicy.create(rng, config.p, config.latent_dim)

    model = GeneratorModel(config=field_config_from(config), seed=model_seed)
    if corpus is None:
        corpus = generate_corpus(config.corpus, prior.vocab)
    disc = Discriminator(height=corpus.config.height, width=corpus.config.width, seed=disc_seed)
    opt_g = torch.optim.Adam(model.parameters(), lr=config.lr_generator)
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.lr_discriminator)

    regions = semantic_regions()
    vocab = prior.vocab
    full_embedding = vocab.encode(config.prompt)
    region_embeddings = {
        name: vocab.encode(rewrite_prompt(config.prompt, regions[name])) for name in ZOOM_REGIONS
    }
    dists = ParamDistributions()
    weights = LossWeights(
        lambda_sds=config.lambda_sds,
        lambda_depth=config.lambda_depth,
        lambda_adv=config.lambda_adv,
    )
    return TrainState(
        config=config,
        iteration=0,
        model=model,
        disc=disc,
        opt_g=opt_g,
        opt_d=opt_d,
        rng=rng,
        policy=policy,
        weights=weights,
        dists=dists,
        regions=regions,
        region_embeddings=region_embeddings,
        full_embedding=full_embedding,
        depth_features=FeaturePyramid(in_channels=1, seed=config.feature_seed),
        corpus_images=corpus.images,
    )


def _sds_timestep(config: RunConfig, timesteps: int, rng: torch.Generator) -> int:
    lo = max(1, int(math.ceil(config.t_low_frac * timesteps)))
    hi = max(lo, int(math.floor(config.t_high_frac * timesteps)))
    return int(torch.randint(lo, hi + 1, (1,), generator=rng))


def _check_finite_grads(module: nn.Module, label: str, iteration: int, context: dict):
    bad = [n for n, p in module.named_parameters() if p.grad is not None and not torch.isfinite(p.grad).all()]
    if bad:
        raise TrainingError(
            f"non-finite {label} gradient at iteration {iteration} in {bad[:4]}; "
            f"diagnostics: { {k: float(v) for k, v in context.items()} }"
        )


def finetune_step(state: TrainState, prior: ToyPrior) -> TrainState:
    """One training iteration; mutates and returns the state.

    Per-iteration rng draw order (the contract the ablation oracle relies on):
      1. fresh/fixed uniform, then the fresh latent's normals if taken;
      2. body params (beta, theta normals; azimuth/elevation/distance uniforms);
      3. full-view ray jitter;
      4. only if lambda_sds > 0: region uniform, the zoom region index if the
         full body was not picked, the zoom view's ray jitter, the SDS
         timestep, and the SDS noise image;
      5. only if lambda_adv > 0: the real-batch indices.
    SDS and depth gradients reach the generator only; the discriminator is
    updated by its own loss alone (skipped entirely when frozen).
    """
    cfg = state.config
    rng = state.rng
    it = state.iteration
    h, w = cfg.resolution
    s = cfg.samples_per_ray

    z, flag = next_latent(state.policy, rng)
    params = sample_body_params(rng, state.dists)
    # jitter is drawn here (not inside the renderer) so the rng accounting
    # stays explicit in this function
    jitter = torch.rand(h, w, s, generator=rng, dtype=DTYPE)
    full_view = _render_with_jitter(state.model, z, params, (h, w), s, jitter)

    region_name = RegionName.FULL_BODY
    sds_img = None
    sds_gradient = None
    sds_val = 0.0
    if cfg.lambda_sds > 0:
        u_r = float(torch.rand((), generator=rng, dtype=DTYPE))
        if u_r >= cfg.region_prob:
            region_name = ZOOM_REGIONS[int(torch.randint(len(ZOOM_REGIONS), (1,), generator=rng))]
        if region_name is RegionName.FULL_BODY:
            sds_view = full_view
            emb = state.full_embedding
        else:
            region = state.regions[region_name]
            region_jitter = torch.rand(h, w, s, generator=rng, dtype=DTYPE)
            sds_view = _render_with_jitter(
                state.model, z, params, (h, w), s, region_jitter,
                cam=camera_for_region(region, params.cam),
            )
            emb = state.region_embeddings[region_name]
        t = _sds_timestep(cfg, prior.schedule.timesteps, rng)
        sds_img = resize_hwc(sds_view.rgb, (prior.height, prior.width))
        raw_grad = sds_grad(prior, sds_img.detach(), emb, t, rng, cfg.cfg_scale)
        sds_gradient = cfg.lambda_sds * raw_grad
        sds_val = sds_proxy(raw_grad)

    depth_val = 0.0
    depth_term = None
    if cfg.lambda_depth > 0:
        pgt = pseudo_gt_depth(full_view)
        depth_term = feature_depth_loss(
            full_view.depth, pgt, full_view.mask.detach(), state.depth_features
        )
        depth_val = float(depth_term.detach())

    adv_val = 0.0
    d_loss = None
    d_val = 0.0
    g_adv = None
    if cfg.lambda_adv > 0:
        fake = resize_hwc(full_view.rgb, (state.disc.height, state.disc.width))[None]
        idx = torch.randint(state.corpus_images.shape[0], (cfg.real_batch,), generator=rng)
        real = state.corpus_images[idx]
        g_adv, d_loss, _parts = gan_losses(state.disc, fake, real, cfg.r1_gamma)
        adv_val = float(g_adv.detach()) * cfg.lambda_adv
        d_val = float(d_loss.detach())

    gen_obj = None
    if g_adv is not None:
        gen_obj = cfg.lambda_adv * g_adv
    if depth_term is not None:
        gen_obj = depth_term * cfg.lambda_depth if gen_obj is None else gen_obj + cfg.lambda_depth * depth_term

    state.opt_g.zero_grad(set_to_none=True)
    state.opt_d.zero_grad(set_to_none=True)
    tensors, grads = [], []
    if gen_obj is not None:
        tensors.append(gen_obj)
        grads.append(None)
    if sds_img is not None:
        tensors.append(sds_img)
        grads.append(sds_gradient)
    if tensors:
        torch.autograd.backward(tensors, grads)
    context = {"adv": adv_val, "sds_proxy": sds_val, "depth": depth_val, "d_loss": d_val}
    _check_finite_grads(state.model, "generator", it, context)
    state.opt_g.step()

    if d_loss is not None and not cfg.freeze_discriminator:
        state.opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        _check_finite_grads(state.disc, "discriminator", it, context)
        state.opt_d.step()

    total = total_loss(adv_val, sds_val, depth_val, state.weights, iteration=it)
    state.history.append(
        {
            "iteration": it,
            "latent": flag,
            "region": region_name.value,
            "adv": adv_val,
            "d_loss": d_val,
            "sds_proxy": sds_val,
            "depth": depth_val,
            "total": float(total),
        }
    )
    state.iteration += 1
    return state


def _render_with_jitter(model, z, params, resolution, n_samples, jitter, cam=None) -> RenderedView:
    """render_view with an externally drawn jitter tensor (keeps rng accounting

    in finetune_step explicit)."""
    from .body import pose_part_volumes, posed_bounds
    from .fields import query_field, render_rays
    from .geometry import near_far_for_bounds

    cam = cam or params.cam
    volumes = pose_part_volumes(params, model.skeleton)
    lo, hi = posed_bounds(volumes)
    near, far = near_far_for_bounds(cam, lo, hi)
    origins, dirs = cam.rays(resolution)
    rgb, depth, mask = render_rays(
        lambda pts: query_field(model, z, pts, volumes),
        origins, dirs, near, far, n_samples, model.config.background, jitter,
    )
    return RenderedView(
        rgb=rgb.clamp(0.0, 1.0), depth=depth.clamp(near, far), mask=mask,
        cam=cam, near=near, far=far,
    )


def run_finetune(
    config: RunConfig,
    prior: ToyPrior,
    out_dir: str | Path | None = None,
    corpus: Corpus | None = None,
    progress_every: int = 0,
) -> TrainState:
    """Run config.iterations steps; optionally write checkpoints + loss CSV."""
    from . import artifacts

    corpus = corpus or generate_corpus(config.corpus, prior.vocab)
    state = create_train_state(config, prior, corpus)
    out = Path(out_dir) if out_dir else None
    for i in range(config.iterations):
        finetune_step(state, prior)
        if progress_every and (i + 1) % progress_every == 0:
            row = state.history[-1]
            print(
                f"iter {i + 1}/{config.iterations} total={row['total']:.4f} "
                f"adv={row['adv']:.4f} sds={row['sds_proxy']:.4f} depth={row['depth']:.5f}"
            )
        if out and config.checkpoint_every and (i + 1) % config.checkpoint_every == 0:
            save_train_state(out / f"checkpoint_{i + 1:06d}.ckpt", state)
    if out:
        save_train_state(out / "checkpoint.ckpt", state)
        write_history_csv(out / "loss_history.csv", state.history)
    return state


def write_history_csv(path: str | Path, history: list[dict]):
    from .artifacts import atomic_write_bytes

    cols = ["iteration", "latent", "region", "adv", "d_loss", "sds_proxy", "depth", "total"]
    lines = [",".join(cols)]
    for row in history:
        cells = []
        for c in cols:
            v = row.get(c, "")
            cells.append(f"{v:.17g}" if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


# --- checkpointing -------------------------------------------------------------


def _named_params(module: nn.Module) -> list[tuple[str, torch.Tensor]]:
    return list(module.named_parameters())


def save_train_state(path: str | Path, state: TrainState):
    from . import artifacts

    tensors = {}
    tensors.update(artifacts.pack_module(state.model, "gen"))
    tensors.update(artifacts.pack_module(state.disc, "disc"))
    tensors.update(artifacts.pack_adam(state.opt_g, _named_params(state.model), "opt_g"))
    tensors.update(artifacts.pack_adam(state.opt_d, _named_params(state.disc), "opt_d"))
    tensors.update(artifacts.pack_rng(state.rng, "rng"))
    tensors["policy.fixed_z"] = state.policy.fixed_z
    meta = {
        "kind": "train_state",
        "config": config_to_dict(state.config),
        "iteration": state.iteration,
        "code_version": artifacts.code_version_hash(),
    }
    artifacts.save_checkpoint(path, tensors, meta)


def load_train_state(path: str | Path, prior: ToyPrior, corpus: Corpus | None = None) -> TrainState:
    from . import artifacts
    from .config import RunConfig as RC, _build

    arrays, meta = artifacts.load_checkpoint(path)
    config = _build(RC, meta["config"])
    state = create_train_state(config, prior, corpus)
    artifacts.unpack_module(state.model, arrays, "gen")
    artifacts.unpack_module(state.disc, arrays, "disc")
    artifacts.unpack_adam(state.opt_g, arrays, _named_params(state.model), "opt_g")
    artifacts.unpack_adam(state.opt_d, arrays, _named_params(state.disc), "opt_d")
    artifacts.unpack_rng(state.rng, arrays, "rng")
    object.__setattr__(state.policy, "fixed_z", torch.as_tensor(arrays["policy.fixed_z"], dtype=DTYPE))
    state.iteration = int(meta["iteration"])
    return state


def load_generator(path: str | Path) -> tuple[GeneratorModel, RunConfig, dict]:
    """Rebuild just the generator (for sampling/meshing) from a train checkpoint."""
    from . import artifacts
    from .config import RunConfig as RC, _build

    arrays, meta = artifacts.load_checkpoint(path)
    if meta.get("kind") != "train_state":
        from .errors import CheckpointError

        raise CheckpointError(f"{path}: not a train-state checkpoint (kind={meta.get('kind')!r})")
    config = _build(RC, meta["config"])
    model = GeneratorModel(config=field_config_from(config), seed=0)
    artifacts.unpack_module(model, arrays, "gen")
    return model, config, meta


# --- inference sampling ----------------------------------------------------------


def default_sample_camera(dists: ParamDistributions | None = None) -> Camera:
    d = dists or ParamDistributions()
    return Camera(
        azimuth=0.0,
        elevation=0.0,
        distance=0.5 * (d.distance_range[0] + d.distance_range[1]),
        fov=d.fov,
    )


def sample_views(
    model: GeneratorModel,
    n: int,
    seed: int,
    resolution: tuple[int, int] = (64, 32),
    n_samples: int = 32,
) -> tuple[list[RenderedView], list[torch.Tensor]]:
    """Draw n latents and render each from the canonical front camera.

    Shape/pose are held at their means so the views isolate latent-driven
    appearance variation; rendering uses midpoint sampling (deterministic).
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    rng = torch.Generator().manual_seed(seed)
    cam = default_sample_camera()
    import torch as _t

    params = BodyParams(
        beta=_t.zeros(4, dtype=DTYPE),
        theta=_t.zeros(model.skeleton.joint_count, dtype=DTYPE),
        cam=cam,
    )
    views, latents = [], []
    for _ in range(n):
        z = draw_latent(rng, model.latent_dim)
        latents.append(z)
        views.append(render_view(model, z, params, resolution=resolution, n_samples=n_samples))
    return views, latents

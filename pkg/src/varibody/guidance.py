"""Toy diffusion prior and score-distillation guidance.

A small conv denoiser trained on procedurally generated two-color "avatar
cards" stands in for a large text-to-image model. The text side is a closed
vocabulary (garment colors, body words, region phrases) embedded as one-hots;
the all-zero vector is the null token for classifier-free guidance.

Images are channel-first float64 in [0, 1] throughout this module.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn

from .body import RegionName
from .errors import ParameterError, TrainingError
from .geometry import DTYPE

COLOR_TABLE: dict[str, tuple[float, float, float]] = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.70, 0.20),
    "blue": (0.15, 0.25, 0.80),
    "yellow": (0.90, 0.80, 0.15),
    "purple": (0.55, 0.20, 0.70),
    "orange": (0.90, 0.50, 0.10),
    "teal": (0.10, 0.65, 0.65),
    "black": (0.05, 0.05, 0.05),
}

BODY_TOKENS = ("person", "man", "woman")

NULL_TOKEN = "<null>"

_UPPER_WORDS = {"upper", "top", "shirt", "tshirt", "sweater", "jacket", "blouse", "hoodie"}
_LOWER_WORDS = {"lower", "pants", "shorts", "skirt", "jeans", "trousers", "bottom", "bottoms"}

# longest prefixes first so back views win over their front substrings
_REGION_PREFIXES = (
    ("back view of upper body", RegionName.UPPER_BACK),
    ("back view of lower body", RegionName.LOWER_BACK),
    ("upper body", RegionName.UPPER_FRONT),
    ("lower body", RegionName.LOWER_FRONT),
    ("left hand", RegionName.LEFT_HAND),
    ("right hand", RegionName.RIGHT_HAND),
)


@dataclass(frozen=True)
class PromptAttributes:
    upper: str | None = None
    lower: str | None = None
    body: str | None = None
    region: RegionName = RegionName.FULL_BODY


@dataclass(frozen=True)
class PromptEmbedding:
    text: str
    vector: torch.Tensor


class Vocabulary:
    """Closed prompt vocabulary: colors x {upper, lower} + body word + region flag."""

    def __init__(self):
        self.colors = list(COLOR_TABLE)
        self.body_tokens = list(BODY_TOKENS)
        self.regions = [r for r in RegionName]
        self.dim = 2 * len(self.colors) + len(self.body_tokens) + len(self.regions)

    def null_embedding(self) -> PromptEmbedding:
        return PromptEmbedding(NULL_TOKEN, torch.zeros(self.dim, dtype=DTYPE))

    def embed_attributes(self, attrs: PromptAttributes, text: str = "") -> PromptEmbedding:
        """Strict embedding: unknown color/body/region names raise."""
        vec = torch.zeros(self.dim, dtype=DTYPE)
        nc = len(self.colors)
        for slot, name in (("upper", attrs.upper), ("lower", attrs.lower)):
            if name is None:
                continue
            if name not in COLOR_TABLE:
                raise ParameterError(f"unknown {slot} color {name!r}; known: {self.colors}")
            vec[(0 if slot == "upper" else nc) + self.colors.index(name)] = 1.0
        if attrs.body is not None:
            if attrs.body not in BODY_TOKENS:
                raise ParameterError(f"unknown body token {attrs.body!r}; known: {self.body_tokens}")
            vec[2 * nc + self.body_tokens.index(attrs.body)] = 1.0
        if attrs.region not in self.regions:
            raise ParameterError(f"unknown region {attrs.region!r}")
        vec[2 * nc + len(self.body_tokens) + self.regions.index(attrs.region)] = 1.0
        return PromptEmbedding(text, vec)

    def parse_prompt(self, text: str) -> PromptAttributes:
        """Lenient attribute extraction from free-ish text.

        A color token claims the garment slot named within the next few words
        ("red shirt", "blue lower"); colors qualifying a body word are skin
        descriptors and are skipped; a bare trailing color fills the first
        open slot. The region is read off the fixed template prefixes.
        """
        if not text or not text.strip():
            raise ParameterError("prompt must be non-empty")
        low = text.lower()
        region = RegionName.FULL_BODY
        for prefix, reg in _REGION_PREFIXES:
            if low.startswith(prefix):
                region = reg
                break
        tokens = re.findall(r"[a-z]+", low)
        upper = lower = body = None
        for i, tok in enumerate(tokens):
            if tok in BODY_TOKENS and body is None:
                body = tok
            if tok not in COLOR_TABLE:
                continue
            slot = None
            for nxt in tokens[i + 1 : i + 4]:
                if nxt in _UPPER_WORDS:
                    slot = "upper"
                    break
                if nxt in _LOWER_WORDS:
                    slot = "lower"
                    break
                if nxt in BODY_TOKENS:
                    slot = "skip"
                    break
                if nxt in COLOR_TABLE:
                    break
            if slot == "upper" and upper is None:
                upper = tok
            elif slot == "lower" and lower is None:
                lower = tok
            elif slot is None:
                if upper is None:
                    upper = tok
                elif lower is None:
                    lower = tok
        return PromptAttributes(upper=upper, lower=lower, body=body, region=region)

    def encode(self, text: str) -> PromptEmbedding:
        if text == NULL_TOKEN:
            return self.null_embedding()
        return self.embed_attributes(self.parse_prompt(text), text=text)


# --- corpus ------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusConfig:
    count: int = 256
    height: int = 32
    width: int = 16
    seed: int = 7

    def __post_init__(self):
        if self.count < 0 or self.height < 8 or self.width < 8:
            raise ParameterError("corpus config out of range")


@dataclass
class Corpus:
    images: torch.Tensor      # (N, 3, H, W) in [0, 1]
    embeddings: torch.Tensor  # (N, E)
    labels: list[dict]
    config: CorpusConfig


_SKIN = (0.85, 0.70, 0.55)


def _paint(img: torch.Tensor, r0: int, r1: int, c0: int, c1: int, color):
    img[:, r0:r1, c0:c1] = torch.tensor(color, dtype=DTYPE)[:, None, None]


def generate_corpus(config: CorpusConfig | None = None, vocab: Vocabulary | None = None) -> Corpus:
    """Procedural two-color cards: head blob, upper garment block, lower block.

    Garment boundaries jitter by a pixel so the denoiser cannot memorize a
    single layout. Deterministic in config.seed.
    """
    config = config or CorpusConfig()
    vocab = vocab or Vocabulary()
    rng = torch.Generator().manual_seed(config.seed)
    H, W = config.height, config.width
    names = list(COLOR_TABLE)
    images, embs, labels = [], [], []
    for _ in range(config.count):
        iu = int(torch.randint(len(names), (1,), generator=rng))
        il = int(torch.randint(len(names), (1,), generator=rng))
        ib = int(torch.randint(len(BODY_TOKENS), (1,), generator=rng))
        d_waist = int(torch.randint(-1, 2, (1,), generator=rng))
        d_hem = int(torch.randint(-1, 2, (1,), generator=rng))

        img = torch.ones(3, H, W, dtype=DTYPE)
        waist = H // 2 + d_waist
        hem = int(round(H * 0.9)) + d_hem
        _paint(img, int(H * 0.03), int(H * 0.12), W // 2 - W // 8, W // 2 + W // 8, _SKIN)
        _paint(img, int(H * 0.12), waist, W // 5, W - W // 5, COLOR_TABLE[names[iu]])
        _paint(img, waist, hem, W // 4, W - W // 4, COLOR_TABLE[names[il]])

        attrs = PromptAttributes(upper=names[iu], lower=names[il], body=BODY_TOKENS[ib])
        images.append(img)
        embs.append(vocab.embed_attributes(attrs).vector)
        labels.append({"upper": names[iu], "lower": names[il], "body": BODY_TOKENS[ib]})
    if config.count == 0:
        return Corpus(
            images=torch.zeros(0, 3, H, W, dtype=DTYPE),
            embeddings=torch.zeros(0, vocab.dim, dtype=DTYPE),
            labels=[],
            config=config,
        )
    return Corpus(
        images=torch.stack(images),
        embeddings=torch.stack(embs),
        labels=labels,
        config=config,
    )


def save_corpus(corpus: Corpus, out_dir: str | Path):
    """Write cards as PNGs plus a labels.json manifest."""
    from .artifacts import save_image_png, write_manifest

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(corpus.images.shape[0]):
        save_image_png(out / f"card_{i:04d}.png", corpus.images[i].permute(1, 2, 0))
    write_manifest(
        out / "labels.json",
        {"count": len(corpus.labels), "cards": corpus.labels, "config": vars(corpus.config)},
    )


# --- schedule ----------------------------------------------------------------


@dataclass(frozen=True)
class DiffusionSchedule:
    """Discrete schedule over t = 0..T; index 0 is the clean image."""

    timesteps: int
    alpha_bar: torch.Tensor  # (T+1,), alpha_bar[0] == 1, strictly decreasing
    weights: torch.Tensor    # (T+1,) positive per-step loss weights w(t)

    def __post_init__(self):
        T = self.timesteps
        if self.alpha_bar.shape != (T + 1,) or self.weights.shape != (T + 1,):
            raise ParameterError("schedule arrays must have length T+1")
        if abs(float(self.alpha_bar[0]) - 1.0) > 1e-12:
            raise ParameterError("alpha_bar[0] must be 1 (t=0 is clean)")
        if not torch.all(self.alpha_bar[1:] < self.alpha_bar[:-1]):
            raise ParameterError("alpha_bar must be strictly decreasing")
        if not torch.all(self.weights > 0):
            raise ParameterError("w(t) must be positive")

    @property
    def sigma(self) -> torch.Tensor:
        return torch.sqrt(1.0 - self.alpha_bar)

    @staticmethod
    def cosine(timesteps: int = 64, s: float = 0.008, floor: float = 1e-4) -> "DiffusionSchedule":
        t = torch.arange(timesteps + 1, dtype=DTYPE)
        f = torch.cos(((t / timesteps + s) / (1 + s)) * math.pi / 2) ** 2
        ab = (f / f[0]).clamp(min=floor)
        ab[0] = 1.0
        return DiffusionSchedule(
            timesteps=timesteps, alpha_bar=ab, weights=torch.ones(timesteps + 1, dtype=DTYPE)
        )

    def check_t(self, t: int) -> int:
        t = int(t)
        if not (1 <= t <= self.timesteps):
            raise ParameterError(f"t must be in [1, {self.timesteps}], got {t}")
        return t


def noise_image(schedule: DiffusionSchedule, x0: torch.Tensor, t, eps: torch.Tensor) -> torch.Tensor:
    """Forward noising: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps. t may be int or (B,)."""
    tt = torch.as_tensor(t, dtype=torch.long)
    ab = schedule.alpha_bar[tt]
    sig = schedule.sigma[tt]
    if tt.ndim > 0:  # per-sample broadcast over CHW
        ab = ab.reshape(-1, 1, 1, 1)
        sig = sig.reshape(-1, 1, 1, 1)
    return torch.sqrt(ab) * x0 + sig * eps


# --- denoiser ----------------------------------------------------------------


class CardDenoiser(nn.Module):
    """Small conv epsilon-predictor with coordinate and timestep channels.

    Coordinate channels break translation equivariance so upper/lower garment
    conditioning can act by position. Well under the parameter budget.
    """

    def __init__(self, embed_dim: int, height: int, width: int, hidden: int = 32, seed: int = 0):
        super().__init__()
        self.embed_dim = embed_dim
        self.height = height
        self.width = width
        in_ch = 3 + embed_dim + 5 + 2  # rgb + prompt + t feats + coords
        self.conv1 = nn.Conv2d(in_ch, hidden, 3, padding=1, dtype=DTYPE)
        self.conv2 = nn.Conv2d(hidden, hidden, 3, padding=1, dtype=DTYPE)
        self.conv3 = nn.Conv2d(hidden, hidden, 3, padding=1, dtype=DTYPE)
        self.conv4 = nn.Conv2d(hidden, 3, 3, padding=1, dtype=DTYPE)
        gen = torch.Generator().manual_seed(seed)
        for conv in (self.conv1, self.conv2, self.conv3, self.conv4):
            fan_in = conv.in_channels * 9
            _init = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                conv.weight.uniform_(-_init, _init, generator=gen)
                conv.bias.zero_()

    @staticmethod
    def _coords(h: int, w: int) -> torch.Tensor:
        # computed per input shape: the network is fully convolutional, so it
        # can be evaluated away from its training resolution (padded squares)
        ys = torch.linspace(-1.0, 1.0, h, dtype=DTYPE) if h > 1 else torch.zeros(1, dtype=DTYPE)
        xs = torch.linspace(-1.0, 1.0, w, dtype=DTYPE) if w > 1 else torch.zeros(1, dtype=DTYPE)
        gy, gx = torch.meshgrid(ys, xs, indexing="ij")
        return torch.stack([gy, gx])[None]  # (1, 2, H, W)

    def forward(self, noisy: torch.Tensor, t: torch.Tensor, emb: torch.Tensor, timesteps: int) -> torch.Tensor:
        b, _, h, w = noisy.shape
        tau = (t.to(DTYPE) / timesteps).reshape(b, 1, 1, 1)
        tfeat = torch.cat(
            [
                tau,
                torch.sin(2 * math.pi * tau),
                torch.cos(2 * math.pi * tau),
                torch.sin(4 * math.pi * tau),
                torch.cos(4 * math.pi * tau),
            ],
            dim=1,
        ).expand(b, 5, h, w)
        echan = emb.reshape(b, -1, 1, 1).expand(b, emb.shape[-1], h, w)
        x = torch.cat([noisy, echan, tfeat, self._coords(h, w).expand(b, 2, h, w)], dim=1)
        x = torch.nn.functional.silu(self.conv1(x))
        x = torch.nn.functional.silu(self.conv2(x))
        x = torch.nn.functional.silu(self.conv3(x))
        return self.conv4(x)


class ToyPrior:
    """Bundled denoiser + schedule + vocabulary, the score-distillation teacher."""

    def __init__(self, denoiser: nn.Module, schedule: DiffusionSchedule, vocab: Vocabulary,
                 height: int, width: int):
        self.denoiser = denoiser
        self.schedule = schedule
        self.vocab = vocab
        self.height = height
        self.width = width

    def predict_noise(self, noisy: torch.Tensor, t, emb: torch.Tensor) -> torch.Tensor:
        """noisy: (3, H, W) or (B, 3, H, W); t: int or (B,); emb: (E,) or (B, E)."""
        single = noisy.ndim == 3
        x = noisy[None] if single else noisy
        if x.ndim != 4 or x.shape[1] != 3:
            raise ParameterError(f"image must be (..., 3, H, W), got {tuple(noisy.shape)}")
        b = x.shape[0]
        tt = torch.as_tensor(t, dtype=torch.long).reshape(-1)
        if tt.numel() == 1:
            tt = tt.expand(b)
        for tv in (int(tt.min()), int(tt.max())):
            self.schedule.check_t(tv)
        e = torch.as_tensor(emb, dtype=DTYPE)
        if e.ndim == 1:
            e = e[None].expand(b, -1)
        if e.shape != (b, self.vocab.dim):
            raise ParameterError(f"embedding must have dim {self.vocab.dim}, got {tuple(e.shape)}")
        out = self.denoiser(x, tt, e, self.schedule.timesteps)
        return out[0] if single else out

    def parameters(self):
        return self.denoiser.parameters()


# --- training ----------------------------------------------------------------


@dataclass(frozen=True)
class PriorTrainConfig:
    timesteps: int = 64
    steps: int = 1200
    batch_size: int = 24
    lr: float = 2e-3
    drop_prob: float = 0.15      # conditioning dropout for CFG
    holdout_frac: float = 0.1
    hidden: int = 32
    min_improvement: float = 0.5  # required holdout-loss reduction
    log_every: int = 50

    def __post_init__(self):
        if not (0 <= self.drop_prob < 1) or not (0 < self.holdout_frac < 1):
            raise ParameterError("drop_prob/holdout_frac out of range")
        if self.steps < 0 or self.batch_size <= 0 or self.timesteps < 2:
            raise ParameterError("training config out of range")


def _holdout_loss(prior: ToyPrior, x, t, eps, emb) -> float:
    with torch.no_grad():
        noisy = noise_image(prior.schedule, x, t, eps)
        pred = prior.predict_noise(noisy, t, emb)
        return float(torch.mean((pred - eps) ** 2))


def train_toy_prior(
    corpus: Corpus, config: PriorTrainConfig | None = None, rng: torch.Generator | None = None
) -> tuple[ToyPrior, list[dict]]:
    """Train the card denoiser with conditioning dropout.

    Raises TrainingError if the held-out denoising loss does not drop by
    config.min_improvement (set it to 0 for smoke runs). Returns the prior and
    a loss history.
    """
    config = config or PriorTrainConfig()
    if corpus.images.shape[0] < 2:
        raise ParameterError("corpus must contain at least 2 images")
    rng = rng or torch.Generator().manual_seed(0)
    n = corpus.images.shape[0]
    vocab = Vocabulary()
    schedule = DiffusionSchedule.cosine(config.timesteps)
    h, w = corpus.config.height, corpus.config.width

    init_seed = int(torch.randint(2**31 - 1, (1,), generator=rng))
    denoiser = CardDenoiser(vocab.dim, h, w, hidden=config.hidden, seed=init_seed)
    prior = ToyPrior(denoiser, schedule, vocab, h, w)

    perm = torch.randperm(n, generator=rng)
    n_hold = max(1, int(round(config.holdout_frac * n)))
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]
    hx = corpus.images[hold_idx]
    hemb = corpus.embeddings[hold_idx]
    ht = torch.randint(1, config.timesteps + 1, (n_hold,), generator=rng)
    heps = torch.randn(hx.shape, generator=rng, dtype=DTYPE)

    initial = _holdout_loss(prior, hx, ht, heps, hemb)
    opt = torch.optim.Adam(denoiser.parameters(), lr=config.lr)
    history = [{"step": 0, "holdout_loss": initial}]
    loss_val = initial
    for step in range(1, config.steps + 1):
        idx = train_idx[torch.randint(len(train_idx), (config.batch_size,), generator=rng)]
        x = corpus.images[idx]
        emb = corpus.embeddings[idx].clone()
        t = torch.randint(1, config.timesteps + 1, (config.batch_size,), generator=rng)
        eps = torch.randn(x.shape, generator=rng, dtype=DTYPE)
        drop = torch.rand(config.batch_size, generator=rng, dtype=DTYPE) < config.drop_prob
        emb[drop] = 0.0
        noisy = noise_image(schedule, x, t, eps)
        pred = prior.predict_noise(noisy, t, emb)
        loss = torch.mean((pred - eps) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
        loss_val = float(loss.detach())
        if step % config.log_every == 0 or step == config.steps:
            history.append({"step": step, "train_loss": loss_val})

    final = _holdout_loss(prior, hx, ht, heps, hemb)
    history.append({"step": config.steps, "holdout_loss": final})
    if config.steps > 0 and config.min_improvement > 0:
        if not (final <= (1.0 - config.min_improvement) * initial):
            raise TrainingError(
                f"prior training failed its improvement contract: holdout "
                f"{initial:.5f} -> {final:.5f} (needed {config.min_improvement:.0%} reduction)"
            )
    return prior, history


def save_prior(prior: ToyPrior, path, history: list[dict] | None = None):
    from .artifacts import pack_module, save_checkpoint

    tensors = pack_module(prior.denoiser, "denoiser")
    hidden = prior.denoiser.conv1.out_channels
    meta = {
        "kind": "toy_prior",
        "timesteps": prior.schedule.timesteps,
        "height": prior.height,
        "width": prior.width,
        "embed_dim": prior.vocab.dim,
        "hidden": hidden,
        "final_holdout_loss": next(
            (h["holdout_loss"] for h in reversed(history or []) if "holdout_loss" in h), None
        ),
    }
    save_checkpoint(path, tensors, meta)


def load_prior(path) -> ToyPrior:
    from .artifacts import load_checkpoint, unpack_module
    from .errors import CheckpointError

    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "toy_prior":
        raise CheckpointError(f"{path} is not a prior checkpoint (kind={meta.get('kind')!r})")
    denoiser = CardDenoiser(
        embed_dim=meta["embed_dim"], height=meta["height"], width=meta["width"],
        hidden=meta["hidden"],
    )
    unpack_module(denoiser, arrays, "denoiser")
    schedule = DiffusionSchedule.cosine(meta["timesteps"])
    return ToyPrior(denoiser, schedule, Vocabulary(), meta["height"], meta["width"])


# --- guidance ops ------------------------------------------------------------


def _emb_vector(prior: ToyPrior, emb) -> torch.Tensor:
    if isinstance(emb, PromptEmbedding):
        return emb.vector
    return torch.as_tensor(emb, dtype=DTYPE)


def cfg_noise(prior: ToyPrior, noisy: torch.Tensor, t, emb, scale: float) -> torch.Tensor:
    """Classifier-free guided noise prediction.

    eps_u + scale * (eps_c - eps_u), with exact endpoints: scale == 1 returns
    the conditional prediction from a single denoiser call, scale == 0 the
    unconditional one.
    """
    vec = _emb_vector(prior, emb)
    if not math.isfinite(scale):
        raise ParameterError("guidance scale must be finite")
    null = prior.vocab.null_embedding().vector
    if scale == 1.0:
        return prior.predict_noise(noisy, t, vec)
    if scale == 0.0:
        return prior.predict_noise(noisy, t, null)
    eps_u = prior.predict_noise(noisy, t, null)
    eps_c = prior.predict_noise(noisy, t, vec)
    return eps_u + scale * (eps_c - eps_u)


def sds_grad(
    prior: ToyPrior,
    image: torch.Tensor,
    emb,
    t: int,
    rng: torch.Generator,
    scale: float,
) -> torch.Tensor:
    """Score-distillation pixel gradient w(t) * (eps_hat - eps), detached.

    The drawn noise is this function's only rng consumption and happens before
    the denoiser runs. The caller injects the result into autograd via
    backward(gradient=...); descending it pulls the image toward the prompt.
    """
    t = prior.schedule.check_t(t)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ParameterError(f"image must be (3, H, W), got {tuple(image.shape)}")
    img = image.detach()
    if float(img.min()) < -1e-6 or float(img.max()) > 1 + 1e-6:
        raise ParameterError("image values must lie in [0, 1]")
    eps = torch.randn(img.shape, generator=rng, dtype=DTYPE)
    noisy = noise_image(prior.schedule, img, t, eps)
    with torch.no_grad():
        eps_hat = cfg_noise(prior, noisy, t, emb, scale)
    return (prior.schedule.weights[t] * (eps_hat - eps)).detach()


def sds_proxy(grad: torch.Tensor) -> float:
    """Scalar magnitude logged for an injected-gradient step: ||g||^2 / 2."""
    return float(0.5 * torch.sum(grad * grad))


def img2img_refine(
    prior: ToyPrior,
    image: torch.Tensor,
    emb,
    strength: float,
    rng: torch.Generator,
    scale: float = 3.0,
) -> torch.Tensor:
    """Noise the image to level ceil(strength*T), then deterministically denoise.

    DDIM (eta = 0): one noise draw, then a fixed reverse pass; clamped to
    [0, 1] only at the end. strength 0 is the identity (modulo clamp).
    """
    if not (0.0 <= strength <= 1.0):
        raise ParameterError(f"strength must be in [0, 1], got {strength}")
    if image.ndim != 3 or image.shape[0] != 3:
        raise ParameterError(f"image must be (3, H, W), got {tuple(image.shape)}")
    sched = prior.schedule
    if strength == 0.0:
        return image.detach().clamp(0.0, 1.0)
    level = min(sched.timesteps, max(1, math.ceil(strength * sched.timesteps)))
    eps = torch.randn(image.shape, generator=rng, dtype=DTYPE)
    x = noise_image(sched, image.detach(), level, eps)
    with torch.no_grad():
        for t in range(level, 0, -1):
            eps_hat = cfg_noise(prior, x, t, emb, scale)
            x0 = (x - sched.sigma[t] * eps_hat) / torch.sqrt(sched.alpha_bar[t])
            x = torch.sqrt(sched.alpha_bar[t - 1]) * x0 + sched.sigma[t - 1] * eps_hat
    return x.clamp(0.0, 1.0)


# --- view padding ------------------------------------------------------------


def pad_view(image: torch.Tensor, target: int, background: float = 1.0) -> torch.Tensor:
    """Center-pad an (H, W, C) image onto a target x target canvas."""
    h, w, c = image.shape
    if target < max(h, w):
        raise ParameterError(f"pad target {target} smaller than image {h}x{w}")
    canvas = torch.full((target, target, c), background, dtype=image.dtype)
    r0 = (target - h) // 2
    c0 = (target - w) // 2
    canvas[r0 : r0 + h, c0 : c0 + w] = image
    return canvas


def crop_view(padded: torch.Tensor, original_hw: tuple[int, int]) -> torch.Tensor:
    """Exact inverse of pad_view for the same original size."""
    h, w = original_hw
    t = padded.shape[0]
    r0 = (t - h) // 2
    c0 = (t - w) // 2
    return padded[r0 : r0 + h, c0 : c0 + w]


def pad_views(front: torch.Tensor, back: torch.Tensor, target: int,
              background: float = 1.0) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad a front/back pair to square canvases; shapes must agree."""
    if front.shape != back.shape:
        raise ParameterError("front/back views must share a shape")
    return pad_view(front, target, background), pad_view(back, target, background)

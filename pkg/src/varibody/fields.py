"""Compositional neural field and volume renderer.

One small sinusoidal MLP per body part, modulated by a shared latent code
through per-layer frequency/phase shifts. Part outputs are blended with
raised-cosine windows over each part's box; density is exactly zero outside
every box. Rendering is classic emission-absorption compositing along
stratified ray samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .body import BodyParams, PartVolume, Skeleton, default_skeleton, pose_part_volumes, posed_bounds
from .errors import ParameterError
from .geometry import DTYPE, Camera, near_far_for_bounds

WINDOW_EPS = 1e-12  # window-sum clamp; see blend_weights


@dataclass(frozen=True)
class FieldConfig:
    latent_dim: int = 64
    hidden_dim: int = 32
    num_layers: int = 3          # sine layers, input layer included
    omega: float = 8.0           # first-layer frequency scale
    density_scale: float = 40.0
    density_bias: float = 1.0
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.latent_dim <= 0 or self.hidden_dim <= 0 or self.num_layers < 2:
            raise ParameterError("field config dimensions out of range")
        if self.density_scale <= 0:
            raise ParameterError("density_scale must be positive")


def _init_uniform(t: torch.Tensor, bound: float, gen: torch.Generator):
    with torch.no_grad():
        t.uniform_(-bound, bound, generator=gen)


class PartField(nn.Module):
    """Sinusoidal MLP over normalized box coords, FiLM-style latent modulation.

    The latent maps through one affine layer to a per-sine-layer frequency
    gain (kept in [0.5, 1.5] via tanh) and phase shift.
    """

    def __init__(self, cfg: FieldConfig, gen: torch.Generator):
        super().__init__()
        H, L = cfg.hidden_dim, cfg.num_layers
        self.cfg = cfg
        self.lin_in = nn.Linear(3, H, dtype=DTYPE)
        self.lins = nn.ModuleList(nn.Linear(H, H, dtype=DTYPE) for _ in range(L - 1))
        self.head = nn.Linear(H, 4, dtype=DTYPE)
        self.mod = nn.Linear(cfg.latent_dim, 2 * H * L, dtype=DTYPE)

        _init_uniform(self.lin_in.weight, 1.0 / 3.0, gen)
        _init_uniform(self.lin_in.bias, 1.0 / math.sqrt(3.0), gen)
        w_hidden = math.sqrt(6.0 / H)
        for lin in self.lins:
            _init_uniform(lin.weight, w_hidden, gen)
            _init_uniform(lin.bias, 1.0 / math.sqrt(H), gen)
        _init_uniform(self.head.weight, w_hidden, gen)
        _init_uniform(self.head.bias, 1.0 / math.sqrt(H), gen)
        # modulation starts near-neutral: small weights, zero bias
        _init_uniform(self.mod.weight, 0.05 / math.sqrt(cfg.latent_dim), gen)
        with torch.no_grad():
            self.mod.bias.zero_()

    def forward(self, u: torch.Tensor, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """u: (N, 3) normalized local coords in [-1, 1]; z: (latent_dim,).

        Returns (density (N,), rgb (N, 3)); density already scaled/positive.
        """
        cfg = self.cfg
        H, L = cfg.hidden_dim, cfg.num_layers
        m = self.mod(z).reshape(L, 2, H)
        gain = 1.0 + 0.5 * torch.tanh(m[:, 0])
        phase = m[:, 1]

        h = torch.sin(gain[0] * (cfg.omega * self.lin_in(u)) + phase[0])
        for i, lin in enumerate(self.lins):
            h = torch.sin(gain[i + 1] * lin(h) + phase[i + 1])
        out = self.head(h)
        density = cfg.density_scale * torch.nn.functional.softplus(out[..., 0] + cfg.density_bias)
        rgb = torch.sigmoid(out[..., 1:4])
        return density, rgb


class GeneratorModel(nn.Module):
    """All part fields for a skeleton, seeded deterministically."""

    def __init__(self, skeleton: Skeleton | None = None, config: FieldConfig | None = None, seed: int = 0):
        super().__init__()
        self.skeleton = skeleton or default_skeleton()
        self.config = config or FieldConfig()
        self.seed = seed
        gen = torch.Generator().manual_seed(seed)
        # deterministic: parts initialized in skeleton order from one generator
        self.fields = nn.ModuleDict(
            {part.value: PartField(self.config, gen) for part in self.skeleton.parts}
        )

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim


def draw_latent(rng: torch.Generator, dim: int = 64) -> torch.Tensor:
    return torch.randn(dim, generator=rng, dtype=DTYPE)


def _check_latent(model: GeneratorModel, z: torch.Tensor):
    z = torch.as_tensor(z, dtype=DTYPE)
    if z.shape != (model.latent_dim,):
        raise ParameterError(f"latent must have shape ({model.latent_dim},), got {tuple(z.shape)}")
    if not torch.isfinite(z).all():
        raise ParameterError("latent must be finite")
    return z


def local_coords(volume: PartVolume, points: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """World points -> normalized box coords u in [-1, 1] and inside mask."""
    local = volume.transform.inverse().apply(points)
    u = (local - volume.box.center()) / volume.box.half_extent()
    inside = torch.all(u.abs() <= 1.0, dim=-1)
    return u, inside


def blend_weights(volumes: list[PartVolume], points: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
    """Raised-cosine window per part, (P, N), plus each part's u coords.

    Within any single part's interior the normalized weights form a partition
    of unity; all windows vanish outside every box.
    """
    windows = []
    coords = []
    for vol in volumes:
        u, inside = local_coords(vol, points)
        w = torch.prod(0.5 * (1.0 + torch.cos(math.pi * u.clamp(-1.0, 1.0))), dim=-1)
        w = w * inside.to(w.dtype)
        windows.append(w)
        coords.append(u)
    return torch.stack(windows, dim=0), coords


def query_field(
    model: GeneratorModel,
    z: torch.Tensor,
    points: torch.Tensor,
    volumes: list[PartVolume],
) -> tuple[torch.Tensor, torch.Tensor]:
    """Blended density and color at world points (N, 3).

    Evaluates each part's net only on points inside its box; density and color
    are window-weighted convex combinations (exactly zero density outside all
    boxes, and exactly the single part's output deep inside one part).
    """
    if points.ndim != 2 or points.shape[-1] != 3:
        raise ParameterError(f"points must be (N, 3), got {tuple(points.shape)}")
    z = _check_latent(model, z)
    n = points.shape[0]
    windows, coords = blend_weights(volumes, points)
    wsum = windows.sum(dim=0).clamp(min=WINDOW_EPS)

    density = points.new_zeros(n)
    rgb = points.new_zeros(n, 3)
    for k, vol in enumerate(volumes):
        w = windows[k]
        idx = torch.nonzero(w > 0.0, as_tuple=False).squeeze(-1)
        if idx.numel() == 0:
            continue
        frac = w[idx] / wsum[idx]
        d_k, c_k = model.fields[vol.part.value](coords[k][idx], z)
        density = density.index_add(0, idx, frac * d_k)
        rgb = rgb.index_add(0, idx, frac[:, None] * c_k)
    return density, rgb


# --- rendering ---------------------------------------------------------------


@dataclass
class RenderedView:
    """One rendered image with its depth, soft mask, and camera."""

    rgb: torch.Tensor   # (H, W, 3) in [0, 1]
    depth: torch.Tensor  # (H, W), distance along the unit ray, in [near, far]
    mask: torch.Tensor  # (H, W) in [0, 1]; exactly 1 - final transmittance
    cam: Camera
    near: float
    far: float

    def __post_init__(self):
        h, w = self.mask.shape
        if self.rgb.shape != (h, w, 3) or self.depth.shape != (h, w):
            raise ParameterError("rendered view shapes disagree")

    @property
    def resolution(self) -> tuple[int, int]:
        return tuple(self.mask.shape)


def composite_rays(
    sigma: torch.Tensor,   # (..., S)
    rgb: torch.Tensor,     # (..., S, 3)
    t_vals: torch.Tensor,  # (..., S)
    delta: float,
    far: float,
    background: tuple[float, float, float],
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Alpha compositing with the white-background convention.

    mask = 1 - exp(-sum sigma*delta) by construction, so the quadrature
    identity sum(w) == mask holds to summation roundoff.
    """
    optical = sigma * delta
    acc = torch.cumsum(optical, dim=-1)
    trans = torch.exp(-acc)                                  # T_{i+1}
    trans_prev = torch.cat([torch.ones_like(trans[..., :1]), trans[..., :-1]], dim=-1)
    weights = trans_prev - trans                              # (..., S)
    t_final = trans[..., -1]
    bg = torch.tensor(background, dtype=sigma.dtype)
    out_rgb = (weights[..., None] * rgb).sum(dim=-2) + t_final[..., None] * bg
    out_depth = (weights * t_vals).sum(dim=-1) + t_final * far
    out_mask = 1.0 - t_final
    return out_rgb, out_depth, out_mask


def _eval_chunked(field_fn, pts: torch.Tensor, chunk: int = 1 << 18):
    if pts.shape[0] <= chunk:
        return field_fn(pts)
    outs = [field_fn(pts[i : i + chunk]) for i in range(0, pts.shape[0], chunk)]
    return torch.cat([o[0] for o in outs]), torch.cat([o[1] for o in outs])


def render_rays(
    field_fn,
    origins: torch.Tensor,
    dirs: torch.Tensor,
    near: float,
    far: float,
    n_samples: int,
    background: tuple[float, float, float] = (1.0, 1.0, 1.0),
    jitter: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Stratified sampling along rays then compositing.

    jitter: optional (..., n_samples) offsets in [0, 1); defaults to bin
    midpoints, which makes rendering deterministic.
    """
    if far <= near:
        raise ParameterError(f"need far > near, got ({near}, {far})")
    if n_samples < 1:
        raise ParameterError("n_samples must be >= 1")
    delta = (far - near) / n_samples
    idx = torch.arange(n_samples, dtype=origins.dtype)
    off = jitter if jitter is not None else torch.full_like(idx, 0.5).expand(*origins.shape[:-1], n_samples)
    t_vals = near + (idx + off) * delta                      # (..., S)
    pts = origins[..., None, :] + t_vals[..., None] * dirs[..., None, :]
    flat = pts.reshape(-1, 3)
    sigma, rgb = _eval_chunked(field_fn, flat)
    sigma = sigma.reshape(*t_vals.shape)
    rgb = rgb.reshape(*t_vals.shape, 3)
    return composite_rays(sigma, rgb, t_vals, delta, far, background)


def render_view(
    model: GeneratorModel,
    z: torch.Tensor,
    params: BodyParams,
    resolution: tuple[int, int],
    cam: Camera | None = None,
    n_samples: int = 32,
    jitter_rng: torch.Generator | None = None,
    skeleton: Skeleton | None = None,
) -> RenderedView:
    """Render the posed body from `cam` (default: the camera in `params`)."""
    z = _check_latent(model, z)
    cam = cam or params.cam
    volumes = pose_part_volumes(params, skeleton or model.skeleton)
    lo, hi = posed_bounds(volumes)
    near, far = near_far_for_bounds(cam, lo, hi)
    origins, dirs = cam.rays(resolution)
    jitter = None
    if jitter_rng is not None:
        jitter = torch.rand(*origins.shape[:-1], n_samples, generator=jitter_rng, dtype=DTYPE)

    def field_fn(pts):
        return query_field(model, z, pts, volumes)

    rgb, depth, mask = render_rays(
        field_fn, origins, dirs, near, far, n_samples, model.config.background, jitter
    )
    # convex combinations can drift by an ulp; pin the contract ranges
    rgb = rgb.clamp(0.0, 1.0)
    depth = depth.clamp(near, far)
    return RenderedView(rgb=rgb, depth=depth, mask=mask, cam=cam, near=near, far=far)


# --- density grid extraction -------------------------------------------------


@dataclass(frozen=True)
class DensityGrid:
    """Density sampled on a regular lattice of vertex positions.

    The lattice spans the posed part-box union padded by one cell per side:
    position[i] = origin + i * cell along each axis.
    """

    values: torch.Tensor  # (nx, ny, nz)
    origin: torch.Tensor  # (3,)
    cell: torch.Tensor    # (3,) spacing per axis

    def vertex_positions(self) -> torch.Tensor:
        nx, ny, nz = self.values.shape
        axes = [self.origin[d] + self.cell[d] * torch.arange(n, dtype=DTYPE) for d, n in enumerate((nx, ny, nz))]
        gx, gy, gz = torch.meshgrid(*axes, indexing="ij")
        return torch.stack([gx, gy, gz], dim=-1)


def extract_density_grid(
    model: GeneratorModel,
    z: torch.Tensor,
    params: BodyParams,
    resolution: int | tuple[int, int, int] = 48,
    skeleton: Skeleton | None = None,
) -> DensityGrid:
    """Sample the blended density on a regular grid (no gradients).

    Grid bounds = posed part-box union padded by exactly one cell per side,
    with cell = extent / (res - 3), so the outermost two vertex layers sit
    outside the body on every axis.
    """
    z = _check_latent(model, z)
    if isinstance(resolution, int):
        res = (resolution,) * 3
    else:
        res = tuple(int(r) for r in resolution)
    if any(r < 4 for r in res):
        raise ParameterError(f"grid resolution must be >= 4 per axis, got {res}")
    volumes = pose_part_volumes(params, skeleton or model.skeleton)
    lo, hi = posed_bounds(volumes)
    ext = hi - lo
    cell = torch.stack([ext[d] / (res[d] - 3) for d in range(3)])
    origin = lo - cell
    grid = DensityGrid(values=torch.zeros(res, dtype=DTYPE), origin=origin, cell=cell)
    pts = grid.vertex_positions().reshape(-1, 3)
    with torch.no_grad():
        sigma, _ = _eval_chunked(lambda p: query_field(model, z, p, volumes), pts)
    return DensityGrid(values=sigma.reshape(res), origin=origin, cell=cell)

"""Sample-diversity measurement over rendered views.

Views are embedded with a frozen random-weight convolutional pyramid and
diversity is the mean pairwise Euclidean distance between embeddings. The
extractor's seed is recorded in the report so scores stay comparable across
runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .errors import ParameterError
from .features import FeaturePyramid
from .fields import RenderedView


@dataclass
class DiversityReport:
    pair_distances: list[float]
    mean: float
    std: float
    sample_count: int
    extractor_seed: int
    prompt: str = ""
    p: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.sample_count
        expected = n * (n - 1) // 2
        if len(self.pair_distances) != expected:
            raise ParameterError(
                f"{n} samples need {expected} pair distances, got {len(self.pair_distances)}"
            )

    def to_dict(self) -> dict:
        return {
            "pair_distances": list(self.pair_distances),
            "mean": self.mean,
            "std": self.std,
            "sample_count": self.sample_count,
            "extractor_seed": self.extractor_seed,
            "prompt": self.prompt,
            "p": self.p,
            "extra": dict(self.extra),
        }


def _view_tensor(view) -> torch.Tensor:
    if isinstance(view, RenderedView):
        return view.rgb
    t = torch.as_tensor(view)
    if t.ndim != 3 or t.shape[-1] != 3:
        raise ParameterError(f"views must be (H, W, 3), got {tuple(t.shape)}")
    return t


def embed_views(views, extractor: FeaturePyramid) -> torch.Tensor:
    """Stack views (uniform resolution required) and embed them to (N, D)."""
    imgs = [_view_tensor(v) for v in views]
    shapes = {tuple(t.shape) for t in imgs}
    if len(shapes) != 1:
        raise ParameterError(f"views must share one resolution, got {sorted(shapes)}")
    batch = torch.stack([t.permute(2, 0, 1) for t in imgs])  # (N, 3, H, W)
    with torch.no_grad():
        return extractor.embed(batch)


def diversity_score(
    views,
    extractor: FeaturePyramid | None = None,
    extractor_seed: int = 101,
    prompt: str = "",
    p: float | None = None,
) -> DiversityReport:
    """Mean pairwise embedding distance across >= 2 views.

    Permutation-invariant by construction (unordered pairs). Identical views
    score exactly 0.
    """
    views = list(views)
    if len(views) < 2:
        raise ParameterError(f"diversity needs at least 2 views, got {len(views)}")
    if extractor is None:
        extractor = FeaturePyramid(in_channels=3, seed=extractor_seed)
    emb = embed_views(views, extractor)
    diff = emb[:, None, :] - emb[None, :, :]
    dmat = torch.linalg.norm(diff, dim=-1)
    iu = torch.triu_indices(len(views), len(views), offset=1)
    dists = dmat[iu[0], iu[1]]
    mean = float(dists.mean())
    std = float(dists.std(unbiased=False)) if dists.numel() > 1 else 0.0
    return DiversityReport(
        pair_distances=[float(d) for d in dists],
        mean=mean,
        std=std,
        sample_count=len(views),
        extractor_seed=extractor_seed,
        prompt=prompt,
        p=p,
    )

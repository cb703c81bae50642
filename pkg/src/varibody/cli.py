"""Pipeline command line: prior training, finetuning, sampling, meshing,
diversity evaluation, and the noise-policy ablation sweep.

Every command writes a manifest.json into its output directory containing the
fully resolved configuration and the seeds that were used; outputs contain no
timestamps or absolute paths, so a rerun with the same inputs is
byte-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import io
import json
from pathlib import Path

import click
import torch

from . import artifacts
from .config import RunConfig, config_hash, config_to_dict, load_config
from .errors import VaribodyError
from .fields import draw_latent
from .guidance import generate_corpus, load_prior, save_prior, train_toy_prior
from .metrics import diversity_score
from .tetmesh import (
    export_mesh,
    prepare_mesh_state,
    run_mesh_finetune,
    turntable_views,
)
from .training import load_generator, run_finetune, sample_views

EXTRACTOR_SEED = 101  # frozen diversity-embedding seed, recorded in reports


def _friendly_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except VaribodyError as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _resolve_config(config_path, seed=None, p=None) -> RunConfig:
    cfg = load_config(config_path) if config_path else RunConfig()
    updates = {}
    if seed is not None:
        updates["seed"] = int(seed)
    if p is not None:
        updates["p"] = float(p)
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _prior_key(cfg: RunConfig) -> str:
    blob = json.dumps(
        {
            "corpus": config_to_dict(cfg)["corpus"],
            "prior": config_to_dict(cfg)["prior"],
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    import hashlib

    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _prior_cache_path(cfg: RunConfig) -> Path:
    return artifacts.cache_dir() / f"prior_{_prior_key(cfg)}.ckpt"


def _require_prior(cfg: RunConfig, prior_path):
    path = Path(prior_path) if prior_path else _prior_cache_path(cfg)
    if not path.exists():
        raise click.ClickException(
            f"no trained prior found at {path}; run `varibody train-prior` "
            f"with the same config first (or pass --prior)"
        )
    return load_prior(path), path


def _manifest(out: Path, command: str, cfg: RunConfig, seeds: dict, outputs: list[str],
              extra: dict | None = None):
    payload = {
        "command": command,
        "config": config_to_dict(cfg),
        "seeds": seeds,
        "outputs": sorted(outputs),
        "code_version": artifacts.code_version_hash(),
    }
    if extra:
        payload["extra"] = extra
    artifacts.write_manifest(out / "manifest.json", payload)


@click.group()
def main():
    """Compositional body generator: train, finetune, sample, mesh, evaluate."""


@main.command("train-prior")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="YAML run config (corpus/prior sections are used).")
@click.option("--seed", type=int, default=None, help="Overrides the corpus seed.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_friendly_errors
def cmd_train_prior(config_path, seed, out_dir):
    """Generate the texture-card corpus and train the toy diffusion prior."""
    cfg = _resolve_config(config_path)
    if seed is not None:
        cfg = dataclasses.replace(cfg, corpus=dataclasses.replace(cfg.corpus, seed=int(seed)))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    corpus = generate_corpus(cfg.corpus)
    rng = torch.Generator().manual_seed(cfg.corpus.seed)
    prior, history = train_toy_prior(corpus, cfg.prior, rng)

    prior_file = out / "prior.ckpt"
    save_prior(prior, prior_file, history)
    cache_path = _prior_cache_path(cfg)
    cache_path.parent.mkdir(parents=True, exist_ok=True)
    save_prior(prior, cache_path, history)

    final = next((h["holdout_loss"] for h in reversed(history) if "holdout_loss" in h), None)
    _manifest(out, "train-prior", cfg, {"corpus": cfg.corpus.seed},
              ["prior.ckpt"], {"final_holdout_loss": final, "cache_path_key": _prior_key(cfg)})
    click.echo(f"prior trained (holdout loss {final:.5f}); saved to {prior_file} and cache")


@main.command("finetune")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None, help="Overrides config.seed.")
@click.option("--p", type=float, default=None, help="Overrides the fresh-noise probability.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--prior", "prior_path", type=click.Path(), default=None,
              help="Prior checkpoint (default: the config-keyed cache entry).")
@click.option("--progress-every", type=int, default=0, help="Echo loss every N iterations.")
@_friendly_errors
def cmd_finetune(config_path, seed, p, out_dir, prior_path, progress_every):
    """Finetune the body generator against the prior (SDS + depth + GAN)."""
    cfg = _resolve_config(config_path, seed, p)
    prior, ppath = _require_prior(cfg, prior_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    corpus = generate_corpus(cfg.corpus)
    state = run_finetune(cfg, prior, out_dir=out, corpus=corpus, progress_every=progress_every)

    outputs = ["checkpoint.ckpt", "loss_history.csv"]
    outputs += sorted(f.name for f in out.glob("checkpoint_*.ckpt"))
    _manifest(out, "finetune", cfg, {"run": cfg.seed}, outputs,
              {"iterations_done": state.iteration, "prior_key": _prior_key(cfg)})
    click.echo(f"finetuned {state.iteration} iterations; checkpoint at {out / 'checkpoint.ckpt'}")


@main.command("sample")
@click.option("--ckpt", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--n", type=int, default=4, help="Number of latents to render.")
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_friendly_errors
def cmd_sample(ckpt_path, n, seed, out_dir):
    """Render n fresh latents from a finetuned generator checkpoint."""
    model, cfg, _meta = load_generator(ckpt_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    views, latents = sample_views(model, n, seed, cfg.resolution, cfg.samples_per_ray)
    outputs = []
    for i, view in enumerate(views):
        stem = f"sample_{i:03d}"
        artifacts.save_view(out, stem, view)
        outputs += [f"{stem}.png", f"{stem}_mask.png", f"{stem}_depth.npy"]
    artifacts.save_array_npy(out / "latents.npy", torch.stack(latents).numpy())
    outputs.append("latents.npy")
    _manifest(out, "sample", cfg, {"sample": seed}, outputs, {"n": n})
    click.echo(f"wrote {n} samples to {out}")


@main.command("eval-diversity")
@click.option("--ckpt", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--n", type=int, default=8, help="Number of samples to compare.")
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_friendly_errors
def cmd_eval_diversity(ckpt_path, n, seed, out_dir):
    """Mean pairwise embedding distance across samples from one checkpoint."""
    model, cfg, _meta = load_generator(ckpt_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    views, _ = sample_views(model, n, seed, cfg.resolution, cfg.samples_per_ray)
    report = diversity_score(views, extractor_seed=EXTRACTOR_SEED, prompt=cfg.prompt, p=cfg.p)
    artifacts.write_manifest(out / "diversity.json", report.to_dict())
    _manifest(out, "eval-diversity", cfg, {"sample": seed}, ["diversity.json"],
              {"mean": report.mean, "std": report.std, "n": n})
    click.echo(f"diversity over {n} samples: mean {report.mean:.6f} (std {report.std:.6f})")


@main.command("mesh")
@click.option("--ckpt", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--prior", "prior_path", type=click.Path(), default=None)
@_friendly_errors
def cmd_mesh(ckpt_path, seed, out_dir, prior_path):
    """Extract a tet-grid sdf from the generator, optimize it, export a mesh."""
    model, cfg, _meta = load_generator(ckpt_path)
    prior, _ppath = _require_prior(cfg, prior_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rng = torch.Generator().manual_seed(seed)
    z = draw_latent(rng, cfg.latent_dim)
    emb = prior.vocab.encode(cfg.prompt)
    state = prepare_mesh_state(model, z, cfg, prior, emb, seed)
    mesh = run_mesh_finetune(state, prior, emb, cfg.mesh.iterations)

    export_mesh(mesh, out / "mesh.obj")
    export_mesh(mesh, out / "mesh.ply")
    strip = turntable_views(mesh, cfg.mesh.turntable_views, cfg.mesh.render_resolution)
    artifacts.save_image_png(out / "turntable.png", strip)
    _manifest(out, "mesh", cfg, {"mesh": seed},
              ["mesh.obj", "mesh.ply", "turntable.png"],
              {"vertices": int(mesh.V.shape[0]), "faces": int(mesh.F.shape[0]),
               "iterations": state.iteration})
    click.echo(f"mesh: {mesh.V.shape[0]} vertices, {mesh.F.shape[0]} faces -> {out / 'mesh.obj'}")


@main.command("ablate-p")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0, help="Base seed; runs use seed..seed+num_seeds-1.")
@click.option("--p", "p_values", type=float, multiple=True,
              help="Noise-policy values to sweep (repeatable). Default: 0 0.1 0.5 1.")
@click.option("--n", type=int, default=8, help="Samples per diversity measurement.")
@click.option("--num-seeds", type=int, default=3)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--prior", "prior_path", type=click.Path(), default=None)
@_friendly_errors
def cmd_ablate_p(config_path, seed, p_values, n, num_seeds, out_dir, prior_path):
    """Sweep the fresh-noise probability and measure sample diversity.

    Finished (p, seed) cells are cached under the config hash, so an
    interrupted or repeated sweep reuses them and regenerates identical
    outputs.
    """
    cfg = _resolve_config(config_path)
    ps = sorted(set(p_values)) if p_values else [0.0, 0.1, 0.5, 1.0]
    if len(ps) < 2:
        raise click.ClickException("ablate-p needs at least 2 distinct --p values")
    if n < 2:
        raise click.ClickException("--n must be >= 2 for diversity measurement")
    prior, _ppath = _require_prior(cfg, prior_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = artifacts.cache_dir() / "ablate"
    cache.mkdir(parents=True, exist_ok=True)

    corpus = generate_corpus(cfg.corpus)
    seeds = [seed + i for i in range(num_seeds)]
    rows = []
    for p in ps:
        for s in seeds:
            cell_cfg = dataclasses.replace(cfg, p=float(p), seed=int(s))
            key = config_hash(cell_cfg, extra={"n": n, "extractor": EXTRACTOR_SEED})
            cell_file = cache / f"{key}.json"
            if cell_file.exists():
                cell = json.loads(cell_file.read_text())
            else:
                state = run_finetune(cell_cfg, prior, out_dir=None, corpus=corpus)
                views, _ = sample_views(state.model, n, s, cfg.resolution, cfg.samples_per_ray)
                report = diversity_score(views, extractor_seed=EXTRACTOR_SEED,
                                         prompt=cfg.prompt, p=float(p))
                cell = {"p": float(p), "seed": int(s), "mean": report.mean,
                        "std": report.std, "n": n}
                artifacts.write_manifest(cell_file, cell)
            rows.append(cell)
            click.echo(f"p={p:g} seed={s}: diversity {cell['mean']:.6f}")

    rows.sort(key=lambda r: (r["p"], r["seed"]))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["p", "seed", "mean_diversity", "std", "n"])
    for r in rows:
        writer.writerow([f"{r['p']:.17g}", r["seed"], f"{r['mean']:.17g}",
                         f"{r['std']:.17g}", r["n"]])
    artifacts.atomic_write_bytes(out / "ablation.csv", buf.getvalue().encode())

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    means = {p: [r["mean"] for r in rows if r["p"] == p] for p in ps}
    fig, ax = plt.subplots(figsize=(5, 3.5))
    avg = [sum(means[p]) / len(means[p]) for p in ps]
    ax.plot(ps, avg, "o-", label="mean over seeds")
    for i, s in enumerate(seeds):
        ax.plot(ps, [r["mean"] for r in rows if r["seed"] == s], ".--", alpha=0.4,
                label=f"seed {s}" if i < 3 else None)
    ax.set_xlabel("fresh-noise probability p")
    ax.set_ylabel("sample diversity")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / "ablation.png", dpi=110)
    plt.close(fig)

    _manifest(out, "ablate-p", cfg, {"base": seed, "all": seeds},
              ["ablation.csv", "ablation.png"],
              {"p_values": ps, "n": n, "rows": rows})
    click.echo(f"wrote {out / 'ablation.csv'} and ablation.png")


if __name__ == "__main__":
    main()

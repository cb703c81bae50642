"""Prompt vocabulary, card corpus, diffusion schedule, guidance, and refinement."""

import math

import pytest
import torch

from varibody.body import RegionName
from varibody.errors import CheckpointError, ParameterError, TrainingError
from varibody.geometry import DTYPE
from varibody.guidance import (
    BODY_TOKENS,
    COLOR_TABLE,
    CardDenoiser,
    CorpusConfig,
    DiffusionSchedule,
    NULL_TOKEN,
    PriorTrainConfig,
    PromptAttributes,
    ToyPrior,
    Vocabulary,
    cfg_noise,
    crop_view,
    generate_corpus,
    img2img_refine,
    load_prior,
    noise_image,
    pad_view,
    pad_views,
    save_corpus,
    save_prior,
    sds_grad,
    sds_proxy,
    train_toy_prior,
)


class TestVocabulary:
    def test_parse_two_garment_prompt(self):
        vocab = Vocabulary()
        attrs = vocab.parse_prompt("red upper, blue lower")
        assert attrs.upper == "red" and attrs.lower == "blue"
        assert attrs.region is RegionName.FULL_BODY

    def test_parse_garment_words(self):
        vocab = Vocabulary()
        attrs = vocab.parse_prompt("a person wearing a green shirt and black pants")
        assert attrs.upper == "green" and attrs.lower == "black" and attrs.body == "person"

    def test_skin_color_is_not_a_garment(self):
        vocab = Vocabulary()
        attrs = vocab.parse_prompt("red person with a blue shirt")
        assert attrs.upper == "blue" and attrs.lower is None

    def test_bare_colors_fill_slots_in_order(self):
        vocab = Vocabulary()
        attrs = vocab.parse_prompt("teal and orange")
        assert attrs.upper == "teal" and attrs.lower == "orange"

    def test_region_prefixes(self):
        vocab = Vocabulary()
        assert vocab.parse_prompt("upper body of red upper, blue lower").region is RegionName.UPPER_FRONT
        assert vocab.parse_prompt("back view of upper body of x red upper").region is RegionName.UPPER_BACK
        assert vocab.parse_prompt("lower body of blue lower").region is RegionName.LOWER_FRONT
        assert vocab.parse_prompt("back view of lower body of blue lower").region is RegionName.LOWER_BACK
        assert vocab.parse_prompt("left hand of person").region is RegionName.LEFT_HAND
        assert vocab.parse_prompt("right hand of person").region is RegionName.RIGHT_HAND

    def test_embedding_one_hot_layout(self):
        vocab = Vocabulary()
        emb = vocab.encode("red upper, blue lower")
        nc = len(vocab.colors)
        expected = torch.zeros(vocab.dim, dtype=DTYPE)
        expected[vocab.colors.index("red")] = 1.0
        expected[nc + vocab.colors.index("blue")] = 1.0
        expected[2 * nc + len(BODY_TOKENS) + vocab.regions.index(RegionName.FULL_BODY)] = 1.0
        assert torch.equal(emb.vector, expected)

    def test_null_embedding_is_zero(self):
        vocab = Vocabulary()
        assert torch.equal(vocab.null_embedding().vector, torch.zeros(vocab.dim, dtype=DTYPE))
        assert torch.equal(vocab.encode(NULL_TOKEN).vector, torch.zeros(vocab.dim, dtype=DTYPE))

    def test_strict_embedding_rejects_unknown_names(self):
        vocab = Vocabulary()
        with pytest.raises(ParameterError):
            vocab.embed_attributes(PromptAttributes(upper="chartreuse"))
        with pytest.raises(ParameterError):
            vocab.embed_attributes(PromptAttributes(body="robot"))
        with pytest.raises(ParameterError):
            vocab.parse_prompt("   ")


class TestCorpus:
    def test_deterministic_and_in_range(self):
        cfg = CorpusConfig(count=16)
        a = generate_corpus(cfg)
        b = generate_corpus(cfg)
        assert torch.equal(a.images, b.images)
        assert torch.equal(a.embeddings, b.embeddings)
        assert a.labels == b.labels
        assert a.images.shape == (16, 3, cfg.height, cfg.width)
        assert (a.images >= 0).all() and (a.images <= 1).all()
        for lab in a.labels:
            assert lab["upper"] in COLOR_TABLE and lab["lower"] in COLOR_TABLE
            assert lab["body"] in BODY_TOKENS

    def test_seed_changes_corpus(self):
        a = generate_corpus(CorpusConfig(count=16, seed=1))
        b = generate_corpus(CorpusConfig(count=16, seed=2))
        assert not torch.equal(a.images, b.images)

    def test_upper_color_painted_where_labeled(self):
        cfg = CorpusConfig(count=8)
        corpus = generate_corpus(cfg)
        H, W = cfg.height, cfg.width
        for i, lab in enumerate(corpus.labels):
            pix = corpus.images[i, :, H // 4, W // 2]  # mid-upper torso pixel
            assert torch.allclose(pix, torch.tensor(COLOR_TABLE[lab["upper"]], dtype=DTYPE))

    def test_save_corpus_writes_cards_and_labels(self, tmp_path):
        corpus = generate_corpus(CorpusConfig(count=3))
        save_corpus(corpus, tmp_path / "corpus")
        assert sorted(p.name for p in (tmp_path / "corpus").glob("*.png")) == [
            "card_0000.png", "card_0001.png", "card_0002.png",
        ]
        assert (tmp_path / "corpus" / "labels.json").exists()

    def test_config_validation(self):
        with pytest.raises(ParameterError):
            CorpusConfig(count=-1)
        with pytest.raises(ParameterError):
            CorpusConfig(height=4)


class TestSchedule:
    def test_cosine_invariants(self):
        sched = DiffusionSchedule.cosine(64)
        ab = sched.alpha_bar
        assert float(ab[0]) == 1.0
        assert (ab[1:] < ab[:-1]).all()
        assert (ab > 0).all() and (ab <= 1).all()
        assert torch.allclose(sched.sigma, torch.sqrt(1 - ab), atol=0, rtol=0)
        assert (sched.weights > 0).all()

    def test_check_t_bounds(self):
        sched = DiffusionSchedule.cosine(8)
        assert sched.check_t(1) == 1 and sched.check_t(8) == 8
        with pytest.raises(ParameterError):
            sched.check_t(0)
        with pytest.raises(ParameterError):
            sched.check_t(9)

    def test_schedule_validation(self):
        good = DiffusionSchedule.cosine(4)
        with pytest.raises(ParameterError):
            DiffusionSchedule(4, good.alpha_bar * 0.5, good.weights)  # ab[0] != 1
        with pytest.raises(ParameterError):
            DiffusionSchedule(4, torch.ones(5, dtype=DTYPE), good.weights)  # not decreasing
        with pytest.raises(ParameterError):
            DiffusionSchedule(4, good.alpha_bar, torch.zeros(5, dtype=DTYPE))  # w <= 0

    def test_noise_image_formula(self):
        sched = DiffusionSchedule.cosine(16)
        rng = torch.Generator().manual_seed(0)
        x0 = torch.rand(3, 8, 8, generator=rng, dtype=DTYPE)
        eps = torch.randn(3, 8, 8, generator=rng, dtype=DTYPE)
        t = 5
        got = noise_image(sched, x0, t, eps)
        want = torch.sqrt(sched.alpha_bar[t]) * x0 + torch.sqrt(1 - sched.alpha_bar[t]) * eps
        assert torch.allclose(got, want, atol=1e-15, rtol=0)
        # batched t broadcasts per sample
        xb = x0[None].expand(2, 3, 8, 8)
        eb = eps[None].expand(2, 3, 8, 8)
        tb = torch.tensor([1, 16])
        got_b = noise_image(sched, xb, tb, eb)
        assert torch.allclose(got_b[0], noise_image(sched, x0, 1, eps), atol=0, rtol=0)
        assert torch.allclose(got_b[1], noise_image(sched, x0, 16, eps), atol=0, rtol=0)


class _CountingPrior(ToyPrior):
    """Deterministic stand-in denoiser that counts predict_noise calls."""

    def __init__(self, height=8, width=8):
        vocab = Vocabulary()
        super().__init__(denoiser=None, schedule=DiffusionSchedule.cosine(16),
                         vocab=vocab, height=height, width=width)
        self.calls = 0

    def predict_noise(self, noisy, t, emb):
        self.calls += 1
        e = torch.as_tensor(emb, dtype=DTYPE)
        return noisy * 0.5 + float(e.sum()) * 0.25 + float(t) * 0.01


class TestGuidedNoise:
    def test_scale_one_is_single_conditional_call(self):
        prior = _CountingPrior()
        vocab = prior.vocab
        noisy = torch.randn(3, 8, 8, generator=torch.Generator().manual_seed(1), dtype=DTYPE)
        emb = vocab.encode("red upper")
        out = cfg_noise(prior, noisy, 3, emb, scale=1.0)
        assert prior.calls == 1
        assert torch.equal(out, prior.predict_noise(noisy, 3, emb.vector))

    def test_scale_zero_is_single_unconditional_call(self):
        prior = _CountingPrior()
        noisy = torch.randn(3, 8, 8, generator=torch.Generator().manual_seed(2), dtype=DTYPE)
        emb = prior.vocab.encode("red upper")
        out = cfg_noise(prior, noisy, 3, emb, scale=0.0)
        assert prior.calls == 1
        null = prior.vocab.null_embedding().vector
        assert torch.equal(out, prior.predict_noise(noisy, 3, null))

    @pytest.mark.parametrize("scale", [-1.0, 0.5, 2.0, 7.5, 100.0])
    def test_general_scale_is_affine_in_scale(self, scale):
        prior = _CountingPrior()
        noisy = torch.randn(3, 8, 8, generator=torch.Generator().manual_seed(3), dtype=DTYPE)
        emb = prior.vocab.encode("blue lower")
        out = cfg_noise(prior, noisy, 2, emb, scale=scale)
        assert prior.calls == 2
        eps_u = prior.predict_noise(noisy, 2, prior.vocab.null_embedding().vector)
        eps_c = prior.predict_noise(noisy, 2, emb.vector)
        assert torch.allclose(out, eps_u + scale * (eps_c - eps_u), atol=1e-6, rtol=0)

    def test_nonfinite_scale_rejected(self):
        prior = _CountingPrior()
        with pytest.raises(ParameterError):
            cfg_noise(prior, torch.zeros(3, 8, 8, dtype=DTYPE), 1, prior.vocab.null_embedding(), float("nan"))


class _EchoPrior(ToyPrior):
    """Replays sds_grad's own noise draw via an identically seeded generator."""

    def __init__(self, seed: int, height=8, width=8, timesteps=16):
        super().__init__(denoiser=None, schedule=DiffusionSchedule.cosine(timesteps),
                         vocab=Vocabulary(), height=height, width=width)
        self._shadow = torch.Generator().manual_seed(seed)

    def predict_noise(self, noisy, t, emb):
        return torch.randn(noisy.shape, generator=self._shadow, dtype=DTYPE)


class TestScoreDistillation:
    def test_echo_prior_gives_exactly_zero_gradient(self):
        for seed in range(5):
            prior = _EchoPrior(seed)
            rng = torch.Generator().manual_seed(seed)
            img = torch.rand(3, 8, 8, generator=torch.Generator().manual_seed(seed + 99), dtype=DTYPE)
            grad = sds_grad(prior, img, prior.vocab.encode("red upper"), t=4, rng=rng, scale=1.0)
            assert torch.equal(grad, torch.zeros_like(grad))

    def test_weights_scale_gradient_exactly(self):
        base = DiffusionSchedule.cosine(16)
        doubled = DiffusionSchedule(16, base.alpha_bar.clone(), base.weights * 2.0)
        img = torch.rand(3, 8, 8, generator=torch.Generator().manual_seed(5), dtype=DTYPE)

        grads = []
        for sched in (base, doubled):
            prior = _CountingPrior()
            prior.schedule = sched
            grads.append(sds_grad(prior, img, prior.vocab.encode("red upper"),
                                  t=6, rng=torch.Generator().manual_seed(0), scale=2.0))
        assert torch.allclose(grads[1], 2.0 * grads[0], atol=0, rtol=0)

    def test_gradient_is_detached_and_validated(self):
        prior = _CountingPrior()
        img = torch.rand(3, 8, 8, generator=torch.Generator().manual_seed(6), dtype=DTYPE)
        grad = sds_grad(prior, img.requires_grad_(True), prior.vocab.encode("red upper"),
                        t=3, rng=torch.Generator().manual_seed(0), scale=1.0)
        assert not grad.requires_grad
        with pytest.raises(ParameterError):
            sds_grad(prior, img.detach() + 5.0, prior.vocab.encode("red upper"),
                     t=3, rng=torch.Generator().manual_seed(0), scale=1.0)
        with pytest.raises(ParameterError):
            sds_grad(prior, img.detach(), prior.vocab.encode("red upper"),
                     t=0, rng=torch.Generator().manual_seed(0), scale=1.0)
        with pytest.raises(ParameterError):
            sds_grad(prior, img.detach()[0], prior.vocab.encode("red upper"),
                     t=3, rng=torch.Generator().manual_seed(0), scale=1.0)

    def test_proxy_is_half_squared_norm(self):
        g = torch.tensor([[1.0, 2.0], [3.0, 4.0]], dtype=DTYPE)
        assert sds_proxy(g) == pytest.approx(0.5 * 30.0, abs=0)


class TestRefinement:
    def test_strength_zero_is_identity(self, fast_prior):
        img = torch.rand(3, fast_prior.height, fast_prior.width,
                         generator=torch.Generator().manual_seed(7), dtype=DTYPE)
        out = img2img_refine(fast_prior, img, fast_prior.vocab.encode("red upper"),
                             strength=0.0, rng=torch.Generator().manual_seed(0))
        assert torch.equal(out, img.clamp(0, 1))

    def test_deterministic_and_in_range(self, fast_prior):
        img = torch.rand(3, fast_prior.height, fast_prior.width,
                         generator=torch.Generator().manual_seed(8), dtype=DTYPE)
        emb = fast_prior.vocab.encode("red upper, blue lower")
        a = img2img_refine(fast_prior, img, emb, strength=0.3,
                           rng=torch.Generator().manual_seed(4), scale=3.0)
        b = img2img_refine(fast_prior, img, emb, strength=0.3,
                           rng=torch.Generator().manual_seed(4), scale=3.0)
        assert torch.equal(a, b)
        assert (a >= 0).all() and (a <= 1).all()
        assert not torch.equal(a, img.clamp(0, 1))

    def test_strength_validation(self, fast_prior):
        img = torch.zeros(3, fast_prior.height, fast_prior.width, dtype=DTYPE)
        emb = fast_prior.vocab.null_embedding()
        with pytest.raises(ParameterError):
            img2img_refine(fast_prior, img, emb, strength=1.5, rng=torch.Generator())
        with pytest.raises(ParameterError):
            img2img_refine(fast_prior, img, emb, strength=-0.1, rng=torch.Generator())

    def test_works_at_other_resolutions(self, fast_prior):
        """The denoiser is fully convolutional: square panels refine too."""
        img = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(9), dtype=DTYPE)
        out = img2img_refine(fast_prior, img, fast_prior.vocab.encode("red upper"),
                             strength=0.3, rng=torch.Generator().manual_seed(0))
        assert out.shape == (3, 32, 32)
        assert (out >= 0).all() and (out <= 1).all()


class TestPadding:
    def test_pad_crop_inverse(self):
        img = torch.rand(10, 6, 3, generator=torch.Generator().manual_seed(10), dtype=DTYPE)
        padded = pad_view(img, 16, background=0.25)
        assert padded.shape == (16, 16, 3)
        assert torch.equal(crop_view(padded, (10, 6)), img)
        # border is background
        assert torch.equal(padded[0], torch.full((16, 3), 0.25, dtype=DTYPE))

    def test_pad_views_pairs(self):
        f = torch.rand(8, 4, 3, generator=torch.Generator().manual_seed(11), dtype=DTYPE)
        b = torch.rand(8, 4, 3, generator=torch.Generator().manual_seed(12), dtype=DTYPE)
        pf, pb = pad_views(f, b, 8)
        assert pf.shape == pb.shape == (8, 8, 3)
        with pytest.raises(ParameterError):
            pad_views(f, b[:4], 8)

    def test_pad_too_small_rejected(self):
        with pytest.raises(ParameterError):
            pad_view(torch.zeros(8, 4, 3, dtype=DTYPE), 6)


class TestPriorTraining:
    def test_training_improves_and_is_deterministic(self, fast_prior):
        x = torch.rand(2, 3, fast_prior.height, fast_prior.width,
                       generator=torch.Generator().manual_seed(13), dtype=DTYPE)
        out1 = fast_prior.predict_noise(x, 3, torch.zeros(2, fast_prior.vocab.dim, dtype=DTYPE))
        assert out1.shape == x.shape

    def test_improvement_contract_raises(self, small_corpus):
        cfg = PriorTrainConfig(steps=1, batch_size=4, hidden=8, min_improvement=0.99)
        with pytest.raises(TrainingError, match="improvement"):
            train_toy_prior(small_corpus, cfg, torch.Generator().manual_seed(0))

    def test_prior_round_trip(self, fast_prior, tmp_path):
        path = tmp_path / "prior.ckpt"
        save_prior(fast_prior, path)
        loaded = load_prior(path)
        x = torch.rand(3, fast_prior.height, fast_prior.width,
                       generator=torch.Generator().manual_seed(14), dtype=DTYPE)
        emb = fast_prior.vocab.encode("red upper, blue lower").vector
        assert torch.equal(
            fast_prior.predict_noise(x, 5, emb).detach(),
            loaded.predict_noise(x, 5, emb).detach(),
        )
        assert loaded.schedule.timesteps == fast_prior.schedule.timesteps

    def test_load_rejects_wrong_kind(self, tmp_path):
        from varibody.artifacts import save_checkpoint

        path = tmp_path / "bad.ckpt"
        save_checkpoint(path, {"x": torch.zeros(1)}, meta={"kind": "something_else"})
        with pytest.raises(CheckpointError):
            load_prior(path)

    def test_config_validation(self):
        with pytest.raises(ParameterError):
            PriorTrainConfig(drop_prob=1.5)
        with pytest.raises(ParameterError):
            PriorTrainConfig(timesteps=1)

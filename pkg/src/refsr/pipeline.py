"""End-to-end orchestration: offline texture-map precomputation, inference,
desk-scale training, and evaluation.

Texture maps dominate runtime, so they are computed once per pair and
cached on disk keyed by a content hash of the derived LR image, the
reference image, and the matching configuration. Training runs in two
phases: a reconstruction-only warmup, then the full weighted objective
with optional critic updates. The texture term's gradients never reach the
content extractor's parameters.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import nn
from .config import PairManifest, PairRecord, RunConfig
from .features import FallbackExtractor, FeatureMap, load_external_features
from .losses import (
    LossWeights,
    clip_params,
    gradient_penalty,
    gram,
    loss_per,
    loss_rec,
    loss_texture,
    total_loss,
    wgan_losses,
)
from .matching import MatchConfig, match_features
from .model import Critic, Generator, adam_step, load_checkpoint, save_checkpoint
from .swap import SwapConfig, scale_adjust, swap_texture
from .tensor_io import read_tensor, write_tensor
from .tensors import ImageTensor, bicubic_resize, psnr, read_png, ssim, write_png

DOWNSCALE = Fraction(1, 4)

# derived-image stem suffixes shared with external feature dumps
LRUP_SUFFIX = "lrup"
BLURUP_SUFFIX = "blurup"


def stem_of(path) -> str:
    return os.path.splitext(os.path.basename(path))[0]


class FeatureSource:
    """Matching-side feature maps for a pair.

    The loss-side extractor is always the in-process fallback (it must be
    differentiable); the matching side may instead come from externally
    dumped activations loaded through the exchange format.
    """

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.extractor = FallbackExtractor(cfg.fallback_seed)
        self.external = cfg.feature_source == "external"
        self.layer = cfg.match_layer

    def _fallback_map(self, img: ImageTensor) -> FeatureMap:
        return self.extractor.extract(img).deepest

    def pair_maps(self, pair: PairRecord, i_lr: ImageTensor, i_ref: ImageTensor):
        """(M^LR, M^LRef, M^Ref) at the matching level.

        External dumps are looked up by the source images' file stems: the
        upscaled-LR map under <lr-source-stem>.lrup, the blurred reference
        under <ref-stem>.blurup, and the raw reference under <ref-stem>.
        """
        lr_up, ref_blur_up = scale_adjust(i_lr, i_ref)
        if not self.external:
            return (
                self._fallback_map(lr_up),
                self._fallback_map(ref_blur_up),
                self._fallback_map(i_ref),
            )
        lr_stem = stem_of(pair.hr_path)
        ref_stem = stem_of(pair.ref_path)
        return (
            load_external_features(self.cfg.feature_dir, f"{lr_stem}.{LRUP_SUFFIX}", self.layer),
            load_external_features(self.cfg.feature_dir, f"{ref_stem}.{BLURUP_SUFFIX}", self.layer),
            load_external_features(self.cfg.feature_dir, ref_stem, self.layer),
        )

    def image_map(self, img: ImageTensor, stem: str | None = None) -> FeatureMap:
        """Feature map of a standalone image (evaluation path)."""
        if not self.external:
            return self._fallback_map(img)
        if stem is None:
            raise ValueError("external feature source needs the image's file stem")
        return load_external_features(self.cfg.feature_dir, stem, self.layer)


def match_config(cfg: RunConfig) -> MatchConfig:
    return MatchConfig(cfg.patch_size, cfg.stride, cfg.epsilon)


def swap_config(cfg: RunConfig) -> SwapConfig:
    return SwapConfig(cfg.patch_size, cfg.stride, cfg.weight_mode)


def derive_lr(hr: ImageTensor) -> ImageTensor:
    return bicubic_resize(hr, DOWNSCALE)


def texture_cache_key(i_lr: ImageTensor, i_ref: ImageTensor, cfg: RunConfig) -> str:
    h = hashlib.sha256()
    h.update(i_lr.data.tobytes())
    h.update(i_ref.data.tobytes())
    h.update(cfg.fingerprint().encode("utf-8"))
    return h.hexdigest()


def compute_pair_texture(pair: PairRecord, cfg: RunConfig, source: FeatureSource,
                         i_lr: ImageTensor, i_ref: ImageTensor):
    """(M^t, MatchResult) for one pair."""
    m_lr, m_lref, m_ref = source.pair_maps(pair, i_lr, i_ref)
    match = match_features(m_lr, m_lref, match_config(cfg), workers=cfg.workers)
    m_t = swap_texture(m_ref, match, swap_config(cfg))
    return m_t, match


@dataclass
class CacheEntry:
    pair: PairRecord
    key: str = ""
    mt_path: str = ""
    ms_path: str = ""
    error: str = ""


def _cache_paths(cache_dir, key):
    return (
        os.path.join(cache_dir, f"{key}.mt.tnsr"),
        os.path.join(cache_dir, f"{key}.ms.tnsr"),
    )


def _cache_valid(mt_path, ms_path) -> bool:
    if not (os.path.exists(mt_path) and os.path.exists(ms_path)):
        return False
    try:
        read_tensor(mt_path)
        read_tensor(ms_path)
        return True
    except Exception:
        return False


def precompute_mt(manifest: PairManifest, cfg: RunConfig, cache_dir=None) -> list:
    """Fill the texture-map cache for every pair; idempotent.

    Pairs hashing to an already-valid entry are skipped. Per-pair failures
    are recorded on the returned entries and do not stop the run.
    """
    cache_dir = cache_dir or cfg.cache_dir
    os.makedirs(cache_dir, exist_ok=True)
    source = FeatureSource(cfg)

    entries = []
    todo = {}  # key -> (pair, i_lr, i_ref), deduplicated
    for pair in manifest.pairs:
        try:
            hr = read_png(pair.hr_path)
            ref = read_png(pair.ref_path)
            i_lr = derive_lr(hr)
            key = texture_cache_key(i_lr, ref, cfg)
            mt_path, ms_path = _cache_paths(cache_dir, key)
            entries.append(CacheEntry(pair, key, mt_path, ms_path))
            if not _cache_valid(mt_path, ms_path) and key not in todo:
                todo[key] = (pair, i_lr, ref)
        except Exception as exc:  # noqa: BLE001 - per-pair isolation is the contract
            entries.append(CacheEntry(pair, error=f"{type(exc).__name__}: {exc}"))

    def compute(item):
        key, (pair, i_lr, i_ref) = item
        mt_path, ms_path = _cache_paths(cache_dir, key)
        try:
            m_t, match = compute_pair_texture(pair, cfg, source, i_lr, i_ref)
            write_tensor(m_t.data.astype(np.float32), mt_path)
            write_tensor(match.sim_map.astype(np.float32), ms_path)
            return key, ""
        except Exception as exc:  # noqa: BLE001
            return key, f"{type(exc).__name__}: {exc}"

    items = sorted(todo.items())
    if cfg.workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(compute, items))
    else:
        results = [compute(item) for item in items]
    failed = {key: msg for key, msg in results if msg}
    for entry in entries:
        if entry.key in failed:
            entry.error = failed[entry.key]
    return entries


def load_cached_texture(entry: CacheEntry, level_tag: str = "") -> tuple:
    m_t = FeatureMap(read_tensor(entry.mt_path), level_tag)
    ms = read_tensor(entry.ms_path)
    return m_t, ms


def build_generator(cfg: RunConfig, tex_channels: int) -> Generator:
    return Generator(
        tex_channels=tex_channels,
        features=cfg.features,
        content_blocks=cfg.content_blocks,
        transfer_blocks=cfg.transfer_blocks,
    )


def infer(i_lr: ImageTensor, i_ref: ImageTensor, gen: Generator, params: dict,
          cfg: RunConfig, pair: PairRecord | None = None) -> ImageTensor:
    """Full inference: scale adjust, features, match, swap, generate, clamp."""
    source = FeatureSource(cfg)
    rec = pair if pair is not None else PairRecord("memory.png", "memory.png")
    m_t, _ = compute_pair_texture(rec, cfg, source, i_lr, i_ref)
    lr_chw = nn.chw(i_lr.data).astype(np.float32)
    sr = gen.infer(params, lr_chw, m_t.data.astype(np.float32))
    return ImageTensor(nn.hwc(sr.astype(np.float64)))


class NanLossError(RuntimeError):
    pass


@dataclass
class _Sample:
    pair: PairRecord
    lr_chw: np.ndarray
    hr_chw: np.ndarray
    m_t: np.ndarray
    ms: np.ndarray
    phi_hr: np.ndarray


def _dump_diagnostics(out_dir, step, sample: _Sample, values: dict):
    diag = os.path.join(out_dir, "diagnostic")
    os.makedirs(diag, exist_ok=True)
    write_tensor(sample.lr_chw.astype(np.float32), os.path.join(diag, f"step{step}_lr.tnsr"))
    write_tensor(sample.hr_chw.astype(np.float32), os.path.join(diag, f"step{step}_hr.tnsr"))
    write_tensor(sample.m_t.astype(np.float32), os.path.join(diag, f"step{step}_mt.tnsr"))
    with open(os.path.join(diag, f"step{step}_losses.txt"), "w", encoding="utf-8") as fh:
        for k, v in values.items():
            fh.write(f"{k}={v}\n")


def _critic_update(critic, critic_params, gen, gen_params, batch, cfg, lr_now, rng):
    """One WGAN critic step on a batch; GP or weight clipping per config."""
    fakes = [gen.forward(gen_params.params, s.lr_chw, s.m_t)[0] for s in batch]
    reals = [s.hr_chw for s in batch]
    bs = len(batch)
    cgrads = {k: np.zeros_like(v) for k, v in critic_params.params.items()}
    d_real, d_fake = [], []
    for r, f in zip(reals, fakes):
        sc_f, tape_f = critic.forward(critic_params.params, f)
        g_f, _ = critic.backward(critic_params.params, tape_f, 1.0 / bs)
        sc_r, tape_r = critic.forward(critic_params.params, r)
        g_r, _ = critic.backward(critic_params.params, tape_r, -1.0 / bs)
        d_fake.append(sc_f)
        d_real.append(sc_r)
        for k in cgrads:
            cgrads[k] += g_f[k] + g_r[k]
    if cfg.gp_enabled:
        gp_seed = int(rng.integers(0, 2 ** 31))
        _, gp_grads = gradient_penalty(
            critic, critic_params.params, reals, fakes,
            gp_weight=cfg.gp_weight, seed=gp_seed,
        )
        for k in cgrads:
            cgrads[k] += gp_grads[k]
    adam_step(critic_params, cgrads, lr_now)
    if not cfg.gp_enabled:
        clip_params(critic_params.params, cfg.clip_limit)
    critic_core, _ = wgan_losses(d_real, d_fake)
    return critic_core


def train(manifest: PairManifest, cfg: RunConfig, out_dir, cache_dir=None, log=print) -> dict:
    """Two-phase training; writes checkpoints, the loss CSV, and figures."""
    from .reporting import render_loss_curves, write_loss_csv

    if cfg.feature_source == "external" and cfg.lambda_ > 0.0:
        raise ValueError(
            "the texture loss is computed against the in-process extractor's features; "
            "with external matching features set lambda=0 or use feature_source=fallback"
        )
    os.makedirs(out_dir, exist_ok=True)
    cache_dir = cache_dir or os.path.join(out_dir, cfg.cache_dir)
    entries = precompute_mt(manifest, cfg, cache_dir)
    failures = [e for e in entries if e.error]
    if failures:
        msgs = "; ".join(f"{e.pair.hr_path}: {e.error}" for e in failures)
        raise RuntimeError(f"texture precomputation failed for {len(failures)} pair(s): {msgs}")

    extractor = FallbackExtractor(cfg.fallback_seed)
    samples = []
    for entry in entries:
        hr_img = read_png(entry.pair.hr_path)
        lr_img = derive_lr(hr_img)
        m_t, ms = load_cached_texture(entry)
        samples.append(_Sample(
            pair=entry.pair,
            lr_chw=nn.chw(lr_img.data).astype(np.float32),
            hr_chw=nn.chw(hr_img.data).astype(np.float32),
            m_t=m_t.data.astype(np.float32),
            ms=ms.astype(np.float32),
            phi_hr=extractor.extract(hr_img).deepest.data,
        ))

    tex_channels = samples[0].m_t.shape[0]
    gen = build_generator(cfg, tex_channels)
    gen_params = gen.init_params(cfg.seed)
    weights = LossWeights(cfg.alpha, cfg.beta, cfg.lambda_)
    adversarial = cfg.beta > 0.0
    critic = Critic() if adversarial else None
    critic_params = critic.init_params(cfg.seed + 1) if adversarial else None
    content_names = set(gen.content_param_names(gen_params.params))

    rng = np.random.Generator(np.random.PCG64(cfg.seed + 2))
    rows = []
    step = 0
    n = len(samples)

    for epoch in range(cfg.total_epochs):
        pretraining = epoch < cfg.pretrain_epochs
        lr_now = cfg.lr * (cfg.lr_decay ** (epoch // cfg.lr_decay_every))
        order = rng.permutation(n)
        for b0 in range(0, n, cfg.batch_size):
            batch = [samples[i] for i in order[b0:b0 + cfg.batch_size]]
            bs = len(batch)

            if adversarial and not pretraining:
                for _ in range(cfg.critic_steps):
                    _critic_update(critic, critic_params, gen, gen_params, batch, cfg, lr_now, rng)

            ggrads = {k: np.zeros_like(v) for k, v in gen_params.params.items()}
            sums = {"rec": 0.0, "per": 0.0, "adv": 0.0, "tex": 0.0, "total": 0.0}
            for s in batch:
                sr, tape = gen.forward(gen_params.params, s.lr_chw, s.m_t)
                rec_v, rec_g = loss_rec(sr, s.hr_chw)
                per_v = adv_v = tex_v = 0.0
                grad_content = rec_g
                grad_tex_sr = None
                if not pretraining:
                    phi_pyr = phi_cache = None
                    if weights.alpha > 0.0 or weights.lambda_ > 0.0:
                        phi_pyr, phi_cache = extractor.forward_chw(sr, want_cache=True)
                    if weights.alpha > 0.0:
                        per_v, per_g = loss_per(phi_pyr.deepest.data, s.phi_hr)
                        g_img = extractor.input_gradient(phi_cache, {"L3": per_g})
                        grad_content = grad_content + weights.alpha * nn.chw(g_img)
                    if adversarial:
                        sc, ctape = critic.forward(critic_params.params, sr)
                        adv_v = -sc
                        _, g_in = critic.backward(critic_params.params, ctape, -1.0)
                        grad_content = grad_content + weights.beta * g_in
                    if weights.lambda_ > 0.0:
                        tex_v, tex_g = loss_texture(phi_pyr.deepest.data, s.ms, s.m_t)
                        g_img = extractor.input_gradient(phi_cache, {"L3": tex_g})
                        grad_tex_sr = weights.lambda_ * nn.chw(g_img)
                bundle = total_loss(rec_v, per_v, adv_v, tex_v, weights)
                for key, val in (("rec", rec_v), ("per", per_v), ("adv", adv_v),
                                 ("tex", tex_v), ("total", bundle.total)):
                    sums[key] += val / bs
                if not np.isfinite(bundle.total):
                    _dump_diagnostics(out_dir, step, s, sums)
                    raise NanLossError(
                        f"non-finite loss at step {step}: "
                        f"rec={rec_v} per={per_v} adv={adv_v} tex={tex_v}"
                    )
                sample_grads = gen.backward(
                    gen_params.params, tape, (grad_content / bs).astype(np.float32)
                )
                for k in ggrads:
                    ggrads[k] += sample_grads[k]
                if grad_tex_sr is not None:
                    tex_grads = gen.backward(
                        gen_params.params, tape, (grad_tex_sr / bs).astype(np.float32)
                    )
                    for k in ggrads:
                        if k not in content_names:
                            ggrads[k] += tex_grads[k]
            adam_step(gen_params, ggrads, lr_now)
            step += 1
            rows.append({
                "step": step, "rec": sums["rec"], "per": sums["per"],
                "adv": sums["adv"], "tex": sums["tex"], "total": sums["total"],
            })
        ckpt_dir = os.path.join(out_dir, "checkpoints", f"epoch_{epoch:04d}")
        save_checkpoint(ckpt_dir, gen_params, meta=gen.meta())
        _write_run_config(ckpt_dir, cfg)
        if log and (epoch % 10 == 0 or epoch == cfg.total_epochs - 1):
            log(f"epoch {epoch:4d} step {step:5d} total {sums['total']:.6f} rec {sums['rec']:.6f}")

    final_dir = os.path.join(out_dir, "checkpoints", "final")
    save_checkpoint(final_dir, gen_params, meta=gen.meta())
    _write_run_config(final_dir, cfg)
    csv_path = os.path.join(out_dir, "loss.csv")
    write_loss_csv(csv_path, rows)
    render_loss_curves(rows, os.path.join(out_dir, "loss_curves.png"))
    return {"rows": rows, "final_checkpoint": final_dir, "loss_csv": csv_path}


def _write_run_config(directory, cfg: RunConfig):
    from .config import save_config

    save_config(cfg, os.path.join(directory, "config.txt"))


def load_model(model_dir, cfg: RunConfig | None = None):
    """Rebuild (generator, params, config) from a checkpoint directory."""
    from .config import load_config

    mp, meta = load_checkpoint(model_dir)
    if cfg is None:
        cfg_path = os.path.join(model_dir, "config.txt")
        if not os.path.exists(cfg_path):
            raise FileNotFoundError(f"no config.txt beside checkpoint {model_dir}")
        cfg = load_config(cfg_path)
    gen = Generator(
        tex_channels=int(meta.get("tex_channels", cfg.features)),
        features=int(meta.get("features", cfg.features)),
        content_blocks=int(meta.get("content_blocks", cfg.content_blocks)),
        transfer_blocks=int(meta.get("transfer_blocks", cfg.transfer_blocks)),
    )
    return gen, mp.params, cfg


def result_name(index: int) -> str:
    return f"pair_{index:04d}.png"


def evaluate(manifest: PairManifest, results_dir, cfg: RunConfig, out_csv) -> dict:
    """Per-pair and mean PSNR / SSIM / Gram texture distance.

    SR outputs are looked up as pair_{index:04d}.png inside results_dir;
    missing outputs are listed and excluded from the means.
    """
    from .reporting import render_metrics_figure, write_metrics_csv

    source = FeatureSource(cfg)
    rows = []
    missing = []
    for i, pair in enumerate(manifest.pairs):
        name = result_name(i)
        sr_path = os.path.join(results_dir, name)
        if not os.path.exists(sr_path):
            missing.append(name)
            continue
        sr = read_png(sr_path)
        hr = read_png(pair.hr_path)
        ref = read_png(pair.ref_path)
        phi_sr = source.image_map(sr, stem=stem_of(sr_path))
        phi_ref = source.image_map(ref, stem=stem_of(pair.ref_path))
        gdist = float(np.linalg.norm(gram(phi_sr) - gram(phi_ref)))
        rows.append({
            "pair_id": f"pair_{i:04d}",
            "level": pair.level,
            "psnr_db": psnr(sr, hr),
            "ssim": ssim(sr, hr),
            "gram_dist": gdist,
        })
    means = {}
    if rows:
        for key in ("psnr_db", "ssim", "gram_dist"):
            means[key] = float(np.mean([r[key] for r in rows]))
    write_metrics_csv(out_csv, rows, means)
    render_metrics_figure(rows, os.path.splitext(out_csv)[0] + ".png")
    return {"rows": rows, "means": means, "missing": missing}


def emit_derived_images(manifest: PairManifest, out_dir) -> list:
    """Write the derived matching inputs (upscaled LR, blurred-then-upscaled
    reference) as PNGs so an external extractor can dump their features."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for pair in manifest.pairs:
        hr = read_png(pair.hr_path)
        ref = read_png(pair.ref_path)
        lr_up, ref_blur_up = scale_adjust(derive_lr(hr), ref)
        for name, img in (
            (f"{stem_of(pair.hr_path)}.{LRUP_SUFFIX}.png", lr_up),
            (f"{stem_of(pair.ref_path)}.{BLURUP_SUFFIX}.png", ref_blur_up),
        ):
            path = os.path.join(out_dir, name)
            write_png(img, path)
            written.append(path)
    return written

"""Synthetic desk-scale corpus with a planted quality direction.

Each video draws a latent quality level g.  Frame embeddings scatter around
g times a fixed unit direction, and the ground-truth MOS is the logistic
squash of the realized projection <mean embedding, direction> plus optional
observation noise — so the target is an exact, learnable function of the
stored features.  Fragment tensors come from actually rendering tiny frames
whose intensity tracks g, sampling a fragment grid from them, and projecting
the mosaic into a feature volume; the detail branch therefore sees the same
latent through an independent route.

Text embeddings: the positive prompt leans toward the planted direction,
the negative one away from it, and the guide is a neutral unit vector.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .detail import sample_fragments
from .storage import Manifest, ManifestEntry, save_manifest, write_tensor

FRAGMENT_CHANNELS = 16
_FRAME_PIXELS = 32  # raw frames rendered for fragment sampling
_FRAG_GRID = 4
_FRAG_PATCH = 8
_BLOCK = 4  # spatial block-averaging factor for the feature stand-in


def planted_direction(dim: int, direction_seed: int) -> np.ndarray:
    rng = np.random.default_rng(direction_seed)
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def synth_dataset(out_dir, n_videos: int, dim: int, direction: np.ndarray,
                  noise: float, seed: int, num_frames: int = 16,
                  spatial_grid: int = 2, dataset_name: str = "synth",
                  latent_range: float = 1.5) -> Manifest:
    """Write TensorFiles plus a manifest under ``out_dir``; returns the manifest.

    Splits are assigned 70/10/20 by a seeded shuffle.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != (dim,):
        raise ValueError(f"direction must have width {dim}, got {direction.shape}")

    # per-dataset fixed structures
    base_pattern = rng.uniform(0.2, 1.0, size=(3, _FRAME_PIXELS, _FRAME_PIXELS))
    channel_mix = rng.standard_normal((FRAGMENT_CHANNELS, 3)) / np.sqrt(3.0)

    n_train = int(round(n_videos * 0.7))
    n_val = int(round(n_videos * 0.1))
    split_labels = (["train"] * n_train + ["val"] * n_val
                    + ["test"] * (n_videos - n_train - n_val))
    splits = [""] * n_videos
    for rank, vid in enumerate(rng.permutation(n_videos)):
        splits[vid] = split_labels[rank]

    entries = []
    for v in range(n_videos):
        g = float(rng.uniform(-latent_range, latent_range))
        # frame embeddings: g * direction plus per-frame jitter, on a token grid
        jitter = 0.05 * rng.standard_normal((num_frames, dim, spatial_grid, spatial_grid))
        z = g * direction[None, :, None, None] + jitter
        mean_embedding = z.mean(axis=(0, 2, 3))
        mos = float(
            np.clip(_sigmoid(float(mean_embedding @ direction))
                    + rng.normal(0.0, noise), 0.0, 1.0)
        )

        # raw frames whose brightness tracks the latent, then fragments
        level = 0.25 + 0.5 * _sigmoid(g)
        frames_px = level * base_pattern[:, None, :, :] + 0.05 * rng.standard_normal(
            (3, num_frames, _FRAME_PIXELS, _FRAME_PIXELS)
        )
        grid = sample_fragments(frames_px, _FRAG_GRID, _FRAG_PATCH, seed=seed * 100003 + v)
        mosaic = grid.patches  # (3, T, 32, 32)
        side = mosaic.shape[2] // _BLOCK
        blocks = mosaic.reshape(3, num_frames, side, _BLOCK, side, _BLOCK).mean(axis=(3, 5))
        volume = np.einsum("kc,cthw->kthw", channel_mix, blocks)

        frames_file = f"{dataset_name}_{v:04d}_frames.dvlt"
        frag_file = f"{dataset_name}_{v:04d}_frag.dvlt"
        write_tensor(Tensor(z.astype(np.float32)), out_dir / frames_file)
        write_tensor(Tensor(volume.astype(np.float32)), out_dir / frag_file)
        entries.append(
            ManifestEntry(
                video_id=f"{dataset_name}_{v:04d}",
                mos=mos,
                mos_scale=(0.0, 1.0),
                frames_path=frames_file,
                fragments_path=frag_file,
                num_frames=num_frames,
                split=splits[v],
                dataset=dataset_name,
            )
        )

    guide = rng.standard_normal(dim)
    guide /= np.linalg.norm(guide)
    perturb_pos = rng.standard_normal(dim)
    perturb_neg = rng.standard_normal(dim)
    pos = 0.7 * direction + 0.5 * perturb_pos / np.linalg.norm(perturb_pos)
    neg = -0.7 * direction + 0.5 * perturb_neg / np.linalg.norm(perturb_neg)
    text_paths = {}
    for name, vec in (("guide", guide), ("pos", pos), ("neg", neg)):
        fname = f"{dataset_name}_text_{name}.dvlt"
        write_tensor(Tensor((vec / np.linalg.norm(vec)).astype(np.float32)),
                     out_dir / fname)
        text_paths[name] = fname

    manifest = Manifest(
        schema_version=1,
        entries=entries,
        text_embeddings=text_paths,
        root=out_dir,
    )
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest

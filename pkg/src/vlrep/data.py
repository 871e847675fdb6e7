"""Procedural video-language clips, frame sampling, crops, and batches.

Each clip is a scripted 2-D episode: a small dark agent marker travels to a
colored shape and moves it into one of four named border regions. The
annotation follows the template "move the <color> <shape> to the <region>",
which is guaranteed true of the rendered motion (the shape's final center
lies inside the region). Clips are fully determined by a per-clip seed
derived from (dataset seed, split, clip index), so train and heldout splits
never share clip seeds.

Datasets persist as a directory of per-clip files: a binary frame blob plus
a plain-text metadata record, listed by a versioned index file.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import DATASET_FORMAT_VERSION
from .blobio import read_blob, read_kv, write_blob, write_kv
from .render import COLOR_VALUES, AGENT_COLOR, bilinear_resize, draw_scene, from_u8, to_u8

CLIP_MAGIC = b"VLRDCLP\0"
INDEX_HEADER = "vlrep-dataset"

COLORS = ("red", "green", "blue", "yellow")
SHAPES = ("square", "circle", "diamond")
REGIONS = ("left", "right", "top", "bottom")
VOCABULARY = ("move", "the", "to") + COLORS + SHAPES + REGIONS

SHAPE_RADIUS = 0.07
AGENT_RADIUS = 0.035
REGION_DEPTH = 0.30  # band width of each border region


class DatasetError(ValueError):
    """Invalid generator configuration or dataset contents."""


class DegenerateClipError(ValueError):
    """Clip too short to satisfy the frame-sampling constraints."""


class BatchCompositionError(ValueError):
    """Batch cannot satisfy the cross-negative requirements."""


def annotation_for(color: str, shape: str, region: str) -> list[str]:
    return ["move", "the", color, shape, "to", "the", region]


def region_contains(region: str, pos) -> bool:
    x, y = float(pos[0]), float(pos[1])
    if region == "left":
        return x <= REGION_DEPTH
    if region == "right":
        return x >= 1.0 - REGION_DEPTH
    if region == "top":
        return y <= REGION_DEPTH
    if region == "bottom":
        return y >= 1.0 - REGION_DEPTH
    raise ValueError(f"unknown region {region!r}")


def _region_target(region: str, rng: np.random.Generator) -> np.ndarray:
    pad = SHAPE_RADIUS + 0.02
    lo, hi = pad, 1.0 - pad
    band_hi = REGION_DEPTH - pad
    if region == "left":
        return np.array([rng.uniform(pad, band_hi), rng.uniform(lo, hi)])
    if region == "right":
        return np.array([rng.uniform(1.0 - band_hi, 1.0 - pad), rng.uniform(lo, hi)])
    if region == "top":
        return np.array([rng.uniform(lo, hi), rng.uniform(pad, band_hi)])
    return np.array([rng.uniform(lo, hi), rng.uniform(1.0 - band_hi, 1.0 - pad)])


# -- domain types ---------------------------------------------------------------


@dataclass
class VideoClip:
    """One rendered episode with annotation and generation metadata.

    Frames are stored on the uint8 grid; ``frames`` materializes float32
    values in [0, 1] (exactly k/255, matching what the renderer produced).
    """

    frames_u8: np.ndarray  # (T, s, s, 3) uint8
    annotation: list[str]
    meta: dict

    @property
    def n_frames(self) -> int:
        return self.frames_u8.shape[0]

    @property
    def frames(self) -> np.ndarray:
        return from_u8(self.frames_u8)

    def frame(self, t: int) -> np.ndarray:
        return from_u8(self.frames_u8[t])


@dataclass
class ClipDataset:
    clips: list[VideoClip]
    vocabulary: tuple[str, ...]
    split: str  # "train" | "heldout"
    render_size: int
    seed: int

    def __post_init__(self):
        if len(self.clips) < 2:
            raise DatasetError("a dataset needs at least 2 clips for cross-video negatives")
        vocab = set(self.vocabulary)
        for clip in self.clips:
            if not set(clip.annotation) <= vocab:
                raise DatasetError(f"annotation tokens outside vocabulary: {clip.annotation}")


@dataclass(frozen=True)
class FrameSample:
    """Role frame indices of one clip: start, (i, j, k), goal."""

    i0: int
    i: int
    j: int
    k: int
    g: int

    def __post_init__(self):
        if not (0 <= self.i0 < self.i < self.j < self.k <= self.g):
            raise ValueError(f"frame roles must satisfy i0 < i < j < k <= g, got {self}")

    @property
    def roles(self) -> tuple[int, int, int, int, int]:
        return (self.i0, self.i, self.j, self.k, self.g)


@dataclass(frozen=True)
class CropRect:
    """Source-pixel crop window plus the output resolution it resizes to."""

    x: int
    y: int
    w: int
    h: int
    out_size: int

    def validate(self, src_size: int) -> None:
        if not (0 <= self.x and 0 <= self.y and self.w >= 1 and self.h >= 1):
            raise ValueError(f"malformed crop {self}")
        if self.x + self.w > src_size or self.y + self.h > src_size:
            raise ValueError(f"crop {self} exceeds source size {src_size}")
        if 2 * self.w < src_size or 2 * self.h < src_size:
            raise ValueError(f"crop {self} below the minimum scale of half the source")


@dataclass
class BatchSample:
    """Everything one gradient step consumes, before pixels are assembled."""

    clip_ids: np.ndarray  # (B,)
    frame_samples: list[FrameSample]
    crops: list[CropRect]
    neg_positions: np.ndarray  # (B, n_cross), positions within the batch


@dataclass(frozen=True)
class DataConfig:
    n_clips: int = 200
    n_frames: int = 40
    render_size: int = 64
    seed: int = 0
    split: str = "train"
    task_family: str = "move-shape"

    def __post_init__(self):
        if self.n_clips < 2:
            raise DatasetError("n_clips must be >= 2")
        if self.n_frames < 5:
            raise DatasetError("n_frames must be >= 5")
        if self.render_size < 8:
            raise DatasetError("render_size must be >= 8")
        if self.split not in ("train", "heldout"):
            raise DatasetError(f"unknown split {self.split!r}")
        if self.task_family != "move-shape":
            raise DatasetError(f"unknown task family {self.task_family!r}")


_SPLIT_CODES = {"train": 0, "heldout": 1}


def clip_seed_key(dataset_seed: int, split: str, index: int) -> tuple[int, int, int]:
    return (dataset_seed, _SPLIT_CODES[split], index)


def _smoothstep(u: np.ndarray) -> np.ndarray:
    return u * u * (3.0 - 2.0 * u)


def generate_clip(config: DataConfig, index: int) -> VideoClip:
    """Render one scripted episode; deterministic in (config.seed, split, index)."""
    key = clip_seed_key(config.seed, config.split, index)
    rng = np.random.default_rng(np.random.SeedSequence(key))
    color = COLORS[rng.integers(len(COLORS))]
    shape = SHAPES[rng.integers(len(SHAPES))]
    region = REGIONS[rng.integers(len(REGIONS))]

    agent0 = rng.uniform(0.12, 0.88, size=2)
    while True:
        shape0 = rng.uniform(0.12, 0.88, size=2)
        if not region_contains(region, shape0):
            break
    target = _region_target(region, rng)

    t = config.n_frames
    settle = max(1, round(0.12 * t))
    move_frames = t - settle
    d1 = float(np.linalg.norm(shape0 - agent0))
    d2 = float(np.linalg.norm(target - shape0))
    t1 = int(np.clip(round(move_frames * d1 / max(d1 + d2, 1e-9)), 1, move_frames - 1))
    t2 = move_frames - t1

    agent_pos = np.empty((t, 2))
    shape_pos = np.empty((t, 2))
    for f in range(t):
        if f <= t1:
            u = _smoothstep(np.float64(f) / t1)
            agent_pos[f] = agent0 + u * (shape0 - agent0)
            shape_pos[f] = shape0
        elif f <= t1 + t2:
            u = _smoothstep(np.float64(f - t1) / t2)
            agent_pos[f] = shape0 + u * (target - shape0)
            shape_pos[f] = agent_pos[f]
        else:
            agent_pos[f] = target
            shape_pos[f] = target

    rgb = COLOR_VALUES[color]
    frames = np.empty((t, config.render_size, config.render_size, 3), dtype=np.uint8)
    for f in range(t):
        img = draw_scene(
            config.render_size,
            [
                (shape, shape_pos[f, 0], shape_pos[f, 1], SHAPE_RADIUS, rgb),
                ("circle", agent_pos[f, 0], agent_pos[f, 1], AGENT_RADIUS, AGENT_COLOR),
            ],
        )
        frames[f] = to_u8(img)

    meta = {
        "color": color,
        "shape": shape,
        "region": region,
        "agent_start": agent0.tolist(),
        "shape_start": shape0.tolist(),
        "target": target.tolist(),
        "seed_key": list(key),
        "n_frames": t,
        "render_size": config.render_size,
    }
    return VideoClip(frames_u8=frames, annotation=annotation_for(color, shape, region), meta=meta)


def generate_synthetic_dataset(config: DataConfig) -> ClipDataset:
    clips = [generate_clip(config, i) for i in range(config.n_clips)]
    return ClipDataset(
        clips=clips,
        vocabulary=VOCABULARY,
        split=config.split,
        render_size=config.render_size,
        seed=config.seed,
    )


# -- frame & batch sampling ------------------------------------------------------


def sample_frames(clip: VideoClip, rng: np.random.Generator) -> FrameSample:
    """Draw the five role frames: endpoints from the first/last 20%, a sorted
    triplet strictly between them."""
    t = clip.n_frames
    if t < 5:
        raise DegenerateClipError(f"clip has {t} frames; need at least 5")
    head = int(np.floor(0.2 * t))
    i0 = int(rng.integers(0, head))
    g = int(rng.integers(t - head, t))
    inner = np.arange(i0 + 1, g)
    i, j, k = np.sort(rng.choice(inner, size=3, replace=False))
    return FrameSample(i0=i0, i=int(i), j=int(j), k=int(k), g=g)


def sample_crop(rng: np.random.Generator, src_size: int, out_size: int) -> CropRect:
    """Video-level crop: scale in [0.5, 1], aspect in [3/4, 4/3], then resize."""
    s = rng.uniform(0.5, 1.0)
    a = rng.uniform(0.75, 4.0 / 3.0)
    min_side = (src_size + 1) // 2
    w = int(np.clip(round(src_size * s * np.sqrt(a)), min_side, src_size))
    h = int(np.clip(round(src_size * s / np.sqrt(a)), min_side, src_size))
    x = int(rng.integers(0, src_size - w + 1))
    y = int(rng.integers(0, src_size - h + 1))
    return CropRect(x=x, y=y, w=w, h=h, out_size=out_size)


def identity_crop(src_size: int, out_size: int) -> CropRect:
    return CropRect(x=0, y=0, w=src_size, h=src_size, out_size=out_size)


def apply_video_crop(frames, crop: CropRect) -> np.ndarray:
    """Extract the same sub-rectangle from every frame and resize bilinearly.

    Accepts float frames in [0, 1] or uint8; returns float32 (n, out, out, 3).
    """
    frames = np.asarray(frames)
    if frames.ndim == 3:
        frames = frames[None]
    src = frames.shape[1]
    if frames.shape[1] != frames.shape[2]:
        raise ValueError("frames must be square")
    crop.validate(src)
    if frames.dtype == np.uint8:
        frames = from_u8(frames)
    sub = frames[:, crop.y : crop.y + crop.h, crop.x : crop.x + crop.w, :]
    if crop.w == crop.out_size and crop.h == crop.out_size:
        return sub.astype(np.float32, copy=True)
    return np.stack([bilinear_resize(fr, crop.out_size) for fr in sub])


def sample_batch(
    dataset: ClipDataset,
    batch_size: int,
    n_cross: int,
    rng: np.random.Generator,
    out_size: int | None = None,
    augment: bool = True,
) -> BatchSample:
    """Draw clips, role frames, one crop per clip, and cross-negative slots."""
    n = len(dataset.clips)
    if n < 2:
        raise BatchCompositionError("dataset must contain at least 2 clips")
    if batch_size < 2:
        raise BatchCompositionError("batch_size must be >= 2")
    out = dataset.render_size if out_size is None else out_size

    if n >= batch_size:
        clip_ids = rng.choice(n, size=batch_size, replace=False)
    else:
        while True:  # with replacement, but never a single-clip batch
            clip_ids = rng.choice(n, size=batch_size, replace=True)
            if len(np.unique(clip_ids)) >= 2:
                break

    frame_samples = [sample_frames(dataset.clips[c], rng) for c in clip_ids]
    if augment:
        crops = [sample_crop(rng, dataset.render_size, out) for _ in range(batch_size)]
    else:
        crops = [identity_crop(dataset.render_size, out) for _ in range(batch_size)]

    neg_positions = np.empty((batch_size, n_cross), dtype=np.intp)
    positions = np.arange(batch_size)
    for b in range(batch_size):
        cands = positions[(positions != b) & (clip_ids != clip_ids[b])]
        if cands.size == 0:
            raise BatchCompositionError("no cross-video negative available in batch")
        if cands.size >= n_cross:
            neg_positions[b] = rng.choice(cands, size=n_cross, replace=False)
        else:
            neg_positions[b] = rng.choice(cands, size=n_cross, replace=True)
    return BatchSample(
        clip_ids=np.asarray(clip_ids),
        frame_samples=frame_samples,
        crops=crops,
        neg_positions=neg_positions,
    )


def assemble_batch(
    dataset: ClipDataset, batch: BatchSample
) -> tuple[np.ndarray, list[list[str]], np.ndarray]:
    """Materialize pixels for one step: (B, 5, out, out, 3) float32 images,
    per-clip annotations, and the cross-negative position table."""
    images = []
    annotations = []
    for c, fs, crop in zip(batch.clip_ids, batch.frame_samples, batch.crops):
        clip = dataset.clips[c]
        role_frames = clip.frames_u8[list(fs.roles)]
        images.append(apply_video_crop(role_frames, crop))
        annotations.append(clip.annotation)
    return np.stack(images), annotations, batch.neg_positions


# -- persistence -----------------------------------------------------------------


def save_dataset(dataset: ClipDataset, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, clip in enumerate(dataset.clips):
        stem = f"clip_{i:05d}"
        write_blob(
            out / f"{stem}.bin",
            CLIP_MAGIC,
            DATASET_FORMAT_VERSION,
            meta={},
            tensors={"frames": clip.frames_u8},
        )
        write_kv(
            out / f"{stem}.meta",
            {
                "annotation": clip.annotation,
                **{k: v for k, v in clip.meta.items()},
            },
        )
        names.append(stem)
    lines = [
        f"format={INDEX_HEADER}",
        f"version={DATASET_FORMAT_VERSION}",
        f"split={dataset.split}",
        f"seed={dataset.seed}",
        f"render_size={dataset.render_size}",
        f"n_clips={len(dataset.clips)}",
        "vocabulary=" + " ".join(dataset.vocabulary),
    ] + [f"clip={n}" for n in names]
    (out / "index.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(in_dir: str | Path) -> ClipDataset:
    root = Path(in_dir)
    index = root / "index.txt"
    if not index.exists():
        raise DatasetError(f"no dataset index at {index}")
    header: dict[str, str] = {}
    clip_names: list[str] = []
    for line in index.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        if key == "clip":
            clip_names.append(value)
        else:
            header[key] = value
    if header.get("format") != INDEX_HEADER:
        raise DatasetError(f"not a dataset index: {index}")
    if int(header.get("version", -1)) != DATASET_FORMAT_VERSION:
        raise DatasetError(f"unsupported dataset version {header.get('version')}")

    clips = []
    for stem in clip_names:
        _, _, tensors = read_blob(root / f"{stem}.bin", CLIP_MAGIC, DATASET_FORMAT_VERSION)
        meta_raw = read_kv(root / f"{stem}.meta")
        annotation = meta_raw["annotation"].split()
        meta = {
            "color": meta_raw["color"],
            "shape": meta_raw["shape"],
            "region": meta_raw["region"],
            "agent_start": [float(v) for v in meta_raw["agent_start"].split()],
            "shape_start": [float(v) for v in meta_raw["shape_start"].split()],
            "target": [float(v) for v in meta_raw["target"].split()],
            "seed_key": [int(v) for v in meta_raw["seed_key"].split()],
            "n_frames": int(meta_raw["n_frames"]),
            "render_size": int(meta_raw["render_size"]),
        }
        clips.append(VideoClip(frames_u8=tensors["frames"], annotation=annotation, meta=meta))
    return ClipDataset(
        clips=clips,
        vocabulary=tuple(header["vocabulary"].split()),
        split=header["split"],
        render_size=int(header["render_size"]),
        seed=int(header["seed"]),
    )

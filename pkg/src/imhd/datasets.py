"""Synthetic training data: rendered color-grid images with captions or
question/answer text. The renderer and the text generator share one source
of truth, so every caption/answer is correct by construction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoder import EOS_TOKEN, IMAGE_TOKEN, encode_text
from .rng import Rng

GRID_COLORS = {
    "red": (255, 0, 0),
    "green": (0, 200, 0),
    "blue": (0, 64, 255),
    "yellow": (255, 220, 0),
    "cyan": (0, 220, 220),
    "magenta": (230, 0, 230),
    "white": (255, 255, 255),
    "gray": (128, 128, 128),
}
_COLOR_NAMES = list(GRID_COLORS)


@dataclass
class TrainSample:
    """One training example: optional image plus a token sequence with an
    image marker, and a mask of which positions count toward the loss."""
    image: np.ndarray | None
    tokens: list[int]
    loss_mask: list[bool]
    prompt_len: int = 0          # tokens before the answer; generation starts here
    answer: bytes | None = None
    meta: dict = field(default_factory=dict)


def build_sample(image: np.ndarray | None, prompt: str, answer: str | None,
                 train_on_prompt: bool, meta: dict | None = None) -> TrainSample:
    tokens: list[int] = []
    mask: list[bool] = []
    if image is not None:
        tokens.append(IMAGE_TOKEN)
        mask.append(False)
    p_ids = encode_text(prompt)
    tokens += p_ids
    mask += [train_on_prompt] * len(p_ids)
    prompt_len = len(tokens)
    answer_bytes = None
    if answer is not None:
        a_ids = encode_text(answer)
        tokens += a_ids
        mask += [True] * len(a_ids)
        answer_bytes = bytes(a_ids)
    tokens.append(EOS_TOKEN)
    mask.append(True)
    return TrainSample(image=image, tokens=tokens, loss_mask=mask,
                       prompt_len=prompt_len, answer=answer_bytes, meta=meta or {})


def render_color_grid(colors: list[str], size: int) -> np.ndarray:
    """2x2 grid of colored cells, row-major, as a [3, size, size] image."""
    if len(colors) != 4:
        raise ValueError("grid renderer takes exactly 4 cell colors")
    img = np.zeros((3, size, size))
    half = size // 2
    bounds = [(0, 0), (0, half), (half, 0), (half, half)]
    for name, (r0, c0) in zip(colors, bounds):
        rgb = GRID_COLORS[name]
        for ch in range(3):
            img[ch, r0:r0 + half, c0:c0 + half] = rgb[ch] / 255.0
    return img


_CELL_WORDS = ["top left", "top right", "bottom left", "bottom right"]


def _pick_colors(rng: Rng, seen: set[tuple[str, ...]]) -> list[str]:
    while True:
        colors = [rng.choice(_COLOR_NAMES) for _ in range(4)]
        key = tuple(colors)
        if key not in seen:
            seen.add(key)
            return colors


def make_caption_samples(n: int, rng: Rng, size: int = 32) -> list[TrainSample]:
    """Distinct color grids captioned by their cell colors in order."""
    seen: set[tuple[str, ...]] = set()
    out = []
    for _ in range(n):
        colors = _pick_colors(rng, seen)
        img = render_color_grid(colors, size)
        out.append(build_sample(img, " ".join(colors), None, train_on_prompt=True,
                                meta={"colors": colors}))
    return out


def make_vqa_samples(n: int, rng: Rng, size: int = 32,
                     sizes: list[int] | None = None) -> list[TrainSample]:
    """Ask for the color of one named cell; answer comes from the renderer's
    own color list. ``sizes`` cycles per-sample canvas sizes for mixed
    resolution runs."""
    seen: set[tuple[str, ...]] = set()
    out = []
    for i in range(n):
        colors = _pick_colors(rng, seen)
        cell = int(rng.integers(0, 4))
        s = sizes[i % len(sizes)] if sizes else size
        img = render_color_grid(colors, s)
        q = f"what color is the {_CELL_WORDS[cell]} square?"
        out.append(build_sample(img, q, colors[cell], train_on_prompt=False,
                                meta={"colors": colors, "cell": cell}))
    return out


def make_synthetic_dataset(kind: str, n: int, rng: Rng, size: int = 32,
                           sizes: list[int] | None = None,
                           overlay_max_len: int | None = None) -> list[TrainSample]:
    if n < 1:
        raise ValueError("dataset size must be >= 1")
    if kind == "caption":
        return make_caption_samples(n, rng, size=size)
    if kind == "vqa":
        return make_vqa_samples(n, rng, size=size, sizes=sizes)
    if kind == "text_overlay":
        from .augment import augment_corpus, make_base_images
        images = make_base_images(max(4, n // 4), rng.split("base"), size=size)
        return augment_corpus(images, n, rng.split("overlay"), max_len=overlay_max_len)
    raise ValueError(f"unknown dataset kind {kind!r}")


def parse_dataset_spec(spec: str, rng: Rng, sizes: list[int] | None = None,
                       size: int = 32) -> list[TrainSample]:
    """Parse "kind:count[:size]" dataset strings, or "jsonl:path" for a
    corpus written by the augment CLI."""
    parts = spec.split(":")
    if parts[0] == "jsonl":
        from .augment import load_jsonl_corpus
        return load_jsonl_corpus(":".join(parts[1:]))
    kind = parts[0]
    n = int(parts[1]) if len(parts) > 1 else 16
    if len(parts) > 2:
        size = int(parts[2])
    return make_synthetic_dataset(kind, n, rng, size=size, sizes=sizes)

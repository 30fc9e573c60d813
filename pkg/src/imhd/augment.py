"""Text-oriented data augmentation: scene-irrelevant character strings drawn
into the image corners, plus question/answer pairs about them.

Characters render from an embedded 5x7 bitmap font so tests can count pixels
exactly. Only the two corner quadrants are ever touched. Each sample's
answers re-derive purely from its stored overlay description.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import TrainSample, build_sample
from .rng import Rng

GLYPH_H, GLYPH_W = 7, 5
CHAR_SPACING = 1
CHARSET = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
CORNERS = ("left_top", "right_bottom")
_CORNER_WORDS = {"left_top": "left-top", "right_bottom": "right-bottom"}

PALETTE = {
    "red": (255, 0, 0),
    "green": (0, 255, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 255, 0),
    "cyan": (0, 255, 255),
    "magenta": (255, 0, 255),
    "white": (255, 255, 255),
    "orange": (255, 165, 0),
}

FONT = {
    "A": (".XXX.", "X...X", "X...X", "XXXXX", "X...X", "X...X", "X...X"),
    "B": ("XXXX.", "X...X", "X...X", "XXXX.", "X...X", "X...X", "XXXX."),
    "C": (".XXX.", "X...X", "X....", "X....", "X....", "X...X", ".XXX."),
    "D": ("XXX..", "X..X.", "X...X", "X...X", "X...X", "X..X.", "XXX.."),
    "E": ("XXXXX", "X....", "X....", "XXXX.", "X....", "X....", "XXXXX"),
    "F": ("XXXXX", "X....", "X....", "XXXX.", "X....", "X....", "X...."),
    "G": (".XXX.", "X...X", "X....", "X.XXX", "X...X", "X...X", ".XXXX"),
    "H": ("X...X", "X...X", "X...X", "XXXXX", "X...X", "X...X", "X...X"),
    "I": (".XXX.", "..X..", "..X..", "..X..", "..X..", "..X..", ".XXX."),
    "J": ("..XXX", "...X.", "...X.", "...X.", "...X.", "X..X.", ".XX.."),
    "K": ("X...X", "X..X.", "X.X..", "XX...", "X.X..", "X..X.", "X...X"),
    "L": ("X....", "X....", "X....", "X....", "X....", "X....", "XXXXX"),
    "M": ("X...X", "XX.XX", "X.X.X", "X.X.X", "X...X", "X...X", "X...X"),
    "N": ("X...X", "X...X", "XX..X", "X.X.X", "X..XX", "X...X", "X...X"),
    "O": (".XXX.", "X...X", "X...X", "X...X", "X...X", "X...X", ".XXX."),
    "P": ("XXXX.", "X...X", "X...X", "XXXX.", "X....", "X....", "X...."),
    "Q": (".XXX.", "X...X", "X...X", "X...X", "X.X.X", "X..X.", ".XX.X"),
    "R": ("XXXX.", "X...X", "X...X", "XXXX.", "X.X..", "X..X.", "X...X"),
    "S": (".XXXX", "X....", "X....", ".XXX.", "....X", "....X", "XXXX."),
    "T": ("XXXXX", "..X..", "..X..", "..X..", "..X..", "..X..", "..X.."),
    "U": ("X...X", "X...X", "X...X", "X...X", "X...X", "X...X", ".XXX."),
    "V": ("X...X", "X...X", "X...X", "X...X", "X...X", ".X.X.", "..X.."),
    "W": ("X...X", "X...X", "X...X", "X.X.X", "X.X.X", "X.X.X", ".X.X."),
    "X": ("X...X", "X...X", ".X.X.", "..X..", ".X.X.", "X...X", "X...X"),
    "Y": ("X...X", "X...X", ".X.X.", "..X..", "..X..", "..X..", "..X.."),
    "Z": ("XXXXX", "....X", "...X.", "..X..", ".X...", "X....", "XXXXX"),
    "0": (".XXX.", "X...X", "X..XX", "X.X.X", "XX..X", "X...X", ".XXX."),
    "1": ("..X..", ".XX..", "..X..", "..X..", "..X..", "..X..", ".XXX."),
    "2": (".XXX.", "X...X", "....X", "...X.", "..X..", ".X...", "XXXXX"),
    "3": ("XXXXX", "...X.", "..X..", "...X.", "....X", "X...X", ".XXX."),
    "4": ("...X.", "..XX.", ".X.X.", "X..X.", "XXXXX", "...X.", "...X."),
    "5": ("XXXXX", "X....", "XXXX.", "....X", "....X", "X...X", ".XXX."),
    "6": ("..XX.", ".X...", "X....", "XXXX.", "X...X", "X...X", ".XXX."),
    "7": ("XXXXX", "....X", "...X.", "..X..", ".X...", ".X...", ".X..."),
    "8": (".XXX.", "X...X", "X...X", ".XXX.", "X...X", "X...X", ".XXX."),
    "9": (".XXX.", "X...X", "X...X", ".XXXX", "....X", "...X.", ".XX.."),
}


@dataclass
class CornerText:
    text: str
    color: str

    def __post_init__(self):
        if not 1 <= len(self.text) <= 5:
            raise ValueError("overlay text must be 1-5 characters")
        bad = set(self.text) - set(CHARSET)
        if bad:
            raise ValueError(f"characters outside A-Z0-9: {sorted(bad)}")
        if self.color not in PALETTE:
            raise ValueError(f"unknown palette color {self.color!r}")


@dataclass
class OverlaySpec:
    left_top: CornerText
    right_bottom: CornerText
    glyph_size: int = 1

    def __post_init__(self):
        if self.left_top.color == self.right_bottom.color:
            raise ValueError("corner colors must be distinct")
        if self.glyph_size < 1:
            raise ValueError("glyph_size must be >= 1")

    def corner(self, which: str) -> CornerText:
        if which not in CORNERS:
            raise ValueError(f"unknown corner {which!r}")
        return getattr(self, which)

    def to_dict(self) -> dict:
        return {"left_top": {"text": self.left_top.text, "color": self.left_top.color},
                "right_bottom": {"text": self.right_bottom.text,
                                 "color": self.right_bottom.color},
                "glyph_size": self.glyph_size}

    @classmethod
    def from_dict(cls, d: dict) -> "OverlaySpec":
        return cls(left_top=CornerText(**d["left_top"]),
                   right_bottom=CornerText(**d["right_bottom"]),
                   glyph_size=d.get("glyph_size", 1))


@dataclass
class QaPair:
    question: str
    answer: str
    template_id: str
    corner: str


def glyph_box(n_chars: int, scale: int) -> tuple[int, int]:
    """(height, width) in pixels of a rendered string."""
    return GLYPH_H * scale, ((GLYPH_W + CHAR_SPACING) * n_chars - CHAR_SPACING) * scale


def max_overlay_chars(h: int, w: int, scale: int = 1) -> int:
    """Longest string (capped at 5) whose padded box fits a corner quadrant."""
    pad = scale
    if GLYPH_H * scale + pad > h // 2:
        return 0
    n = 0
    while n < 5:
        if glyph_box(n + 1, scale)[1] + pad > w // 2:
            break
        n += 1
    return n


def _glyph_bitmap(ch: str) -> np.ndarray:
    rows = FONT[ch]
    return np.array([[c == "X" for c in row] for row in rows], dtype=bool)


def _string_bitmap(text: str, scale: int) -> np.ndarray:
    h, w = glyph_box(len(text), scale)
    bits = np.zeros((h // scale, w // scale), dtype=bool)
    for k, ch in enumerate(text):
        x0 = k * (GLYPH_W + CHAR_SPACING)
        bits[:, x0:x0 + GLYPH_W] = _glyph_bitmap(ch)
    return np.kron(bits, np.ones((scale, scale), dtype=bool))


def glyph_pixel_count(text: str, scale: int = 1) -> int:
    """Set-bit count of a rendered string; the pixel-exact oracle for tests."""
    return int(_string_bitmap(text, scale).sum())


def render_overlay(img: np.ndarray, spec: OverlaySpec) -> np.ndarray:
    """Draw both corner strings onto a copy of the image.

    Glyph boxes stay strictly inside their corner quadrants; every pixel
    outside the two boxes is untouched.
    """
    img = np.asarray(img, dtype=np.float64)
    _, h, w = img.shape
    out = img.copy()
    pad = spec.glyph_size
    for which in CORNERS:
        entry = spec.corner(which)
        bh, bw = glyph_box(len(entry.text), spec.glyph_size)
        if bh + pad > h // 2 or bw + pad > w // 2:
            raise ValueError(
                f"image {h}x{w} too small for {len(entry.text)} characters at "
                f"scale {spec.glyph_size} in the {which} quadrant")
        if which == "left_top":
            r0, c0 = pad, pad
        else:
            r0, c0 = h - pad - bh, w - pad - bw
        bits = _string_bitmap(entry.text, spec.glyph_size)
        rgb = PALETTE[entry.color]
        region = out[:, r0:r0 + bh, c0:c0 + bw]
        for ch in range(3):
            region[ch][bits] = rgb[ch] / 255.0
    return out


_TEMPLATES = {
    "identity": "What character is situated at the {corner} of the image?",
    "color": "What is the color of the characters located at the {corner} of the image?",
    "count": "How many characters are present in the {corner} region of the image?",
}


def derive_answer(spec: OverlaySpec, template_id: str, corner: str) -> str:
    """Ground truth from the overlay description alone."""
    entry = spec.corner(corner)
    if template_id == "identity":
        return entry.text
    if template_id == "color":
        return entry.color
    if template_id == "count":
        return str(len(entry.text))
    raise ValueError(f"unknown template {template_id!r}")


def generate_qa(spec: OverlaySpec, rng: Rng) -> list[QaPair]:
    """One pair per template, each about a randomly chosen corner."""
    out = []
    for template_id, template in _TEMPLATES.items():
        corner = rng.choice(CORNERS)
        out.append(QaPair(
            question=template.format(corner=_CORNER_WORDS[corner]),
            answer=derive_answer(spec, template_id, corner),
            template_id=template_id,
            corner=corner,
        ))
    return out


def random_overlay_spec(rng: Rng, image_hw: tuple[int, int], scale: int = 1,
                        max_len: int | None = None) -> OverlaySpec:
    h, w = image_hw
    cap = max_overlay_chars(h, w, scale)
    if cap < 1:
        raise ValueError(f"image {h}x{w} too small for any overlay at scale {scale}")
    if max_len is not None:
        cap = min(cap, max_len)
    colors = list(PALETTE)
    first = rng.choice(colors)
    second = rng.choice([c for c in colors if c != first])

    def text() -> str:
        n = int(rng.integers(1, cap + 1))
        return "".join(rng.choice(CHARSET) for _ in range(n))

    return OverlaySpec(left_top=CornerText(text(), first),
                       right_bottom=CornerText(text(), second),
                       glyph_size=scale)


def make_base_images(n: int, rng: Rng, size: int = 32) -> list[np.ndarray]:
    """Soft random backgrounds for the overlay corpus."""
    out = []
    for _ in range(n):
        base = rng.uniform((3, 1, 1), 0.1, 0.5)
        noise = rng.uniform((3, size, size), 0.0, 0.15)
        out.append(base + noise)
    return out


def augment_corpus(images: list[np.ndarray], n_pairs: int, rng: Rng,
                   max_len: int | None = None) -> list[TrainSample]:
    """Overlay + one QA pair per sample; deterministic under the seed."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    out = []
    for i in range(n_pairs):
        base = images[i % len(images)]
        hw = base.shape[1], base.shape[2]
        spec = random_overlay_spec(rng.split(f"spec{i}"), hw, max_len=max_len)
        img = render_overlay(base, spec)
        qa = rng.split(f"pick{i}").choice(generate_qa(spec, rng.split(f"qa{i}")))
        out.append(build_sample(img, qa.question, qa.answer, train_on_prompt=False,
                                meta={"spec": spec.to_dict(), "template": qa.template_id,
                                      "corner": qa.corner}))
    return out


def write_jsonl_corpus(samples: list[TrainSample], out_dir) -> Path:
    """PPM image per sample plus a JSONL of question/answer/spec records."""
    from .formats import write_ppm
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records_path = out_dir / "corpus.jsonl"
    with open(records_path, "w") as f:
        for i, s in enumerate(samples):
            name = f"img_{i:05d}.ppm"
            write_ppm(out_dir / name, s.image)
            prompt = bytes(t for t in s.tokens[1:s.prompt_len]).decode()
            rec = {"image": name, "question": prompt,
                   "answer": s.answer.decode() if s.answer else "",
                   "spec": s.meta.get("spec"), "template": s.meta.get("template"),
                   "corner": s.meta.get("corner")}
            f.write(json.dumps(rec) + "\n")
    return records_path


def load_jsonl_corpus(path) -> list[TrainSample]:
    from .formats import read_ppm, read_raw_tensor
    path = Path(path)
    out = []
    with open(path) as f:
        for line in f:
            rec = json.loads(line)
            img_path = path.parent / rec["image"]
            img = read_raw_tensor(img_path) if img_path.suffix == ".imhd" else read_ppm(img_path)
            out.append(build_sample(img, rec["question"], rec["answer"],
                                    train_on_prompt=False,
                                    meta={"spec": rec.get("spec"),
                                          "template": rec.get("template"),
                                          "corner": rec.get("corner")}))
    return out

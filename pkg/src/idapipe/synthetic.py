"""Procedural shape renderer and desk-scale dataset builders.

Every rendered PNG carries its own generative parameters in a tEXt chunk,
which is what lets the stub generation backend perform ground-truth style
transfer (it re-renders the decoded parameters under a new style) and lets
tests verify that class-determining parameters survive an intervention.
"""
from __future__ import annotations

import colorsys
import hashlib
import io
import json
import math
import random
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from PIL.PngImagePlugin import PngInfo

PARAMS_KEY = "stub-params"
RENDERER_ID = "stub-renderer-v1"
CANVAS = 64

SHAPES = ("circle", "cross", "square", "triangle")
TEXTURES = ("solid", "dots", "stripes", "checker")

# RRSF desk fixtures key each class to a texture and a backdrop so the
# spurious cue can be correlated, flipped, or randomized per split.
CLASS_TEXTURE = {shape: TEXTURES[i] for i, shape in enumerate(SHAPES)}
BACKDROPS = ("red", "blue", "green", "yellow")
CLASS_BACKDROP = {shape: BACKDROPS[i] for i, shape in enumerate(SHAPES)}
BACKDROP_RGB = {
    "red": (205, 92, 92),
    "blue": (100, 140, 215),
    "green": (110, 185, 120),
    "yellow": (222, 205, 110),
}


@dataclass(frozen=True)
class DomainStyle:
    name: str
    background: tuple[int, int, int]
    fill: bool
    stroke: bool
    stroke_width: int
    stroke_color: tuple[int, int, int]
    value: float  # brightness of the fill colour


DOMAIN_STYLES = {
    "photo": DomainStyle("photo", (208, 208, 208), True, True, 1, (40, 40, 40), 0.80),
    "sketch": DomainStyle("sketch", (250, 250, 250), False, True, 4, (25, 25, 25), 0.10),
    "cartoon": DomainStyle("cartoon", (255, 238, 180), True, True, 4, (10, 10, 10), 0.95),
    "neon": DomainStyle("neon", (14, 10, 24), True, False, 0, (0, 0, 0), 1.00),
}


@dataclass(frozen=True)
class SampleParams:
    """Full generative description of one synthetic sample.

    ``shape`` plus geometry (cx, cy, size, angle) and ``hue`` are the
    class-determining features; ``style``, ``texture`` and ``backdrop``
    are the environmental ones an intervention may rewrite.
    """

    shape: str
    cx: float
    cy: float
    size: float
    angle: float
    hue: float
    style: str
    texture: str = "solid"
    backdrop: str | None = None

    def class_descriptor(self) -> tuple:
        return (self.shape, round(self.cx, 6), round(self.cy, 6),
                round(self.size, 6), round(self.angle, 6), round(self.hue, 6))


def random_params(rng: random.Random, shape: str, style: str,
                  texture: str | None = None, backdrop: str | None = None) -> SampleParams:
    return SampleParams(
        shape=shape,
        cx=rng.uniform(0.38, 0.62),
        cy=rng.uniform(0.38, 0.62),
        size=rng.uniform(0.22, 0.32),
        angle=rng.uniform(-15.0, 15.0),
        hue=rng.random(),
        style=style,
        texture=texture if texture is not None else "solid",
        backdrop=backdrop,
    )


def _rotate(points, cx, cy, angle_deg):
    a = math.radians(angle_deg)
    cos_a, sin_a = math.cos(a), math.sin(a)
    out = []
    for x, y in points:
        dx, dy = x - cx, y - cy
        out.append((cx + dx * cos_a - dy * sin_a, cy + dx * sin_a + dy * cos_a))
    return out


def _shape_mask(params: SampleParams, canvas: int) -> Image.Image:
    mask = Image.new("L", (canvas, canvas), 0)
    draw = ImageDraw.Draw(mask)
    cx, cy = params.cx * canvas, params.cy * canvas
    r = params.size * canvas
    if params.shape == "circle":
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=255)
    elif params.shape == "square":
        pts = [(cx - r, cy - r), (cx + r, cy - r), (cx + r, cy + r), (cx - r, cy + r)]
        draw.polygon(_rotate(pts, cx, cy, params.angle), fill=255)
    elif params.shape == "triangle":
        pts = [(cx, cy - r), (cx + r * 0.95, cy + r * 0.8), (cx - r * 0.95, cy + r * 0.8)]
        draw.polygon(_rotate(pts, cx, cy, params.angle), fill=255)
    elif params.shape == "cross":
        w = r * 0.38
        bars = [
            [(cx - r, cy - w), (cx + r, cy - w), (cx + r, cy + w), (cx - r, cy + w)],
            [(cx - w, cy - r), (cx + w, cy - r), (cx + w, cy + r), (cx - w, cy + r)],
        ]
        for pts in bars:
            draw.polygon(_rotate(pts, cx, cy, params.angle), fill=255)
    else:
        raise ValueError(f"unknown shape {params.shape!r}")
    return mask


def _fill_color(params: SampleParams, style: DomainStyle) -> tuple[int, int, int]:
    r, g, b = colorsys.hsv_to_rgb(params.hue, 0.85, max(style.value, 0.05))
    return (int(r * 255), int(g * 255), int(b * 255))


def _texture_layer(params: SampleParams, base: tuple[int, int, int], canvas: int) -> Image.Image:
    layer = Image.new("RGB", (canvas, canvas), base)
    dark = tuple(max(0, c - 90) for c in base)
    draw = ImageDraw.Draw(layer)
    if params.texture == "dots":
        for y in range(2, canvas, 6):
            for x in range(2, canvas, 6):
                draw.ellipse([x, y, x + 2, y + 2], fill=dark)
    elif params.texture == "stripes":
        for d in range(-canvas, 2 * canvas, 6):
            draw.line([(d, 0), (d + canvas, canvas)], fill=dark, width=2)
    elif params.texture == "checker":
        for y in range(0, canvas, 8):
            for x in range(0, canvas, 8):
                if (x // 8 + y // 8) % 2 == 0:
                    draw.rectangle([x, y, x + 7, y + 7], fill=dark)
    return layer


def render(params: SampleParams, canvas: int = CANVAS) -> bytes:
    """Render a sample to PNG bytes, embedding its parameters as metadata."""
    style = DOMAIN_STYLES.get(params.style)
    if style is None:
        raise ValueError(f"unknown style {params.style!r}")
    background = BACKDROP_RGB.get(params.backdrop, style.background) if params.backdrop else style.background
    img = Image.new("RGB", (canvas, canvas), background)
    mask = _shape_mask(params, canvas)
    if style.fill:
        fill = _texture_layer(params, _fill_color(params, style), canvas)
        img = Image.composite(fill, img, mask)
    if style.stroke and style.stroke_width > 0:
        draw = ImageDraw.Draw(img)
        cx, cy = params.cx * canvas, params.cy * canvas
        r = params.size * canvas
        w = style.stroke_width
        if params.shape == "circle":
            draw.ellipse([cx - r, cy - r, cx + r, cy + r], outline=style.stroke_color, width=w)
        elif params.shape == "square":
            pts = [(cx - r, cy - r), (cx + r, cy - r), (cx + r, cy + r), (cx - r, cy + r)]
            draw.polygon(_rotate(pts, cx, cy, params.angle), outline=style.stroke_color, width=w)
        elif params.shape == "triangle":
            pts = [(cx, cy - r), (cx + r * 0.95, cy + r * 0.8), (cx - r * 0.95, cy + r * 0.8)]
            draw.polygon(_rotate(pts, cx, cy, params.angle), outline=style.stroke_color, width=w)
        elif params.shape == "cross":
            wbar = r * 0.38
            bars = [
                [(cx - r, cy - wbar), (cx + r, cy - wbar), (cx + r, cy + wbar), (cx - r, cy + wbar)],
                [(cx - wbar, cy - r), (cx + wbar, cy - r), (cx + wbar, cy + r), (cx - wbar, cy + r)],
            ]
            for pts in bars:
                draw.polygon(_rotate(pts, cx, cy, params.angle), outline=style.stroke_color, width=w)
    # Deterministic sensor-style noise keyed to the parameters keeps any
    # single pixel from being exactly constant across a dataset.
    payload = dict(asdict(params), generator=RENDERER_ID)
    serialized = json.dumps(payload, sort_keys=True)
    noise_seed = int.from_bytes(hashlib.sha256(serialized.encode()).digest()[:8], "big")
    noise = np.random.default_rng(noise_seed).integers(-3, 4, size=(canvas, canvas, 3))
    pixels = np.clip(np.asarray(img, dtype=np.int16) + noise, 0, 255).astype(np.uint8)
    img = Image.fromarray(pixels, "RGB")
    meta = PngInfo()
    meta.add_text(PARAMS_KEY, serialized)
    buf = io.BytesIO()
    img.save(buf, format="PNG", pnginfo=meta)
    return buf.getvalue()


def decode_params(image_bytes: bytes) -> SampleParams | None:
    """Recover embedded parameters from a rendered PNG, if present."""
    try:
        img = Image.open(io.BytesIO(image_bytes))
        raw = img.info.get(PARAMS_KEY)
    except Exception:
        return None
    if not raw:
        return None
    data = json.loads(raw)
    data.pop("generator", None)
    return SampleParams(**data)


def foreground_mask(image_bytes: bytes) -> bytes:
    """Binary foreground mask (white = object) for an image with embedded params."""
    params = decode_params(image_bytes)
    if params is None:
        raise ValueError("image carries no embedded parameters")
    mask = _shape_mask(params, CANVAS)
    buf = io.BytesIO()
    mask.save(buf, format="PNG")
    return buf.getvalue()


def restyle(params: SampleParams, style: str | None = None,
            texture: str | None = None, backdrop: str | None = None) -> SampleParams:
    """Rewrite environmental parameters only; class features are untouched."""
    updates = {}
    if style is not None:
        updates["style"] = style
    if texture is not None:
        updates["texture"] = texture
    if backdrop is not None:
        updates["backdrop"] = backdrop
    return replace(params, **updates) if updates else params


# ---------------------------------------------------------------------------
# Desk-scale dataset builders. Directory layout matches corpus.ingest_directory
# (root/<domain>/<class>/<image>.png).
# ---------------------------------------------------------------------------

def _write(root: Path | str, domain: str, shape: str, name: str, params: SampleParams) -> None:
    path = Path(root) / domain / shape / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(render(params))


def build_sdg_dataset(root: Path, domains: tuple[str, ...] = ("photo", "sketch"),
                      n_per_class_per_domain: int = 50, seed: int = 0,
                      shapes: tuple[str, ...] = SHAPES) -> None:
    """2+ domains x |shapes| classes of procedurally rendered samples."""
    rng = random.Random(seed)
    for domain in domains:
        for shape in shapes:
            for i in range(n_per_class_per_domain):
                params = random_params(rng, shape, domain)
                _write(root, domain, shape, f"{shape}_{i:04d}.png", params)


def build_rrsf_demographic_dataset(root: Path, n_train_per_class: int = 40,
                                   n_test_per_class: int = 20, seed: int = 0,
                                   shapes: tuple[str, ...] = ("circle", "square")) -> None:
    """Two classes whose backdrop is spuriously correlated with the label.

    Splits are encoded as pseudo-domains: train and test_iid keep the
    correlation, test_flip inverts it, test_rand draws backdrops uniformly.
    """
    rng = random.Random(seed)
    other = {shapes[0]: shapes[1], shapes[1]: shapes[0]}
    plan = [("train", n_train_per_class, "same"), ("test_iid", n_test_per_class, "same"),
            ("test_flip", n_test_per_class, "flip"), ("test_rand", n_test_per_class, "rand")]
    for subset, count, mode in plan:
        for shape in shapes:
            for i in range(count):
                if mode == "same":
                    backdrop = CLASS_BACKDROP[shape]
                elif mode == "flip":
                    backdrop = CLASS_BACKDROP[other[shape]]
                else:
                    backdrop = rng.choice([CLASS_BACKDROP[s] for s in shapes])
                params = random_params(rng, shape, "photo", backdrop=backdrop)
                _write(root, subset, shape, f"{shape}_{i:04d}.png", params)


def build_rrsf_background_dataset(root: Path, n_train_per_class: int = 40,
                                  n_test_per_class: int = 20, seed: int = 0,
                                  shapes: tuple[str, ...] = SHAPES) -> None:
    """Class-typical backdrops in train, matched or randomized at test time."""
    rng = random.Random(seed)
    plan = [("train", n_train_per_class, "same"), ("test_mixed_same", n_test_per_class, "same"),
            ("test_mixed_rand", n_test_per_class, "rand")]
    for subset, count, mode in plan:
        for shape in shapes:
            for i in range(count):
                backdrop = CLASS_BACKDROP[shape] if mode == "same" else rng.choice(BACKDROPS)
                params = random_params(rng, shape, "photo", backdrop=backdrop)
                _write(root, subset, shape, f"{shape}_{i:04d}.png", params)


def build_rrsf_texture_dataset(root: Path, n_train_per_class: int = 40,
                               n_test_per_class: int = 20, seed: int = 0,
                               shapes: tuple[str, ...] = SHAPES) -> None:
    """Class-keyed fill textures in train; cue-conflict pairs at test time.

    Each cue-conflict sample renders shape i with the texture of a class
    j != i; the texture label travels in the embedded parameters.
    """
    rng = random.Random(seed)
    for shape in shapes:
        for i in range(n_train_per_class):
            params = random_params(rng, shape, "photo", texture=CLASS_TEXTURE[shape])
            _write(root, "train", shape, f"{shape}_{i:04d}.png", params)
    for shape in shapes:
        others = [s for s in shapes if s != shape]
        for i in range(n_test_per_class):
            conflict = rng.choice(others)
            params = random_params(rng, shape, "photo", texture=CLASS_TEXTURE[conflict])
            _write(root, "test_cue_conflict", shape, f"{shape}_{i:04d}.png", params)


def texture_class(texture: str) -> str:
    """Inverse of the class->texture keying used by the desk fixtures."""
    for shape, tex in CLASS_TEXTURE.items():
        if tex == texture:
            return shape
    raise ValueError(f"texture {texture!r} is not keyed to any class")

"""Seeded synthetic sequences: a textured polygon target moving over a structured background.

Generic sequences move at about 0.755 target sizes per frame and high-speed
ones at about 3.93, the average relative speeds of the real generic and
high-speed small-object subsets. Distractors, static occluders, camera pans,
illumination drift, rotation and motion blur are optional and recorded in the
derived attributes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np

from .attributes import AttributeSet, box_flags, brightness_level, length_level, mean_brightness
from .dataset import SequenceAnnotation, write_sequence

REGIME_SPEED = {"generic": 0.755, "high-speed": 3.93}
REGIME_WORD = {"generic": "steadily", "high-speed": "rapidly"}

COLORS = {
    "red": (220, 40, 40), "green": (40, 180, 60), "blue": (40, 70, 225), "yellow": (235, 215, 40),
    "orange": (245, 140, 30), "purple": (145, 50, 185), "white": (245, 245, 245), "cyan": (40, 205, 215),
}
BACKGROUNDS = {
    "grass field": (70, 110, 50), "night sky": (22, 26, 48), "sand dunes": (200, 180, 130),
    "river": (50, 90, 130), "asphalt road": (92, 92, 98), "snow field": (222, 228, 234),
}


def _star(n=5, inner=0.45):
    a = np.arange(2 * n) * math.pi / n - math.pi / 2
    r = np.where(np.arange(2 * n) % 2 == 0, 0.5, 0.5 * inner)
    return np.stack([r * np.cos(a), r * np.sin(a)], 1)


_ANG = np.linspace(0, 2 * math.pi, 32, endpoint=False)
SHAPES = {
    "circle": np.stack([0.5 * np.cos(_ANG), 0.5 * np.sin(_ANG)], 1),
    "square": np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]),
    "triangle": np.array([[0.0, -0.5], [0.5, 0.5], [-0.5, 0.5]]),
    "diamond": np.array([[0.0, -0.5], [0.5, 0.0], [0.0, 0.5], [-0.5, 0.0]]),
    "star": _star(),
    "cross": np.array([[-0.17, -0.5], [0.17, -0.5], [0.17, -0.17], [0.5, -0.17], [0.5, 0.17], [0.17, 0.17],
                       [0.17, 0.5], [-0.17, 0.5], [-0.17, 0.17], [-0.5, 0.17], [-0.5, -0.17], [-0.17, -0.17]]),
}

VISIBLE_ABSENT = 0.25   # visible fraction below this counts as fully occluded
VISIBLE_FULL = 0.95


@dataclass(frozen=True)
class SynthConfig:
    seed: int
    frame_width: int = 320
    frame_height: int = 240
    target_size: float = 14.0
    regime: str = "generic"
    n_distractors: int = 1
    n_occluders: int = 1
    n_frames: int = 80
    description_template: str = "the {color} {shape} moving {regime} across the {background}"
    speed: float | None = None           # overrides the regime speed (target sizes per frame)
    p_camera_motion: float = 0.25
    p_illumination: float = 0.25
    p_rotation: float = 0.3

    def validate(self) -> "SynthConfig":
        if self.seed is None:
            raise ValueError("a seed is required")
        if self.frame_width <= 0 or self.frame_height <= 0 or self.target_size <= 0 or self.n_frames <= 0:
            raise ValueError("frame size, target size and sequence length must be positive")
        if self.regime not in REGIME_SPEED:
            raise ValueError(f"regime must be one of {tuple(REGIME_SPEED)}")
        if 4 * self.target_size >= min(self.frame_width, self.frame_height):
            raise ValueError("target too large for the frame")
        if self.n_distractors < 0 or self.n_occluders < 0:
            raise ValueError("negative object counts")
        return self

    @property
    def nominal_speed(self) -> float:
        return REGIME_SPEED[self.regime] if self.speed is None else self.speed


# -- rendering helpers ------------------------------------------------------------
def _background(rng, h, w, base):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.tile(np.asarray(base, dtype=np.float64), (h, w, 1))
    for _ in range(3):
        f = rng.uniform(0.01, 0.05)
        th = rng.uniform(0, math.pi)
        wave = np.sin(2 * math.pi * f * (xx * math.cos(th) + yy * math.sin(th)) + rng.uniform(0, 2 * math.pi))
        img += rng.uniform(6, 14) * wave[..., None] * rng.uniform(0.6, 1.0, 3)
    noise = cv2.GaussianBlur(rng.normal(0, 1, (h, w)), (0, 0), 2.0)
    img += 40 * noise[..., None]
    for _ in range(int(rng.integers(4, 9))):
        x0, y0 = rng.uniform(0, w), rng.uniform(0, h)
        bw, bh = rng.uniform(8, 40), rng.uniform(8, 40)
        shade = rng.uniform(-30, 30, 3)
        img[int(y0):int(y0 + bh), int(x0):int(x0 + bw)] += shade
    return img


def _vertices(shape, cx, cy, w, h, angle):
    v = SHAPES[shape] * np.array([w, h])
    c, s = math.cos(angle), math.sin(angle)
    v = v @ np.array([[c, s], [-s, c]])
    return v + np.array([cx, cy])


def _alpha(verts, h, w):
    """Anti-aliased coverage of a polygon given in continuous pixel coordinates."""
    canvas = np.zeros((h, w), np.uint8)
    pts = np.round((verts - 0.5) * 16).astype(np.int32)
    cv2.fillPoly(canvas, [pts], 255, lineType=cv2.LINE_AA, shift=4)
    return canvas.astype(np.float64) / 255.0


def _tight_box(verts):
    x0, y0 = verts.min(0)
    x1, y1 = verts.max(0)
    return np.array([x0, y0, x1 - x0, y1 - y0])


def _composite(img, alpha, color, shade=None):
    col = np.asarray(color, dtype=np.float64)
    layer = col if shade is None else col * shade[..., None]
    a = alpha[..., None]
    return img * (1 - a) + layer * a


class _Mover:
    """Centre trajectory with a random-walk heading, reflected at the frame margins."""

    def __init__(self, rng, n, w, h, size, speed, margin):
        self.pos = np.zeros((n, 2))
        p = np.array([rng.uniform(margin, w - margin), rng.uniform(margin, h - margin)])
        heading = rng.uniform(0, 2 * math.pi)
        lo, hi = np.array([margin, margin]), np.array([w - margin, h - margin])
        self.pos[0] = p
        for t in range(1, n):
            heading += rng.normal(0, 0.25)
            step = speed * size[t] * rng.uniform(0.7, 1.3)
            p = p + step * np.array([math.cos(heading), math.sin(heading)])
            for k in range(2):
                if p[k] < lo[k] or p[k] > hi[k]:
                    # reflect into [lo, hi]; fast movers can overshoot by more than one width
                    span = hi[k] - lo[k]
                    r = (p[k] - lo[k]) % (2 * span)
                    p[k] = lo[k] + (2 * span - r if r > span else r)
                    heading = math.pi - heading if k == 0 else -heading
            self.pos[t] = p


def generate_sequence(config: SynthConfig, seq_id: str = "seq"):
    """Render one sequence. Returns (annotation, frames, info) where frames are HxWx3 uint8."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    W, H, n = config.frame_width, config.frame_height, config.n_frames
    bg_name = list(BACKGROUNDS)[rng.integers(len(BACKGROUNDS))]
    bg_base = np.array(BACKGROUNDS[bg_name], dtype=np.float64)
    far = [c for c, v in COLORS.items() if np.linalg.norm(np.array(v) - bg_base) > 140]
    color = far[rng.integers(len(far))]
    shape = list(SHAPES)[rng.integers(len(SHAPES))]
    pad = 24
    background = _background(rng, H + 2 * pad, W + 2 * pad, bg_base)

    def track(size0, aspect, rotate):
        amp, per, ph = rng.uniform(0, 0.15), rng.uniform(20, 60), rng.uniform(0, 2 * math.pi)
        scale = 1 + amp * np.sin(2 * math.pi * np.arange(n) / per + ph)
        w, h = size0 * math.sqrt(aspect) * scale, size0 / math.sqrt(aspect) * scale
        omega = rng.uniform(0.02, 0.08) * rng.choice([-1, 1]) if rotate else 0.0
        angle = rng.uniform(0, 2 * math.pi) * (1 if rotate else 0) + omega * np.arange(n)
        margin = 0.75 * math.hypot(w.max(), h.max()) + 2
        mover = _Mover(rng, n, W, H, np.sqrt(w * h), config.nominal_speed, margin)
        return mover.pos, w, h, angle

    size0 = config.target_size * rng.uniform(0.85, 1.15)
    rotate = shape != "circle" and rng.random() < config.p_rotation
    pos, tw, th, tang = track(size0, rng.uniform(0.75, 1.33), rotate)

    distractors = []
    for _ in range(config.n_distractors):
        # similar object: shares either the colour or the shape with the target
        if rng.random() < 0.5:
            d_color, d_shape = color, [s for s in SHAPES if s != shape][rng.integers(len(SHAPES) - 1)]
        else:
            d_color, d_shape = [c for c in far if c != color][rng.integers(len(far) - 1)], shape
        d_rot = d_shape != "circle" and rng.random() < config.p_rotation
        distractors.append((d_color, d_shape) + track(config.target_size * rng.uniform(0.85, 1.15),
                                                      rng.uniform(0.75, 1.33), d_rot))

    occluders = []
    size_t = np.sqrt(tw * th)
    first_box = _tight_box(_vertices(shape, *pos[0], tw[0], th[0], tang[0]))
    for _ in range(config.n_occluders):
        for _attempt in range(20):
            t0 = int(rng.integers(min(6, n - 1), max(n - 2, min(6, n - 1) + 1)))
            side = size_t[t0] * rng.uniform(1.5, 2.5)
            c = pos[t0] + rng.uniform(-0.3, 0.3, 2) * size_t[t0]
            ob = np.array([c[0] - side / 2, c[1] - side / 2, side, side])
            sep_x = ob[0] > first_box[0] + first_box[2] + 2 or first_box[0] > ob[0] + ob[2] + 2
            sep_y = ob[1] > first_box[1] + first_box[3] + 2 or first_box[1] > ob[1] + ob[3] + 2
            if sep_x or sep_y:
                occluders.append((ob, rng.uniform(60, 160, 3)))
                break

    cam = np.zeros((n, 2))
    camera_motion = rng.random() < config.p_camera_motion
    if camera_motion:
        off = np.zeros(2)
        for t in range(1, n):
            if rng.random() < 0.08:
                off = rng.uniform(-pad, pad, 2)
            cam[t] = off
    illum = np.ones(n)
    illumination = rng.random() < config.p_illumination
    if illumination:
        illum = 1 + 0.35 * np.sin(2 * math.pi * np.arange(n) / rng.uniform(15, 40) + rng.uniform(0, 2 * math.pi))

    stripe_f = rng.uniform(0.15, 0.3)
    frames, boxes, absent, visible_frac = [], np.zeros((n, 4)), np.zeros(n, dtype=bool), np.ones(n)
    blurred = False
    yy, xx = np.mgrid[0:H, 0:W] + 0.5
    occ_alpha = [_alpha(np.array([[x, y], [x + w, y], [x + w, y + h], [x, y + h]]), H, W)
                 for (x, y, w, h), _ in occluders]
    occ = np.max(occ_alpha, axis=0) if occ_alpha else np.zeros((H, W))
    occ_shade = 0.9 + 0.1 * np.sin(0.5 * xx + 0.3 * yy)
    for t in range(n):
        ox, oy = int(round(pad + cam[t, 0])), int(round(pad + cam[t, 1]))
        img = background[oy:oy + H, ox:ox + W].copy()
        for d_color, d_shape, dpos, dw, dh, dang in distractors:
            img = _composite(img, _alpha(_vertices(d_shape, *dpos[t], dw[t], dh[t], dang[t]), H, W), COLORS[d_color])
        verts = _vertices(shape, *pos[t], tw[t], th[t], tang[t])
        disp = np.linalg.norm(pos[t] - pos[t - 1]) if t else 0.0
        if t and disp > size_t[t]:
            # motion blur: average the coverage along the inter-frame displacement
            k = 5
            alpha = np.mean([_alpha(_vertices(shape, *(pos[t - 1] + (pos[t] - pos[t - 1]) * (0.6 + 0.1 * j)),
                                              tw[t], th[t], tang[t]), H, W) for j in range(k)], axis=0)
            blurred = True
        else:
            alpha = _alpha(verts, H, W)
        c = pos[t]
        u = (xx - c[0]) * math.cos(tang[t]) + (yy - c[1]) * math.sin(tang[t])
        shade = 0.8 + 0.2 * np.sin(2 * math.pi * stripe_f * u * 14.0 / max(size_t[t], 1e-6))
        full = alpha.sum()
        visible_frac[t] = (alpha * (1 - occ)).sum() / full if full > 0 else 0.0
        img = _composite(img, alpha, COLORS[color], shade)
        for o, ocol in zip(occ_alpha, occluders):
            img = _composite(img, o, ocol[1], occ_shade)
        frames.append(np.clip(np.rint(img * illum[t]), 0, 255).astype(np.uint8))
        if visible_frac[t] < VISIBLE_ABSENT:
            absent[t] = True
        else:
            boxes[t] = _tight_box(verts)

    ts = np.arange(n, dtype=np.float64)
    near = False
    for _, _, dpos, dw, dh, _ in distractors:
        near |= bool(np.any(np.linalg.norm(dpos - pos, axis=1) < 3 * size_t))
    flags = box_flags(boxes, absent, ts)
    bri = float(np.mean([mean_brightness(f) for f in frames]))
    attrs = AttributeSet(
        CM=int(camera_motion), PO=int(np.any((visible_frac >= VISIBLE_ABSENT) & (visible_frac < VISIBLE_FULL))),
        FO=int(absent.any()), ROT=int(rotate), SD=int(near), IV=int(illumination), MB=int(blurred), NAO=1,
        PTI=int(visible_frac[0] < VISIBLE_FULL), BRI=brightness_level(bri), LEN=length_level(n), **flags)
    language = config.description_template.format(color=color, shape=shape, regime=REGIME_WORD[config.regime],
                                                  background=bg_name)
    names = [f"{i:06d}.png" for i in range(1, n + 1)]
    ann = SequenceAnnotation(seq_id, names, boxes, absent, ts, language, attrs, (W, H))
    info = {"color": color, "shape": shape, "background": bg_name, "visible_fraction": visible_frac,
            "brightness": bri}
    return ann, frames, info


def sequence_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def generate_synthetic(out_dir, config: SynthConfig, n_sequences: int, prefix: str | None = None) -> list[Path]:
    """Write ``n_sequences`` sequences under ``out_dir``; sequence i uses a seed derived from (seed, i)."""
    config.validate()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create {out}: {e}") from e
    prefix = prefix or config.regime
    dirs = []
    for i in range(n_sequences):
        seq_id = f"{prefix}-{i:03d}"
        ann, frames, _ = generate_sequence(replace(config, seed=sequence_seed(config.seed, i)), seq_id)
        write_sequence(out / seq_id, ann, frames)
        dirs.append(out / seq_id)
    return dirs

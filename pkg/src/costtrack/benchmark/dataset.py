"""On-disk sequence format, loaders, validators and the size / speed statistics.

Layout of one sequence directory::

    <root>/<seq>/frames/000001.png ...   8-bit RGB, lexicographic order
    <root>/<seq>/groundtruth.txt         x,y,w,h per line
    <root>/<seq>/absent.txt              0/1 per line (all 0 if the file is missing)
    <root>/<seq>/timestamps.txt          frame time per line (0,1,2,... if missing)
    <root>/<seq>/language.txt            one UTF-8 line
    <root>/<seq>/attributes.txt          17 comma-separated values
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .attributes import AttributeSchemaError, AttributeSet

SMALL_RELATIVE = 0.01    # average w*h / (W*H)
SMALL_ABSOLUTE = 22.0    # average sqrt(w*h) in pixels


class DatasetError(ValueError):
    def __init__(self, path, message, line: int | None = None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class AbsentFrameError(ValueError):
    pass


@dataclass
class SequenceAnnotation:
    seq_id: str
    frames: list           # frame file paths (or any per-frame references)
    boxes: np.ndarray      # [T, 4] x, y, w, h
    absent: np.ndarray     # [T] bool
    timestamps: np.ndarray  # [T]
    language: str = ""
    attributes: AttributeSet = field(default_factory=AttributeSet)
    frame_size: tuple[int, int] | None = None   # (W, H)

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        self.absent = np.asarray(self.absent, dtype=bool)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        n = len(self.frames)
        if not (len(self.boxes) == len(self.absent) == len(self.timestamps) == n):
            raise ValueError(f"{self.seq_id}: per-frame lists differ in length "
                             f"(frames {n}, boxes {len(self.boxes)}, absent {len(self.absent)}, "
                             f"timestamps {len(self.timestamps)})")
        if n > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise ValueError(f"{self.seq_id}: timestamps are not strictly increasing")

    def __len__(self):
        return len(self.frames)

    @property
    def visible(self) -> np.ndarray:
        return ~self.absent


# -- statistics ------------------------------------------------------------------
def _center(b):
    return np.array([b[0] + b[2] / 2.0, b[1] + b[3] / 2.0])


def relative_speed(annotation: SequenceAnnotation, t: int) -> float:
    """Centre displacement between t-1 and t over the geometric-mean size and the time gap."""
    if t < 1 or t >= len(annotation):
        raise IndexError(f"frame index {t} out of range 1..{len(annotation) - 1}")
    if annotation.absent[t] or annotation.absent[t - 1]:
        raise AbsentFrameError(f"frame {t - 1} or {t} is absent")
    b0, b1 = annotation.boxes[t - 1], annotation.boxes[t]
    s0, s1 = math.sqrt(b0[2] * b0[3]), math.sqrt(b1[2] * b1[3])
    if s0 <= 0 or s1 <= 0:
        raise ValueError(f"zero-size box at frame {t - 1} or {t}")
    dt = annotation.timestamps[t] - annotation.timestamps[t - 1]
    return float(np.linalg.norm(_center(b1) - _center(b0)) / (math.sqrt(s0 * s1) * dt))


def relative_speeds(boxes, absent, timestamps) -> np.ndarray:
    """Vectorised relative speed for every valid consecutive pair (absent or empty pairs skipped)."""
    b = np.asarray(boxes, dtype=np.float64)
    absent = np.asarray(absent, dtype=bool)
    ts = np.asarray(timestamps, dtype=np.float64)
    if len(b) < 2:
        return np.zeros(0)
    s = np.sqrt(np.clip(b[:, 2] * b[:, 3], 0.0, None))
    c = b[:, :2] + b[:, 2:] / 2.0
    ok = ~absent[1:] & ~absent[:-1] & (s[1:] > 0) & (s[:-1] > 0)
    disp = np.linalg.norm(c[1:] - c[:-1], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = disp / (np.sqrt(s[1:] * s[:-1]) * np.diff(ts))
    return v[ok]


def average_relative_speed(annotation: SequenceAnnotation) -> float:
    v = relative_speeds(annotation.boxes, annotation.absent, annotation.timestamps)
    return float(v.mean()) if len(v) else 0.0


@dataclass
class SmallObjectDecision:
    is_small: bool
    mean_relative_size: float
    mean_absolute_size: float


def is_small_object(annotation, frame_sizes) -> SmallObjectDecision:
    """Small iff the mean of w*h/(W*H) is below 1% and the mean sqrt(w*h) is below 22 px.

    ``annotation`` is a SequenceAnnotation or a [T, 4] box array (all visible);
    ``frame_sizes`` is one (W, H) pair or one per frame.
    """
    if isinstance(annotation, SequenceAnnotation):
        boxes, vis = annotation.boxes, annotation.visible
    else:
        boxes = np.asarray(annotation, dtype=np.float64).reshape(-1, 4)
        vis = np.ones(len(boxes), dtype=bool)
    fs = np.asarray(frame_sizes, dtype=np.float64)
    fs = np.broadcast_to(fs.reshape(-1, 2), (len(boxes), 2))
    boxes, fs = boxes[vis], fs[vis]
    if len(boxes) == 0:
        raise ValueError("no visible frames")
    area = boxes[:, 2] * boxes[:, 3]
    rel = float(np.mean(area / (fs[:, 0] * fs[:, 1])))
    absolute = float(np.mean(np.sqrt(area)))
    return SmallObjectDecision(rel < SMALL_RELATIVE and absolute < SMALL_ABSOLUTE, rel, absolute)


# -- reading ---------------------------------------------------------------------
def _read_lines(path: Path) -> list[str]:
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise DatasetError(path, f"not valid UTF-8 ({e})")
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    return lines


def _parse_numbers(path: Path, n_expected: int, width: int) -> np.ndarray:
    lines = _read_lines(path)
    if len(lines) != n_expected:
        raise DatasetError(path, f"expected {n_expected} lines (one per frame), found {len(lines)}")
    out = np.zeros((n_expected, width))
    for i, line in enumerate(lines):
        parts = [p for p in line.replace("\t", ",").replace(" ", ",").split(",") if p]
        if len(parts) != width:
            raise DatasetError(path, f"expected {width} values, found {len(parts)}", i + 1)
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise DatasetError(path, f"unparseable number in {line!r}", i + 1) from None
        if not all(math.isfinite(v) for v in vals):
            raise DatasetError(path, "non-finite value", i + 1)
        out[i] = vals
    return out


def frame_paths(seq_dir: Path) -> list[Path]:
    return sorted((seq_dir / "frames").glob("*.png"))


def load_sequence(seq_dir) -> SequenceAnnotation:
    """Parse one sequence directory; any malformed file raises DatasetError."""
    seq_dir = Path(seq_dir)
    frames = frame_paths(seq_dir)
    if not frames:
        raise DatasetError(seq_dir / "frames", "no PNG frames found")
    n = len(frames)
    boxes = _parse_numbers(seq_dir / "groundtruth.txt", n, 4) if (seq_dir / "groundtruth.txt").exists() else None
    if boxes is None:
        raise DatasetError(seq_dir / "groundtruth.txt", "missing")
    absent_path = seq_dir / "absent.txt"
    if absent_path.exists():
        absent = _parse_numbers(absent_path, n, 1)[:, 0]
        bad = np.flatnonzero((absent != 0) & (absent != 1))
        if len(bad):
            raise DatasetError(absent_path, "absent flag must be 0 or 1", int(bad[0]) + 1)
    else:
        absent = np.zeros(n)
    ts_path = seq_dir / "timestamps.txt"
    ts = _parse_numbers(ts_path, n, 1)[:, 0] if ts_path.exists() else np.arange(n, dtype=np.float64)
    if n > 1:
        bad = np.flatnonzero(np.diff(ts) <= 0)
        if len(bad):
            raise DatasetError(ts_path, "timestamps must be strictly increasing", int(bad[0]) + 2)
    lang_path = seq_dir / "language.txt"
    language = " ".join(_read_lines(lang_path)).strip() if lang_path.exists() else ""
    attr_path = seq_dir / "attributes.txt"
    if not attr_path.exists():
        raise DatasetError(attr_path, "missing")
    lines = _read_lines(attr_path)
    if len(lines) != 1:
        raise DatasetError(attr_path, f"expected a single line, found {len(lines)}")
    try:
        attributes = AttributeSet.from_row(lines[0])
    except AttributeSchemaError as e:
        raise DatasetError(attr_path, str(e), 1) from None
    vis = absent == 0
    bad = np.flatnonzero(vis & ((boxes[:, 2] <= 0) | (boxes[:, 3] <= 0)))
    if len(bad):
        raise DatasetError(seq_dir / "groundtruth.txt", "visible frame has a non-positive box extent",
                           int(bad[0]) + 1)
    with Image.open(frames[0]) as im:
        size = im.size
    return SequenceAnnotation(seq_dir.name, frames, boxes, absent.astype(bool), ts, language, attributes, size)


def sequence_dirs(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(root, "dataset root is not a directory")
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "frames").is_dir())


def load_dataset(root) -> list[SequenceAnnotation]:
    return [load_sequence(d) for d in sequence_dirs(root)]


def load_frames(annotation: SequenceAnnotation) -> list[np.ndarray]:
    out = []
    for p in annotation.frames:
        with Image.open(p) as im:
            out.append(np.asarray(im.convert("RGB")))
    return out


@dataclass
class SequenceCheck:
    seq_id: str
    errors: list[str]
    n_frames: int = 0
    small: SmallObjectDecision | None = None
    mean_relative_speed: float | None = None

    @property
    def ok(self) -> bool:
        return not self.errors


@dataclass
class ValidationReport:
    sequences: list[SequenceCheck]

    @property
    def ok(self) -> bool:
        return all(s.ok for s in self.sequences)

    def summary(self) -> str:
        lines = []
        for s in self.sequences:
            if s.ok:
                lines.append(f"{s.seq_id}: ok, {s.n_frames} frames, mean size {s.small.mean_absolute_size:.1f}px, "
                             f"relative size {100 * s.small.mean_relative_size:.3f}%, small={s.small.is_small}, "
                             f"relative speed {s.mean_relative_speed:.3f}")
            else:
                lines.extend(f"{s.seq_id}: ERROR {e}" for e in s.errors)
        return "\n".join(lines)


def validate_dataset(root) -> ValidationReport:
    checks = []
    for d in sequence_dirs(root):
        try:
            ann = load_sequence(d)
        except (DatasetError, ValueError, OSError) as e:
            checks.append(SequenceCheck(d.name, [str(e)]))
            continue
        errors = []
        for i, p in enumerate(ann.frames):
            with Image.open(p) as im:
                if im.size != ann.frame_size:
                    errors.append(f"{p}: frame size {im.size} differs from {ann.frame_size}")
                if im.mode != "RGB":
                    errors.append(f"{p}: expected 8-bit RGB, found mode {im.mode}")
        small = is_small_object(ann, ann.frame_size) if ann.visible.any() else None
        if small is None:
            errors.append(f"{d}: no visible frames")
        checks.append(SequenceCheck(ann.seq_id, errors, len(ann), small, average_relative_speed(ann)))
    return ValidationReport(checks)


# -- writing ---------------------------------------------------------------------
def _fmt(v: float) -> str:
    return f"{v:.4f}".rstrip("0").rstrip(".") if v != int(v) else str(int(v))


def write_boxes(path, boxes) -> None:
    Path(path).write_text("".join(",".join(_fmt(float(v)) for v in b) + "\n" for b in np.asarray(boxes)))


def write_sequence(seq_dir, annotation: SequenceAnnotation, frames) -> None:
    seq_dir = Path(seq_dir)
    (seq_dir / "frames").mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames, start=1):
        Image.fromarray(np.asarray(f, dtype=np.uint8), "RGB").save(seq_dir / "frames" / f"{i:06d}.png")
    write_boxes(seq_dir / "groundtruth.txt", annotation.boxes)
    (seq_dir / "absent.txt").write_text("".join(f"{int(a)}\n" for a in annotation.absent))
    (seq_dir / "timestamps.txt").write_text("".join(f"{_fmt(float(t))}\n" for t in annotation.timestamps))
    (seq_dir / "language.txt").write_text(annotation.language.strip() + "\n", encoding="utf-8")
    (seq_dir / "attributes.txt").write_text(annotation.attributes.to_row() + "\n")

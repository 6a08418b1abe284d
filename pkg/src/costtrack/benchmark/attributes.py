"""The 17-attribute taxonomy and helpers that derive it from annotations."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

# Column order of attributes.txt.
ATTRIBUTE_NAMES = ("CM", "VC", "PO", "FO", "OV", "ROT", "DEF", "SD", "IV", "MB",
                   "NAO", "PTI", "BRI", "FM", "SV", "ARV", "LEN")
LEVELED = {"BRI": ("low", "med", "high"), "LEN": ("short", "med", "long")}
BRI_LOW, BRI_MED = 83.0, 119.0
LEN_SHORT, LEN_MED = 600, 1800


class AttributeSchemaError(ValueError):
    """Malformed attribute row or an unknown attribute name."""


@dataclass(frozen=True)
class AttributeSet:
    CM: int = 0
    VC: int = 0
    PO: int = 0
    FO: int = 0
    OV: int = 0
    ROT: int = 0
    DEF: int = 0
    SD: int = 0
    IV: int = 0
    MB: int = 0
    NAO: int = 0
    PTI: int = 0
    BRI: str = "med"
    FM: int = 0
    SV: int = 0
    ARV: int = 0
    LEN: str = "short"

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in LEVELED:
                if v not in LEVELED[f.name]:
                    raise AttributeSchemaError(f"{f.name} must be one of {LEVELED[f.name]}, got {v!r}")
            elif v not in (0, 1):
                raise AttributeSchemaError(f"{f.name} must be 0 or 1, got {v!r}")

    def to_row(self) -> str:
        return ",".join(str(getattr(self, n)) for n in ATTRIBUTE_NAMES)

    @classmethod
    def from_row(cls, row: str) -> "AttributeSet":
        parts = [p.strip() for p in row.strip().split(",")]
        if len(parts) != len(ATTRIBUTE_NAMES):
            raise AttributeSchemaError(f"expected {len(ATTRIBUTE_NAMES)} attribute values, found {len(parts)}")
        kw = {}
        for name, p in zip(ATTRIBUTE_NAMES, parts):
            if name in LEVELED:
                kw[name] = p
            else:
                if p not in ("0", "1"):
                    raise AttributeSchemaError(f"{name} must be 0 or 1, got {p!r}")
                kw[name] = int(p)
        return cls(**kw)

    def slices(self) -> list[str]:
        """Slice keys this sequence belongs to: set flags plus ``BRI=level``/``LEN=level``."""
        out = [n for n in ATTRIBUTE_NAMES if n not in LEVELED and getattr(self, n) == 1]
        out += [f"{n}={getattr(self, n)}" for n in LEVELED]
        return out


def all_slice_keys() -> list[str]:
    keys = [n for n in ATTRIBUTE_NAMES if n not in LEVELED]
    for n, levels in LEVELED.items():
        keys += [f"{n}={lv}" for lv in levels]
    return keys


def brightness_level(b: float) -> str:
    if b <= BRI_LOW:
        return "low"
    return "med" if b <= BRI_MED else "high"


def length_level(n_frames: int) -> str:
    if n_frames <= LEN_SHORT:
        return "short"
    return "med" if n_frames <= LEN_MED else "long"


def mean_brightness(frame: np.ndarray) -> float:
    f = np.asarray(frame, dtype=np.float64)
    return float((f[..., 0] * 0.299 + f[..., 1] * 0.587 + f[..., 2] * 0.114).mean())


def _outside(r: np.ndarray, lo=0.5, hi=2.0) -> bool:
    return bool(np.any((r < lo) | (r > hi)))


def box_flags(boxes: np.ndarray, absent: np.ndarray, timestamps: np.ndarray) -> dict:
    """FM, SV and ARV computed from the visible boxes.

    FM: some frame's centre displacement exceeds the target size (relative speed > 1).
    SV / ARV: size or aspect ratio relative to the first visible frame leaves [0.5, 2].
    """
    from .dataset import relative_speeds

    vis = ~np.asarray(absent, dtype=bool)
    b = np.asarray(boxes, dtype=np.float64)[vis]
    if len(b) == 0:
        return {"FM": 0, "SV": 0, "ARV": 0}
    size = np.sqrt(b[:, 2] * b[:, 3])
    aspect = b[:, 2] / b[:, 3]
    speeds = relative_speeds(boxes, absent, timestamps)
    return {"FM": int(np.any(speeds > 1.0)),
            "SV": int(_outside(size / size[0])),
            "ARV": int(_outside(aspect / aspect[0]))}

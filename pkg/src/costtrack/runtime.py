"""Region cropping, candidate windowing, the online tracking loop and the training loop."""
from __future__ import annotations

import hashlib
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace

import cv2
import numpy as np

from . import tensor as T
from .benchmark.dataset import SequenceAnnotation, load_frames
from .cvlf import coa_loss, project_embeddings
from .head import BoundingBox, assign_labels, bce_loss, regression_loss, total_loss
from .linguistic import LanguageTokens, tokenize, tokenize_batch
from .model import COST
from .optim import AdamW
from .visual import ConfigError, normalize_image

log = logging.getLogger(__name__)

WINDOW_MODES = ("spatial", "literal")


@dataclass
class RuntimeConfig:
    search_scale: float = 4.0
    template_scale: float = 2.0
    window_weight: float = 0.49
    use_language: bool = True
    # "literal" windows all fused tokens in row-major order; "spatial" windows the visual grid only
    window_mode: str = "spatial"

    def validate(self, model_cfg=None) -> "RuntimeConfig":
        if self.search_scale <= 1 or self.template_scale <= 1:
            raise ConfigError("crop scales must exceed 1")
        if not 0.0 <= self.window_weight <= 1.0:
            raise ConfigError("window_weight must lie in [0, 1]")
        if self.window_mode not in WINDOW_MODES:
            raise ConfigError(f"window_mode must be one of {WINDOW_MODES}")
        if model_cfg is not None:
            model_cfg.validate()
        return self


# -- cropping ----------------------------------------------------------------------
@dataclass(frozen=True)
class CropTransform:
    """Maps continuous crop coordinates u to frame coordinates x = x0 + u * side / out_size."""
    x0: float
    y0: float
    side: float
    out_size: int

    @property
    def scale(self) -> float:
        return self.side / self.out_size

    def window(self) -> list[float]:
        return [self.x0, self.y0, self.side, self.side]

    def to_frame(self, box) -> np.ndarray:
        b = np.asarray(box, dtype=np.float64)
        s = self.scale
        return np.array([self.x0 + b[0] * s, self.y0 + b[1] * s, b[2] * s, b[3] * s])

    def to_crop(self, box) -> np.ndarray:
        b = np.asarray(box, dtype=np.float64)
        k = 1.0 / self.scale
        return np.array([(b[0] - self.x0) * k, (b[1] - self.y0) * k, b[2] * k, b[3] * k])

    def matrix(self) -> np.ndarray:
        """2x3 affine from frame pixel indices to crop pixel indices (pixel centres at i + 0.5)."""
        k = 1.0 / self.scale
        return np.array([[k, 0.0, k * (0.5 - self.x0) - 0.5], [0.0, k, k * (0.5 - self.y0) - 0.5]])


def crop_window(box, scale: float, out_size: int, center=None) -> CropTransform:
    b = box if isinstance(box, BoundingBox) else BoundingBox(*map(float, box))
    if b.w <= 0 or b.h <= 0:
        raise ValueError(f"cannot crop around a zero-area box {b.as_list()}")
    side = scale * math.sqrt(b.w * b.h)
    cx, cy = b.center if center is None else center
    return CropTransform(cx - side / 2.0, cy - side / 2.0, side, int(out_size))


def channel_mean(frame: np.ndarray) -> tuple:
    return tuple(float(v) for v in cv2.mean(np.ascontiguousarray(frame))[:frame.shape[-1]])


def render_crop(frame: np.ndarray, transform: CropTransform, border=None) -> np.ndarray:
    """Resampled crop (out x out x 3, float64 pixel values); outside area is the per-channel mean."""
    border = channel_mean(frame) if border is None else border
    out = cv2.warpAffine(frame, transform.matrix(), (transform.out_size, transform.out_size),
                         flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=border)
    return out.astype(np.float64)


def crop_region(frame, box, scale: float, out_size: int, normalize: bool = True):
    """Square crop of side scale*sqrt(w*h) centred on the box, resized to out_size.

    Returns (image, transform); the image is normalised 3xSxS unless ``normalize`` is False.
    """
    tf = crop_window(box, scale, out_size)
    img = render_crop(np.asarray(frame), tf)
    return (normalize_image(img) if normalize else img), tf


# -- windowing ---------------------------------------------------------------------
def hanning_window(side: int) -> np.ndarray:
    """Outer product of 1-D raised-cosine windows, flattened row-major."""
    if side == 1:
        return np.ones(1)
    w = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(side) / (side - 1)))
    return np.outer(w, w).ravel()


def hanning_penalize(confidences, window_side: int, weight: float) -> np.ndarray:
    """(1 - weight) * conf + weight * window over window_side**2 candidates in row-major order."""
    conf = np.asarray(confidences, dtype=np.float64).reshape(-1)
    if conf.size != window_side * window_side:
        raise ValueError(f"{conf.size} candidates cannot be windowed by a {window_side}x{window_side} window")
    return (1.0 - weight) * conf + weight * hanning_window(window_side)


def select_candidate(confidences, index_map, config: RuntimeConfig, window_side: int) -> int:
    conf = np.asarray(confidences, dtype=np.float64).reshape(-1)
    if config.window_mode == "literal":
        return int(np.argmax(hanning_penalize(conf, window_side, config.window_weight)))
    vis = index_map.visual_positions
    scores = hanning_penalize(conf[vis], index_map.grid_side, config.window_weight)
    return int(vis[np.argmax(scores)])


# -- online tracking -----------------------------------------------------------------
def _checksum(*arrays) -> str:
    h = hashlib.sha1()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


@dataclass
class TrackerState:
    model: COST
    template_tokens: tuple        # (tokens [1, Nz, C], gh, gw)
    language: T.Tensor            # F^l_0 [1, N_l, C_l]
    prev_box: BoundingBox
    window: np.ndarray
    config: RuntimeConfig
    frame_index: int = 0
    checksum: str = ""

    def features_checksum(self) -> str:
        return _checksum(self.template_tokens[0].data, self.language.data)


def initialize(model: COST, frame, box, description: str = "", config: RuntimeConfig | None = None) -> TrackerState:
    """Encode the template and description once; both stay fixed for the sequence."""
    config = (config or RuntimeConfig()).validate(model.cfg)
    box = box if isinstance(box, BoundingBox) else BoundingBox(*map(float, box))
    model.eval()
    vc = model.cfg.visual
    with T.no_grad():
        z, _ = crop_region(frame, box, config.template_scale, vc.template_size)
        tz = model.visual.encode_template(z[None])
        tokens = tokenize(description, model.cfg.linguistic)
        lang = model.encode_language(tokens, 1, config.use_language)
    for t in (tz[0], lang):
        t.data.setflags(write=False)
    state = TrackerState(model, tz, lang, box, hanning_window(model.cfg.window_side), config)
    state.checksum = state.features_checksum()
    return state


def track_step(state: TrackerState, frame) -> BoundingBox:
    """Locate the target in ``frame`` and update ``state.prev_box``."""
    model, cfg = state.model, state.config
    vc = model.cfg.visual
    frame = np.asarray(frame)
    x, tf = crop_region(frame, state.prev_box, cfg.search_scale, vc.search_size)
    with T.no_grad():
        out = model(x[None], template_tokens=state.template_tokens, f_l0=state.language)
    conf = out.head.confidence.data[0]
    idx = select_candidate(conf, out.fused.index_map, cfg, model.cfg.window_side)
    cx, cy, w, h = out.head.boxes.data[0, idx] * vc.search_size
    fb = tf.to_frame([cx - w / 2.0, cy - h / 2.0, w, h])
    H, W = frame.shape[:2]
    # keep the centre inside the frame and the extent within the frame size
    fw, fh = min(fb[2], W), min(fb[3], H)
    fcx = min(max(fb[0] + fb[2] / 2.0, 0.0), W)
    fcy = min(max(fb[1] + fb[3] / 2.0, 0.0), H)
    state.frame_index += 1
    if not (np.isfinite([fcx, fcy, fw, fh]).all()) or fw * fh <= 1e-6:
        warnings.warn(f"degenerate box predicted at frame {state.frame_index}; keeping the previous box")
        return state.prev_box
    state.prev_box = BoundingBox.from_center(fcx, fcy, fw, fh)
    return state.prev_box


class Tracker:
    def __init__(self, model: COST, config: RuntimeConfig | None = None):
        self.model = model
        self.config = config or RuntimeConfig()
        self.state: TrackerState | None = None

    def initialize(self, frame, box, description: str = "") -> BoundingBox:
        self.state = initialize(self.model, frame, box, description, self.config)
        return self.state.prev_box

    def track(self, frame) -> BoundingBox:
        if self.state is None:
            raise RuntimeError("tracker used before initialize()")
        return track_step(self.state, frame)


def run_sequence(model: COST, annotation: SequenceAnnotation, frames=None,
                 config: RuntimeConfig | None = None) -> np.ndarray:
    """Track a whole sequence from its first-frame box; returns [T, 4] predictions."""
    frames = load_frames(annotation) if frames is None else frames
    visible = np.flatnonzero(~annotation.absent)
    if len(visible) == 0 or visible[0] != 0:
        raise ValueError(f"{annotation.seq_id}: the first frame must carry a visible box")
    tracker = Tracker(model, config)
    preds = np.zeros((len(frames), 4))
    preds[0] = tracker.initialize(frames[0], annotation.boxes[0], annotation.language).as_list()
    for t in range(1, len(frames)):
        preds[t] = tracker.track(frames[t]).as_list()
    return preds


# -- training ------------------------------------------------------------------------
@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 8
    pairs_per_epoch: int = 200
    epochs: int = 50
    max_steps: int | None = None
    max_frame_gap: int = 30
    translate: float | None = None      # +-T crop pixels; None means 8 * search_size / 256
    brightness: float = 0.2
    center_jitter: float = 1.0          # search centre offset, in target sizes, before translation
    scale_jitter: float = 0.3           # search crop side scaled by exp(U(-s, s))
    use_coa: bool = True
    use_language: bool = True
    grad_clip: float | None = 1.0

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1 or self.pairs_per_epoch < 1 or self.epochs < 1:
            raise ConfigError("batch_size, pairs_per_epoch and epochs must be positive")
        if min(self.learning_rate, self.weight_decay, self.brightness, self.center_jitter, self.scale_jitter) < 0:
            raise ConfigError("negative optimiser or augmentation setting")
        if self.use_coa and self.batch_size < 2:
            raise ConfigError("contrastive alignment needs batch_size >= 2")
        return self


@dataclass(frozen=True)
class Sample:
    """One training pair: crop windows in frame coordinates plus the photometric factor."""
    seq_index: int
    template_frame: int
    search_frame: int
    template: CropTransform
    search: CropTransform
    brightness: float = 1.0
    sample_id: str = ""


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def augment(sample: Sample, seed, translate: float, brightness: float) -> Sample:
    """Shift the search window by (dx, dy) in [-T, T] crop pixels and scale brightness by [1-b, 1+b].

    Moving the window by (dx, dy) crop pixels moves the label by (-dx, -dy).
    """
    rng = _rng(seed)
    dx, dy = rng.uniform(-translate, translate, 2) if translate > 0 else (0.0, 0.0)
    factor = rng.uniform(1.0 - brightness, 1.0 + brightness) if brightness > 0 else 1.0
    s = sample.search
    moved = replace(s, x0=s.x0 + dx * s.scale, y0=s.y0 + dy * s.scale)
    return replace(sample, search=moved, brightness=sample.brightness * factor)


def plan_sample(rng, annotations, seq_index: int, model_cfg, runtime: RuntimeConfig, cfg: TrainConfig) -> Sample:
    ann = annotations[seq_index]
    vis = np.flatnonzero(~ann.absent)
    if len(vis) == 0:
        raise ValueError(f"{ann.seq_id}: no visible frames to sample")
    ti = int(vis[rng.integers(len(vis))])
    near = vis[np.abs(vis - ti) <= cfg.max_frame_gap]
    si = int(near[rng.integers(len(near))])
    vc = model_cfg.visual
    zt = crop_window(ann.boxes[ti], runtime.template_scale, vc.template_size)
    sb = BoundingBox(*ann.boxes[si])
    jitter = rng.uniform(-1.0, 1.0, 2) * cfg.center_jitter * sb.size
    # without scale jitter the target always fills the same crop fraction and the size head never
    # learns to read scale from pixels, so tracked boxes drift in size
    zoom = math.exp(rng.uniform(-cfg.scale_jitter, cfg.scale_jitter)) if cfg.scale_jitter > 0 else 1.0
    cx, cy = sb.center
    st = crop_window(sb, runtime.search_scale * zoom, vc.search_size, center=(cx + jitter[0], cy + jitter[1]))
    return Sample(seq_index, ti, si, zt, st, 1.0, f"{ann.seq_id}:{ti}->{si}")


class FrameCache:
    def __init__(self, annotations):
        self.annotations = annotations
        self._frames: dict[int, list] = {}
        self._means: dict[int, list] = {}

    def get(self, seq_index: int, frame: int) -> np.ndarray:
        if seq_index not in self._frames:
            self._frames[seq_index] = load_frames(self.annotations[seq_index])
            self._means[seq_index] = [channel_mean(f) for f in self._frames[seq_index]]
        return self._frames[seq_index][frame]

    def mean(self, seq_index: int, frame: int) -> tuple:
        self.get(seq_index, frame)
        return self._means[seq_index][frame]


@dataclass
class Batch:
    search: np.ndarray
    template: np.ndarray
    tokens: LanguageTokens
    labels: np.ndarray
    gt: np.ndarray          # normalised (cx, cy, w, h)
    ids: list


def materialize(samples, annotations, frames: FrameCache, model: COST) -> Batch:
    vc = model.cfg.visual
    xs, zs, labels, gts, texts = [], [], [], [], []
    imap = model.fusion.index_map
    for s in samples:
        ann = annotations[s.seq_index]
        x = render_crop(frames.get(s.seq_index, s.search_frame), s.search,
                        frames.mean(s.seq_index, s.search_frame)) * s.brightness
        z = render_crop(frames.get(s.seq_index, s.template_frame), s.template,
                        frames.mean(s.seq_index, s.template_frame)) * s.brightness
        xs.append(normalize_image(x))
        zs.append(normalize_image(z))
        gb = s.search.to_crop(ann.boxes[s.search_frame])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            labels.append(assign_labels(imap, BoundingBox(*gb), vc.search_size))
        gts.append(np.array([gb[0] + gb[2] / 2, gb[1] + gb[3] / 2, gb[2], gb[3]]) / vc.search_size)
        texts.append(ann.language)
    return Batch(np.stack(xs), np.stack(zs), tokenize_batch(texts, model.cfg.linguistic),
                 np.stack(labels), np.stack(gts), [s.sample_id for s in samples])


@dataclass
class StepLosses:
    total: float
    coa: float
    reg: float
    ce: float


def compute_losses(model: COST, batch: Batch, cfg: TrainConfig):
    out = model(batch.search, batch.template, tokens=batch.tokens, use_language=cfg.use_language)
    w = model.cfg.loss
    ce = bce_loss(out.head.confidence, batch.labels)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        reg = regression_loss(out.head.boxes, batch.gt, batch.labels, w)
    # with the language branch off there is nothing to align against, so CoA is skipped too
    if cfg.use_coa and cfg.use_language and len(batch.ids) >= 2:
        pair = project_embeddings(out.f_v0, out.f_l0, model.contrastive.g_v, model.contrastive.g_l,
                                  batch.tokens.mask)
        coa = coa_loss(pair, model.cfg.coa)
    else:
        coa = T.Tensor(0.0)
    try:
        total = total_loss(coa, reg, ce, w)
    except FloatingPointError as e:
        raise FloatingPointError(f"{e} in batch {batch.ids}") from None
    return total, StepLosses(float(total.data), float(coa.data), float(reg.data), float(ce.data))


def clip_gradients(params, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(p.grad ** 2)) for p in params))
    if max_norm is not None and norm > max_norm:
        k = max_norm / norm
        for p in params:
            p.grad *= k
    return norm


def train_step(model: COST, optimizer: AdamW, batch: Batch, cfg: TrainConfig) -> StepLosses:
    model.train()
    optimizer.zero_grad()
    total, losses = compute_losses(model, batch, cfg)
    T.backward(total)
    if cfg.grad_clip is not None:
        clip_gradients(optimizer.params, cfg.grad_clip)
    optimizer.step()
    return losses


@dataclass
class EpochStats:
    epoch: int
    steps: int
    total: float
    coa: float
    reg: float
    ce: float
    seconds: float = 0.0


def _translate(cfg: TrainConfig, model_cfg) -> float:
    return 8.0 * model_cfg.visual.search_size / 256.0 if cfg.translate is None else cfg.translate


def train_epoch(model: COST, annotations, optimizer: AdamW, config: TrainConfig, seed,
                runtime: RuntimeConfig | None = None, frames: FrameCache | None = None,
                epoch: int = 0, step_budget: int | None = None) -> EpochStats:
    """Sample pairs_per_epoch pairs (rounded up to whole batches), one AdamW step per batch."""
    if not annotations:
        raise ValueError("empty training set")
    runtime = runtime or RuntimeConfig()
    frames = frames or FrameCache(annotations)
    rng = np.random.default_rng([int(seed), int(epoch)])
    n_steps = math.ceil(config.pairs_per_epoch / config.batch_size)
    if step_budget is not None:
        n_steps = min(n_steps, step_budget)
    t0 = time.perf_counter()
    sums = np.zeros(4)
    for _ in range(n_steps):
        picks = rng.integers(len(annotations), size=config.batch_size)
        samples = [augment(plan_sample(rng, annotations, int(i), model.cfg, runtime, config), rng,
                           _translate(config, model.cfg), config.brightness) for i in picks]
        losses = train_step(model, optimizer, materialize(samples, annotations, frames, model), config)
        sums += [losses.total, losses.coa, losses.reg, losses.ce]
    m = sums / max(n_steps, 1)
    return EpochStats(epoch, n_steps, *m, seconds=time.perf_counter() - t0)


def make_optimizer(model: COST, cfg: TrainConfig) -> AdamW:
    names, params = zip(*model.named_parameters())
    return AdamW(list(params), lr=cfg.learning_rate, weight_decay=cfg.weight_decay, names=list(names))


def train(model: COST, annotations, cfg: TrainConfig, seed: int = 0, runtime: RuntimeConfig | None = None,
          callback=None) -> list[EpochStats]:
    cfg.validate()
    opt = make_optimizer(model, cfg)
    frames = FrameCache(annotations)
    history, steps = [], 0
    for epoch in range(cfg.epochs):
        budget = None if cfg.max_steps is None else cfg.max_steps - steps
        if budget is not None and budget <= 0:
            break
        stats = train_epoch(model, annotations, opt, cfg, seed, runtime, frames, epoch, budget)
        steps += stats.steps
        history.append(stats)
        log.info("epoch %d: loss %.4f (coa %.4f reg %.4f ce %.4f) %.1fs", epoch, stats.total, stats.coa,
                 stats.reg, stats.ce, stats.seconds)
        if callback is not None:
            callback(stats)
    model.eval()
    return history

"""The 181-head patch classifier: training data, training, extraction, corners.

Heads ``0..179`` answer "is direction bin ``i`` singular at the patch centre",
head ``180`` answers "is the patch centre smooth".  Every head is an
independent :mod:`densewf.neuralnet` network over 21x21xC shearlet patches.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import neuralnet as nn
from .radon import N_ANGLES, Sinogram, complete_angles, extend_sinogram
from .shearlet import (
    PATCH_RADIUS,
    ShearletConfig,
    ShearletSystem,
    admissible_centers,
    build_system,
    gather_patches,
    transform,
)
from .tensorio import read_container, write_container

N_HEADS = N_ANGLES + 1
GATE = N_ANGLES
DEFAULT_TAU = 0.5
CHUNK = 256


class ConfigMismatchError(ValueError):
    """The model was trained for a different shearlet configuration."""


# --- coefficient sources ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PatchSource:
    """Shearlet coefficients plus the label grid they are sampled against.

    Label index ``(r, c)`` sits at the 1-based coefficient centre
    ``(r + offset + 1, c + offset + 1)``.  ``mask`` marks the label cells that
    may be sampled.
    """

    values: np.ndarray  # (H, W, C) float32
    labels: np.ndarray | None  # (h, w, 180) uint8
    offset: int
    mask: np.ndarray  # (h, w) bool
    name: str = ""

    def centers(self, cells: np.ndarray) -> np.ndarray:
        return cells + self.offset + 1


def image_source(image: np.ndarray, system: ShearletSystem, wf: np.ndarray | None = None, name: str = "") -> PatchSource:
    """Image coefficients; labels are the wavefront mask at the admissible centres."""
    image = np.asarray(image)
    if wf is not None and wf.shape != image.shape + (N_ANGLES,):
        raise ValueError(f"wavefront shape {wf.shape} does not match image shape {image.shape}")
    values = transform(image, system).values.astype(np.float32)
    mask = np.zeros(image.shape, bool)
    mask[PATCH_RADIUS : image.shape[0] - PATCH_RADIUS, PATCH_RADIUS : image.shape[1] - PATCH_RADIUS] = True
    return PatchSource(values, None if wf is None else np.asarray(wf, np.uint8), 0, mask, name)


def sinogram_system_config(N: int) -> ShearletConfig:
    """Shearlet geometry of an extended ``N x 180`` sinogram."""
    pad = 2 * PATCH_RADIUS
    return ShearletConfig(M=N + pad, cols=N_ANGLES + pad)


def sinogram_values(sino: Sinogram) -> np.ndarray:
    """Complete to 180 one-degree columns and pad by the patch radius."""
    full = complete_angles(sino) if len(sino.angles) != N_ANGLES or np.any(sino.angles != np.arange(N_ANGLES)) else sino
    return extend_sinogram(full.values, sino.origin, PATCH_RADIUS)


def sinogram_source(
    sino: Sinogram, system: ShearletSystem, wf: np.ndarray | None = None, name: str = ""
) -> PatchSource:
    """Sinogram coefficients; labels are an ``(N, 180, 180)`` sinogram wavefront set.

    Only measured columns are sampled for training; interpolated ones carry no data.
    """
    N = sino.values.shape[0]
    if wf is not None and wf.shape != (N, N_ANGLES, N_ANGLES):
        raise ValueError(f"sinogram wavefront shape {wf.shape} != {(N, N_ANGLES, N_ANGLES)}")
    ext = sinogram_values(sino)
    values = transform(ext, system).values.astype(np.float32)
    mask = np.zeros((N, N_ANGLES), bool)
    mask[:, np.rint(sino.angles).astype(int) % N_ANGLES] = True
    return PatchSource(values, None if wf is None else np.asarray(wf, np.uint8), PATCH_RADIUS, mask, name)


# --- labelled patches ------------------------------------------------------------------


def smear(labels: np.ndarray, width: int = 1) -> np.ndarray:
    """OR direction bins into their circular neighbours within ``width``."""
    out = labels.astype(bool)
    base = out.copy()
    for d in range(1, width + 1):
        out |= np.roll(base, d, axis=-1) | np.roll(base, -d, axis=-1)
    return out


@dataclass
class LabeledPatchSet:
    """Per-head balanced samples over a list of patch sources.

    ``rows[h]`` indexes into ``index`` (source, m1, m2); ``targets[h]`` holds
    the matching 0/1 labels.  Patches are gathered lazily from the sources.
    """

    sources: list[PatchSource]
    index: np.ndarray  # (K, 3) int: source, 1-based m1, m2
    rows: dict[int, np.ndarray] = field(default_factory=dict)
    targets: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def heads(self) -> list[int]:
        return sorted(self.rows)

    @property
    def channels(self) -> int:
        return self.sources[0].values.shape[-1]

    def patches(self, idx: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        """Patches for rows ``idx`` of ``index``, in order, as float32."""
        idx = np.asarray(idx)
        C = self.channels
        size = 2 * PATCH_RADIUS + 1
        if out is None:
            out = np.empty((len(idx), size, size, C), np.float32)
        src = self.index[idx, 0]
        for s in np.unique(src):
            sel = np.nonzero(src == s)[0]
            out[sel] = gather_patches(self.sources[s].values, self.index[idx[sel], 1:])
        return out

    def head_data(self, head: int) -> tuple[np.ndarray, np.ndarray]:
        return self.rows[head], self.targets[head]


def _head_labels(src: PatchSource, heads: Sequence[int], smear_width: int) -> np.ndarray:
    """(h, w, len(heads)) bool labels for one source."""
    lab = src.labels.astype(bool)
    singular = lab.any(axis=-1)
    smeared = smear(lab, smear_width)
    cols = [~singular if h == GATE else smeared[..., h] for h in heads]
    return np.stack(cols, axis=-1)


def make_training_set(
    sources: Sequence[PatchSource],
    heads: Iterable[int],
    centers_per_image: int,
    seed: int,
    *,
    smear_width: int = 1,
    hard_fraction: float = 0.5,
) -> LabeledPatchSet:
    """Balanced per-head patch samples.

    Every head receives ``centers_per_image * len(sources)`` samples, half
    positive and half negative.  When one class is scarce the other is cut to
    match it.  For direction heads ``hard_fraction`` of
    the negatives are drawn from singular pixels that lack the head's
    direction; the rest come from all admissible cells.
    """
    heads = sorted(set(int(h) for h in heads))
    if not sources:
        raise ValueError("no sources given")
    if any(h < 0 or h >= N_HEADS for h in heads):
        raise ValueError(f"heads must lie in [0, {N_HEADS})")
    if any(s.labels is None for s in sources):
        raise ValueError("every source needs labels")
    rng = np.random.default_rng(seed)
    per_head = centers_per_image * len(sources)

    # candidate cells of every source, with their head labels
    cand_src, cand_cells, cand_lab, cand_sing = [], [], [], []
    for k, src in enumerate(sources):
        cells = np.argwhere(src.mask)
        lab = _head_labels(src, heads, smear_width)[cells[:, 0], cells[:, 1]]
        sing = src.labels.any(axis=-1)[cells[:, 0], cells[:, 1]]
        cand_src.append(np.full(len(cells), k))
        cand_cells.append(src.centers(cells))
        cand_lab.append(lab)
        cand_sing.append(sing)
    all_src = np.concatenate(cand_src)
    all_cells = np.concatenate(cand_cells)
    all_lab = np.concatenate(cand_lab)
    all_sing = np.concatenate(cand_sing)

    chosen: dict[int, np.ndarray] = {}
    targets: dict[int, np.ndarray] = {}
    for col, h in enumerate(heads):
        pos = np.nonzero(all_lab[:, col])[0]
        if pos.size == 0:
            raise ValueError(f"no positive examples for head {h}")
        neg_all = np.nonzero(~all_lab[:, col])[0]
        if neg_all.size == 0:
            raise ValueError(f"no negative examples for head {h}")
        n_pos = n_neg = min(per_head // 2, pos.size, neg_all.size)
        p = rng.choice(pos, n_pos, replace=False)
        if h == GATE:
            n = rng.choice(neg_all, n_neg, replace=False)
        else:
            hard = np.nonzero(~all_lab[:, col] & all_sing)[0]
            n_hard = min(int(round(hard_fraction * n_neg)), hard.size)
            nh = rng.choice(hard, n_hard, replace=False)
            rest = np.setdiff1d(neg_all, nh, assume_unique=True)
            n = np.concatenate([nh, rng.choice(rest, n_neg - n_hard, replace=False)])
        chosen[h] = np.concatenate([p, n])
        targets[h] = np.concatenate([np.ones(len(p), np.uint8), np.zeros(len(n), np.uint8)])

    used = np.unique(np.concatenate(list(chosen.values())))
    remap = np.full(len(all_src), -1)
    remap[used] = np.arange(len(used))
    index = np.stack([all_src[used], all_cells[used, 0], all_cells[used, 1]], axis=1)
    rows = {h: remap[c] for h, c in chosen.items()}
    return LabeledPatchSet(list(sources), index, rows, targets)


# --- the model ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    batch_size: int = 86
    steps: int = 3000
    lr: float = 0.05
    seed: int = 0
    augment: bool = True  # random 180 degree patch rotation

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 for batch statistics")
        if self.steps < 0 or self.lr < 0:
            raise ValueError("steps and lr must be non-negative")


@dataclass
class DenseeModel:
    """181 heads sharing one layer list; heads materialize on first access.

    Untouched heads are initialized from ``SeedSequence([seed, head])`` so that
    a head never depends on which other heads exist.
    """

    config: ShearletConfig
    layers: list[nn.LayerSpec]
    seed: int = 0
    channel_scale: np.ndarray | None = None
    dtype: str = "float32"
    heads: dict[int, nn.Network] = field(default_factory=dict)
    trained: set[int] = field(default_factory=set)
    losses: dict[int, float] = field(default_factory=dict)

    @classmethod
    def create(
        cls,
        config: ShearletConfig,
        seed: int,
        widths: Sequence[int] = (32, 32, 64, 64),
        hidden: int = 1024,
        dtype: str = "float32",
    ) -> "DenseeModel":
        channels = len(build_system_cached(config).channels)
        return cls(config, nn.patch_architecture(channels, widths, hidden), seed, None, dtype)

    @property
    def n_heads(self) -> int:
        return N_HEADS

    @property
    def config_hash(self) -> str:
        return self.config.digest()

    def head(self, i: int) -> nn.Network:
        if not 0 <= i < N_HEADS:
            raise IndexError(f"head {i} outside [0, {N_HEADS})")
        if i not in self.heads:
            self.heads[i] = nn.init_network(self.layers, np.random.SeedSequence([self.seed, i]), self.dtype)
        return self.heads[i]

    def direction_heads(self) -> list[int]:
        return sorted(h for h in self.trained if h != GATE)

    def fit_scaling(self, data: LabeledPatchSet) -> None:
        """Per-channel 1/std over all source coefficients; fixed before any head trains."""
        acc = np.zeros(data.channels)
        count = 0
        for src in data.sources:
            v = src.values.reshape(-1, src.values.shape[-1]).astype(np.float64)
            acc += (v**2).sum(axis=0)
            count += len(v)
        rms = np.sqrt(acc / count)
        self.channel_scale = (1.0 / np.maximum(rms, 1e-12)).astype(np.float32)

    def scale(self, patches: np.ndarray) -> np.ndarray:
        if self.channel_scale is not None:
            patches *= self.channel_scale
        return patches

    def predict(self, head: int, patches: np.ndarray) -> np.ndarray:
        """Positive-class probability of ``head`` for already scaled patches."""
        net = self.head(head)
        out = np.empty(len(patches))
        for a in range(0, len(patches), CHUNK):
            out[a : a + CHUNK] = nn.forward(net, patches[a : a + CHUNK], training=False)[:, 1]
        return out


_SYSTEMS: dict[str, ShearletSystem] = {}


def build_system_cached(config: ShearletConfig) -> ShearletSystem:
    key = config.digest()
    if key not in _SYSTEMS:
        _SYSTEMS[key] = build_system(config)
    return _SYSTEMS[key]


def train(model: DenseeModel, data: LabeledPatchSet, cfg: TrainConfig, heads: Iterable[int] | None = None) -> DenseeModel:
    """Mini-batch SGD on cross-entropy, one head at a time.

    Batches follow per-epoch permutations drawn from
    ``SeedSequence([cfg.seed, head])``.  A non-finite loss stops that head and
    is reported through :class:`densewf.neuralnet.NonFiniteError`.

    With ``cfg.augment`` each patch is rotated by 180 degrees with probability
    1/2.  The filters are even, so this equals the coefficient patch of the
    rotated image, whose centre and orientation labels (mod 180) are unchanged.
    """
    heads = data.heads if heads is None else sorted(set(heads))
    missing = [h for h in heads if h not in data.rows]
    if missing:
        raise ValueError(f"training data does not cover heads {missing}")
    if model.channel_scale is None:
        model.fit_scaling(data)
    for h in heads:
        net = model.head(h)
        rows, y = data.head_data(h)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, h]))
        bs = min(cfg.batch_size, len(rows))
        if bs < 2:
            raise ValueError(f"head {h} has fewer than two samples")
        order = rng.permutation(len(rows))
        pos = 0
        buf = np.empty((bs,) + (2 * PATCH_RADIUS + 1,) * 2 + (data.channels,), np.float32)
        loss = float("nan")
        for step in range(cfg.steps):
            if pos + bs > len(order):
                order, pos = rng.permutation(len(rows)), 0
            sel = order[pos : pos + bs]
            pos += bs
            x = model.scale(data.patches(rows[sel], buf))
            if cfg.augment:
                flip = rng.random(bs) < 0.5
                x[flip] = x[flip, ::-1, ::-1]
            try:
                loss, grads, stats = nn.loss_and_gradients(net, x, y[sel])
                nn.sgd_step(net, grads, cfg.lr, stats)
            except nn.NonFiniteError as exc:
                raise nn.NonFiniteError(f"head {h} diverged at step {step}: {exc}") from exc
        if cfg.steps:
            model.trained.add(h)
            model.losses[h] = loss
    return model


def evaluate_heads(model: DenseeModel, data: LabeledPatchSet, heads: Iterable[int] | None = None) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """``{head: (probabilities, targets)}`` over the set's per-head samples."""
    heads = data.heads if heads is None else list(heads)
    out = {}
    for h in heads:
        rows, y = data.head_data(h)
        probs = np.empty(len(rows))
        for a in range(0, len(rows), CHUNK):
            probs[a : a + CHUNK] = model.predict(h, model.scale(data.patches(rows[a : a + CHUNK])))
        out[h] = (probs, y)
    return out


# --- extraction ---------------------------------------------------------------------------


def _check_system(model: DenseeModel, system: ShearletSystem | None) -> ShearletSystem:
    if system is None:
        return build_system_cached(model.config)
    if system.config.digest() != model.config_hash:
        raise ConfigMismatchError("shearlet system does not match the model's configuration")
    return system


def _classify(model: DenseeModel, src: PatchSource, cells: np.ndarray, tau: float, tau_gate: float | None) -> np.ndarray:
    """(len(cells), 180) uint8 decisions at label cells ``cells``."""
    out = np.zeros((len(cells), N_ANGLES), np.uint8)
    if not len(cells):
        return out
    tau_gate = tau if tau_gate is None else tau_gate
    centers = src.centers(cells)
    heads = model.direction_heads()
    for a in range(0, len(cells), CHUNK):
        x = model.scale(gather_patches(src.values, centers[a : a + CHUNK]).astype(np.float32))
        live = np.arange(len(x))
        if GATE in model.trained:
            live = np.nonzero(model.predict(GATE, x) <= tau_gate)[0]
            x = x[live]
        if not len(live):
            continue
        for h in heads:
            out[a + live, h] = model.predict(h, x) > tau
    return out


def extract_wavefront(
    image: np.ndarray,
    model: DenseeModel,
    tau: float = DEFAULT_TAU,
    *,
    tau_gate: float | None = None,
    system: ShearletSystem | None = None,
) -> np.ndarray:
    """Digital wavefront set ``(M, M, 180)`` of ``image``.

    A centre whose smooth-gate probability exceeds ``tau_gate`` (default
    ``tau``) stays empty; otherwise bin ``i`` is set when trained head ``i``
    exceeds ``tau``.  Untrained heads never fire and the 10-pixel border
    stays empty.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    system = _check_system(model, system)
    image = np.asarray(image)
    if image.shape != model.config.shape:
        raise ValueError(f"image shape {image.shape} does not match model shape {model.config.shape}")
    src = image_source(image, system)
    cells = admissible_centers(image.shape) - 1
    wf = np.zeros(image.shape + (N_ANGLES,), np.uint8)
    wf[cells[:, 0], cells[:, 1]] = _classify(model, src, cells, tau, tau_gate)
    return wf


def extract_sinogram_wavefront(
    sino: Sinogram,
    model: DenseeModel,
    tau: float = DEFAULT_TAU,
    *,
    angles: Sequence[int] | None = None,
    tau_gate: float | None = None,
    system: ShearletSystem | None = None,
) -> np.ndarray:
    """Sinogram wavefront set ``(N, 180, 180)`` indexed ``(s, phi, lambda)``.

    Only the ``phi`` columns in ``angles`` (default: all) are classified.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    system = _check_system(model, system)
    N = sino.values.shape[0]
    if sinogram_system_config(N).shape != model.config.shape:
        raise ValueError(f"sinogram with {N} offsets does not match model shape {model.config.shape}")
    src = sinogram_source(sino, system)
    cols = np.arange(N_ANGLES) if angles is None else np.asarray(sorted(set(int(a) for a in angles)))
    rr, cc = np.meshgrid(np.arange(N), cols, indexing="ij")
    cells = np.stack([rr.ravel(), cc.ravel()], axis=1)
    Y = np.zeros((N, N_ANGLES, N_ANGLES), np.uint8)
    Y[cells[:, 0], cells[:, 1]] = _classify(model, src, cells, tau, tau_gate)
    return Y


def detect_corners(wf: np.ndarray, min_separation: int = 10) -> list[tuple[int, int]]:
    """Pixels holding two bins more than ``min_separation`` apart (mod 180)."""
    m = np.asarray(wf).astype(bool)
    hit = np.zeros(m.shape[:-1], bool)
    for d in range(min_separation + 1, N_ANGLES // 2 + 1):
        hit |= (m & np.roll(m, -d, axis=-1)).any(axis=-1)
    return [tuple(int(v) for v in p) for p in np.argwhere(hit)]


# --- persistence ---------------------------------------------------------------------------


def save_model(model: DenseeModel, path) -> None:
    """Write every trained head (others re-materialize from the seed on load)."""
    stored = sorted(model.trained)
    tensors: list[np.ndarray] = []
    counts = []
    for h in stored:
        t = model.head(h).tensors()
        counts.append(len(t))
        tensors += t
    if model.channel_scale is not None:
        tensors.append(model.channel_scale)
    header = {
        "kind": "densee",
        "config": model.config.to_json(),
        "config_hash": model.config_hash,
        "layers": [l.to_json() for l in model.layers],
        "seed": model.seed,
        "dtype": model.dtype,
        "heads": stored,
        "head_tensor_counts": counts,
        "losses": {str(h): model.losses.get(h) for h in stored},
        "has_channel_scale": model.channel_scale is not None,
    }
    write_container(path, header, tensors)


def load_model(path, system: ShearletSystem | None = None) -> DenseeModel:
    header, tensors = read_container(path)
    if header.get("kind") != "densee":
        raise ValueError(f"{path} does not hold a DeNSE model")
    config = ShearletConfig.from_json(header["config"])
    if config.digest() != header["config_hash"]:
        raise ConfigMismatchError("model header hash does not match its own configuration")
    if system is not None and system.config.digest() != header["config_hash"]:
        raise ConfigMismatchError("shearlet system does not match the model's configuration")
    layers = [nn.LayerSpec.from_json(l) for l in header["layers"]]
    model = DenseeModel(config, layers, header["seed"], None, header["dtype"])
    pos = 0
    for h, n in zip(header["heads"], header["head_tensor_counts"]):
        model.heads[h] = nn.Network.from_tensors(layers, tensors[pos : pos + n])
        model.trained.add(h)
        if header["losses"].get(str(h)) is not None:
            model.losses[h] = header["losses"][str(h)]
        pos += n
    if header["has_channel_scale"]:
        model.channel_scale = tensors[pos]
    return model

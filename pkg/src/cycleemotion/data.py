"""Dataset manifests, batching, and the synthetic two-domain benchmark.

Manifests are JSON Lines, one record per line::

    {"image": "img/0001.png", "domain": "source", "split": "train", "votes": [3, 0, 0, 1, 0, 0, 0, 4]}
    {"image": "img/0002.png", "domain": "target", "split": "test", "label": 5}

``votes`` marks a distribution-learning manifest, ``label`` a classification
one. ``split`` defaults to ``train``. Synthetic manifests also carry the
generating ``params`` of each image.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Literal, Optional

import numpy as np
import torch
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field
from scipy.ndimage import gaussian_filter

from .emotion import NUM_EMOTIONS, RejectedRecordError, normalize_votes

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
DOMAINS = ("source", "target")
_RECORD_KEYS = {"image", "domain", "split", "votes", "label", "params"}


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class SampleRecord:
    image: str
    domain: str
    split: str = "train"
    votes: Optional[tuple[int, ...]] = None
    label: Optional[int] = None
    params: Optional[dict] = field(default=None, compare=False, hash=False)

    def to_json(self) -> dict:
        out = {"image": self.image, "domain": self.domain, "split": self.split}
        if self.votes is not None:
            out["votes"] = list(self.votes)
        if self.label is not None:
            out["label"] = self.label
        if self.params is not None:
            out["params"] = self.params
        return out


@dataclass
class DatasetManifest:
    task: str
    records: list[SampleRecord]
    root: Optional[Path] = None
    image_size: Optional[int] = None
    dropped: int = 0
    # decoded uint8 HxWxC pixels keyed by image ref; filled lazily or by the synthetic generator
    pixels: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        validate_splits(self.records)

    def split(self, name: str) -> list[SampleRecord]:
        return [r for r in self.records if r.split == name]

    def domain(self, name: str) -> "DatasetManifest":
        recs = [r for r in self.records if r.domain == name]
        return DatasetManifest(self.task, recs, self.root, self.image_size, 0, self.pixels)

    def load_pixels(self, record: SampleRecord) -> np.ndarray:
        if record.image not in self.pixels:
            path = Path(record.image)
            if self.root is not None and not path.is_absolute():
                path = self.root / path
            with Image.open(path) as im:
                im = im.convert("RGB")
                if self.image_size and im.size != (self.image_size, self.image_size):
                    im = im.resize((self.image_size, self.image_size), Image.BILINEAR)
                self.pixels[record.image] = np.asarray(im, dtype=np.uint8)
        return self.pixels[record.image]

    def images(self, split: str) -> torch.Tensor:
        """All images of a split as a float tensor in [0, 1]; never touches labels."""
        recs = self.split(split)
        if not recs:
            raise ManifestError(f"split {split!r} is empty")
        arr = np.stack([self.load_pixels(r) for r in recs])
        return torch.from_numpy(arr).permute(0, 3, 1, 2).float().div_(255.0)

    def labels(self, split: str) -> torch.Tensor:
        """Distribution targets (N x L float) or class indices (N long)."""
        recs = self.split(split)
        if not recs:
            raise ManifestError(f"split {split!r} is empty")
        if self.task == "distribution":
            return torch.tensor(np.stack([normalize_votes(r.votes).probs for r in recs]), dtype=torch.float32)
        return torch.tensor([r.label for r in recs], dtype=torch.long)

    def write(self, path: "str | Path") -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def validate_splits(records: list[SampleRecord]) -> None:
    seen: dict[str, str] = {}
    for r in records:
        if r.split not in SPLITS:
            raise ManifestError(f"unknown split {r.split!r} for {r.image}")
        other = seen.setdefault(r.image, r.split)
        if other != r.split:
            raise ManifestError(f"image {r.image} appears in both {other!r} and {r.split!r} splits")


def _parse_record(obj: dict, lineno: int) -> SampleRecord:
    if not isinstance(obj, dict):
        raise ManifestError(f"line {lineno}: record must be a JSON object")
    unknown = set(obj) - _RECORD_KEYS
    if unknown:
        raise ManifestError(f"line {lineno}: unknown keys {sorted(unknown)}")
    if not isinstance(obj.get("image"), str):
        raise ManifestError(f"line {lineno}: 'image' must be a string")
    if obj.get("domain") not in DOMAINS:
        raise ManifestError(f"line {lineno}: 'domain' must be one of {DOMAINS}")
    has_votes, has_label = "votes" in obj, "label" in obj
    if has_votes == has_label:
        raise ManifestError(f"line {lineno}: exactly one of 'votes' or 'label' is required")
    votes = label = None
    if has_votes:
        v = obj["votes"]
        if (
            not isinstance(v, list)
            or len(v) != NUM_EMOTIONS
            or not all(isinstance(x, int) and not isinstance(x, bool) and x >= 0 for x in v)
        ):
            raise ManifestError(f"line {lineno}: 'votes' must be {NUM_EMOTIONS} non-negative integers")
        votes = tuple(v)
    else:
        label = obj["label"]
        if not isinstance(label, int) or isinstance(label, bool) or not 0 <= label < NUM_EMOTIONS:
            raise ManifestError(f"line {lineno}: 'label' must be an integer in [0, {NUM_EMOTIONS - 1}]")
    return SampleRecord(
        image=obj["image"],
        domain=obj["domain"],
        split=obj.get("split", "train"),
        votes=votes,
        label=label,
        params=obj.get("params"),
    )


def load_manifest(
    path: "str | Path", image_size: Optional[int] = None, check_files: bool = True
) -> DatasetManifest:
    """Read and validate a JSONL manifest.

    Zero-vote records are dropped with a warning; ``manifest.dropped`` holds
    the count.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    records: list[SampleRecord] = []
    dropped = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            rec = _parse_record(obj, lineno)
            if rec.votes is not None:
                try:
                    normalize_votes(rec.votes)
                except RejectedRecordError:
                    dropped += 1
                    continue
            records.append(rec)
    if dropped:
        logger.warning("dropped %d record(s) with zero votes from %s", dropped, path)
    if not records:
        raise ManifestError(f"manifest {path} has no usable records")
    kinds = {r.votes is not None for r in records}
    if len(kinds) > 1:
        raise ManifestError("manifest mixes 'votes' and 'label' records")
    task = "distribution" if kinds.pop() else "classification"
    if check_files:
        missing = [r.image for r in records if not (path.parent / r.image).is_file()]
        if missing:
            shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
            raise ManifestError(f"{len(missing)} image file(s) missing: {shown}")
    return DatasetManifest(task, records, root=path.parent, image_size=image_size, dropped=dropped)


def batches(
    manifest: DatasetManifest,
    split: str,
    batch_size: int,
    shuffle_seed: Optional[int] = None,
    epoch: int = 0,
    with_labels: bool = True,
) -> Iterator:
    """One epoch of mini-batches; the final partial batch is kept.

    The permutation is a pure function of ``(shuffle_seed, epoch)``.
    """
    images = manifest.images(split)
    labels = manifest.labels(split) if with_labels else None
    yield from tensor_batches(images, labels, batch_size, shuffle_seed, epoch)


def epoch_order(n: int, shuffle_seed: Optional[int], epoch: int) -> np.ndarray:
    if shuffle_seed is None:
        return np.arange(n)
    return np.random.default_rng([shuffle_seed, epoch]).permutation(n)


def tensor_batches(images, labels, batch_size, shuffle_seed=None, epoch=0):
    n = images.shape[0]
    if n == 0:
        raise ManifestError("cannot batch an empty split")
    order = torch.from_numpy(epoch_order(n, shuffle_seed, epoch))
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield images[idx] if labels is None else (images[idx], labels[idx])


# --- synthetic benchmark -------------------------------------------------------


class TargetShift(BaseModel):
    """Photometric transform applied to target-domain images."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    hue_rotation: float = 0.0  # fraction of the colour circle
    saturation: float = 1.0
    channel_gain: tuple[float, float, float] = (1.0, 1.0, 1.0)  # colour cast, tints grey too
    contrast: float = 1.0
    brightness: float = 0.0
    gamma: float = 1.0
    blur_sigma: float = Field(0.0, ge=0)

    @property
    def is_identity(self) -> bool:
        return self == TargetShift()


class SyntheticDomainSpec(BaseModel):
    """Coloured-shape images whose emotion label is a function of hue band and shape.

    Categories are ``2 * hue_band + shape`` with four hue bands spread over
    ``hue_span`` of the colour circle and two shapes (horizontal bar, vertical bar). Both
    domains share this rule; only the target appearance is shifted.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    schema_version: int = 1
    task: Literal["distribution", "classification"] = "distribution"
    image_size: int = Field(32, ge=8)
    n_samples: int = Field(2000, ge=0)
    split_fractions: tuple[float, float, float] = (0.8, 0.05, 0.15)
    hue_span: float = Field(0.6, gt=0, le=1)
    band_margin: float = Field(0.2, ge=0, lt=0.5)
    voters: int = Field(8, ge=1)
    target_shift: TargetShift = TargetShift(
        channel_gain=(1.25, 1.0, 0.8), saturation=0.8, contrast=0.7, blur_sigma=0.6
    )
    seed: int = 0


def label_rule(params: dict, spec: SyntheticDomainSpec) -> dict:
    """Category and vote profile implied by an image's generating parameters."""
    bands = NUM_EMOTIONS // 2
    pos = params["hue"] / spec.hue_span * bands
    band = min(int(pos), bands - 1)
    category = 2 * band + params["shape"]
    # votes leak towards the nearer neighbouring hue band as the hue nears a band edge
    offset = pos - band - 0.5
    spill = int(round(abs(offset) * 2 * spec.voters * 0.4))
    neighbour = band + (1 if offset > 0 else -1)
    if not 0 <= neighbour < bands:
        neighbour = band - (1 if offset > 0 else -1)
    votes = [0] * NUM_EMOTIONS
    votes[category] = spec.voters - spill
    votes[2 * neighbour + params["shape"]] += spill
    if params["size"] < 0.5 and votes[category] > 1:
        votes[category] -= 1
        votes[2 * band + 1 - params["shape"]] += 1
    return {"category": category, "votes": votes}


def _hsv_to_rgb(h, s, v):
    import colorsys

    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v))


def _render(params: dict, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    bg_level = params["background"]
    grad = np.linspace(-0.08, 0.08, size)
    img = np.empty((size, size, 3))
    img[:] = (bg_level + grad[:, None] * params["bg_tilt"])[..., None]
    img += rng.normal(0, 0.02, img.shape)
    # shape 0 is a horizontal bar, shape 1 a vertical one
    long_half = size * (0.22 + 0.12 * params["size"])
    short_half = long_half * 0.35
    cx, cy = params["cx"] * size, params["cy"] * size
    half_x, half_y = (long_half, short_half) if params["shape"] == 0 else (short_half, long_half)
    inside = (np.abs(xx - cx) <= half_x) & (np.abs(yy - cy) <= half_y)
    colour = _hsv_to_rgb(params["hue"], params["sat"], params["val"])
    img[inside] = colour + rng.normal(0, 0.02, (inside.sum(), 3))
    return np.clip(img, 0, 1)


def apply_shift(img: np.ndarray, shift: TargetShift) -> np.ndarray:
    """Apply a photometric shift to an HxWx3 float image in [0, 1]."""
    out = img
    if shift.hue_rotation or shift.saturation != 1.0:
        # rotate chroma about the grey axis in YIQ space (linear in RGB)
        to_yiq = np.array([[0.299, 0.587, 0.114], [0.596, -0.274, -0.322], [0.211, -0.523, 0.312]])
        theta = 2 * math.pi * shift.hue_rotation
        rot = np.array(
            [[1, 0, 0], [0, math.cos(theta), -math.sin(theta)], [0, math.sin(theta), math.cos(theta)]]
        )
        rot[1:, 1:] *= shift.saturation
        mat = np.linalg.inv(to_yiq) @ rot @ to_yiq
        out = np.clip(out @ mat.T, 0, 1)
    if shift.channel_gain != (1.0, 1.0, 1.0):
        out = np.clip(out * np.asarray(shift.channel_gain), 0, 1)
    if shift.contrast != 1.0 or shift.brightness:
        out = np.clip((out - 0.5) * shift.contrast + 0.5 + shift.brightness, 0, 1)
    if shift.gamma != 1.0:
        out = out**shift.gamma
    if shift.blur_sigma > 0:
        out = gaussian_filter(out, sigma=(shift.blur_sigma, shift.blur_sigma, 0), mode="reflect")
    return np.clip(out, 0, 1)


def _sample_params(category: int, spec: SyntheticDomainSpec, rng: np.random.Generator) -> dict:
    bands = NUM_EMOTIONS // 2
    band, shape = divmod(category, 2)
    frac = rng.uniform(spec.band_margin, 1 - spec.band_margin)
    return {
        "hue": float((band + frac) / bands * spec.hue_span),
        "shape": int(shape),
        "size": float(rng.uniform()),
        "sat": float(rng.uniform(0.75, 1.0)),
        "val": float(rng.uniform(0.75, 1.0)),
        "cx": float(rng.uniform(0.35, 0.65)),
        "cy": float(rng.uniform(0.35, 0.65)),
        "background": float(rng.uniform(0.15, 0.45)),
        "bg_tilt": float(rng.choice([-1.0, 1.0])),
    }


def _split_names(n: int, fractions: tuple[float, float, float]) -> list[str]:
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    return ["train"] * n_train + ["val"] * n_val + ["test"] * (n - n_train - n_val)


def _generate_domain(domain: str, spec: SyntheticDomainSpec, seed_seq) -> DatasetManifest:
    rng = np.random.default_rng(seed_seq)
    # stratified labels: exact class balance, then shuffled
    categories = rng.permutation(np.arange(spec.n_samples) % NUM_EMOTIONS)
    splits = _split_names(spec.n_samples, spec.split_fractions)
    records, pixels = [], {}
    for i, (cat, split) in enumerate(zip(categories, splits)):
        params = _sample_params(int(cat), spec, rng)
        img = _render(params, spec.image_size, rng)
        if domain == "target":
            img = apply_shift(img, spec.target_shift)
        ref = f"{domain}/{i:05d}.png"
        pixels[ref] = np.round(img * 255).astype(np.uint8)
        rule = label_rule(params, spec)
        kwargs = {"votes": tuple(rule["votes"])} if spec.task == "distribution" else {"label": rule["category"]}
        records.append(SampleRecord(image=ref, domain=domain, split=split, params=params, **kwargs))
    return DatasetManifest(spec.task, records, image_size=spec.image_size, pixels=pixels)


def generate_synthetic_pair(spec: SyntheticDomainSpec) -> tuple[DatasetManifest, DatasetManifest]:
    """Deterministic (source, target) manifests with in-memory pixels."""
    if spec.n_samples < 1:
        raise ValueError("synthetic spec must request at least one sample per domain")
    src_seq, tgt_seq = np.random.SeedSequence(spec.seed).spawn(2)
    return _generate_domain("source", spec, src_seq), _generate_domain("target", spec, tgt_seq)


def write_synthetic(manifest: DatasetManifest, out_dir: "str | Path", name: str) -> Path:
    """Write a synthetic manifest's PNGs and JSONL under ``out_dir``."""
    out_dir = Path(out_dir)
    for rec in manifest.records:
        path = out_dir / rec.image
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(manifest.pixels[rec.image]).save(path)
    manifest_path = out_dir / f"{name}.jsonl"
    manifest.write(manifest_path)
    return manifest_path

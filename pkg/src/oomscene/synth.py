"""Synthetic multi-domain manifests with planted structure.

The generator draws hard-detection manifests whose images carry a hidden
topic.  Detection probabilities depend on (topic, class, object); detection
scores come from clipped Gaussians.  The target domain re-draws images from
the same model and then applies a score shift (scale/offset, unclamped) plus
detection dropout.  Hidden topics are encoded in the image ids so oracle
checks can recover them.

Also home to the raw-score baseline encoder, the un-quantized counterpart of
the posterior descriptor, and a small adjusted-Rand helper for cluster
recovery checks.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import VariantError
from .descriptor_hard import PyramidLayout, assign_region
from .ingest import (
    HARD,
    DatasetManifest,
    HardDetection,
    ImageRecord,
    ObjectVocabulary,
    SceneClassSet,
    SoftPatch,
)

_TOPIC_RE = re.compile(r"_t(\d+)_")


@dataclass(frozen=True)
class DomainShift:
    """Score transform score' = scale * score + offset, plus detection dropout."""

    score_offset: float = 0.0
    score_scale: float = 1.0
    dropout: float = 0.0

    def __post_init__(self):
        if not self.score_scale > 0:
            raise ValueError("score_scale must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def is_identity(self) -> bool:
        return self.score_offset == 0.0 and self.score_scale == 1.0 and self.dropout == 0.0


@dataclass(frozen=True, eq=False)
class ScoreModel:
    """Per (topic, class, object): detection probability and score mean/spread."""

    detect_prob: np.ndarray
    score_mean: np.ndarray
    score_spread: np.ndarray

    def __post_init__(self):
        for name in ("detect_prob", "score_mean", "score_spread"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.detect_prob.shape == self.score_mean.shape == self.score_spread.shape):
            raise ValueError("score model tensors must share one (topics, classes, objects) shape")
        if self.detect_prob.ndim != 3:
            raise ValueError("score model tensors must be 3-D (topics, classes, objects)")
        if np.any(self.detect_prob < 0) or np.any(self.detect_prob > 1):
            raise ValueError("detection probabilities must lie in [0, 1]")
        if np.any(self.score_spread <= 0):
            raise ValueError("score spreads must be positive")


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int
    n_objects: int
    n_topics_true: int
    images_per_class: int
    score_model: ScoreModel
    shift: DomainShift
    seed: int

    def __post_init__(self):
        if self.n_classes < 1 or self.n_objects < 1:
            raise ValueError("spec needs at least one class and one object")
        if self.n_topics_true < 1 or self.images_per_class < 1:
            raise ValueError("spec needs at least one topic and one image per class")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        want = (self.n_topics_true, self.n_classes, self.n_objects)
        if self.score_model.detect_prob.shape != want:
            raise ValueError(
                f"score model shape {self.score_model.detect_prob.shape} "
                f"does not match spec {want}"
            )


def planted_spec(n_classes: int, n_objects: int, n_topics: int,
                 images_per_class: int, shift: DomainShift = DomainShift(),
                 seed: int = 0, marker_prob: float = 0.92,
                 class_hi: float = 0.7, class_lo: float = 0.35,
                 context_base: float = 0.15, context_span: float = 0.5,
                 noise_prob: float = 0.04, score_center: float = 0.95,
                 score_spread: float = 0.15, context_score_center: float = 0.45,
                 context_score_spread: float = 0.2) -> SynthSpec:
    """Spec with three kinds of planted objects.

    Topic markers fire in all classes of their topic so clustering can
    recover the hidden partition (and so a single pooled classifier carries
    noisy weights a per-topic one avoids).  Class objects carry the scene
    signal but overlap adjacent classes, keeping margins thin.  Context
    objects fire at class-graded rates on a much lower score scale: a score
    offset re-weights their raw values against the high-scoring objects,
    while threshold-grid lookups stay on stable posterior columns.
    """
    if n_objects < n_topics + n_classes:
        raise ValueError("need at least n_topics + n_classes objects to plant structure")
    per_topic = max(1, int(0.6 * n_objects) // n_topics)
    while n_topics * per_topic > n_objects - n_classes:
        per_topic -= 1
    n_markers = n_topics * per_topic
    n_context = max(0, min(6, n_objects - n_markers - n_classes))
    n_class_obj = n_objects - n_markers - n_context

    prob = np.full((n_topics, n_classes, n_objects), noise_prob)
    mean = np.full_like(prob, score_center)
    spread = np.full_like(prob, score_spread)
    for t in range(n_topics):
        prob[t, :, t * per_topic : (t + 1) * per_topic] = marker_prob
    for k in range(n_class_obj):
        o = n_markers + k
        prob[:, k % n_classes, o] = class_hi
        prob[:, (k + 1) % n_classes, o] = class_lo
    for j in range(n_context):
        o = n_markers + n_class_obj + j
        for c in range(n_classes):
            grade = ((c + j) % n_classes) / max(n_classes - 1, 1)
            prob[:, c, o] = context_base + context_span * grade
        mean[:, :, o] = context_score_center
        spread[:, :, o] = context_score_spread

    return SynthSpec(
        n_classes=n_classes,
        n_objects=n_objects,
        n_topics_true=n_topics,
        images_per_class=images_per_class,
        score_model=ScoreModel(prob, mean, spread),
        shift=shift,
        seed=seed,
    )


def _random_box(rng) -> tuple[float, float, float, float]:
    w = rng.uniform(0.05, 0.3)
    h = rng.uniform(0.05, 0.3)
    x0 = rng.uniform(0.0, 1.0 - w)
    y0 = rng.uniform(0.0, 1.0 - h)
    return (x0, y0, min(1.0, x0 + w), min(1.0, y0 + h))


def _draw_manifest(spec: SynthSpec, domain_tag: str, domain_code: int,
                   split_tag: str) -> DatasetManifest:
    model = spec.score_model
    records = []
    for c in range(spec.n_classes):
        for i in range(spec.images_per_class):
            # per-image substream: generation order never matters
            rng = np.random.default_rng([spec.seed, domain_code, c, i])
            topic = int(rng.integers(spec.n_topics_true))
            dets = []
            for o in range(spec.n_objects):
                if rng.random() < model.detect_prob[topic, c, o]:
                    for _ in range(int(rng.integers(1, 4))):
                        score = float(
                            np.clip(
                                rng.normal(model.score_mean[topic, c, o],
                                           model.score_spread[topic, c, o]),
                                0.0,
                                1.0,
                            )
                        )
                        dets.append(HardDetection(o, score, _random_box(rng)))
            records.append(
                ImageRecord(
                    image_id=f"{domain_tag}_c{c:02d}_t{topic}_{i:04d}",
                    scene_class=c,
                    detections=tuple(dets),
                    mode=HARD,
                    domain_tag=domain_tag,
                )
            )
    return DatasetManifest(
        vocabulary=ObjectVocabulary(tuple(f"obj{i:03d}" for i in range(spec.n_objects))),
        classes=SceneClassSet(tuple(f"class{i:02d}" for i in range(spec.n_classes))),
        records=tuple(records),
        split_tag=split_tag,
        mode=HARD,
    )


def apply_shift(manifest: DatasetManifest, shift: DomainShift,
                seed: int) -> DatasetManifest:
    """Transform every detection score and drop detections at the dropout rate.

    Shifted scores are stored raw (no clamping); encoders clamp into their
    own threshold bandwidth.
    """
    new_records = []
    for ri, rec in enumerate(manifest.records):
        rng = np.random.default_rng([abs(int(seed)), 424243, ri]) if shift.dropout > 0 else None
        dets = []
        for det in rec.detections:
            if rec.mode == HARD:
                if rng is not None and rng.random() < shift.dropout:
                    continue
                dets.append(
                    HardDetection(
                        det.object_index,
                        shift.score_scale * det.score + shift.score_offset,
                        det.box,
                    )
                )
            else:
                if rng is not None and rng.random() < shift.dropout:
                    continue
                dets.append(
                    SoftPatch(det.patch_id,
                              shift.score_scale * det.scores + shift.score_offset)
                )
        new_records.append(
            ImageRecord(rec.image_id, rec.scene_class, tuple(dets), rec.mode,
                        rec.domain_tag)
        )
    return DatasetManifest(
        vocabulary=manifest.vocabulary,
        classes=manifest.classes,
        records=tuple(new_records),
        split_tag=manifest.split_tag,
        mode=manifest.mode,
    )


def generate(spec: SynthSpec) -> tuple[DatasetManifest, DatasetManifest]:
    """Draw (source, target) manifests; the target applies the spec's shift.

    Deterministic per seed.  With an identity shift the target is a fresh
    same-distribution draw, i.e. a held-out source-domain test set.
    """
    source = _draw_manifest(spec, "source", 0, "train")
    target = _draw_manifest(spec, "target", 1, "test")
    return source, apply_shift(target, spec.shift, seed=spec.seed)


def hidden_topic_of(image_id: str) -> int:
    """Recover the generator's hidden topic from an image id."""
    m = _TOPIC_RE.search(image_id)
    if m is None:
        raise ValueError(f"image id {image_id!r} carries no hidden topic")
    return int(m.group(1))


def hidden_topics(manifest: DatasetManifest) -> np.ndarray:
    return np.array([hidden_topic_of(r.image_id) for r in manifest.records], dtype=int)


def encode_rawscore_baseline(record: ImageRecord, n_objects: int,
                             layout: PyramidLayout = PyramidLayout()) -> np.ndarray:
    """Per-object max raw score per pyramid region, concatenated.

    The un-quantized counterpart of the posterior descriptor: it inherits any
    score shift between domains verbatim.  Scores are used as-is (no clamp).
    """
    if record.mode != HARD:
        raise VariantError("the raw-score baseline needs hard detections")
    out = np.zeros(layout.region_count * n_objects)
    for det in record.detections:
        offset = 0
        for rows, cols in layout.levels:
            reg = offset + assign_region(det.box, (rows, cols))
            idx = reg * n_objects + det.object_index
            if det.score > out[idx]:
                out[idx] = det.score
            offset += rows * cols
    return out


def encode_rawscore_manifest(manifest: DatasetManifest, n_objects: int,
                             layout: PyramidLayout = PyramidLayout()) -> np.ndarray:
    return np.stack(
        [encode_rawscore_baseline(r, n_objects, layout) for r in manifest.records]
    )


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected agreement between two labelings of the same items."""
    a = np.asarray(labels_a, dtype=int)
    b = np.asarray(labels_b, dtype=int)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("labelings must be 1-D and the same length")
    n = a.size
    if n < 2:
        return 1.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))

"""Labeled feature corpora: manifests, deterministic splits, synthetic generation.

A corpus is a ``DatasetManifest``: named, language-tagged, with a fixed
feature dimension, an ordered sample list, and a train/test split over sample
ids. Manifest order is authoritative; every downstream shuffle derives from
seeds, so experiments replay exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import ManifestError
from .features import ingest_embeddings, ingest_frame_embeddings
from .rng import derive_seed, substream
from .validation import check_finite, round_half_up

TRAIN = "train"
TEST = "test"
SIDES = (TRAIN, TEST)


class EmotionLabel(IntEnum):
    """The four emotion classes, with stable integer codes."""

    HAPPY = 0
    ANGRY = 1
    SAD = 2
    NEUTRAL = 3

    @classmethod
    def from_string(cls, text: str) -> "EmotionLabel":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            valid = ", ".join(lab.name.lower() for lab in cls)
            raise ManifestError(f"unknown label {text!r}; expected one of: {valid}") from None

    @property
    def as_string(self) -> str:
        return self.name.lower()


LABELS: tuple[EmotionLabel, ...] = tuple(EmotionLabel)


@dataclass
class Sample:
    """One utterance: an inline feature vector or sequence, or a WAV reference."""

    id: str
    label: EmotionLabel
    dataset_id: str
    features: np.ndarray | None = None  # (d,) pooled or (T, d) sequence
    wav: str | None = None


@dataclass
class DatasetManifest:
    name: str
    language: str
    feature_dim: int
    samples: list[Sample] = field(default_factory=list)
    split: dict[str, str] = field(default_factory=dict)

    def side(self, side: str) -> list[Sample]:
        if side not in SIDES:
            raise ValueError(f"split side must be one of {SIDES}, got {side!r}")
        return [s for s in self.samples if self.split.get(s.id) == side]

    def labels_present(self) -> set[EmotionLabel]:
        return {s.label for s in self.samples}


def class_subset(manifest: DatasetManifest, label: EmotionLabel, side: str) -> list[Sample]:
    """Samples with the given label on the given split side, in manifest order."""
    if side not in SIDES:
        raise ValueError(f"split side must be one of {SIDES}, got {side!r}")
    return [s for s in manifest.samples if s.label == label and manifest.split.get(s.id) == side]


def stratified_split(samples: list[Sample], test_fraction: float, seed: int) -> dict[str, str]:
    """Per-class split: test count is max(1, round(test_fraction * n_c)), seeded.

    Every class needs at least 2 samples so both sides stay non-empty.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    by_label: dict[EmotionLabel, list[int]] = {}
    for idx, sample in enumerate(samples):
        by_label.setdefault(sample.label, []).append(idx)

    rng = substream(seed, "split")
    test_indices: set[int] = set()
    for label in LABELS:
        indices = by_label.get(label)
        if indices is None:
            continue
        n = len(indices)
        if n < 2:
            raise ManifestError(f"class {label.as_string!r} has {n} sample(s); need at least 2")
        k = max(1, round_half_up(test_fraction * n))
        if k >= n:
            raise ManifestError(
                f"test_fraction {test_fraction} leaves class {label.as_string!r} "
                "with an empty train side"
            )
        order = rng.permutation(n)
        test_indices.update(indices[i] for i in order[:k])

    return {s.id: (TEST if i in test_indices else TRAIN) for i, s in enumerate(samples)}


def validate_manifest(manifest: DatasetManifest) -> DatasetManifest:
    if manifest.feature_dim < 1:
        raise ManifestError(f"{manifest.name}: feature_dim must be positive")
    seen_ids: set[str] = set()
    for sample in manifest.samples:
        if sample.id in seen_ids:
            raise ManifestError(f"{manifest.name}: duplicate sample id {sample.id!r}")
        seen_ids.add(sample.id)
        if sample.features is not None:
            feats = np.asarray(sample.features)
            dim = feats.shape[-1] if feats.ndim in (1, 2) else -1
            if dim != manifest.feature_dim:
                raise ManifestError(
                    f"{manifest.name}: sample {sample.id!r} has dimension {dim}, "
                    f"manifest declares {manifest.feature_dim}"
                )
            check_finite(feats, f"features of sample {sample.id!r}")
    for sample_id in manifest.split:
        if sample_id not in seen_ids:
            raise ManifestError(f"{manifest.name}: split references unknown id {sample_id!r}")
    for sample in manifest.samples:
        side = manifest.split.get(sample.id)
        if side not in SIDES:
            raise ManifestError(f"{manifest.name}: sample {sample.id!r} missing from split")
    return manifest


def load_manifest(path, *, split_seed: int = 0, test_fraction: float = 0.2) -> DatasetManifest:
    """Load and validate a manifest JSON, resolving its features CSV if present.

    A manifest without a ``split`` entry gets a seeded stratified split.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from exc

    for key in ("name", "language", "feature_dim", "samples"):
        if key not in raw:
            raise ManifestError(f"{path}: missing required key {key!r}")
    feature_dim = int(raw["feature_dim"])
    name = str(raw["name"])

    samples: list[Sample] = []
    for entry in raw["samples"]:
        if "id" not in entry or "label" not in entry:
            raise ManifestError(f"{path}: sample entries need 'id' and 'label'")
        samples.append(
            Sample(
                id=str(entry["id"]),
                label=EmotionLabel.from_string(str(entry["label"])),
                dataset_id=name,
                wav=entry.get("wav"),
            )
        )

    features_csv = raw.get("features_csv")
    if features_csv is not None:
        csv_path = path.parent / features_csv
        vectors = _load_features_csv(csv_path, feature_dim)
        ids = {s.id for s in samples}
        for sample_id in vectors:
            if sample_id not in ids:
                raise ManifestError(f"{csv_path}: row for unknown sample id {sample_id!r}")
        for sample in samples:
            if sample.id not in vectors:
                raise ManifestError(f"{csv_path}: no feature row for sample {sample.id!r}")
            sample.features = vectors[sample.id]

    split_raw = raw.get("split")
    if split_raw is not None:
        split = {str(k): str(v) for k, v in split_raw.items()}
    else:
        split = stratified_split(samples, test_fraction, split_seed)

    manifest = DatasetManifest(
        name=name,
        language=str(raw["language"]),
        feature_dim=feature_dim,
        samples=samples,
        split=split,
    )
    return validate_manifest(manifest)


def _load_features_csv(csv_path: Path, feature_dim: int) -> dict[str, np.ndarray]:
    try:
        first_line = csv_path.read_text(encoding="utf-8").splitlines()[0]
    except (OSError, IndexError) as exc:
        raise ManifestError(f"cannot read features file {csv_path}: {exc}") from exc
    if first_line.split(",")[1:2] == ["frame"]:
        return ingest_frame_embeddings(csv_path, feature_dim)
    pooled = ingest_embeddings(csv_path, feature_dim)
    return {sid: vec.values for sid, vec in pooled.items()}


def _format_float(x: float) -> str:
    return repr(float(x))


def save_manifest(manifest: DatasetManifest, json_path, features_csv: str | None = None) -> None:
    """Write the manifest JSON and, when samples carry features, a features CSV.

    Output is byte-deterministic for a given manifest.
    """
    json_path = Path(json_path)
    has_features = any(s.features is not None for s in manifest.samples)
    if has_features and features_csv is None:
        features_csv = json_path.name.removesuffix(".json") + ".features.csv"

    if has_features:
        write_features_csv(
            json_path.parent / features_csv,
            {s.id: s.features for s in manifest.samples},
            manifest.feature_dim,
        )

    doc: dict = {
        "name": manifest.name,
        "language": manifest.language,
        "feature_dim": manifest.feature_dim,
    }
    if has_features:
        doc["features_csv"] = features_csv
    doc["samples"] = [
        {"id": s.id, "label": s.label.as_string} | ({"wav": s.wav} if s.wav else {})
        for s in manifest.samples
    ]
    doc["split"] = {s.id: manifest.split[s.id] for s in manifest.samples}
    json_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def write_features_csv(csv_path, vectors: dict[str, np.ndarray], feature_dim: int) -> None:
    """Write pooled rows (id,f0..) or frame rows (id,frame,f0..) per vector rank."""
    csv_path = Path(csv_path)
    sequence = any(np.asarray(v).ndim == 2 for v in vectors.values())
    lines: list[str] = []
    if sequence:
        lines.append(",".join(["id", "frame"] + [f"f{i}" for i in range(feature_dim)]))
        for sample_id, mat in vectors.items():
            for t, row in enumerate(np.atleast_2d(mat)):
                lines.append(",".join([sample_id, str(t)] + [_format_float(v) for v in row]))
    else:
        lines.append(",".join(["id"] + [f"f{i}" for i in range(feature_dim)]))
        for sample_id, vec in vectors.items():
            lines.append(",".join([sample_id] + [_format_float(v) for v in np.asarray(vec)]))
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class SynthSpec:
    """Deterministic synthetic shift-corpus family: identical spec, identical corpora."""

    num_datasets: int
    feature_dim: int
    samples_per_class: int
    class_separation: float
    domain_shift: float
    noise_std: float
    seed: int

    def __post_init__(self) -> None:
        if self.num_datasets < 1:
            raise ValueError("num_datasets must be positive")
        if self.feature_dim < 4:
            raise ValueError("feature_dim must be at least 4 (one direction per class)")
        if self.samples_per_class < 2:
            raise ValueError("samples_per_class must be at least 2")
        if self.class_separation < 0 or self.domain_shift < 0:
            raise ValueError("class_separation and domain_shift must be nonnegative")
        if self.noise_std <= 0:
            raise ValueError("noise_std must be positive")


def synth_geometry(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Class means (4, d) and the unit shift direction (d,), both seeded.

    Means sit along orthogonal directions, scaled so every pair of class
    means is exactly ``class_separation`` apart. The shift direction is a
    seeded unit vector drawn inside the span of the class means, so every
    unit of domain_shift moves mass across discriminative directions and the
    shift knob has a consistent effect across seeds.
    """
    rng = substream(spec.seed, "geometry")
    basis, _ = np.linalg.qr(rng.normal(size=(spec.feature_dim, 4)))
    means = (spec.class_separation / np.sqrt(2.0)) * basis.T
    direction = basis @ rng.normal(size=4)
    direction /= np.linalg.norm(direction)
    return means, direction


def gen_synth(spec: SynthSpec) -> list[DatasetManifest]:
    """Generate ``num_datasets`` manifests from translated Gaussian class clusters.

    Dataset t draws class c from N(mu_c + t * domain_shift * u, noise_std^2 I),
    each pre-split 80/20 stratified. Fully determined by the spec.
    """
    means, direction = synth_geometry(spec)
    manifests = []
    for t in range(spec.num_datasets):
        name = f"synth-{t}"
        rng = substream(spec.seed, "data", t)
        samples: list[Sample] = []
        for label in LABELS:
            center = means[label] + t * spec.domain_shift * direction
            draws = center + spec.noise_std * rng.normal(
                size=(spec.samples_per_class, spec.feature_dim)
            )
            for i in range(spec.samples_per_class):
                samples.append(
                    Sample(
                        id=f"{name}-{label.as_string}-{i:04d}",
                        label=label,
                        dataset_id=name,
                        features=draws[i],
                    )
                )
        split = stratified_split(samples, 0.2, derive_seed(spec.seed, "split", t))
        manifests.append(
            validate_manifest(
                DatasetManifest(
                    name=name,
                    language="synthetic",
                    feature_dim=spec.feature_dim,
                    samples=samples,
                    split=split,
                )
            )
        )
    return manifests

import json
import wave

import numpy as np
import pytest

from sequifi.corpus import LABELS, DatasetManifest, Sample, validate_manifest


def make_manifest(
    name="toy",
    feature_dim=4,
    per_class_train=2,
    per_class_test=1,
    labels=LABELS,
    rng=None,
):
    """Small in-memory manifest with seeded Gaussian features per class."""
    rng = rng or np.random.default_rng(0)
    samples, split = [], {}
    for label in labels:
        center = np.zeros(feature_dim)
        center[int(label) % feature_dim] = 3.0
        for i in range(per_class_train + per_class_test):
            sid = f"{name}-{label.as_string}-{i}"
            samples.append(
                Sample(
                    id=sid,
                    label=label,
                    dataset_id=name,
                    features=center + rng.normal(size=feature_dim),
                )
            )
            split[sid] = "train" if i < per_class_train else "test"
    return validate_manifest(
        DatasetManifest(
            name=name, language="synthetic", feature_dim=feature_dim, samples=samples, split=split
        )
    )


def write_manifest_json(path, doc):
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return path


def write_wav(path, signal, rate=16000, channels=1):
    """Write float signal in [-1, 1) as 16-bit PCM."""
    data = np.clip(np.asarray(signal) * 32767, -32768, 32767).astype("<i2")
    if channels == 2 and data.ndim == 1:
        data = np.stack([data, data], axis=1)
    with wave.open(str(path), "wb") as handle:
        handle.setnchannels(channels)
        handle.setsampwidth(2)
        handle.setframerate(rate)
        handle.writeframes(data.tobytes())
    return path


@pytest.fixture
def toy_manifest():
    return make_manifest()

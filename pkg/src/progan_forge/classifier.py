"""Small convolutional classifier for the bundled Inception-Score path.

Trained on the three synthetic river styles (desert / lush / moderate),
it stands in for a large pretrained classifier: anything exposing
``predict_proba`` returning a row-stochastic matrix plugs into
:func:`progan_forge.metrics.classify` the same way.
"""

from __future__ import annotations

import numpy as np

from . import layers as L
from .adam import AdamState, adam_step
from .autodiff import Tensor, backward, exp, leaky_relu, log, mul, no_grad, tmean, tsum
from .datapipe import STYLES, synth_river


class RiverClassifier:
    """conv x3 -> dense softmax over image classes; fit/predict_proba API."""

    def __init__(self, n_classes: int = 3, resolution: int = 32, channels: int = 16,
                 lr: float = 0.002, seed: int = 0):
        if resolution % 8:
            raise ValueError("resolution must be divisible by 8 (three 2x pools)")
        self.n_classes = n_classes
        self.resolution = resolution
        self.channels = channels
        self.lr = lr
        self.seed = seed
        rng = np.random.default_rng(seed)
        c = channels
        flat = 2 * c * (resolution // 8) ** 2

        def weight(shape, fan_in):
            return Tensor(
                (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32),
                requires_grad=True,
            )

        def bias(n):
            return Tensor(np.zeros(n, dtype=np.float32), requires_grad=True)

        self.params = {
            "conv1.w": weight((c, 3, 3, 3), 27),
            "conv1.b": bias(c),
            "conv2.w": weight((2 * c, c, 3, 3), 9 * c),
            "conv2.b": bias(2 * c),
            "conv3.w": weight((2 * c, 2 * c, 3, 3), 18 * c),
            "conv3.b": bias(2 * c),
            "dense1.w": weight((flat, 64), flat),
            "dense1.b": bias(64),
            "dense2.w": weight((64, n_classes), 64),
            "dense2.b": bias(n_classes),
        }

    def get_params(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "resolution": self.resolution,
            "channels": self.channels,
            "lr": self.lr,
            "seed": self.seed,
        }

    def _logits(self, x: Tensor) -> Tensor:
        p = self.params
        h = L.avgpool2x(leaky_relu(L.conv2d(x, p["conv1.w"], p["conv1.b"], padding=1), 0.2))
        h = L.avgpool2x(leaky_relu(L.conv2d(h, p["conv2.w"], p["conv2.b"], padding=1), 0.2))
        h = L.avgpool2x(leaky_relu(L.conv2d(h, p["conv3.w"], p["conv3.b"], padding=1), 0.2))
        h = leaky_relu(L.dense(L.flatten(h), p["dense1.w"], p["dense1.b"]), 0.2)
        return L.dense(h, p["dense2.w"], p["dense2.b"])

    def _prepare(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images)
        if images.ndim != 4 or images.shape[3] != 3:
            raise ValueError(f"expected (N, H, W, 3) images, got shape {images.shape}")
        if images.shape[1] != self.resolution or images.shape[2] != self.resolution:
            raise ValueError(
                f"classifier expects {self.resolution}x{self.resolution} input, "
                f"got {images.shape[1]}x{images.shape[2]}"
            )
        x = images.astype(np.float32) / np.float32(127.5) - np.float32(1.0)
        return np.ascontiguousarray(x.transpose(0, 3, 1, 2))

    def fit(self, images: np.ndarray, labels, epochs: int = 4, batch_size: int = 32,
            seed: int = 0) -> "RiverClassifier":
        data = self._prepare(images)
        labels = np.asarray(labels, dtype=int)
        if labels.shape[0] != data.shape[0]:
            raise ValueError("labels must align with images")
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise ValueError(f"labels must lie in 0..{self.n_classes - 1}")
        onehot = np.eye(self.n_classes, dtype=np.float32)[labels]
        rng = np.random.default_rng(seed)
        state = AdamState(lr=self.lr, beta1=0.9, beta2=0.999)
        n = data.shape[0]
        named = list(self.params.items())
        for _ in range(epochs):
            order = rng.permutation(n)
            for start in range(0, n, batch_size):
                idx = order[start : start + batch_size]
                logits = self._logits(Tensor(data[idx]))
                # stable log-softmax: shift by the row max (constant)
                shift = Tensor(logits.data.max(axis=1, keepdims=True))
                shifted = logits - shift
                log_norm = log(tsum(exp(shifted), axis=1))
                picked = tsum(mul(shifted, Tensor(onehot[idx])), axis=1)
                loss = -tmean(picked - log_norm)
                grads = backward(loss, [t for _, t in named])
                adam_step(named, grads, state)
        return self

    def predict_proba(self, images: np.ndarray) -> np.ndarray:
        data = self._prepare(images)
        with no_grad():
            logits = self._logits(Tensor(data)).data.astype(np.float64)
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        probs = e / e.sum(axis=1, keepdims=True)
        return probs / probs.sum(axis=1, keepdims=True)

    def predict(self, images: np.ndarray) -> np.ndarray:
        return self.predict_proba(images).argmax(axis=1)


def make_style_corpus(per_class: int, resolution: int = 32, seed: int = 0):
    """Labelled synthetic river images, one class per palette style."""
    images, labels = [], []
    for cls, style in enumerate(STYLES):
        for i in range(per_class):
            child = np.random.SeedSequence(entropy=[seed, cls, i])
            img, _ = synth_river(child, resolution, style=style)
            images.append(img)
            labels.append(cls)
    return np.stack(images), np.asarray(labels)


def bundled_classifier(per_class: int = 48, resolution: int = 32, epochs: int = 4,
                       seed: int = 0) -> RiverClassifier:
    """Train the reference classifier on the synthetic style corpus."""
    images, labels = make_style_corpus(per_class, resolution, seed)
    clf = RiverClassifier(n_classes=len(STYLES), resolution=resolution, seed=seed)
    return clf.fit(images, labels, epochs=epochs, seed=seed)

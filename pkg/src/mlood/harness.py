"""Desk-scale reproduction rig: synthetic multi-label tasks and a linear
sigmoid classifier with analytic gradients.

The generator draws unit-norm prototype directions for the in-distribution
labels and for a disjoint set of OOD clusters. Each sample mixes 1..m_max
prototypes (mean, so multi-positive samples keep the same scale), adds
isotropic Gaussian noise, and squashes through a sigmoid so every input lies
strictly in (0, 1) -- which keeps the geometric-mean corruption used for
validation synthesis well defined.

The feature map is the identity: detectors that need features (Mahalanobis,
LOF, isolation forest) fit directly on the inputs, and perturbation-based
scorers get exact input gradients from the linear model.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import LabeledDataset, Rng, as_matrix
from .errors import DimensionMismatch, Divergence, InvalidConfig, NoEvaluableLabels
from .metrics import aupr


@dataclass(frozen=True)
class ToyConfig:
    """Synthetic multi-label task parameters."""

    d: int = 64
    n_labels: int = 8
    n_ood_protos: int = 8
    proto_scale: float = 6.0
    noise_sigma: float = 0.5
    max_positive: int = 3
    n_train: int = 2000
    n_test_in: int = 1000
    n_test_ood: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.d < 16:
            raise InvalidConfig("d must be >= 16 (block permutation needs 16 blocks)")
        if self.n_labels < 2:
            raise InvalidConfig("need at least 2 in-distribution labels")
        if not 1 <= self.max_positive <= self.n_labels:
            raise InvalidConfig("max_positive must be in [1, n_labels]")
        if self.n_ood_protos < 1:
            raise InvalidConfig("need at least 1 OOD prototype")
        if min(self.n_train, self.n_test_in, self.n_test_ood) < 1:
            raise InvalidConfig("all sample counts must be positive")
        if self.proto_scale <= 0 or self.noise_sigma < 0:
            raise InvalidConfig("proto_scale must be > 0 and noise_sigma >= 0")

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "n_labels": self.n_labels,
            "n_ood_protos": self.n_ood_protos,
            "proto_scale": self.proto_scale,
            "noise_sigma": self.noise_sigma,
            "max_positive": self.max_positive,
            "n_train": self.n_train,
            "n_test_in": self.n_test_in,
            "n_test_ood": self.n_test_ood,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "ToyConfig":
        return ToyConfig(**d)


@dataclass(frozen=True)
class ToyTask:
    """Seeded synthetic dataset bundle: train/test in-distribution, OOD
    inputs, and the generating prototypes."""

    train: LabeledDataset
    test_in: LabeledDataset
    test_ood_inputs: np.ndarray
    prototypes_in: np.ndarray
    prototypes_ood: np.ndarray
    config: ToyConfig

    def min_ood_angle(self) -> float:
        """Smallest angle (radians) between any OOD and in prototype.

        Reported as metadata only; random unit vectors in high dimension are
        nearly orthogonal with overwhelming probability, but nothing is
        guaranteed or asserted.
        """
        cos = np.clip(self.prototypes_ood @ self.prototypes_in.T, -1.0, 1.0)
        return float(np.min(np.arccos(np.abs(cos)))) if cos.size else float("nan")


def _sample_inputs(gen: np.random.Generator, n: int, protos: np.ndarray,
                   cfg: ToyConfig) -> tuple[np.ndarray, np.ndarray]:
    """Draw n samples around the given prototypes.

    Per sample, in fixed order: positive count m ~ Uniform{1..max_positive}
    (vector draw), then per row a uniform subset without replacement and one
    Gaussian noise vector.
    """
    n_protos = protos.shape[0]
    m_max = min(cfg.max_positive, n_protos)
    counts = gen.integers(1, m_max + 1, size=n)
    inputs = np.empty((n, cfg.d))
    labels = np.zeros((n, n_protos))
    for r in range(n):
        chosen = gen.choice(n_protos, size=counts[r], replace=False)
        center = cfg.proto_scale * protos[chosen].mean(axis=0)
        z = center + cfg.noise_sigma * gen.standard_normal(cfg.d)
        inputs[r] = expit(z)
        labels[r, chosen] = 1.0
    return inputs, labels


def gen_task(cfg: ToyConfig) -> ToyTask:
    """Generate a full seeded task; identical config gives a bit-identical task."""
    rng = Rng(cfg.seed)

    proto_gen = rng.split("prototypes").generator()
    raw = proto_gen.standard_normal((cfg.n_labels + cfg.n_ood_protos, cfg.d))
    protos = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    protos_in = protos[: cfg.n_labels]
    protos_ood = protos[cfg.n_labels:]

    train_x, train_y = _sample_inputs(rng.split("train").generator(),
                                      cfg.n_train, protos_in, cfg)
    test_x, test_y = _sample_inputs(rng.split("test_in").generator(),
                                    cfg.n_test_in, protos_in, cfg)
    ood_x, _ = _sample_inputs(rng.split("test_ood").generator(),
                              cfg.n_test_ood, protos_ood, cfg)

    return ToyTask(
        train=LabeledDataset(train_x, train_y),
        test_in=LabeledDataset(test_x, test_y),
        test_ood_inputs=as_matrix(ood_x),
        prototypes_in=as_matrix(protos_in),
        prototypes_ood=as_matrix(protos_ood),
        config=cfg,
    )


@dataclass(frozen=True)
class LinearModel:
    """Per-label linear scorer: logits = inputs @ W.T + b."""

    W: np.ndarray  # n_labels x d
    b: np.ndarray  # n_labels

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if W.ndim != 2 or b.shape[0] != W.shape[0]:
            raise DimensionMismatch("W must be (n_labels, d) and b length n_labels")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise Divergence("model parameters must be finite")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def n_labels(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]


def init_model(n_labels: int, d: int, rng: Rng) -> LinearModel:
    """Small random initialization: W, b ~ N(0, 0.01^2)."""
    gen = rng.split("init").generator()
    return LinearModel(0.01 * gen.standard_normal((n_labels, d)),
                       0.01 * gen.standard_normal(n_labels))


def forward(model: LinearModel, inputs: np.ndarray) -> np.ndarray:
    """Logits, one column per label."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != model.d:
        raise DimensionMismatch(
            f"inputs must be (n, {model.d}), got {inputs.shape}"
        )
    return inputs @ model.W.T + model.b


def _elementwise_bce(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    # stable -[y log sigma(f) + (1-y) log(1 - sigma(f))]
    return np.maximum(logits, 0.0) - logits * labels + np.log1p(np.exp(-np.abs(logits)))


def bce_loss(model: LinearModel, data: LabeledDataset) -> float:
    """Mean binary cross-entropy over all (sample, label) pairs."""
    logits = forward(model, data.inputs)
    if logits.shape != data.labels.shape:
        raise DimensionMismatch("label shape does not match model output")
    return float(np.mean(_elementwise_bce(logits, data.labels)))


def bce_param_grad(model: LinearModel, inputs: np.ndarray,
                   labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of bce_loss w.r.t. (W, b) on one batch."""
    logits = forward(model, inputs)
    if logits.shape != labels.shape:
        raise DimensionMismatch("label shape does not match model output")
    resid = (expit(logits) - labels) / logits.size
    return resid.T @ inputs, resid.sum(axis=0)


def bce_input_grad(model: LinearModel, x: np.ndarray, label: int,
                   target: float) -> np.ndarray:
    """Gradient w.r.t. the input of the single-label BCE toward ``target``.

    Closed form: (sigma(f_label(x)) - target) * W_label.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != model.d:
        raise DimensionMismatch(f"input must have dimension {model.d}")
    if target not in (0.0, 1.0, 0, 1):
        raise InvalidConfig("target must be 0 or 1")
    f = float(model.W[label] @ x + model.b[label])
    return (expit(f) - float(target)) * model.W[label]


@dataclass(frozen=True)
class TrainConfig:
    """Adam hyperparameters; defaults match the trainer contract."""

    lr: float = 1e-2
    epochs: int = 200
    batch: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch < 1 or self.epochs < 0:
            raise InvalidConfig("lr must be > 0, batch >= 1, epochs >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps_adam > 0):
            raise InvalidConfig("invalid Adam parameters")


def train(model_init: LinearModel, data: LabeledDataset,
          hyper: TrainConfig = TrainConfig()) -> LinearModel:
    """Adam with bias correction over seeded, uniformly shuffled minibatches.

    Raises Divergence if the training loss ever becomes non-finite.
    """
    W = model_init.W.copy()
    b = model_init.b.copy()
    m_w = np.zeros_like(W)
    v_w = np.zeros_like(W)
    m_b = np.zeros_like(b)
    v_b = np.zeros_like(b)
    step = 0
    shuffle_gen = Rng(hyper.seed).split("shuffle").generator()
    n = data.n

    for _ in range(hyper.epochs):
        perm = shuffle_gen.permutation(n)
        for start in range(0, n, hyper.batch):
            idx = perm[start: start + hyper.batch]
            model = LinearModel(W, b)
            d_w, d_b = bce_param_grad(model, data.inputs[idx], data.labels[idx])
            step += 1
            m_w = hyper.beta1 * m_w + (1 - hyper.beta1) * d_w
            v_w = hyper.beta2 * v_w + (1 - hyper.beta2) * d_w**2
            m_b = hyper.beta1 * m_b + (1 - hyper.beta1) * d_b
            v_b = hyper.beta2 * v_b + (1 - hyper.beta2) * d_b**2
            bc1 = 1 - hyper.beta1**step
            bc2 = 1 - hyper.beta2**step
            W = W - hyper.lr * (m_w / bc1) / (np.sqrt(v_w / bc2) + hyper.eps_adam)
            b = b - hyper.lr * (m_b / bc1) / (np.sqrt(v_b / bc2) + hyper.eps_adam)
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise Divergence("non-finite parameters during training")

    final = LinearModel(W, b)
    if hyper.epochs > 0 and not math.isfinite(bce_loss(final, data)):
        raise Divergence("non-finite training loss")
    return final


def mean_average_precision(model: LinearModel, data: LabeledDataset) -> float:
    """Mean over labels of the average precision of the per-label sigmoid
    ranking. Labels without both a positive and a negative are skipped with
    a warning."""
    probs = expit(forward(model, data.inputs))
    per_label = []
    skipped = []
    for i in range(data.n_labels):
        mask = data.labels[:, i] == 1.0
        if not mask.any() or mask.all():
            skipped.append(i)
            continue
        per_label.append(aupr(probs[mask, i], probs[~mask, i]))
    if skipped:
        warnings.warn(f"mAP skipped labels without both classes: {skipped}")
    if not per_label:
        raise NoEvaluableLabels("no label has both positive and negative examples")
    return float(np.mean(per_label))

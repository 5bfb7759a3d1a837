"""Instance scoring and the four pooling strategies over a bag.

Every method scores each patch independently (linear map plus sigmoid) and
differs only in how instance probabilities become the slide estimate:

* meanpool  - arithmetic mean of instance probabilities
* abmil     - softmax attention over instances, weighted mean
* clam      - abmil pooling plus a pseudo-label loss on the extremes
* weseg     - fraction of instances above a decision threshold
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bags import Bag, Prediction, TumorPercentage
from .validation import (
    check_feature_matrix,
    check_probability_vector,
    check_vector,
    round_half_up,
)

__all__ = [
    "METHODS",
    "MilModel",
    "instance_forward",
    "mean_pool",
    "attention_scores",
    "attention_weights",
    "attention_pool",
    "clam_instance_loss",
    "weseg_proxy_labels",
    "weseg_percentage",
    "forward",
    "sigmoid",
    "softmax",
]

METHODS = ("meanpool", "abmil", "clam", "weseg")
ATTENTION_METHODS = ("abmil", "clam")


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(s: np.ndarray) -> np.ndarray:
    shifted = s - s.max()
    e = np.exp(shifted)
    return e / e.sum()


@dataclass
class MilModel:
    """Parameters of the instance scorer and (optionally) the attention scorer.

    params keys: ``w`` (D,), ``b`` (1,) for the instance head; for attention
    methods also ``V`` (H, D), ``c`` (H,), ``u`` (H,) implementing the
    two-layer tanh scorer whose softmax gives the pooling weights.
    """

    method: str
    params: dict[str, np.ndarray]
    attention_dim: int | None = None
    clam_k: int = 8
    clam_weight: float = 0.3
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.has_attention and self.attention_dim is None:
            self.attention_dim = self.params["V"].shape[0]

    @property
    def feature_dim(self) -> int:
        return self.params["w"].shape[0]

    @property
    def has_attention(self) -> bool:
        return "V" in self.params

    @classmethod
    def initialize(
        cls,
        method: str,
        feature_dim: int,
        attention_dim: int = 128,
        rng: np.random.Generator | None = None,
        clam_k: int = 8,
        clam_weight: float = 0.3,
        threshold: float = 0.5,
    ) -> "MilModel":
        """Small random init; attention parameters only for abmil/clam."""
        rng = rng or np.random.default_rng(0)
        params = {
            "w": rng.normal(0.0, 1.0 / np.sqrt(feature_dim), size=feature_dim),
            "b": np.zeros(1),
        }
        if method in ATTENTION_METHODS:
            params["V"] = rng.normal(0.0, 1.0 / np.sqrt(feature_dim), size=(attention_dim, feature_dim))
            params["c"] = np.zeros(attention_dim)
            params["u"] = rng.normal(0.0, 1.0 / np.sqrt(attention_dim), size=attention_dim)
        return cls(
            method=method,
            params=params,
            attention_dim=attention_dim if method in ATTENTION_METHODS else None,
            clam_k=clam_k,
            clam_weight=clam_weight,
            threshold=threshold,
        )

    def copy(self) -> "MilModel":
        return MilModel(
            method=self.method,
            params={k: v.copy() for k, v in self.params.items()},
            attention_dim=self.attention_dim,
            clam_k=self.clam_k,
            clam_weight=self.clam_weight,
            threshold=self.threshold,
        )


def _bag_features(bag) -> np.ndarray:
    if isinstance(bag, Bag):
        return bag.features
    return check_feature_matrix(bag, "bag features")


def instance_forward(bag, model: MilModel) -> tuple[np.ndarray, np.ndarray]:
    """Per-instance logits and sigmoid probabilities."""
    X = _bag_features(bag)
    if X.shape[1] != model.feature_dim:
        raise ValueError(
            f"bag feature dimension {X.shape[1]} does not match model dimension {model.feature_dim}"
        )
    logits = X @ model.params["w"] + model.params["b"][0]
    return logits, sigmoid(logits)


def mean_pool(probs) -> float:
    """Average of instance probabilities: the MeanPool slide estimate."""
    p = check_probability_vector(probs, "probs", min_length=1)
    return float(p.mean())


def attention_scores(bag, model: MilModel) -> np.ndarray:
    """Pre-softmax attention scores u . tanh(V x + c), one per instance."""
    if not model.has_attention:
        raise ValueError(f"model method {model.method!r} has no attention parameters")
    X = _bag_features(bag)
    t = np.tanh(X @ model.params["V"].T + model.params["c"])
    return t @ model.params["u"]


def attention_weights(bag, model: MilModel) -> np.ndarray:
    """Softmax of the attention scores: nonnegative, sums to 1."""
    return softmax(attention_scores(bag, model))


def attention_pool(probs, weights) -> float:
    """Attention-weighted average of instance probabilities."""
    p = check_probability_vector(probs, "probs", min_length=1)
    a = check_vector(weights, "weights", min_length=1)
    if p.shape != a.shape:
        raise ValueError("probs and weights must have the same length")
    if np.any(a < 0.0) or abs(float(a.sum()) - 1.0) > 1e-6:
        raise ValueError("weights must be nonnegative and sum to 1")
    return float(a @ p)


def clam_instance_loss(weights, logits, k: int) -> float:
    """Pseudo-label loss on the attention extremes.

    The k highest-attention instances get pseudo-label 1, the k lowest get 0;
    returns the mean binary cross-entropy of their sigmoid probabilities.
    Under attention ties the two selections may overlap; the loss is still the
    mean over the 2k (instance, label) pairs.
    """
    a = check_vector(weights, "weights", min_length=2)
    z = check_vector(logits, "logits", min_length=2)
    if a.shape != z.shape:
        raise ValueError("weights and logits must have the same length")
    n = a.shape[0]
    if not 1 <= k <= n // 2:
        raise ValueError(f"k must satisfy 1 <= k <= floor(N/2) = {n // 2}, got {k}")
    top = np.argsort(-a, kind="stable")[:k]
    bottom = np.argsort(a, kind="stable")[:k]
    # BCE from logits: -log sigma(z) = softplus(-z), -log(1 - sigma(z)) = softplus(z)
    losses = np.concatenate([np.logaddexp(0.0, -z[top]), np.logaddexp(0.0, z[bottom])])
    return float(losses.mean())


def weseg_proxy_labels(probs, p) -> np.ndarray:
    """Proxy labels for one recursion step: 1 on the round(p*N) most probable
    instances (half-up rounding, ties to the lower index), 0 elsewhere."""
    pr = check_probability_vector(probs, "probs", min_length=1)
    target = float(p)
    if not 0.0 <= target <= 1.0:
        raise ValueError("target percentage must lie in [0, 1]")
    n = pr.shape[0]
    m = min(round_half_up(target * n), n)
    labels = np.zeros(n, dtype=np.int64)
    if m > 0:
        labels[np.argsort(-pr, kind="stable")[:m]] = 1
    return labels


def weseg_percentage(probs, threshold: float) -> float:
    """Fraction of instances whose probability is strictly above the threshold."""
    pr = check_probability_vector(probs, "probs", min_length=1)
    if not 0.0 < float(threshold) < 1.0:
        raise ValueError("threshold must lie strictly inside (0, 1)")
    return float(np.mean(pr > threshold))


def forward(bag, model: MilModel) -> Prediction:
    """Score a bag with the model's pooling method.

    The estimate is always a value in [0, 1]; attention weights are recorded
    for abmil and clam.
    """
    logits, probs = instance_forward(bag, model)
    attention = None
    if model.method == "meanpool":
        estimate = mean_pool(probs)
    elif model.method in ATTENTION_METHODS:
        attention = attention_weights(bag, model)
        estimate = attention_pool(probs, attention)
    elif model.method == "weseg":
        estimate = weseg_percentage(probs, model.threshold)
    else:  # pragma: no cover - guarded by MilModel validation
        raise ValueError(f"unknown method {model.method!r}")
    return Prediction(
        bag_estimate=TumorPercentage(min(max(estimate, 0.0), 1.0)),
        instance_logits=logits,
        instance_probs=probs,
        attention=attention,
    )

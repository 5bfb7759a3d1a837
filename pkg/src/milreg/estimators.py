"""sklearn-style regressors that learn a per-patch scorer from slide-level
targets.

All three heads share the same instance scorer (linear map plus sigmoid) and
minimize the squared error between the pooled slide estimate and the target
with Adam, one bag per step. Gradients are analytic, written out below in
:func:`bag_loss_and_gradients`, and are checked against central finite
differences in the test suite.

Targets are handled in raw percentage space at the API boundary: fit() applies
the configured uniform noise (training targets only) and root amplification
internally, and predict() returns de-amplified raw-space percentages.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .bags import Bag, Prediction, make_bag
from .model_selection import early_stop_check
from .optim import Adam
from .pooling import MilModel, forward, sigmoid, softmax
from .targets import AmplifySpec, NoiseSpec, amplify, deamplify, inject_noise
from .validation import check_feature_matrix, round_half_up

__all__ = [
    "bag_loss",
    "bag_loss_and_gradients",
    "MeanPoolRegressor",
    "AttentionMilRegressor",
    "ClamRegressor",
    "ESTIMATORS",
    "make_estimator",
    "save_checkpoint",
    "load_checkpoint",
]


def _forward_state(X: np.ndarray, model: MilModel, y: float | None = None) -> dict:
    """One bag's forward pass; keeps every intermediate the backward needs."""
    params = model.params
    state: dict = {"X": X}
    z = X @ params["w"] + params["b"][0]
    p = sigmoid(z)
    n = X.shape[0]
    state["z"] = z
    state["p"] = p
    if model.method == "meanpool":
        a = np.full(n, 1.0 / n)
    else:
        t = np.tanh(X @ params["V"].T + params["c"])
        s = t @ params["u"]
        a = softmax(s)
        state["t"] = t
    state["a"] = a
    state["estimate"] = float(a @ p)
    if y is None:
        return state
    diff = state["estimate"] - y
    loss = diff * diff
    state["err"] = 2.0 * diff
    if model.method == "clam":
        k_eff = min(model.clam_k, n // 2)
        state["k_eff"] = k_eff
        if k_eff >= 1:
            top = np.argsort(-a, kind="stable")[:k_eff]
            bottom = np.argsort(a, kind="stable")[:k_eff]
            inst = np.concatenate([np.logaddexp(0.0, -z[top]), np.logaddexp(0.0, z[bottom])])
            loss += model.clam_weight * float(inst.mean())
            state["top"] = top
            state["bottom"] = bottom
    state["loss"] = float(loss)
    return state


def bag_loss(features, target: float, model: MilModel) -> float:
    """Training objective for one bag: squared error of the pooled estimate,
    plus the weighted pseudo-label term for clam."""
    X = check_feature_matrix(features, "features")
    return _forward_state(X, model, float(target))["loss"]


def bag_loss_and_gradients(features, target: float, model: MilModel) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and its analytic gradient for every model parameter.

    Derivation, with z the instance logits, p = sigmoid(z), a the pooling
    weights and yhat = a.p:
      dL/dz_i = 2(yhat - y) a_i p_i (1 - p_i)            (bag term)
      dL/dw = X^T dL/dz,  dL/db = sum_i dL/dz_i
    and through the attention scorer s_i = u.tanh(V x_i + c):
      dL/ds = a * (g - a.g) with g_i = 2(yhat - y) p_i   (softmax Jacobian)
      dL/du = t^T dL/ds,  dL/dV = ((dL/ds u^T) * (1 - t^2))^T X
    The clam pseudo-label term adds lambda/(2k) (p_j - label_j) to dL/dz_j on
    the selected instances; its selection is treated as constant.
    """
    X = check_feature_matrix(features, "features")
    state = _forward_state(X, model, float(target))
    p, a, err = state["p"], state["a"], state["err"]
    dz = err * a * p * (1.0 - p)
    if model.method == "clam" and state.get("k_eff", 0) >= 1:
        scale = model.clam_weight / (2.0 * state["k_eff"])
        np.add.at(dz, state["top"], scale * (p[state["top"]] - 1.0))
        np.add.at(dz, state["bottom"], scale * p[state["bottom"]])
    grads = {"w": X.T @ dz, "b": np.array([dz.sum()])}
    if model.method != "meanpool":
        t, u = state["t"], model.params["u"]
        g = err * p
        ds = a * (g - float(a @ g))
        grads["u"] = t.T @ ds
        dpre = (ds[:, None] * u[None, :]) * (1.0 - t * t)
        grads["V"] = dpre.T @ X
        grads["c"] = dpre.sum(axis=0)
    return state["loss"], grads


def _as_bags(bags, y=None) -> tuple[list[Bag], np.ndarray]:
    """Accept a list of Bags or raw (N, D) matrices; targets default to the
    bags' own."""
    wrapped: list[Bag] = []
    for i, item in enumerate(bags):
        if isinstance(item, Bag):
            wrapped.append(item)
        else:
            if y is None:
                raise ValueError("raw feature matrices need explicit targets y")
            wrapped.append(make_bag(f"bag_{i:05d}", f"case_{i:05d}", item, float(y[i])))
    if len(wrapped) == 0:
        raise ValueError("need at least one bag")
    dims = {bag.feature_dim for bag in wrapped}
    if len(dims) != 1:
        raise ValueError(f"bags disagree on feature dimension: {sorted(dims)}")
    targets = (
        np.asarray([bag.target.value for bag in wrapped])
        if y is None
        else np.asarray(y, dtype=np.float64)
    )
    if targets.shape[0] != len(wrapped):
        raise ValueError("need one target per bag")
    if np.any((targets < 0.0) | (targets > 1.0)) or not np.all(np.isfinite(targets)):
        raise ValueError("targets must lie in [0, 1]")
    return wrapped, targets


class _BaseMilRegressor(BaseEstimator, RegressorMixin):
    """Shared fit/predict machinery; subclasses pin the pooling method."""

    _method = ""

    def _model_kwargs(self) -> dict:
        return {}

    def _transform_train_targets(self, y: np.ndarray) -> np.ndarray:
        noisy = y
        if self.noise_level:
            seed = self.noise_seed if self.noise_seed is not None else [self.random_state, 101]
            noisy = inject_noise(
                y, NoiseSpec(level=self.noise_level, seed=0), rng=np.random.default_rng(seed)
            )
        if self.amplify_root:
            noisy = amplify(noisy, AmplifySpec(self.amplify_root))
        return noisy

    def _transform_eval_targets(self, y: np.ndarray) -> np.ndarray:
        # validation always uses clean targets; only the space may change
        if self.amplify_root:
            return amplify(y, AmplifySpec(self.amplify_root))
        return y

    def fit(self, bags, y=None, *, val_bags=None, val_y=None):
        """Train on bags; carve out a validation split unless one is given.

        Noise (if configured) perturbs the training targets only; validation
        targets stay clean, and early stopping monitors the validation MSE of
        the pooled estimate.
        """
        train, y_train = _as_bags(bags, y)
        if val_bags is not None:
            val, y_val = _as_bags(val_bags, val_y)
        elif len(train) >= 2:
            split_rng = np.random.default_rng([self.random_state, 11])
            n_val = max(1, round_half_up(self.validation_fraction * len(train)))
            val_idx = set(split_rng.choice(len(train), size=n_val, replace=False).tolist())
            val = [b for i, b in enumerate(train) if i in val_idx]
            y_val = y_train[sorted(val_idx)]
            train = [b for i, b in enumerate(train) if i not in val_idx]
            y_train = np.asarray([t for i, t in enumerate(y_train) if i not in val_idx])
        else:
            val, y_val = train, y_train

        y_train_model = self._transform_train_targets(y_train)
        y_val_model = self._transform_eval_targets(y_val)

        rng = np.random.default_rng([self.random_state, 0])
        model = MilModel.initialize(
            self._method, train[0].feature_dim, rng=rng, **self._model_kwargs()
        )
        optimizer = Adam(model.params, self.learning_rate, self.weight_decay)

        train_hist: list[float] = []
        val_hist: list[float] = []
        best_val = np.inf
        best_epoch = 0
        best_params = {k: v.copy() for k, v in model.params.items()}
        for epoch in range(1, self.max_epochs + 1):
            losses = []
            for i in rng.permutation(len(train)):
                loss, grads = bag_loss_and_gradients(
                    train[i].features, y_train_model[i], model
                )
                if not np.isfinite(loss):
                    raise RuntimeError(
                        f"training diverged at epoch {epoch}: non-finite loss {loss!r}"
                    )
                optimizer.step(grads)
                losses.append(loss)
            val_loss = float(
                np.mean(
                    [
                        (_forward_state(b.features, model)["estimate"] - t) ** 2
                        for b, t in zip(val, y_val_model)
                    ]
                )
            )
            if not np.isfinite(val_loss):
                raise RuntimeError(f"training diverged at epoch {epoch}: non-finite validation loss")
            train_hist.append(float(np.mean(losses)))
            val_hist.append(val_loss)
            if val_loss < best_val:
                best_val = val_loss
                best_epoch = epoch
                best_params = {k: v.copy() for k, v in model.params.items()}
            if early_stop_check(val_hist, self.patience, self.min_epochs):
                break
        model.params = best_params

        self.model_ = model
        self.history_ = {"train_loss": train_hist, "val_loss": val_hist}
        self.best_val_loss_ = float(best_val)
        self.best_epoch_ = best_epoch
        self.n_epochs_ = len(val_hist)
        self.feature_dim_ = model.feature_dim
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise NotFittedError(f"{type(self).__name__} must be fitted before use")

    def forward_bag(self, bag) -> Prediction:
        """Full per-bag output (logits, probs, attention, pooled estimate in
        model space)."""
        self._check_fitted()
        if not isinstance(bag, Bag):
            bag = make_bag("bag", "case", bag, 0.0)
        return forward(bag, self.model_)

    def predict(self, bags) -> np.ndarray:
        """Raw-space tumor percentages, one per bag (de-amplified if the model
        was trained on amplified targets)."""
        self._check_fitted()
        estimates = np.asarray(
            [
                _forward_state(
                    item.features if isinstance(item, Bag) else check_feature_matrix(item),
                    self.model_,
                )["estimate"]
                for item in bags
            ]
        )
        estimates = np.clip(estimates, 0.0, 1.0)
        if self.amplify_root:
            estimates = deamplify(estimates, AmplifySpec(self.amplify_root))
        return estimates


class MeanPoolRegressor(_BaseMilRegressor):
    """Slide estimate = arithmetic mean of per-patch probabilities."""

    _method = "meanpool"

    def __init__(
        self,
        learning_rate: float = 2e-4,
        weight_decay: float = 1e-5,
        min_epochs: int = 50,
        max_epochs: int = 200,
        patience: int = 20,
        noise_level: float = 0.0,
        noise_seed: int | None = None,
        amplify_root: int | None = None,
        validation_fraction: float = 0.15,
        random_state: int = 0,
    ):
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.min_epochs = min_epochs
        self.max_epochs = max_epochs
        self.patience = patience
        self.noise_level = noise_level
        self.noise_seed = noise_seed
        self.amplify_root = amplify_root
        self.validation_fraction = validation_fraction
        self.random_state = random_state


class AttentionMilRegressor(_BaseMilRegressor):
    """Slide estimate = attention-weighted mean of per-patch probabilities."""

    _method = "abmil"

    def __init__(
        self,
        attention_dim: int = 128,
        learning_rate: float = 2e-4,
        weight_decay: float = 1e-5,
        min_epochs: int = 50,
        max_epochs: int = 200,
        patience: int = 20,
        noise_level: float = 0.0,
        noise_seed: int | None = None,
        amplify_root: int | None = None,
        validation_fraction: float = 0.15,
        random_state: int = 0,
    ):
        self.attention_dim = attention_dim
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.min_epochs = min_epochs
        self.max_epochs = max_epochs
        self.patience = patience
        self.noise_level = noise_level
        self.noise_seed = noise_seed
        self.amplify_root = amplify_root
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _model_kwargs(self) -> dict:
        return {"attention_dim": self.attention_dim}

    def attention(self, bag) -> np.ndarray:
        """Pooling weights for one bag (nonnegative, sum to 1)."""
        return self.forward_bag(bag).attention


class ClamRegressor(AttentionMilRegressor):
    """Attention pooling plus a pseudo-label loss on the attention extremes.

    The instance_topk highest- and lowest-attention patches get pseudo-labels
    1 and 0; their mean BCE, weighted by instance_loss_weight, is added to the
    bag MSE. Bags too small for the configured k fall back to
    k = floor(N/2) (and skip the term entirely for N < 2).
    """

    _method = "clam"

    def __init__(
        self,
        attention_dim: int = 128,
        instance_topk: int = 8,
        instance_loss_weight: float = 0.3,
        learning_rate: float = 2e-4,
        weight_decay: float = 1e-5,
        min_epochs: int = 50,
        max_epochs: int = 200,
        patience: int = 20,
        noise_level: float = 0.0,
        noise_seed: int | None = None,
        amplify_root: int | None = None,
        validation_fraction: float = 0.15,
        random_state: int = 0,
    ):
        super().__init__(
            attention_dim=attention_dim,
            learning_rate=learning_rate,
            weight_decay=weight_decay,
            min_epochs=min_epochs,
            max_epochs=max_epochs,
            patience=patience,
            noise_level=noise_level,
            noise_seed=noise_seed,
            amplify_root=amplify_root,
            validation_fraction=validation_fraction,
            random_state=random_state,
        )
        self.instance_topk = instance_topk
        self.instance_loss_weight = instance_loss_weight

    def _model_kwargs(self) -> dict:
        return {
            "attention_dim": self.attention_dim,
            "clam_k": self.instance_topk,
            "clam_weight": self.instance_loss_weight,
        }


ESTIMATORS = {
    "meanpool": MeanPoolRegressor,
    "abmil": AttentionMilRegressor,
    "clam": ClamRegressor,
}


def make_estimator(method: str, **params) -> _BaseMilRegressor:
    """Instantiate a two-step regressor by pooling-method name."""
    if method not in ESTIMATORS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(ESTIMATORS)}")
    return ESTIMATORS[method](**params)


def save_checkpoint(estimator: _BaseMilRegressor, path: str | Path) -> None:
    """Write the fitted parameters as an .npz: one array per parameter plus a
    JSON metadata entry (method, dims, clam settings, threshold, amplification).
    """
    estimator._check_fitted()
    model = estimator.model_
    meta = {
        "method": model.method,
        "feature_dim": model.feature_dim,
        "attention_dim": model.attention_dim,
        "clam_k": model.clam_k,
        "clam_weight": model.clam_weight,
        "threshold": model.threshold,
        "amplify_root": estimator.amplify_root,
    }
    np.savez(path, __meta__=np.array(json.dumps(meta)), **model.params)


def load_checkpoint(path: str | Path):
    """Rebuild a fitted estimator from :func:`save_checkpoint` output."""
    with np.load(path, allow_pickle=False) as payload:
        meta = json.loads(str(payload["__meta__"]))
        params = {k: payload[k].copy() for k in payload.files if k != "__meta__"}
    if meta["method"] == "weseg":
        from .weseg import load_weseg_checkpoint

        return load_weseg_checkpoint(path)
    estimator = make_estimator(meta["method"], amplify_root=meta["amplify_root"])
    if meta["method"] in ("abmil", "clam"):
        estimator.attention_dim = meta["attention_dim"]
    if meta["method"] == "clam":
        estimator.instance_topk = meta["clam_k"]
        estimator.instance_loss_weight = meta["clam_weight"]
    estimator.model_ = MilModel(
        method=meta["method"],
        params=params,
        attention_dim=meta["attention_dim"],
        clam_k=meta["clam_k"],
        clam_weight=meta["clam_weight"],
        threshold=meta["threshold"],
    )
    estimator.feature_dim_ = meta["feature_dim"]
    return estimator

"""End-to-end weakly supervised segmentation via recursive proxy labels.

Each training step samples one slide and a handful of its tiles, scores the
tiles with the current model, marks the top target-percent of them as tumor
(proxy labels), and descends the binary cross-entropy on augmented copies.
Slide percentages are derived afterwards by thresholding patch probabilities
with a decision threshold optimized on validation data.

The trainable encoder is a small convolutional network (3 conv blocks with
2x2 mean pooling, global average pool, linear head) written in plain numpy
with analytic backprop; the tests check its gradients by finite differences.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .imaging import hsv_to_rgb, rgb_to_hsv
from .model_selection import early_stop_check, optimize_threshold
from .optim import Adam
from .pooling import sigmoid, weseg_percentage, weseg_proxy_labels
from .targets import AmplifySpec, NoiseSpec, amplify, deamplify, inject_noise
from .validation import round_half_up

__all__ = ["SmallConvNet", "WesegModel", "augment_tiles", "load_weseg_checkpoint"]


def _conv_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 same-padding convolution as nine shifted matmuls.

    x: (B, H, W, Cin), W: (3, 3, Cin, Cout).
    """
    B, H, Wd, _ = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.broadcast_to(b, (B, H, Wd, W.shape[3])).copy()
    for di in range(3):
        for dj in range(3):
            out += xp[:, di : di + H, dj : dj + Wd, :] @ W[di, dj]
    return out


def _conv_backward(x: np.ndarray, W: np.ndarray, dout: np.ndarray):
    B, H, Wd, _ = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    dW = np.zeros_like(W)
    dxp = np.zeros_like(xp)
    for di in range(3):
        for dj in range(3):
            window = xp[:, di : di + H, dj : dj + Wd, :]
            dW[di, dj] = np.tensordot(window, dout, axes=([0, 1, 2], [0, 1, 2]))
            dxp[:, di : di + H, dj : dj + Wd, :] += dout @ W[di, dj].T
    db = dout.sum(axis=(0, 1, 2))
    return dxp[:, 1:-1, 1:-1, :], dW, db


def _pool2_forward(x: np.ndarray) -> np.ndarray:
    B, H, W, C = x.shape
    h2, w2 = H // 2, W // 2
    trimmed = x[:, : h2 * 2, : w2 * 2, :]
    return trimmed.reshape(B, h2, 2, w2, 2, C).mean(axis=(2, 4))


def _pool2_backward(dout: np.ndarray, in_shape) -> np.ndarray:
    B, H, W, C = in_shape
    dx = np.zeros(in_shape)
    up = np.repeat(np.repeat(dout, 2, axis=1), 2, axis=2) / 4.0
    dx[:, : up.shape[1], : up.shape[2], :] = up
    return dx


class SmallConvNet:
    """3 conv blocks + global average pool + linear head, producing one logit
    per patch. Input patches must be at least 4x4."""

    def __init__(self, channels=(8, 16, 32), seed: int = 0):
        self.channels = tuple(channels)
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        c_in = 3
        for i, c_out in enumerate(self.channels, start=1):
            self.params[f"W{i}"] = rng.normal(0.0, np.sqrt(2.0 / (9 * c_in)), size=(3, 3, c_in, c_out))
            self.params[f"b{i}"] = np.zeros(c_out)
            c_in = c_out
        self.params["head_w"] = rng.normal(0.0, 1.0 / np.sqrt(c_in), size=c_in)
        self.params["head_b"] = np.zeros(1)

    def forward(self, patches: np.ndarray, want_cache: bool = False):
        """Logits for a patch stack (B, h, w, 3) with values in [0, 1]."""
        x = np.asarray(patches, dtype=np.float64)
        if x.ndim != 4 or x.shape[3] != 3:
            raise ValueError("expected patches with shape (B, h, w, 3)")
        if x.max() > 1.0:
            x = x / 255.0
        cache: list[dict] = []
        for i in range(1, len(self.channels) + 1):
            pre = _conv_forward(x, self.params[f"W{i}"], self.params[f"b{i}"])
            act = np.maximum(pre, 0.0)
            layer = {"x": x, "pre": pre, "act": act}
            if i < len(self.channels):
                out = _pool2_forward(act)
            else:
                out = act.mean(axis=(1, 2))  # global average pool
            layer["out_shape"] = act.shape
            cache.append(layer)
            x = out
        feats = x
        logits = feats @ self.params["head_w"] + self.params["head_b"][0]
        if not want_cache:
            return logits
        return logits, {"layers": cache, "feats": feats}

    def backward(self, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {}
        feats = cache["feats"]
        grads["head_w"] = feats.T @ dlogits
        grads["head_b"] = np.array([dlogits.sum()])
        dx = np.outer(dlogits, self.params["head_w"])
        layers = cache["layers"]
        for i in range(len(self.channels), 0, -1):
            layer = layers[i - 1]
            if i < len(self.channels):
                dact = _pool2_backward(dx, layer["out_shape"])
            else:
                B, H, W, C = layer["out_shape"]
                dact = np.broadcast_to(dx[:, None, None, :], (B, H, W, C)) / (H * W)
            dpre = dact * (layer["pre"] > 0.0)
            dx, grads[f"W{i}"], grads[f"b{i}"] = _conv_backward(layer["x"], self.params[f"W{i}"], dpre)
        return grads


def augment_tiles(
    tiles: np.ndarray,
    rng: np.random.Generator,
    jitter: tuple[float, float, float, float] = (0.2, 0.2, 0.2, 0.05),
) -> np.ndarray:
    """Random horizontal/vertical flips plus color jitter per tile.

    jitter = (brightness, contrast, saturation, hue); hue is a fraction of the
    full 360-degree circle, the others are multiplicative half-ranges.
    """
    tiles = np.asarray(tiles, dtype=np.float64)
    if tiles.max() > 1.0:
        tiles = tiles / 255.0
    out = np.empty_like(tiles)
    b_j, c_j, s_j, h_j = jitter
    for i, tile in enumerate(tiles):
        if rng.random() < 0.5:
            tile = tile[:, ::-1]
        if rng.random() < 0.5:
            tile = tile[::-1]
        tile = tile * (1.0 + rng.uniform(-b_j, b_j))
        mean = tile.mean()
        tile = (tile - mean) * (1.0 + rng.uniform(-c_j, c_j)) + mean
        tile = np.clip(tile, 0.0, 1.0)
        h, s, v = rgb_to_hsv(tile)
        s = np.clip(s * (1.0 + rng.uniform(-s_j, s_j)), 0.0, 1.0)
        h = h + rng.uniform(-h_j, h_j) * 360.0
        out[i] = np.clip(hsv_to_rgb(h, s, v), 0.0, 1.0)
    return out


def _bce_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, logits) - logits * labels))


class WesegModel(BaseEstimator):
    """End-to-end proxy-label segmenter with a percentage read-out.

    fit() takes raw patch stacks (one (N, h, w, 3) array per slide) and their
    tumor-area targets; predict() thresholds patch probabilities with the
    validation-optimized threshold and returns the tumor fraction per slide.
    """

    def __init__(
        self,
        channels=(8, 16, 32),
        learning_rate: float = 5e-4,
        weight_decay: float = 1e-5,
        tiles_per_step: int = 30,
        max_epochs: int = 100,
        patience: int = 50,
        min_epochs: int = 1,
        augment: bool = True,
        jitter: tuple[float, float, float, float] = (0.2, 0.2, 0.2, 0.05),
        threshold_grid_step: float = 0.05,
        noise_level: float = 0.0,
        noise_seed: int | None = None,
        amplify_root: int | None = None,
        validation_fraction: float = 0.15,
        random_state: int = 0,
    ):
        self.channels = channels
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.tiles_per_step = tiles_per_step
        self.max_epochs = max_epochs
        self.patience = patience
        self.min_epochs = min_epochs
        self.augment = augment
        self.jitter = jitter
        self.threshold_grid_step = threshold_grid_step
        self.noise_level = noise_level
        self.noise_seed = noise_seed
        self.amplify_root = amplify_root
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _check_fitted(self) -> None:
        if not hasattr(self, "net_"):
            raise NotFittedError("WesegModel must be fitted before use")

    def _transform_targets(self, y: np.ndarray, train: bool) -> np.ndarray:
        out = np.asarray(y, dtype=np.float64)
        if train and self.noise_level:
            seed = self.noise_seed if self.noise_seed is not None else [self.random_state, 101]
            out = inject_noise(
                out, NoiseSpec(level=self.noise_level), rng=np.random.default_rng(seed)
            )
        if self.amplify_root:
            out = amplify(out, AmplifySpec(self.amplify_root))
        return out

    def _val_loss(self, slides, targets) -> float:
        losses = []
        for patches, target in zip(slides, targets):
            logits = self.net_.forward(patches)
            labels = weseg_proxy_labels(sigmoid(logits), target)
            losses.append(_bce_from_logits(logits, labels))
        return float(np.mean(losses))

    def fit(self, slides, y, *, val_slides=None, val_y=None):
        if len(slides) != len(y):
            raise ValueError("need one target per slide")
        slides = [np.asarray(s) for s in slides]
        keep = [i for i, s in enumerate(slides) if s.shape[0] >= 1]
        if len(keep) < len(slides):
            import warnings

            warnings.warn(f"skipping {len(slides) - len(keep)} slide(s) with no tiles")
            slides = [slides[i] for i in keep]
            y = [y[i] for i in keep]
        y = np.asarray(y, dtype=np.float64)
        if val_slides is None:
            split_rng = np.random.default_rng([self.random_state, 11])
            n_val = max(1, round_half_up(self.validation_fraction * len(slides)))
            val_idx = set(split_rng.choice(len(slides), size=n_val, replace=False).tolist())
            val_slides = [s for i, s in enumerate(slides) if i in val_idx]
            val_y = y[sorted(val_idx)]
            slides = [s for i, s in enumerate(slides) if i not in val_idx]
            y = np.asarray([t for i, t in enumerate(y) if i not in val_idx])
        elif val_y is None:
            raise ValueError("val_slides requires val_y")
        val_slides = [np.asarray(s) for s in val_slides]

        y_train = self._transform_targets(y, train=True)
        y_val = self._transform_targets(np.asarray(val_y, dtype=np.float64), train=False)

        rng = np.random.default_rng([self.random_state, 0])
        self.net_ = SmallConvNet(self.channels, seed=int(rng.integers(2**31)))
        optimizer = Adam(self.net_.params, self.learning_rate, self.weight_decay)

        train_hist: list[float] = []
        val_hist: list[float] = []
        best_val = np.inf
        best_epoch = 0
        best_params = {k: v.copy() for k, v in self.net_.params.items()}
        for epoch in range(1, self.max_epochs + 1):
            step_losses = []
            for i in rng.permutation(len(slides)):  # one slide per step
                patches = slides[i]
                n_tiles = min(self.tiles_per_step, patches.shape[0])
                idx = rng.choice(patches.shape[0], size=n_tiles, replace=False)
                tiles = patches[idx]
                probs = sigmoid(self.net_.forward(tiles))
                labels = weseg_proxy_labels(probs, y_train[i])
                train_tiles = (
                    augment_tiles(tiles, rng, self.jitter) if self.augment else tiles
                )
                logits, cache = self.net_.forward(train_tiles, want_cache=True)
                loss = _bce_from_logits(logits, labels)
                if not np.isfinite(loss):
                    raise RuntimeError(f"weseg training diverged at epoch {epoch}")
                dlogits = (sigmoid(logits) - labels) / labels.shape[0]
                optimizer.step(self.net_.backward(cache, dlogits))
                step_losses.append(loss)
            train_hist.append(float(np.mean(step_losses)))
            val_loss = self._val_loss(val_slides, y_val)
            val_hist.append(val_loss)
            if val_loss < best_val:
                best_val = val_loss
                best_epoch = epoch
                best_params = {k: v.copy() for k, v in self.net_.params.items()}
            if early_stop_check(val_hist, self.patience, self.min_epochs):
                break
        self.net_.params = best_params

        val_probs = [sigmoid(self.net_.forward(s)) for s in val_slides]
        self.threshold_ = optimize_threshold(val_probs, y_val, self.threshold_grid_step)
        self.history_ = {"train_loss": train_hist, "val_loss": val_hist}
        self.best_val_loss_ = float(best_val)
        self.best_epoch_ = best_epoch
        self.n_epochs_ = len(val_hist)
        return self

    def predict_instance_probs(self, patches) -> np.ndarray:
        """Per-patch tumor probabilities for one slide."""
        self._check_fitted()
        return sigmoid(self.net_.forward(np.asarray(patches)))

    def predict(self, slides) -> np.ndarray:
        """Raw-space tumor percentage per slide: fraction of patches above the
        fitted threshold, de-amplified if training used amplified targets."""
        self._check_fitted()
        estimates = np.asarray(
            [weseg_percentage(self.predict_instance_probs(s), self.threshold_) for s in slides]
        )
        if self.amplify_root:
            estimates = deamplify(estimates, AmplifySpec(self.amplify_root))
        return estimates


def save_weseg_checkpoint(model: WesegModel, path: str | Path) -> None:
    """Same .npz layout as the head checkpoints: parameter arrays plus a JSON
    metadata entry."""
    model._check_fitted()
    meta = {
        "method": "weseg",
        "channels": list(model.net_.channels),
        "threshold": model.threshold_,
        "amplify_root": model.amplify_root,
    }
    np.savez(path, __meta__=np.array(json.dumps(meta)), **model.net_.params)


def load_weseg_checkpoint(path: str | Path) -> WesegModel:
    with np.load(path, allow_pickle=False) as payload:
        meta = json.loads(str(payload["__meta__"]))
        params = {k: payload[k].copy() for k in payload.files if k != "__meta__"}
    model = WesegModel(channels=tuple(meta["channels"]), amplify_root=meta["amplify_root"])
    model.net_ = SmallConvNet(tuple(meta["channels"]))
    model.net_.params = params
    model.threshold_ = float(meta["threshold"])
    return model

"""Sequential phase estimator: a 2-layer recurrent net over shot sequences.

Shots are fed one at a time as one-hot vectors through two stacked gated
recurrent (GRU-style) cells; a linear head on the final hidden state gives
logits over the M candidate phases. Backpropagation through time is written
out by hand so gradients can be checked against finite differences.

The output head is zero-initialized, so an untrained model returns the
exact uniform posterior. Posteriors are floored at EPS before the log so
conformity scores stay finite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qsim import ConfigurationError

EPS = 1e-12

# (weight name, is input weight) per cell; input weights have shape (H, D_in).
_CELL_KEYS = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wc", "Uc", "bc")


@dataclass
class TrainConfig:
    """Online-training hyperparameters for the estimator."""

    lr: float = 1e-3
    l2: float = 1e-4
    decay: float = 0.1
    decay_every: int = 50
    dropout: float = 0.0
    ensemble: int = 1

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigurationError("learning rate must be >= 0")
        if not 0 < self.decay <= 1:
            raise ConfigurationError("decay must be in (0, 1]")
        if not 0 <= self.dropout < 1:
            raise ConfigurationError("dropout must be in [0, 1)")
        if self.ensemble < 1:
            raise ConfigurationError("ensemble size must be >= 1")

    def lr_at(self, t: int) -> float:
        return self.lr * self.decay ** (t // self.decay_every)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


class SequentialPhaseEstimator:
    """Recurrent posterior model p(x | shots) over M grid phases.

    Parameters live in a flat dict of numpy arrays. fit() performs repeated
    single-sample gradient steps over a dataset; train_step() is the online
    update used inside the sensing loop.
    """

    def __init__(
        self,
        input_dim: int,
        n_levels: int,
        hidden_size: int = 64,
        dropout: float = 0.0,
        seed: int = 0,
    ):
        if input_dim < 1 or n_levels < 2 or hidden_size < 1:
            raise ConfigurationError("bad estimator dimensions")
        self.input_dim = input_dim
        self.n_levels = n_levels
        self.hidden = hidden_size
        self.dropout = dropout
        self.seed = seed
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(hidden_size)
        self.params: dict[str, np.ndarray] = {}
        for layer, d_in in enumerate((input_dim, hidden_size)):
            for key in _CELL_KEYS:
                shape = (
                    (hidden_size, d_in)
                    if key.startswith("W")
                    else (hidden_size, hidden_size)
                    if key.startswith("U")
                    else (hidden_size,)
                )
                self.params[f"{key}{layer}"] = rng.uniform(-bound, bound, size=shape)
        # Zero head => exactly uniform posterior before any training.
        self.params["Wo"] = np.zeros((n_levels, hidden_size))
        self.params["bo"] = np.zeros(n_levels)
        self._key_order = sorted(self.params)

    # -- sklearn-flavored config surface -------------------------------------
    def get_params(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "n_levels": self.n_levels,
            "hidden_size": self.hidden,
            "dropout": self.dropout,
            "seed": self.seed,
        }

    def get_weights(self) -> np.ndarray:
        return np.concatenate([self.params[k].reshape(-1) for k in self._key_order])

    def set_weights(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        total = sum(v.size for v in self.params.values())
        if flat.size != total:
            raise ConfigurationError(
                f"checkpoint has {flat.size} values, model needs {total}"
            )
        pos = 0
        for k in self._key_order:
            size = self.params[k].size
            self.params[k] = flat[pos : pos + size].reshape(self.params[k].shape).copy()
            pos += size

    def clone(self) -> "SequentialPhaseEstimator":
        other = SequentialPhaseEstimator(**self.get_params())
        other.set_weights(self.get_weights())
        return other

    # -- forward / backward ---------------------------------------------------
    def _cell(self, layer: int, x: np.ndarray, h: np.ndarray):
        p = self.params
        z = _sigmoid(p[f"Wz{layer}"] @ x + p[f"Uz{layer}"] @ h + p[f"bz{layer}"])
        r = _sigmoid(p[f"Wr{layer}"] @ x + p[f"Ur{layer}"] @ h + p[f"br{layer}"])
        rh = r * h
        c = np.tanh(p[f"Wc{layer}"] @ x + p[f"Uc{layer}"] @ rh + p[f"bc{layer}"])
        h_new = (1 - z) * h + z * c
        return h_new, {"x": x, "h": h, "z": z, "r": r, "rh": rh, "c": c}

    def _run(self, shots: np.ndarray, masks=None):
        """Forward over the shot sequence; returns (logits, caches, h2_out)."""
        shots = np.asarray(shots, dtype=np.int64)
        if shots.ndim != 1 or len(shots) == 0:
            raise ConfigurationError("shots must be a nonempty 1-d integer array")
        if np.any(shots < 0) or np.any(shots >= self.input_dim):
            raise ConfigurationError("shot outcome out of range for input dimension")
        h = [np.zeros(self.hidden), np.zeros(self.hidden)]
        caches = []
        for s in shots:
            x = np.zeros(self.input_dim)
            x[s] = 1.0
            step = []
            for layer in (0, 1):
                h[layer], cache = self._cell(layer, x, h[layer])
                x = h[layer]
                if masks is not None:
                    x = x * masks[layer]
                step.append(cache)
            caches.append(step)
        h2_out = x  # final (possibly masked) top-layer output
        logits = self.params["Wo"] @ h2_out + self.params["bo"]
        return logits, caches, h2_out

    def _make_masks(self, rng: np.random.Generator):
        if self.dropout <= 0:
            return None
        keep = 1.0 - self.dropout
        return [
            (rng.random(self.hidden) < keep).astype(float) / keep for _ in range(2)
        ]

    def forward(
        self, shots: np.ndarray, rng: np.random.Generator | None = None
    ) -> np.ndarray:
        """Posterior over the M phases; stochastic only if dropout is active."""
        masks = self._make_masks(rng) if (self.dropout > 0 and rng is not None) else None
        logits, _, _ = self._run(shots, masks)
        post = np.maximum(_softmax(logits), EPS)
        return post / post.sum()

    def score(self, shots: np.ndarray, x_index: int) -> float:
        """Conformity score -log p(x_index | shots); finite by the floor."""
        return float(-np.log(self.forward(shots)[x_index]))

    def scores(self, shots: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        return -np.log(self.forward(shots, rng=rng))

    def nll(self, shots: np.ndarray, x_index: int) -> float:
        """Cross-entropy of the true label (no floor); target of train_step."""
        logits, _, _ = self._run(shots)
        return float(-np.log(_softmax(logits)[x_index]))

    def loss_grads(
        self, shots: np.ndarray, x_index: int, masks=None
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Cross-entropy loss and its gradients via BPTT."""
        logits, caches, h2_out = self._run(shots, masks)
        probs = _softmax(logits)
        loss = float(-np.log(max(probs[x_index], 1e-300)))
        d_logits = probs.copy()
        d_logits[x_index] -= 1.0

        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        grads["Wo"] = np.outer(d_logits, h2_out)
        grads["bo"] = d_logits.copy()

        dh = [np.zeros(self.hidden), np.zeros(self.hidden)]
        d_top = self.params["Wo"].T @ d_logits
        if masks is not None:
            d_top = d_top * masks[1]
        dh[1] += d_top
        for step in reversed(caches):
            dx_down = np.zeros(self.hidden)
            for layer in (1, 0):
                c_ = step[layer]
                d = dh[layer] + (dx_down if layer == 0 else 0.0)
                z, r, c, h_prev, x = c_["z"], c_["r"], c_["c"], c_["h"], c_["x"]
                dz = d * (c - h_prev)
                dc = d * z
                dh_prev = d * (1 - z)
                dac = dc * (1 - c**2)
                drh = self.params[f"Uc{layer}"].T @ dac
                dr = drh * h_prev
                dh_prev = dh_prev + drh * r
                dar = dr * r * (1 - r)
                daz = dz * z * (1 - z)
                grads[f"Wz{layer}"] += np.outer(daz, x)
                grads[f"Uz{layer}"] += np.outer(daz, h_prev)
                grads[f"bz{layer}"] += daz
                grads[f"Wr{layer}"] += np.outer(dar, x)
                grads[f"Ur{layer}"] += np.outer(dar, h_prev)
                grads[f"br{layer}"] += dar
                grads[f"Wc{layer}"] += np.outer(dac, x)
                grads[f"Uc{layer}"] += np.outer(dac, c_["rh"])
                grads[f"bc{layer}"] += dac
                dh_prev = (
                    dh_prev
                    + self.params[f"Uz{layer}"].T @ daz
                    + self.params[f"Ur{layer}"].T @ dar
                )
                dx = (
                    self.params[f"Wz{layer}"].T @ daz
                    + self.params[f"Wr{layer}"].T @ dar
                    + self.params[f"Wc{layer}"].T @ dac
                )
                dh[layer] = dh_prev
                if layer == 1:
                    dx_down = dx
                    if masks is not None:
                        dx_down = dx_down * masks[0]
                # layer 0 input is the one-hot shot; its gradient is dropped
        return loss, grads

    # -- training --------------------------------------------------------------
    def train_step(
        self,
        shots: np.ndarray,
        x_index: int,
        cfg: TrainConfig,
        t: int = 0,
        rng: np.random.Generator | None = None,
    ) -> bool:
        """One gradient step on -log p(x_index | shots) + L2; returns False if
        the step was skipped because of a non-finite gradient."""
        masks = self._make_masks(rng) if (self.dropout > 0 and rng is not None) else None
        _, grads = self.loss_grads(shots, x_index, masks)
        lr = cfg.lr_at(t)
        if lr == 0.0:
            return True
        for k in self._key_order:
            g = grads[k] + cfg.l2 * self.params[k]
            if not np.all(np.isfinite(g)):
                return False
        for k in self._key_order:
            self.params[k] = self.params[k] - lr * (grads[k] + cfg.l2 * self.params[k])
        return True

    def fit(
        self,
        dataset: list[tuple[np.ndarray, int]],
        cfg: TrainConfig,
        epochs: int,
        rng: np.random.Generator | None = None,
    ) -> "SequentialPhaseEstimator":
        """Repeated single-sample sweeps over the dataset, in order."""
        if not dataset:
            raise ConfigurationError("pretraining dataset is empty")
        for _ in range(epochs):
            for shots, x_index in dataset:
                self.train_step(shots, x_index, cfg, t=0, rng=rng)
        return self


def pretrain(
    model: SequentialPhaseEstimator,
    dataset: list[tuple[np.ndarray, int]],
    cfg: TrainConfig,
    epochs: int,
    rng: np.random.Generator | None = None,
) -> SequentialPhaseEstimator:
    """Functional alias of fit(); mutates and returns the model."""
    return model.fit(dataset, cfg, epochs, rng=rng)


def forward_bayesian(
    models: "SequentialPhaseEstimator | list[SequentialPhaseEstimator]",
    shots: np.ndarray,
    passes: int = 1,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Averaged posterior over ensemble members or stochastic dropout passes."""
    if isinstance(models, SequentialPhaseEstimator):
        members = [models]
    else:
        members = list(models)
    if not members:
        raise ConfigurationError("empty ensemble")
    posts = []
    for m in members:
        if m.dropout > 0 and passes >= 1:
            for _ in range(passes):
                posts.append(m.forward(shots, rng=rng))
        else:
            posts.append(m.forward(shots))
    mean = np.mean(posts, axis=0)
    mean = np.maximum(mean, EPS)
    return mean / mean.sum()

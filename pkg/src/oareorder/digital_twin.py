"""Single-hidden-layer surrogate of the link ("digital twin").

Inputs are min-max normalized gains and tilts laid out as
``[g_1..g_N, t_1..t_N]``; outputs are Q-factors (dB) of the loaded batches,
trained in raw dB with Adam on a squared-error loss.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .link_model import ChannelPlan, LinkSpec, OAConfig, Oracle, QVector, quantize

log = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "linear")


def sample_vectors(link: LinkSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """(n, 2*n_oa) uniform draws within bounds, quantized to 0.1 dB."""
    if n < 1:
        raise ValueError("n must be >= 1")
    b = link.bounds_matrix()
    raw = rng.uniform(b[:, 0], b[:, 1], size=(n, b.shape[0]))
    # quantizing can round just past a bound that is not itself on the grid
    return np.clip(quantize(raw), b[:, 0], b[:, 1])


def sample_configs(link: LinkSpec, n: int, rng: np.random.Generator) -> list[OAConfig]:
    return [OAConfig.from_vector(v) for v in sample_vectors(link, n, rng)]


def normalize(values, bounds: np.ndarray) -> np.ndarray:
    """Min-max scale each parameter to [0, 1]; zero-width bounds map to 0.5.

    ``values`` is an OAConfig, a single vector or an (n, 2*n_oa) matrix.
    """
    if isinstance(values, OAConfig):
        values = values.vector()
    values = np.asarray(values, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    width = hi - lo
    safe = np.where(width > 0, width, 1.0)
    return np.where(width > 0, (values - lo) / safe, 0.5)


def denormalize(features, bounds: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    return lo + features * (hi - lo)


@dataclass
class Dataset:
    features: np.ndarray  # (n, 2*n_oa), normalized
    targets: np.ndarray  # (n, n_outputs), q in dB
    batches: list[int]  # batch id of each target column
    bounds: np.ndarray  # (2*n_oa, 2)
    n_train: int = 700

    def __post_init__(self):
        if self.features.shape[0] != self.targets.shape[0]:
            raise ValueError("features and targets must have the same number of rows")
        if not 0 < self.n_train < self.features.shape[0]:
            raise ValueError("n_train must leave at least one row on each side of the split")

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.features[: self.n_train], self.targets[: self.n_train]

    @property
    def validation(self) -> tuple[np.ndarray, np.ndarray]:
        return self.features[self.n_train:], self.targets[self.n_train:]

    def to_csv(self, path) -> None:
        n_oa = self.features.shape[1] // 2
        header = [f"g{i + 1}" for i in range(n_oa)] + [f"t{i + 1}" for i in range(n_oa)]
        header += [f"q_batch{b}_db" for b in self.batches]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for x, y in zip(self.features, self.targets):
                w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])

    @classmethod
    def from_csv(cls, path, bounds: np.ndarray, n_train: int = 700) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        n_feat = sum(1 for h in header if not h.startswith("q_"))
        batches = [int(h[len("q_batch"):-len("_db")]) for h in header[n_feat:]]
        return cls(body[:, :n_feat], body[:, n_feat:], batches, np.asarray(bounds, dtype=float), n_train)


def build_dataset(link: LinkSpec, plan: ChannelPlan, n: int = 1000, rng: np.random.Generator | None = None,
                  train_fraction: float = 0.7) -> Dataset:
    """Sample configs, label them with the oracle and shuffle into a train/validation split."""
    rng = rng or np.random.default_rng()
    vecs = sample_vectors(link, n, rng)
    q = Oracle(link, plan).q_many(vecs)[:, plan.loaded]
    perm = rng.permutation(n)
    bounds = link.bounds_matrix()
    return Dataset(normalize(vecs[perm], bounds), q[perm], plan.loaded, bounds,
                   n_train=int(round(train_fraction * n)))


@dataclass
class MlpModel:
    w1: np.ndarray  # (n_in, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H, n_out)
    b2: np.ndarray  # (n_out,)
    bounds: np.ndarray  # (n_in, 2)
    batches: list[int]
    n_batches: int = 6
    activation: str = "tanh"
    meta: dict = field(default_factory=dict)

    PARAMS = ("w1", "b1", "w2", "b2")

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def hidden(self) -> int:
        return self.b1.size

    def _act(self, z):
        return np.tanh(z) if self.activation == "tanh" else z

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Raw network output for normalized inputs, (n, n_out)."""
        # einsum without BLAS: a row's output does not depend on the batch it is in
        hidden = self._act(np.einsum("ni,ih->nh", x, self.w1) + self.b1)
        return np.einsum("nh,ho->no", hidden, self.w2) + self.b2

    def q_many(self, vectors: np.ndarray) -> np.ndarray:
        """Predicted Q (dB) per batch for raw config vectors; NaN for unmodelled batches."""
        vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
        y = self.forward(normalize(vectors, self.bounds))
        out = np.full((vectors.shape[0], self.n_batches), np.nan)
        out[:, self.batches] = y
        return out

    def __call__(self, config: OAConfig) -> QVector:
        return predict(self, config)

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.PARAMS}

    def copy(self) -> "MlpModel":
        return MlpModel(**{k: v.copy() for k, v in self.params().items()}, bounds=self.bounds.copy(),
                        batches=list(self.batches), n_batches=self.n_batches,
                        activation=self.activation, meta=dict(self.meta))

    def save(self, path) -> None:
        doc = {
            "format": "oareorder-mlp/1",
            "activation": self.activation,
            "n_batches": self.n_batches,
            "batches": list(self.batches),
            "bounds": self.bounds.tolist(),
            "meta": self.meta,
            "params": {k: {"shape": list(v.shape), "values": v.ravel().tolist()}
                       for k, v in self.params().items()},
        }
        Path(path).write_text(json.dumps(doc, indent=1))

    @classmethod
    def load(cls, path) -> "MlpModel":
        doc = json.loads(Path(path).read_text())
        params = {k: np.array(p["values"], dtype=float).reshape(p["shape"]) for k, p in doc["params"].items()}
        return cls(**params, bounds=np.array(doc["bounds"], dtype=float), batches=doc["batches"],
                   n_batches=doc["n_batches"], activation=doc["activation"], meta=doc.get("meta", {}))


def init_model(n_in: int, hidden: int, n_out: int, bounds: np.ndarray, batches: Sequence[int],
               rng: np.random.Generator, n_batches: int = 6, activation: str = "tanh") -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    def glorot(fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_in, fan_out))

    return MlpModel(glorot(n_in, hidden), np.zeros(hidden), glorot(hidden, n_out), np.zeros(n_out),
                    np.asarray(bounds, dtype=float), list(batches), n_batches, activation)


def predict(model: MlpModel, config: OAConfig) -> QVector:
    return QVector(model.q_many(config.vector())[0])


def loss_and_grads(model: MlpModel, x: np.ndarray, y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Per-sample summed squared error, averaged over samples, and its gradients."""
    n = x.shape[0]
    z = x @ model.w1 + model.b1
    a = model._act(z)
    r = a @ model.w2 + model.b2 - y
    loss = float(np.sum(r * r) / n)
    d_out = 2.0 * r / n
    d_a = d_out @ model.w2.T
    d_z = d_a * (1.0 - a * a) if model.activation == "tanh" else d_a
    return loss, {
        "w1": x.T @ d_z,
        "b1": d_z.sum(axis=0),
        "w2": a.T @ d_out,
        "b2": d_out.sum(axis=0),
    }


def grad_check(model: MlpModel, x: np.ndarray, y: np.ndarray, step: float = 1e-5) -> float:
    """Max relative error between backprop and central finite differences over all parameters."""
    _, grads = loss_and_grads(model, x, y)
    worst = 0.0
    for name, arr in model.params().items():
        g_bp = grads[name]
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp, _ = loss_and_grads(model, x, y)
            flat[i] = orig - step
            lm, _ = loss_and_grads(model, x, y)
            flat[i] = orig
            g_fd = (lp - lm) / (2 * step)
            gb = g_bp.reshape(-1)[i]
            worst = max(worst, abs(gb - g_fd) / max(1e-8, abs(gb) + abs(g_fd)))
    return worst


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 2000
    batch_size: int = 32
    patience: int = 100
    seed: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValueError("learning_rate and epsilon must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1 or self.hidden < 1:
            raise ValueError("patience, max_epochs, batch_size and hidden must be >= 1")


@dataclass(frozen=True)
class ValidationReport:
    train_mse: float
    val_mse: float
    val_rmse_db: float
    val_max_abs_err_db: float
    best_epoch: int
    epochs_run: int

    def to_dict(self) -> dict:
        return asdict(self)


def _mse(model: MlpModel, x, y) -> float:
    r = model.forward(x) - y
    return float(np.mean(r * r))


def train(dataset: Dataset, cfg: TrainConfig = TrainConfig(), n_batches: int | None = None) -> tuple[MlpModel, ValidationReport]:
    """Minibatch Adam; returns the weights with the lowest validation MSE seen."""
    rng = np.random.default_rng(cfg.seed)
    x_tr, y_tr = dataset.train
    x_va, y_va = dataset.validation
    n_batches = n_batches if n_batches is not None else max(dataset.batches) + 1
    model = init_model(x_tr.shape[1], cfg.hidden, y_tr.shape[1], dataset.bounds, dataset.batches, rng,
                       n_batches=n_batches, activation=cfg.activation)
    m = {k: np.zeros_like(v) for k, v in model.params().items()}
    v = {k: np.zeros_like(p) for k, p in model.params().items()}
    t = 0
    best, best_val, best_epoch, stale = model.copy(), np.inf, 0, 0
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(x_tr.shape[0])
        for start in range(0, perm.size, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(model, x_tr[idx], y_tr[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}, step {t}")
            t += 1
            c1 = 1 - cfg.beta1 ** t
            c2 = 1 - cfg.beta2 ** t
            for k, p in model.params().items():
                g = grads[k]
                m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * g
                v[k] = cfg.beta2 * v[k] + (1 - cfg.beta2) * g * g
                p -= cfg.learning_rate * (m[k] / c1) / (np.sqrt(v[k] / c2) + cfg.epsilon)
        val = _mse(model, x_va, y_va)
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite validation loss at epoch {epoch}")
        if val < best_val:
            best, best_val, best_epoch, stale = model.copy(), val, epoch, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    err = best.forward(x_va) - y_va
    report = ValidationReport(
        train_mse=_mse(best, x_tr, y_tr),
        val_mse=float(best_val),
        val_rmse_db=float(np.sqrt(best_val)),
        val_max_abs_err_db=float(np.max(np.abs(err))),
        best_epoch=best_epoch,
        epochs_run=epoch,
    )
    best.meta = {"train_config": asdict(cfg), "report": report.to_dict()}
    log.info("trained surrogate: best epoch %d of %d, val RMSE %.4f dB", best_epoch, epoch, report.val_rmse_db)
    return best, report

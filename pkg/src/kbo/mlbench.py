"""Shallow-network classification benchmark: a softmax(ReLU(Wx+b)) net trained
either by minibatch gradient descent or gradient-free by the collision
dynamics, plus IDX-format ingestion and a synthetic blob dataset.

The gradient-free trainer treats the flattened (W, b) vector as a point in
R^(kp+k) and only ever sees loss values, never gradients.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .core import (
    DRIVER_STREAM,
    INIT_STREAM,
    ConfigurationError,
    KboConfig,
    RngStream,
    as_generator,
    checked_energies,
)
from .dynamics import CollisionParams
from .estimators import consensus_from_energies
from .objectives import SampleAverageObjective, sample_grad
from .solver import _nanbu_sweep, _reduction_count, _select_partners, spread

PROB_FLOOR = 1e-12


class TrainingDiverged(RuntimeError):
    """Raised when a trainer hits a non-finite loss; carries the accuracy
    trace collected so far."""

    def __init__(self, message, accuracy=None):
        super().__init__(message)
        self.accuracy = accuracy


# ---------------------------------------------------------------------------
# Network parameters and forward pass
# ---------------------------------------------------------------------------


@dataclass
class ShallowNetParams:
    """Weight matrix (k x p) and bias (k,) of the one-layer softmax/ReLU net,
    with an exact flatten/unflatten round trip to R^(kp+k)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ConfigurationError("weights must be (k, p) with a length-k bias")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    @classmethod
    def unflatten(cls, vec: np.ndarray, n_classes: int, n_features: int) -> "ShallowNetParams":
        vec = np.asarray(vec, dtype=float)
        split = n_classes * n_features
        if vec.shape != (split + n_classes,):
            raise ConfigurationError(
                f"expected a flat vector of length {split + n_classes}, got {vec.shape}"
            )
        return cls(vec[:split].reshape(n_classes, n_features).copy(), vec[split:].copy())


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: ShallowNetParams, x: np.ndarray) -> np.ndarray:
    """Class probabilities softmax(ReLU(Wx+b)) for one sample (p,) or a batch
    (n, p); rows are nonnegative and sum to one."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    z = np.atleast_2d(x) @ params.weights.T + params.bias
    probs = _softmax(np.maximum(z, 0.0))
    return probs[0] if single else probs


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-probability of the true labels, with probabilities
    floored at 1e-12 before the log."""
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    labels = np.asarray(labels, dtype=int)
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.clip(picked, PROB_FLOOR, None)).mean())


def net_loss(params: ShallowNetParams, features: np.ndarray, labels: np.ndarray) -> float:
    return cross_entropy(forward(params, features), labels)


def net_grad(params: ShallowNetParams, features: np.ndarray, labels: np.ndarray):
    """Mean analytic gradient of the cross entropy over a batch; the ReLU
    subgradient at a kink is taken as zero."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(labels, dtype=int)
    n = x.shape[0]
    z = x @ params.weights.T + params.bias
    probs = _softmax(np.maximum(z, 0.0))
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    dz = delta * (z > 0.0)
    return dz.T @ x / n, dz.mean(axis=0)


def _particle_losses(flat: np.ndarray, features: np.ndarray, labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Cross-entropy loss of every flattened parameter vector in ``flat``
    (M, kp+k) on one data batch; vectorized over particles."""
    m = flat.shape[0]
    p = features.shape[1]
    split = n_classes * p
    w = flat[:, :split].reshape(m, n_classes, p)
    b = flat[:, split:]
    z = np.einsum("mkp,np->mnk", w, features) + b[:, None, :]
    probs = _softmax(np.maximum(z, 0.0))
    picked = probs[:, np.arange(len(labels)), labels]
    return -np.log(np.clip(picked, PROB_FLOOR, None)).mean(axis=1)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Normalized features with integer class labels and the normalization
    that produced them (per-feature centering, one global scale)."""

    features: np.ndarray
    labels: np.ndarray
    split: str
    n_classes: int
    feature_mean: np.ndarray
    feature_scale: float

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if not np.all(np.isfinite(self.features)):
            raise ConfigurationError("dataset features must be finite")
        if self.labels.shape != (self.features.shape[0],):
            raise ConfigurationError("need one label per sample")
        if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= self.n_classes:
            raise ConfigurationError("labels must lie in [0, n_classes)")

    def __len__(self):
        return self.features.shape[0]


def normalization_stats(features: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-feature mean and the global standard deviation of the centered
    entries (a single scalar across all features)."""
    mean = features.mean(axis=0)
    scale = float((features - mean).std())
    return mean, scale if scale > 0 else 1.0


def make_datasets(
    train_features, train_labels, val_features, val_labels, n_classes: int
) -> tuple[Dataset, Dataset]:
    """Normalize a train/validation pair with statistics from the training
    split only."""
    mean, scale = normalization_stats(np.asarray(train_features, dtype=float))
    ds = []
    for feats, labs, tag in (
        (train_features, train_labels, "train"),
        (val_features, val_labels, "validation"),
    ):
        feats = (np.asarray(feats, dtype=float) - mean) / scale
        ds.append(Dataset(feats, labs, tag, n_classes, mean, scale))
    return ds[0], ds[1]


def simplex_centers(k: int, p: int, sep: float) -> np.ndarray:
    """k points in R^p, mutually sep apart, centered at the origin (needs
    p >= k-1)."""
    if p < k - 1:
        raise ConfigurationError("mutually equidistant centers need p >= k-1 features")
    e = np.eye(k) - 1.0 / k
    u, s, _ = np.linalg.svd(e)
    coords = (u * s)[:, : k - 1]  # pairwise distances sqrt(2)
    centers = np.zeros((k, p))
    centers[:, : k - 1] = coords * (sep / np.sqrt(2.0))
    return centers


def synth_blobs(k: int, n_per: int, p: int, sep: float, rng=0) -> tuple[Dataset, Dataset]:
    """k unit-variance isotropic Gaussian clusters with centers sep apart on a
    simplex arrangement, shuffled and split 70/30 into train/validation."""
    if k < 2:
        raise ConfigurationError("need at least two classes")
    if n_per < 2:
        raise ConfigurationError("need at least two samples per class")
    gen = as_generator(rng)
    centers = simplex_centers(k, p, sep)
    labels = np.repeat(np.arange(k), n_per)
    features = centers[labels] + gen.standard_normal((k * n_per, p))
    order = gen.permutation(k * n_per)
    features, labels = features[order], labels[order]
    n_train = int(round(0.7 * len(labels)))
    return make_datasets(
        features[:n_train], labels[:n_train], features[n_train:], labels[n_train:], k
    )


# ---------------------------------------------------------------------------
# IDX binary format
# ---------------------------------------------------------------------------


class IdxFormatError(ValueError):
    """Malformed IDX file; messages name the byte offset of the problem."""


_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def load_idx(path) -> np.ndarray:
    """Parse one IDX container (big-endian: two zero bytes, a type code, the
    number of dimensions, then 32-bit dimension sizes and the raw payload)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise IdxFormatError(f"{path}: file ends inside the 4-byte magic at offset {len(data)}")
    if data[0] != 0 or data[1] != 0:
        raise IdxFormatError(f"{path}: bad magic bytes {data[0]:#04x} {data[1]:#04x} at offset 0")
    code = data[2]
    if code not in _IDX_DTYPES:
        raise IdxFormatError(f"{path}: unsupported type code {code:#04x} at offset 2")
    ndim = data[3]
    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        raise IdxFormatError(
            f"{path}: file ends inside the dimension table at offset {len(data)}"
        )
    dims = struct.unpack(f">{ndim}I", data[4:header_end])
    dtype = _IDX_DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    expected = header_end + count * dtype.itemsize
    if len(data) < expected:
        raise IdxFormatError(
            f"{path}: truncated payload, expected {count * dtype.itemsize} bytes "
            f"but the file ends at offset {len(data)}"
        )
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=header_end)
    return arr.reshape(dims).astype(dtype.newbyteorder("="))


def idx_dataset(
    images_path, labels_path, split: str = "train", n_classes: int = 10, stats=None
) -> Dataset:
    """Build a Dataset from an IDX image/label file pair: images are flattened,
    mapped to [0,1], then zero-centered per feature and divided by one global
    standard deviation (reuse ``stats`` from the training split for a
    validation split)."""
    images = load_idx(images_path)
    labels = load_idx(labels_path).astype(int)
    if images.ndim < 2:
        raise IdxFormatError(f"{images_path}: expected an image tensor, got shape {images.shape}")
    feats = images.reshape(images.shape[0], -1).astype(float) / 255.0
    if stats is None:
        stats = normalization_stats(feats)
    mean, scale = stats
    return Dataset((feats - mean) / scale, labels, split, n_classes, mean, scale)


# ---------------------------------------------------------------------------
# Trainers
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ShallowNetParams
    accuracy: np.ndarray


@dataclass
class KboTrainResult(TrainResult):
    particle_counts: np.ndarray


def accuracy_score_net(params: ShallowNetParams, data: Dataset) -> float:
    probs = forward(params, data.features)
    return float(np.mean(probs.argmax(axis=1) == data.labels))


def sgd_train(
    train: Dataset,
    *,
    learning_rate: float = 0.1,
    batch_size: int = 128,
    epochs: int = 20,
    tol: float | None = None,
    rng=0,
    validation: Dataset | None = None,
    init_scale: float = 1.0,
) -> TrainResult:
    """Minibatch gradient descent on the shallow net: per epoch, shuffle the
    training set into batches and step along the mean analytic gradient. When
    ``tol`` is set, training stops once the full-training-set gradient norm
    falls below it (checked at epoch ends). Initial parameters are Gaussian."""
    gen = as_generator(rng)
    k, p = train.n_classes, train.features.shape[1]
    params = ShallowNetParams(
        init_scale * gen.standard_normal((k, p)), init_scale * gen.standard_normal(k)
    )
    eval_set = validation if validation is not None else train
    acc = []
    n = len(train)
    for _ in range(epochs):
        order = gen.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            gw, gb = net_grad(params, train.features[idx], train.labels[idx])
            params.weights -= learning_rate * gw
            params.bias -= learning_rate * gb
        loss = net_loss(params, train.features, train.labels)
        if not np.isfinite(loss):
            raise TrainingDiverged(
                f"training loss became {loss} after epoch {len(acc) + 1}",
                accuracy=np.asarray(acc),
            )
        acc.append(accuracy_score_net(params, eval_set))
        if tol is not None:
            gw, gb = net_grad(params, train.features, train.labels)
            if np.sqrt((gw**2).sum() + (gb**2).sum()) < tol:
                break
    return TrainResult(params=params, accuracy=np.asarray(acc))


def kbo_train(
    train: Dataset,
    cfg: KboConfig,
    *,
    n_particles: int = 500,
    epochs: int = 20,
    data_batch: int = 128,
    particle_batch: int | None = None,
    validation: Dataset | None = None,
    sweeps_per_batch: int = 1,
    global_consensus: bool = False,
    init_std: float = 1.0,
) -> KboTrainResult:
    """Gradient-free training: particles are flattened (W, b) vectors evolved
    by synchronous collision sweeps against minibatch losses.

    Per epoch the data is shuffled into batches; per data batch the particles
    are shuffled into batches of size ``particle_batch`` and each runs
    ``sweeps_per_batch`` collision sweeps on that batch's loss. By default the
    consensus point inside a sweep is computed over the particle batch alone;
    ``global_consensus`` switches it to the whole ensemble. The reported
    network is the consensus point over all particles; with reduction enabled
    (cfg.reduction_mu > 0) the ensemble shrinks every cfg.reduction_every data
    batches as consensus forms.
    """
    if n_particles < 2:
        raise ConfigurationError("need at least two particles")
    if epochs < 1:
        raise ConfigurationError("need at least one epoch")
    k, p = train.n_classes, train.features.shape[1]
    dim = k * p + k
    init_rng = RngStream(cfg.seed, INIT_STREAM).generator()
    particles = init_std * init_rng.standard_normal((n_particles, dim))
    gen = RngStream(cfg.seed, DRIVER_STREAM).generator()
    collision = CollisionParams.from_config(cfg)
    m_p = particle_batch or n_particles
    if m_p < 2:
        raise ConfigurationError("particle_batch must be >= 2")
    eval_set = validation if validation is not None else train
    n = len(train)

    acc = []
    counts = []
    s_before = spread(particles)
    batches_seen = 0
    energies_all = None
    for _ in range(epochs):
        order = gen.permutation(n)
        for start in range(0, n, data_batch):
            idx = order[start : start + data_batch]
            xb, yb = train.features[idx], train.labels[idx]

            def batch_loss(flat):
                return _particle_losses(flat, xb, yb, k)

            m = particles.shape[0]
            porder = gen.permutation(m)
            energies_all = np.empty(m)
            anchor = None
            if global_consensus:
                e_full = checked_energies(batch_loss, particles)
                anchor = consensus_from_energies(particles, e_full, cfg.alpha).point
            for bstart in range(0, m, m_p):
                sel = porder[bstart : bstart + m_p]
                sub = particles[sel]
                if sel.size < 2:
                    energies_all[sel] = checked_energies(batch_loss, sub)
                    continue
                energies = checked_energies(batch_loss, sub)
                for _sweep in range(sweeps_per_batch):
                    valpha = (
                        anchor
                        if anchor is not None
                        else consensus_from_energies(sub, energies, cfg.alpha).point
                    )
                    partners = _select_partners(sel.size, "independent", gen)
                    sub = _nanbu_sweep(sub, energies, valpha, collision, cfg.beta, partners, gen)
                    energies = checked_energies(batch_loss, sub)
                particles[sel] = sub
                energies_all[sel] = energies

            batches_seen += 1
            if cfg.reduction_mu > 0:
                # ratio across one data batch, adopted every reduction_every batches
                if batches_seen % cfg.reduction_every == 0:
                    s_hat = spread(particles)
                    if s_before > 0 and particles.shape[0] > cfg.n_min:
                        n_new = _reduction_count(
                            particles.shape[0], s_before, s_hat, cfg.reduction_mu, cfg.n_min
                        )
                        if n_new < particles.shape[0]:
                            keep = gen.permutation(particles.shape[0])[:n_new]
                            particles = particles[keep]
                            energies_all = energies_all[keep]
                    if cfg.reduction_every == 1:
                        s_before = spread(particles)
                elif (batches_seen + 1) % cfg.reduction_every == 0:
                    s_before = spread(particles)

        flat = consensus_from_energies(particles, energies_all, cfg.alpha).point
        params = ShallowNetParams.unflatten(flat, k, p)
        acc.append(accuracy_score_net(params, eval_set))
        counts.append(particles.shape[0])

    flat = consensus_from_energies(particles, energies_all, cfg.alpha).point
    return KboTrainResult(
        params=ShallowNetParams.unflatten(flat, k, p),
        accuracy=np.asarray(acc),
        particle_counts=np.asarray(counts, dtype=int),
    )


# ---------------------------------------------------------------------------
# Minibatch descent on the 1-D sampled objective
# ---------------------------------------------------------------------------


def sgd_scalar_many(
    objective: SampleAverageObjective,
    n_runs: int,
    *,
    learning_rate: float = 0.1,
    batch_size: int = 100,
    epochs: int = 1,
    tol: float = 0.01,
    rng=0,
    x0=None,
) -> np.ndarray:
    """Vectorized independent minibatch-descent runs on the 1-D sampled
    objective. Each iteration steps along the mean per-sample gradient of a
    random index set; a run freezes once the full-objective gradient magnitude
    drops below ``tol``. Starting points are uniform on the domain unless
    given. Returns the final iterate of every run."""
    gen = as_generator(rng)
    n = objective.n_samples
    if x0 is None:
        x = gen.uniform(objective.lower[0], objective.upper[0], size=n_runs)
    else:
        x = np.array(np.broadcast_to(np.asarray(x0, dtype=float), (n_runs,)))
    iters_per_epoch = max(1, n // batch_size)
    active = np.abs(objective.full_grad(x)) > tol
    samples = objective.samples
    for _ in range(epochs):
        for _ in range(iters_per_epoch):
            if not active.any():
                return x
            idx = gen.integers(0, n, size=(n_runs, batch_size))
            g = sample_grad(x[:, None], samples[idx]).mean(axis=1)
            x = np.where(active, x - learning_rate * g, x)
            active &= np.abs(objective.full_grad(x)) > tol
    return x


def sgd_scalar(objective: SampleAverageObjective, **kwargs) -> float:
    """Single minibatch-descent run on the 1-D sampled objective."""
    return float(sgd_scalar_many(objective, 1, **kwargs)[0])


# ---------------------------------------------------------------------------
# Estimator front ends
# ---------------------------------------------------------------------------


class _ShallowNetMixin:
    def _transform(self, x):
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit first")
        return (np.asarray(x, dtype=float) - self.feature_mean_) / self.feature_scale_

    def predict_proba(self, X):
        return forward(self.params_, np.atleast_2d(self._transform(X)))

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def _encode(self, X, y):
        x = np.asarray(X, dtype=float)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        self.feature_mean_, self.feature_scale_ = normalization_stats(x)
        feats = (x - self.feature_mean_) / self.feature_scale_
        return Dataset(
            feats, y_enc, "train", len(self.classes_), self.feature_mean_, self.feature_scale_
        )


class SgdShallowClassifier(_ShallowNetMixin, ClassifierMixin, BaseEstimator):
    """Minibatch-gradient-descent shallow softmax/ReLU classifier."""

    def __init__(self, learning_rate=0.1, batch_size=128, epochs=20, tol=None, seed=0):
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.tol = tol
        self.seed = seed

    def fit(self, X, y):
        data = self._encode(X, y)
        result = sgd_train(
            data,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            tol=self.tol,
            rng=self.seed,
        )
        self.params_ = result.params
        self.accuracy_trace_ = result.accuracy
        return self


class KboShallowClassifier(_ShallowNetMixin, ClassifierMixin, BaseEstimator):
    """Gradient-free shallow softmax/ReLU classifier trained by collision
    sweeps of a particle ensemble in parameter space."""

    def __init__(
        self,
        n_particles=100,
        epochs=20,
        data_batch=128,
        particle_batch=None,
        lambda1=1.0,
        lambda2=1.0,
        sigma1=1.0,
        sigma2=1.0,
        epsilon=0.1,
        alpha=5e6,
        beta=5e6,
        diffusion_mode="anisotropic",
        reduction_mu=0.0,
        reduction_every=10,
        n_min=10,
        seed=0,
    ):
        self.n_particles = n_particles
        self.epochs = epochs
        self.data_batch = data_batch
        self.particle_batch = particle_batch
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.sigma1 = sigma1
        self.sigma2 = sigma2
        self.epsilon = epsilon
        self.alpha = alpha
        self.beta = beta
        self.diffusion_mode = diffusion_mode
        self.reduction_mu = reduction_mu
        self.reduction_every = reduction_every
        self.n_min = n_min
        self.seed = seed

    def fit(self, X, y):
        data = self._encode(X, y)
        cfg = KboConfig(
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            sigma1=self.sigma1,
            sigma2=self.sigma2,
            alpha=self.alpha,
            beta=self.beta,
            epsilon=self.epsilon,
            diffusion_mode=self.diffusion_mode,
            reduction_mu=self.reduction_mu,
            reduction_every=self.reduction_every,
            n_min=self.n_min,
            seed=self.seed,
        )
        result = kbo_train(
            data,
            cfg,
            n_particles=self.n_particles,
            epochs=self.epochs,
            data_batch=self.data_batch,
            particle_batch=self.particle_batch,
        )
        self.params_ = result.params
        self.accuracy_trace_ = result.accuracy
        self.particle_counts_ = result.particle_counts
        return self

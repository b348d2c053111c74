"""Gaussian/Bernoulli naive Bayes and a single-hidden-layer neural network."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .trees import _rows, _train_arrays


def _is_binary(col) -> bool:
    return bool(np.all((col == 0) | (col == 1)))


@dataclass
class NaiveBayesModel:
    class_priors: np.ndarray
    means: np.ndarray        # K x P (continuous columns only meaningful)
    sds: np.ndarray          # K x P
    rates: np.ndarray        # K x P Bernoulli rates (binary columns only meaningful)
    binary: np.ndarray       # P booleans
    col_names: tuple
    col_min: np.ndarray = None
    col_max: np.ndarray = None

    @property
    def n_classes(self) -> int:
        return len(self.class_priors)

    def log_joint(self, Z) -> np.ndarray:
        Z = _rows(Z, self.col_names)
        out = np.tile(np.log(self.class_priors), (Z.shape[0], 1))
        cont = ~self.binary
        if cont.any():
            x = Z[:, None, cont]                              # N x 1 x Pc
            mu, sd = self.means[None, :, cont], self.sds[None, :, cont]
            out += np.sum(-0.5 * ((x - mu) / sd) ** 2 - np.log(sd) - 0.5 * np.log(2 * np.pi), axis=2)
        if self.binary.any():
            x = Z[:, None, self.binary]
            q = self.rates[None, :, self.binary]
            out += np.sum(x * np.log(q) + (1 - x) * np.log1p(-q), axis=2)
        return out

    def predict_proba(self, rows) -> np.ndarray:
        lj = self.log_joint(rows)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))


def fit_nb(w, n_classes=None) -> NaiveBayesModel:
    """Per-class Gaussian densities for continuous columns, Laplace-smoothed
    Bernoulli rates for 0/1 columns, empirical priors."""
    Z, y, names = _train_arrays(w)
    K = n_classes or int(y.max()) + 1
    counts = np.bincount(y, minlength=K)
    if np.any(counts == 0):
        raise ValueError(f"classes absent from training data: {np.flatnonzero(counts == 0).tolist()}")
    P = Z.shape[1]
    binary = np.array([_is_binary(Z[:, j]) for j in range(P)])
    col_sd = Z.std(axis=0)
    floor = np.where(col_sd > 0, 1e-6 * col_sd, 1e-6)
    means = np.empty((K, P))
    sds = np.empty((K, P))
    rates = np.empty((K, P))
    for k in range(K):
        Zk = Z[y == k]
        means[k] = Zk.mean(axis=0)
        sds[k] = np.maximum(Zk.std(axis=0), floor)
        rates[k] = (Zk.sum(axis=0) + 1) / (len(Zk) + 2)
    return NaiveBayesModel(counts / counts.sum(), means, sds, rates, binary, names,
                           Z.min(axis=0), Z.max(axis=0))


def nb_predict_proba(m: NaiveBayesModel, rows) -> np.ndarray:
    return m.predict_proba(rows)


# ---------------------------------------------------------------------------


@dataclass
class NeuralNet:
    """Logistic hidden layer, softmax output.

    Inputs are standardized with the stored ``x_mean`` / ``x_sd`` before the
    first layer; W1 is hidden x inputs, W2 is classes x hidden.
    """

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    x_mean: np.ndarray
    x_sd: np.ndarray
    col_names: tuple
    decay: float = 0.4
    epochs: int = 2000
    learning_rate: float = 0.01
    seed: int = 0
    col_min: np.ndarray = None
    col_max: np.ndarray = None
    loss_history: list = field(default_factory=list, repr=False)

    @property
    def hidden_units(self) -> int:
        return self.W1.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def n_classes(self) -> int:
        return self.W2.shape[0]

    def predict_proba(self, rows) -> np.ndarray:
        X = (_rows(rows, self.col_names) - self.x_mean) / self.x_sd
        return _forward(self.params(), X)[1]

    def params(self):
        return self.W1, self.b1, self.W2, self.b2


def _softmax(A):
    E = np.exp(A - A.max(axis=1, keepdims=True))
    return E / E.sum(axis=1, keepdims=True)


def _forward(params, X):
    W1, b1, W2, b2 = params
    H = expit(X @ W1.T + b1)
    return H, _softmax(H @ W2.T + b2)


def nn_loss_and_grad(params, X, Y, decay):
    """Per-observation objective (sum CE + decay/2 * sum w^2) / N and its gradient.

    All weights, biases included, are decayed.
    """
    W1, b1, W2, b2 = params
    n = X.shape[0]
    H, P = _forward(params, X)
    ce = -np.sum(Y * np.log(np.clip(P, 1e-300, None)))
    sq = sum(float(np.sum(p * p)) for p in params)
    loss = (ce + 0.5 * decay * sq) / n
    dA2 = (P - Y) / n
    gW2 = dA2.T @ H + decay / n * W2
    gb2 = dA2.sum(axis=0) + decay / n * b2
    dA1 = (dA2 @ W2) * H * (1 - H)
    gW1 = dA1.T @ X + decay / n * W1
    gb1 = dA1.sum(axis=0) + decay / n * b1
    return loss, (gW1, gb1, gW2, gb2)


def fit_nn(w, hidden: int = 18, decay: float = 0.4, epochs: int = 2000, lr: float = 0.01,
           seed: int = 0, n_classes=None) -> NeuralNet:
    """Full-batch gradient descent on the weight-decayed cross-entropy."""
    Z, y, names = _train_arrays(w)
    K = n_classes or int(y.max()) + 1
    mean = Z.mean(axis=0)
    sd = Z.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    X = (Z - mean) / sd
    Y = np.eye(K)[y]
    rng = np.random.default_rng(seed)
    P = Z.shape[1]
    params = [rng.uniform(-0.5, 0.5, size=(hidden, P)), rng.uniform(-0.5, 0.5, size=hidden),
              rng.uniform(-0.5, 0.5, size=(K, hidden)), rng.uniform(-0.5, 0.5, size=K)]
    history = []
    # overflow is detected through the non-finite loss check below
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(epochs):
            loss, grads = nn_loss_and_grad(params, X, Y, decay)
            if not np.isfinite(loss):
                raise ValueError(f"non-finite training loss with lr={lr}; use a smaller learning rate")
            history.append(loss)
            params = [p - lr * g for p, g in zip(params, grads)]
        loss, _ = nn_loss_and_grad(params, X, Y, decay)
    if not np.isfinite(loss) or not all(np.all(np.isfinite(p)) for p in params):
        raise ValueError(f"non-finite training loss with lr={lr}; use a smaller learning rate")
    history.append(loss)
    return NeuralNet(*params, mean, sd, names, decay, epochs, lr, seed,
                     Z.min(axis=0), Z.max(axis=0), history)


def nn_predict_proba(nn: NeuralNet, rows) -> np.ndarray:
    return nn.predict_proba(rows)

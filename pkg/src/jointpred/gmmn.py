"""Generative moment matching network trained on a Gaussian-kernel MMD loss.

The network maps standard-normal noise through ``affine -> batch-norm ->
relu -> dropout`` hidden blocks and a sigmoid output layer, so samples live
in the open unit cube.  Gradients are derived by hand; ``loss_and_grads``
exposes them for finite-difference checking.
"""

from __future__ import annotations

import copy
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .data import pseudo_observations

logger = logging.getLogger(__name__)

DEFAULT_BANDWIDTHS = (0.001, 0.01, 0.15, 0.25, 0.50, 0.75)
BN_EPSILON = 1e-3
_OUT_EPS = 1e-12


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelMixture:
    bandwidths: tuple[float, ...] = DEFAULT_BANDWIDTHS

    def __post_init__(self):
        bw = tuple(float(h) for h in np.atleast_1d(self.bandwidths))
        if not bw or any(not h > 0 for h in bw):
            raise ValueError("bandwidths must be positive")
        object.__setattr__(self, "bandwidths", bw)


@dataclass(frozen=True)
class Architecture:
    """Layer widths ``(d', h_1, ..., h_l, d)``; input and output widths are equal."""

    layer_dims: tuple[int, ...]
    use_batch_norm: bool = True
    dropout_rate: float = 0.1
    bn_momentum: float = 0.99
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"

    def __post_init__(self):
        dims = tuple(int(k) for k in self.layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"invalid layer dims {dims}")
        if dims[0] != dims[-1]:
            raise ValueError("input (noise) dimension must equal output dimension")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        object.__setattr__(self, "layer_dims", dims)

    @classmethod
    def from_notation(cls, notation: str, d: int, **kwargs) -> "Architecture":
        """Parse ``"1x300"`` (one hidden layer of 300) or ``"1x600,1x300"``."""
        hidden: list[int] = []
        for block in notation.replace(" ", "").split(","):
            m = re.fullmatch(r"(\d+)x(\d+)", block)
            if not m or int(m.group(1)) < 1 or int(m.group(2)) < 1:
                raise ValueError(f"bad architecture {notation!r}; expected LxH[,LxH]")
            hidden += [int(m.group(2))] * int(m.group(1))
        return cls(layer_dims=(d, *hidden, d), **kwargs)

    @property
    def hidden(self) -> tuple[int, ...]:
        return self.layer_dims[1:-1]

    @property
    def label(self) -> str:
        h = self.hidden
        if not h:
            return "G0"
        if len(set(h)) == 1:
            return f"G{len(h)}x{h[0]}"
        return "G" + "-".join(str(k) for k in h)


@dataclass
class GeneratorNetwork:
    architecture: Architecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    bn_gamma: list[np.ndarray]
    bn_beta: list[np.ndarray]
    running_mean: list[np.ndarray]
    running_var: list[np.ndarray]
    training_log: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    @classmethod
    def initialize(cls, architecture: Architecture, rng=None) -> "GeneratorNetwork":
        rng = np.random.default_rng(rng)
        dims = architecture.layer_dims
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        hidden = architecture.hidden
        return cls(
            architecture=architecture,
            weights=weights,
            biases=biases,
            bn_gamma=[np.ones(h) for h in hidden],
            bn_beta=[np.zeros(h) for h in hidden],
            running_mean=[np.zeros(h) for h in hidden],
            running_var=[np.ones(h) for h in hidden],
        )

    @property
    def d(self) -> int:
        return self.architecture.layer_dims[-1]

    def parameters(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order (shared with the gradient list)."""
        params = []
        for i in range(len(self.architecture.hidden)):
            params += [self.weights[i], self.biases[i]]
            if self.architecture.use_batch_norm:
                params += [self.bn_gamma[i], self.bn_beta[i]]
        params += [self.weights[-1], self.biases[-1]]
        return params

    def copy(self) -> "GeneratorNetwork":
        return copy.deepcopy(self)

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ("weights", "biases", "bn_gamma", "bn_beta", "running_mean", "running_var"):
            for i, a in enumerate(getattr(self, name)):
                out[f"{name}/{i}"] = a
        out["training_log"] = np.asarray(self.training_log, dtype=float)
        return out

    def meta(self) -> dict:
        a = self.architecture
        return {
            "layer_dims": list(a.layer_dims),
            "use_batch_norm": a.use_batch_norm,
            "dropout_rate": a.dropout_rate,
            "bn_momentum": a.bn_momentum,
            "best_epoch": self.best_epoch,
        }

    @classmethod
    def from_arrays(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "GeneratorNetwork":
        arch = Architecture(
            layer_dims=tuple(meta["layer_dims"]),
            use_batch_norm=meta["use_batch_norm"],
            dropout_rate=meta["dropout_rate"],
            bn_momentum=meta["bn_momentum"],
        )
        n_layers = len(arch.layer_dims) - 1
        n_hidden = n_layers - 1

        def grab(name, k):
            return [np.array(arrays[f"{name}/{i}"]) for i in range(k)]

        return cls(
            architecture=arch,
            weights=grab("weights", n_layers),
            biases=grab("biases", n_layers),
            bn_gamma=grab("bn_gamma", n_hidden),
            bn_beta=grab("bn_beta", n_hidden),
            running_mean=grab("running_mean", n_hidden),
            running_var=grab("running_var", n_hidden),
            training_log=[float(x) for x in arrays["training_log"]],
            best_epoch=meta.get("best_epoch"),
        )


# -- kernels ---------------------------------------------------------------

def gaussian_kernel(u, v, h: float) -> float:
    """``exp(-||u - v||^2 / h)``."""
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError("kernel arguments must have equal dimension")
    return float(np.exp(-np.sum((u - v) ** 2) / h))


def _sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    D = np.sum(A**2, 1)[:, None] + np.sum(B**2, 1)[None, :] - 2.0 * A @ B.T
    return np.maximum(D, 0.0)


def _check_pair(A, B) -> tuple[np.ndarray, np.ndarray]:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if A.shape[0] < 1 or B.shape[0] < 1:
        raise ValueError("mmd2 needs non-empty samples")
    return A, B


def mmd2(A, B, km: KernelMixture | None = None) -> float:
    """Biased (V-statistic) squared MMD summed over the kernel mixture."""
    A, B = _check_pair(A, B)
    km = km or KernelMixture()
    Daa, Dab, Dbb = _sqdist(A, A), _sqdist(A, B), _sqdist(B, B)
    total = 0.0
    for h in km.bandwidths:
        total += np.exp(-Daa / h).mean() - 2.0 * np.exp(-Dab / h).mean() + np.exp(-Dbb / h).mean()
    return float(total)


def _mmd2_grad(U: np.ndarray, Y: np.ndarray, km: KernelMixture, first_term: float | None = None):
    """Loss ``mmd2(U, Y)`` and its gradient with respect to ``Y``."""
    n, m = U.shape[0], Y.shape[0]
    Duy, Dyy = _sqdist(Y, U), _sqdist(Y, Y)
    if first_term is None:
        Duu = _sqdist(U, U)
        first_term = sum(np.exp(-Duu / h).mean() for h in km.bandwidths)
    loss = first_term
    W_cross = np.zeros((m, n))
    W_self = np.zeros((m, m))
    for h in km.bandwidths:
        Kuy = np.exp(-Duy / h)
        Kyy = np.exp(-Dyy / h)
        loss += -2.0 * Kuy.mean() + Kyy.mean()
        W_cross += (4.0 / (h * n * m)) * Kuy
        W_self -= (4.0 / (h * m * m)) * Kyy
    grad = (W_cross.sum(1)[:, None] * Y - W_cross @ U) + (W_self.sum(1)[:, None] * Y - W_self @ Y)
    return float(loss), grad


# -- network passes ----------------------------------------------------------

def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _forward(net: GeneratorNetwork, V: np.ndarray, train: bool, rng, dropout: bool, update_stats: bool):
    arch = net.architecture
    cache = []
    x = V
    for i in range(len(arch.hidden)):
        z = x @ net.weights[i] + net.biases[i]
        layer = {"x": x}
        if arch.use_batch_norm:
            if train:
                mu = z.mean(0)
                var = z.var(0)
                if update_stats:
                    mom = arch.bn_momentum
                    net.running_mean[i] = mom * net.running_mean[i] + (1 - mom) * mu
                    net.running_var[i] = mom * net.running_var[i] + (1 - mom) * var
            else:
                mu, var = net.running_mean[i], net.running_var[i]
            inv_std = 1.0 / np.sqrt(var + BN_EPSILON)
            xhat = (z - mu) * inv_std
            a = net.bn_gamma[i] * xhat + net.bn_beta[i]
            layer.update(xhat=xhat, inv_std=inv_std)
        else:
            a = z
        hid = np.maximum(a, 0.0)
        layer["active"] = a > 0
        if train and dropout and arch.dropout_rate > 0:
            keep = rng.random(hid.shape) >= arch.dropout_rate
            mask = keep / (1.0 - arch.dropout_rate)
            hid = hid * mask
            layer["mask"] = mask
        cache.append(layer)
        x = hid
    logits = x @ net.weights[-1] + net.biases[-1]
    y = _sigmoid(logits)
    return y, {"layers": cache, "last": x, "y": y}


def _backward(net: GeneratorNetwork, cache, dY: np.ndarray) -> list[np.ndarray]:
    arch = net.architecture
    y = cache["y"]
    dlogit = dY * y * (1.0 - y)
    grads_rev = [dlogit.sum(0), cache["last"].T @ dlogit]  # bias, weight (reversed)
    dh = dlogit @ net.weights[-1].T
    for i in reversed(range(len(arch.hidden))):
        layer = cache["layers"][i]
        if "mask" in layer:
            dh = dh * layer["mask"]
        da = dh * layer["active"]
        if arch.use_batch_norm:
            xhat, inv_std = layer["xhat"], layer["inv_std"]
            m = da.shape[0]
            dgamma = np.sum(da * xhat, 0)
            dbeta = da.sum(0)
            dxhat = da * net.bn_gamma[i]
            dz = (inv_std / m) * (m * dxhat - dxhat.sum(0) - xhat * np.sum(dxhat * xhat, 0))
            grads_rev += [dbeta, dgamma]
        else:
            dz = da
        grads_rev += [dz.sum(0), layer["x"].T @ dz]
        dh = dz @ net.weights[i].T
    return grads_rev[::-1]


def forward(net: GeneratorNetwork, V, mode: str = "infer", rng=None) -> np.ndarray:
    """Map noise rows ``V`` to the unit cube.

    ``mode="train"`` uses batch statistics, updates the running statistics
    and applies dropout; ``mode="infer"`` is deterministic and pure.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.shape[1] != net.architecture.layer_dims[0]:
        raise ValueError(f"noise must have {net.architecture.layer_dims[0]} columns")
    if mode == "train":
        if V.shape[0] == 0:
            raise ValueError("empty batch: batch statistics are undefined")
        y, _ = _forward(net, V, True, np.random.default_rng(rng), True, True)
    elif mode == "infer":
        y, _ = _forward(net, V, False, None, False, False)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return np.clip(y, _OUT_EPS, 1.0 - _OUT_EPS)


def loss_and_grads(net: GeneratorNetwork, U, V, km: KernelMixture | None = None,
                   rng=None, dropout: bool = True):
    """Train-mode MMD loss against ``U`` and gradients aligned with ``net.parameters()``.

    Does not touch the running statistics.
    """
    km = km or KernelMixture()
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    y, cache = _forward(net, V, True, np.random.default_rng(rng), dropout, False)
    loss, dY = _mmd2_grad(U, y, km)
    return loss, _backward(net, cache, dY)


# -- training ----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int | None = None  # None -> full batch
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-7
    bandwidths: tuple[float, ...] = DEFAULT_BANDWIDTHS
    seed: int = 0


def train(net: GeneratorNetwork, U_hat, cfg: TrainConfig | None = None) -> GeneratorNetwork:
    """Minimise the MMD between ``U_hat`` and network output with Adam.

    Every epoch draws fresh standard-normal noise, one row per training row,
    and visits the shuffled rows in batches.  The epoch loss is the mean batch
    loss (the full discrepancy, including the term that does not depend on
    the network).  The returned copy carries the weights that attained the
    smallest logged loss: with a single full batch these are exactly the
    weights the loss was evaluated at, otherwise the end-of-epoch weights.
    """
    cfg = cfg or TrainConfig()
    U_hat = np.asarray(U_hat, dtype=float)
    n, d = U_hat.shape
    if n < 2:
        raise ValueError("need at least two training rows")
    if d != net.d:
        raise ValueError(f"training data has {d} columns, network outputs {net.d}")
    if cfg.epochs < 1:
        raise ValueError("epochs must be >= 1")
    km = KernelMixture(cfg.bandwidths)
    batch = n if cfg.batch_size is None else int(min(max(cfg.batch_size, 2), n))
    full_batch = batch >= n

    rng = np.random.default_rng(cfg.seed)
    net = net.copy()
    params = net.parameters()
    m_state = [np.zeros_like(p) for p in params]
    v_state = [np.zeros_like(p) for p in params]
    step = 0
    first_term = None
    if full_batch:
        Duu = _sqdist(U_hat, U_hat)
        first_term = sum(np.exp(-Duu / h).mean() for h in km.bandwidths)

    log: list[float] = []
    best_loss, best_net, best_epoch = np.inf, None, None
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        noise = rng.standard_normal((n, net.architecture.layer_dims[0]))
        losses = []
        for start in range(0, n, batch):
            rows = order[start:start + batch]
            if rows.shape[0] < 2:
                continue
            y, cache = _forward(net, noise[rows], True, rng, True, True)
            loss, dY = _mmd2_grad(U_hat[rows], y, km, first_term)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch + 1}; try a smaller learning rate"
                )
            losses.append(loss)
            if full_batch and loss < best_loss:
                best_loss, best_net, best_epoch = loss, net.copy(), epoch + 1
            grads = _backward(net, cache, dY)
            step += 1
            lr_t = cfg.learning_rate * np.sqrt(1 - cfg.beta2**step) / (1 - cfg.beta1**step)
            for p, g, m_, v_ in zip(params, grads, m_state, v_state):
                m_ *= cfg.beta1
                m_ += (1 - cfg.beta1) * g
                v_ *= cfg.beta2
                v_ += (1 - cfg.beta2) * g * g
                p -= lr_t * m_ / (np.sqrt(v_) + cfg.adam_epsilon)
        epoch_loss = float(np.mean(losses))
        log.append(epoch_loss)
        if not full_batch and epoch_loss < best_loss:
            best_loss, best_net, best_epoch = epoch_loss, net.copy(), epoch + 1

    best_net.training_log = log
    best_net.best_epoch = best_epoch
    logger.info("trained %s: best loss %.6g at epoch %d/%d",
                net.architecture.label, best_loss, best_epoch, cfg.epochs)
    return best_net


def sample(net: GeneratorNetwork, n: int, post_pobs: bool = True, rng=None) -> np.ndarray:
    """``n`` draws from the implicit copula; pseudo-observations by default."""
    if n < 1:
        raise ValueError("sample size must be positive")
    rng = np.random.default_rng(rng)
    V = rng.standard_normal((n, net.architecture.layer_dims[0]))
    U = forward(net, V, "infer")
    return pseudo_observations(U) if post_pobs else U

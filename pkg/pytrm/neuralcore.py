"""
Minimal dense-network engine in double precision.

Forward/backward passes over a fixed stack of affine layers, SiLU and
Softplus activations, Smooth-L1 and MSE losses, AdamW with decoupled weight
decay, finite-difference gradient checks and a JSON + binary checkpoint format.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from pytrm import settings
from pytrm.batching import Batches
from pytrm.exceptions import (
    PyTRMDimensionError,
    PyTRMMissingArtifactError,
    PyTRMNonFiniteGradientError,
    PyTRMTrainingDivergenceError,
    PyTRMValidationError,
)
from pytrm.validation import validate

logger = logging.getLogger(__name__)

ACTIVATIONS = ('silu', 'softplus', 'linear')


def silu(x):
    return x * expit(x)


def silu_grad(x):
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_grad(x):
    return expit(x)


_FORWARD = {'silu': silu, 'softplus': softplus, 'linear': lambda x: x}
_GRAD = {'silu': silu_grad, 'softplus': softplus_grad, 'linear': np.ones_like}


def smooth_l1(pred, target, delta=1.0):
    """Elementwise Smooth-L1 (Huber) loss.

    0.5 * e**2 for |e| <= delta, delta * (|e| - 0.5 * delta) otherwise.

    :param pred: Prediction (scalar or array).
    :param target: Target (scalar or array).
    :rtype: ``float`` or ``numpy.ndarray``
    """
    e = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    a = np.abs(e)
    loss = np.where(a <= delta, 0.5 * e * e, delta * (a - 0.5 * delta))
    return float(loss) if loss.ndim == 0 else loss


def smooth_l1_grad(pred, target, delta=1.0):
    e = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return np.clip(e, -delta, delta)


class SmoothL1Loss(object):
    """Batch-mean Smooth-L1 loss returning (loss, d loss / d pred)."""
    name = 'smooth_l1'

    def __init__(self, delta=1.0):
        self.delta = delta

    def __call__(self, pred, target):
        n = pred.shape[0]
        return float(np.sum(smooth_l1(pred, target, self.delta)) / n), smooth_l1_grad(pred, target, self.delta) / n


class MSELoss(object):
    """Mean over rows of the summed squared error."""
    name = 'mse'

    def __call__(self, pred, target):
        n = pred.shape[0]
        e = pred - target
        return float(np.sum(e * e) / n), 2.0 * e / n


@dataclass
class TrainConfig:
    lr: float = settings.LEARNING_RATE
    weight_decay: float = settings.WEIGHT_DECAY
    batch_size: int = settings.BATCH_SIZE
    epochs: int = settings.EPOCHS
    seed: int = 0
    log_every: int = 200

    def __post_init__(self):
        validate('train', asdict(self))


class ForwardCache(object):
    """Per-layer inputs and pre-activations kept for the backward pass."""

    def __init__(self):
        self.inputs = []
        self.pre = []


class DenseNet(object):
    """Stack of affine layers, each followed by its activation."""

    def __init__(self, dims, activations, seed=0, layers=None):
        """
        :param list dims: Layer widths, input first (e.g. [128, 256, 256, 1]).
        :param list activations: One activation name per affine layer.
        :param int seed: Initialization seed.
        :param list layers: Explicit [(W, b), ...] parameters. (Optional, Glorot-uniform init otherwise).
        """
        dims = [int(d) for d in dims]
        activations = list(activations)
        if len(activations) != len(dims) - 1:
            raise PyTRMDimensionError('Need one activation per layer.', len(dims) - 1, len(activations))
        unknown = [a for a in activations if a not in ACTIVATIONS]
        if unknown:
            raise PyTRMValidationError('Unknown activation(s): %s' % unknown, 'DenseNet', ['activations'], unknown)
        self.dims = dims
        self.activations = activations
        self.seed = seed
        if layers is None:
            rng = np.random.default_rng(seed)
            layers = []
            for fan_in, fan_out in zip(dims[:-1], dims[1:]):
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                layers.append((rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)))
        for (w, b), fan_in, fan_out in zip(layers, dims[:-1], dims[1:]):
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise PyTRMDimensionError('Layer shapes do not chain.', (fan_in, fan_out), w.shape)
        self.layers = [(np.array(w, dtype=np.float64), np.array(b, dtype=np.float64)) for w, b in layers]

    @property
    def in_dim(self):
        return self.dims[0]

    @property
    def out_dim(self):
        return self.dims[-1]

    @property
    def params(self):
        """Flat parameter list [W0, b0, W1, b1, ...] (views, not copies)."""
        return [p for layer in self.layers for p in layer]

    def copy(self):
        return DenseNet(self.dims, self.activations, self.seed, [(w.copy(), b.copy()) for w, b in self.layers])

    def forward(self, x, cache=None):
        """Apply the network to a batch.

        :param numpy.ndarray x: (N, in_dim) or (in_dim,) input.
        :param ForwardCache cache: Filled with intermediates when given.
        :return: (N, out_dim) output, or (out_dim,) for a single vector.
        :rtype: ``numpy.ndarray``
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.in_dim:
            raise PyTRMDimensionError('Input dimension %d does not match %d.' % (h.shape[1], self.in_dim),
                                      self.in_dim, h.shape[1])
        for (w, b), act in zip(self.layers, self.activations):
            pre = h @ w + b
            if cache is not None:
                cache.inputs.append(h)
                cache.pre.append(pre)
            h = _FORWARD[act](pre)
        return h[0] if single else h

    def backward(self, cache, upstream):
        """Reverse-mode gradients of a scalar loss.

        :param ForwardCache cache: Cache filled by ``forward`` for the same input.
        :param numpy.ndarray upstream: d loss / d output, same shape as the output.
        :return: Gradients aligned with ``params``.
        :rtype: ``list``
        """
        g = np.asarray(upstream, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        if not cache.pre or g.shape != cache.pre[-1].shape:
            raise PyTRMDimensionError('Upstream gradient does not match the cached output.',
                                      cache.pre[-1].shape if cache.pre else None, g.shape)
        grads = [None] * (2 * len(self.layers))
        for i in range(len(self.layers) - 1, -1, -1):
            w, _ = self.layers[i]
            g = g * _GRAD[self.activations[i]](cache.pre[i])
            grads[2 * i] = cache.inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i:
                g = g @ w.T
        return grads

    def content_hash(self):
        digest = hashlib.sha256()
        digest.update(json.dumps({'dims': self.dims, 'activations': self.activations}).encode('utf-8'))
        for p in self.params:
            digest.update(np.ascontiguousarray(p, dtype='<f8').tobytes())
        return digest.hexdigest()

    def save(self, path, train_config=None, extra=None):
        """Write ``path.json`` (header) and ``path.bin`` (little-endian float64 blob).

        :param string path: Path prefix.
        :param dict train_config: Training configuration to record. (Optional).
        :param dict extra: Additional header fields. (Optional).
        """
        blob = np.concatenate([p.astype('<f8').ravel() for p in self.params])
        header = {
            'version': settings.CHECKPOINT_VERSION,
            'dims': self.dims,
            'activations': self.activations,
            'seed': self.seed,
            'train_config': train_config or {},
            'extra': extra or {},
            'dtype': '<f8',
            'n_params': int(blob.size),
            'blob_sha256': hashlib.sha256(blob.tobytes()).hexdigest(),
        }
        blob.tofile(path + '.bin')
        with open(path + '.json', 'w') as fp:
            fp.write(json.dumps(header, indent=2, sort_keys=True) + '\n')

    @classmethod
    def load(cls, path):
        """Load a checkpoint written by ``save``.

        :return: (net, header)
        :rtype: ``tuple``
        """
        try:
            with open(path + '.json') as fp:
                header = json.load(fp)
            blob = np.fromfile(path + '.bin', dtype='<f8')
        except (IOError, OSError):
            raise PyTRMMissingArtifactError('Checkpoint not found: %s' % path, path)
        if blob.size != header['n_params']:
            raise PyTRMDimensionError('Checkpoint blob has the wrong size.', header['n_params'], blob.size)
        dims = header['dims']
        layers = []
        offset = 0
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = blob[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = blob[offset:offset + fan_out]
            offset += fan_out
            layers.append((w.astype(np.float64), b.astype(np.float64)))
        return cls(dims, header['activations'], header['seed'], layers), header


class AdamW(object):
    """Adam with decoupled weight decay; holds the optimizer state for one network."""

    def __init__(self, net, lr=settings.LEARNING_RATE, weight_decay=settings.WEIGHT_DECAY,
                 beta1=settings.ADAM_BETA1, beta2=settings.ADAM_BETA2, eps=settings.ADAM_EPS):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.params]
        self.v = [np.zeros_like(p) for p in net.params]

    def step(self, net, grads):
        """Apply one in-place update to ``net``.

        p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
        """
        params = net.params
        if len(grads) != len(params):
            raise PyTRMDimensionError('Gradient list does not match parameters.', len(params), len(grads))
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise PyTRMNonFiniteGradientError('Nonfinite gradient at optimizer step %d.' % (self.t + 1))
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise PyTRMDimensionError('Gradient shape does not match parameter.', p.shape, g.shape)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * ((m / bc1) / (np.sqrt(v / bc2) + self.eps) + self.weight_decay * p)


def loss_and_grads(net, x, target, loss):
    cache = ForwardCache()
    pred = net.forward(x, cache)
    value, upstream = loss(pred, target)
    return value, net.backward(cache, upstream)


def gradient_check(net, x, target, loss, h=1e-4):
    """Compare backprop gradients with central finite differences.

    :return: Maximum relative error over every parameter entry.
    :rtype: ``float``
    """
    _, grads = loss_and_grads(net, x, target, loss)
    worst = 0.0
    for p, g in zip(net.params, grads):
        it = np.nditer(p, flags=['multi_index'])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            up = loss(net.forward(x), target)[0]
            p[idx] = old - h
            down = loss(net.forward(x), target)[0]
            p[idx] = old
            numeric = (up - down) / (2.0 * h)
            denom = max(abs(numeric), abs(g[idx]), 1e-5)
            worst = max(worst, abs(numeric - g[idx]) / denom)
    return worst


def fit(net, inputs, targets, loss, cfg, label='net'):
    """Train ``net`` in place for exactly ``epochs`` passes over the rows.

    :param DenseNet net: Network to train.
    :param numpy.ndarray inputs: (N, in_dim) inputs.
    :param numpy.ndarray targets: (N, out_dim) targets.
    :param loss: Callable returning (loss, d loss / d pred).
    :param TrainConfig cfg: Training configuration.
    :param string label: Name used in log lines.
    :return: Mean training loss per epoch.
    :rtype: ``list``
    """
    opt = AdamW(net, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    batches = Batches(inputs.shape[0], cfg.batch_size, rng, epochs=cfg.epochs)
    history = []
    epoch_loss = 0.0
    epoch_steps = 0
    for step_no, idx in enumerate(batches, start=1):
        value, grads = loss_and_grads(net, inputs[idx], targets[idx], loss)
        if not np.isfinite(value):
            raise PyTRMTrainingDivergenceError('%s loss became nonfinite at step %d.' % (label, step_no), step_no)
        opt.step(net, grads)
        epoch_loss += value
        epoch_steps += 1
        if cfg.log_every and step_no % cfg.log_every == 0:
            logger.debug('%s step %d/%d loss %.6f', label, step_no, batches.total_steps, value)
        if epoch_steps == batches.steps_per_page:
            history.append(epoch_loss / epoch_steps)
            logger.info('%s epoch %d/%d mean loss %.6f', label, len(history), cfg.epochs, history[-1])
            epoch_loss = 0.0
            epoch_steps = 0
    return history

"""A sum-of-deep-neurons network on truncated basis coordinates.

Each of the ``width`` neurons pushes the coefficient vector through ``depth``
affine stages, squashing after every stage with the rank-one activation

    sigma(xi) = beta(psi . xi) * z,   beta(y) = max{0, 1 - exp(-y)},

and the network output is the sum of the per-neuron readout functionals.
All stages act on length-``n_basis`` coordinate vectors, so evaluation is a
handful of small einsums; backpropagation is analytic, with the kink of beta
at zero handled by subgradient 0 on y <= 0.

psi and z are fixed by default (the displayed architecture); setting
``train_activation`` in TrainConfig adds their exact gradients to the update.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .checkpoint import load_arrays, save_arrays
from .errors import CheckpointError, ContractError, NumericError
from .optim import make_optimizer, schedule_lr


@dataclass
class ActivationSpec:
    """The rank-one activation's direction pair and scalar squash tag."""

    psi_weights: np.ndarray
    z_coeffs: np.ndarray
    scalar_sigmoid: str = "clipped-exp"

    def __post_init__(self):
        self.psi_weights = np.asarray(self.psi_weights, dtype=np.float64)
        self.z_coeffs = np.asarray(self.z_coeffs, dtype=np.float64)
        if self.psi_weights.ndim != 1 or \
                self.psi_weights.shape != self.z_coeffs.shape:
            raise ContractError("psi_weights and z_coeffs must be 1-d, equal")
        if not (np.isfinite(self.psi_weights).all()
                and np.isfinite(self.z_coeffs).all()):
            raise ContractError("activation vectors must be finite")
        if not np.any(self.psi_weights) or not np.any(self.z_coeffs):
            raise ContractError("psi_weights and z_coeffs must be nonzero")
        if self.scalar_sigmoid != "clipped-exp":
            raise ContractError(
                f"unsupported scalar sigmoid {self.scalar_sigmoid!r}")


def default_activation(n_basis=5) -> ActivationSpec:
    return ActivationSpec(psi_weights=np.full(n_basis, 0.25),
                          z_coeffs=np.ones(n_basis))


def _beta(y):
    out = np.zeros_like(y)
    pos = y > 0
    out[pos] = -np.expm1(-y[pos])
    return out


def _beta_prime(y):
    out = np.zeros_like(y)
    pos = y > 0
    out[pos] = np.exp(-y[pos])
    return out


def activation(xi, act: ActivationSpec):
    """sigma(xi) = beta(psi . xi) * z."""
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != act.psi_weights.shape:
        raise ContractError("input length does not match the activation")
    y = np.array([act.psi_weights @ xi])
    return float(_beta(y)[0]) * act.z_coeffs


@dataclass
class FrechetNetParams:
    """All trainable state plus the fixed activation.

    A[j, k] is the k-th affine stage of neuron j (k = 0 is applied to the
    input), beta[j, k] its bias, ell[j] the readout functional.
    """

    n_basis: int
    depth: int
    width: int
    A: np.ndarray
    beta: np.ndarray
    ell: np.ndarray
    activation: ActivationSpec

    def __post_init__(self):
        n, d, m = self.n_basis, self.depth, self.width
        if min(n, d, m) < 1:
            raise ContractError("n_basis, depth and width must be >= 1")
        self.A = np.asarray(self.A, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.ell = np.asarray(self.ell, dtype=np.float64)
        shapes = {"A": (m, d, n, n), "beta": (m, d, n), "ell": (m, n)}
        for name, want in shapes.items():
            arr = getattr(self, name)
            if arr.shape != want:
                raise ContractError(f"{name} must have shape {want}, "
                                    f"got {arr.shape}")
            if not np.isfinite(arr).all():
                raise ContractError(f"{name} must be finite")
        if self.activation.psi_weights.shape != (n,):
            raise ContractError("activation length must equal n_basis")

    @property
    def param_count(self) -> int:
        """Trainable parameters (activation excluded)."""
        return self.A.size + self.beta.size + self.ell.size


def init_params(n_basis, depth, width, rng, init_scale=1.0,
                activation: Optional[ActivationSpec] = None,
                ) -> FrechetNetParams:
    """Draw fresh parameters: A entries uniform(+-init_scale/sqrt(n_basis)),
    biases and readouts uniform(+-init_scale).  Draw order A, beta, ell."""
    if not init_scale > 0:
        raise ContractError("init_scale must be positive")
    a_scale = init_scale / math.sqrt(n_basis)
    A = rng.uniform(-a_scale, a_scale, (width, depth, n_basis, n_basis))
    beta = rng.uniform(-init_scale, init_scale, (width, depth, n_basis))
    ell = rng.uniform(-init_scale, init_scale, (width, n_basis))
    return FrechetNetParams(
        n_basis=n_basis, depth=depth, width=width, A=A, beta=beta, ell=ell,
        activation=activation or default_activation(n_basis))


def _forward_pass(params: FrechetNetParams, coeffs):
    """Run the batch forward, retaining per-stage tensors for backprop."""
    psi = params.activation.psi_weights
    z = params.activation.z_coeffs
    bsz = coeffs.shape[0]
    h = np.broadcast_to(coeffs[:, None, :],
                        (bsz, params.width, params.n_basis))
    inputs, affines, preacts, squashes = [], [], [], []
    for k in range(params.depth):
        pre = np.einsum("mij,bmj->bmi", params.A[:, k], h) \
            + params.beta[None, :, k, :]
        y = pre @ psi
        bval = _beta(y)
        inputs.append(h)
        affines.append(pre)
        preacts.append(y)
        squashes.append(bval)
        h = bval[:, :, None] * z[None, None, :]
    out = np.einsum("mn,bmn->b", params.ell, h)
    return out, h, inputs, affines, preacts, squashes


def forward(params: FrechetNetParams, a) -> float:
    """Network output for one coefficient vector."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (params.n_basis,):
        raise ContractError(
            f"input must have shape ({params.n_basis},), got {a.shape}")
    return float(_forward_pass(params, a[None, :])[0][0])


def forward_batch(params: FrechetNetParams, coeffs) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[1] != params.n_basis:
        raise ContractError("coeffs must be (batch, n_basis)")
    return _forward_pass(params, coeffs)[0]


def loss_and_grad(params: FrechetNetParams, coeffs, targets,
                  train_activation=False):
    """Mean squared error and its exact gradients over one batch.

    Returns (loss, grads) with grads keyed "A", "beta", "ell" (plus "psi",
    "z" when train_activation is set).
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[1] != params.n_basis:
        raise ContractError("coeffs must be (batch, n_basis)")
    if targets.shape != (coeffs.shape[0],):
        raise ContractError("targets must be (batch,)")
    if coeffs.shape[0] == 0:
        raise ContractError("batch must be nonempty")

    psi = params.activation.psi_weights
    z = params.activation.z_coeffs
    bsz = coeffs.shape[0]
    out, h_final, inputs, affines, preacts, squashes = _forward_pass(
        params, coeffs)
    residual = out - targets
    per_sample = residual * residual
    if not np.isfinite(per_sample).all():
        bad = int(np.where(~np.isfinite(per_sample))[0][0])
        raise NumericError("non-finite loss", record_index=bad)
    loss = float(per_sample.mean())

    grads = {"A": np.zeros_like(params.A),
             "beta": np.zeros_like(params.beta),
             "ell": np.zeros_like(params.ell)}
    if train_activation:
        grads["psi"] = np.zeros_like(psi)
        grads["z"] = np.zeros_like(z)

    dout = (2.0 / bsz) * residual
    grads["ell"] = np.einsum("b,bmn->mn", dout, h_final)
    v = dout[:, None, None] * params.ell[None, :, :]
    for k in reversed(range(params.depth)):
        dy = np.einsum("bmn,n->bm", v, z) * _beta_prime(preacts[k])
        if train_activation:
            grads["z"] += np.einsum("bm,bmn->n", squashes[k], v)
            grads["psi"] += np.einsum("bm,bmn->n", dy, affines[k])
        dxi = dy[:, :, None] * psi[None, None, :]
        grads["beta"][:, k, :] = dxi.sum(axis=0)
        grads["A"][:, k] = np.einsum("bmi,bmj->mij", dxi, inputs[k])
        v = np.einsum("bmi,mij->bmj", dxi, params.A[:, k])
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of the minibatch loop.  ``seed`` is the shuffle seed the batch
    source is built from; the parameter initialization seed is passed to
    ``train`` separately."""

    epochs: int = 25
    batch_size: int = 10000
    learning_rate: float = 1e-3
    lr_schedule: str = "constant"
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    init_scale: float = 1.0
    seed: int = 0
    train_activation: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be positive")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ContractError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.optimizer not in ("adam", "plain-sgd"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")


DIVERGENCE_LIMIT = 1e6


def train(batch_source, cfg: TrainConfig, init_seed, n_basis=5, depth=2,
          width=15, activation: Optional[ActivationSpec] = None):
    """Run the minibatch loop.

    ``batch_source(epoch)`` must yield (coeffs, targets) pairs covering the
    training set once per call.  Returns (params, epoch_losses) where each
    trace entry is the record-weighted mean batch loss of that epoch.
    """
    params = init_params(n_basis, depth, width,
                         np.random.default_rng(init_seed),
                         init_scale=cfg.init_scale, activation=activation)
    opt = make_optimizer(cfg.optimizer, cfg.learning_rate,
                         cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    names = ["A", "beta", "ell"]
    tensors = [params.A, params.beta, params.ell]
    if cfg.train_activation:
        names += ["psi", "z"]
        tensors += [params.activation.psi_weights,
                    params.activation.z_coeffs]
    losses = []
    for epoch in range(cfg.epochs):
        opt.learning_rate = schedule_lr(cfg.learning_rate, cfg.lr_schedule,
                                        epoch, cfg.epochs)
        total, seen = 0.0, 0
        for coeffs, targets in batch_source(epoch):
            loss, grads = loss_and_grad(params, coeffs, targets,
                                        cfg.train_activation)
            if loss > DIVERGENCE_LIMIT:
                raise NumericError(
                    f"training diverged: batch loss {loss:.3g} at epoch "
                    f"{epoch} after {seen} records")
            opt.step(tensors, [grads[n] for n in names])
            total += loss * coeffs.shape[0]
            seen += coeffs.shape[0]
        if seen == 0:
            raise ContractError("batch source yielded no data")
        losses.append(total / seen)
    return params, losses


def save_checkpoint(params: FrechetNetParams, path):
    """Persist all parameters and the activation spec; byte-stable."""
    save_arrays(path, kind="frechet",
                meta={"n_basis": params.n_basis, "depth": params.depth,
                      "width": params.width,
                      "scalar_sigmoid": params.activation.scalar_sigmoid},
                arrays={"A": params.A, "beta": params.beta,
                        "ell": params.ell,
                        "psi": params.activation.psi_weights,
                        "z": params.activation.z_coeffs})


def load_checkpoint(path, expected_n_basis=None) -> FrechetNetParams:
    kind, meta, arrays = load_arrays(path)
    if kind != "frechet":
        raise CheckpointError(f"checkpoint holds a {kind!r} model")
    for key in ("n_basis", "depth", "width", "scalar_sigmoid"):
        if key not in meta:
            raise CheckpointError(f"metadata missing {key!r}")
    if expected_n_basis is not None and meta["n_basis"] != expected_n_basis:
        raise CheckpointError(
            f"checkpoint was built for n_basis={meta['n_basis']}, "
            f"expected {expected_n_basis}")
    try:
        act = ActivationSpec(psi_weights=arrays["psi"],
                             z_coeffs=arrays["z"],
                             scalar_sigmoid=meta["scalar_sigmoid"])
        return FrechetNetParams(
            n_basis=meta["n_basis"], depth=meta["depth"],
            width=meta["width"], A=arrays["A"], beta=arrays["beta"],
            ell=arrays["ell"], activation=act)
    except (KeyError, ContractError) as exc:
        raise CheckpointError(f"inconsistent checkpoint: {exc}")

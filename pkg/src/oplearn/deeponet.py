"""Branch/trunk baseline operating on sensor samples of the potential.

The branch net reads c at a fixed sensor grid (20 equally spaced points by
default), the trunk net reads the evaluation point x, and the prediction is
the dot product of the two 50-wide feature vectors plus a scalar bias:

    out = < branch(c(y_1..y_P)), trunk(x) > + merge_bias

Both nets are two affine layers with one ReLU in between (none after the
final layer).  Each training record expands into one pair per grid point, so
the sample count per epoch is n_x times the record count.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .checkpoint import load_arrays, save_arrays
from .errors import CheckpointError, ContractError, NumericError
from .frechet_net import TrainConfig
from .optim import make_optimizer, schedule_lr
from .sobolev_basis import BasisSet, FunctionElement, build_basis, \
    evaluate_many

SENSOR_LO_DEFAULT = -4.0
SENSOR_HI_DEFAULT = 4.0
N_SENSORS_DEFAULT = 20


@dataclass(frozen=True)
class SensorGrid:
    """Equally spaced sampling points for the branch input."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.shape[0] < 2:
            raise ContractError("need at least two sensor points")
        if not np.isfinite(pts).all():
            raise ContractError("sensor points must be finite")
        steps = np.diff(pts)
        if not np.all(steps > 0):
            raise ContractError("sensor points must be strictly increasing")
        if np.max(steps) - np.min(steps) > 1e-9 * np.max(steps):
            raise ContractError("sensor points must be equally spaced")

    @classmethod
    def uniform(cls, lo=SENSOR_LO_DEFAULT, hi=SENSOR_HI_DEFAULT,
                n=N_SENSORS_DEFAULT):
        return cls(points=np.linspace(lo, hi, n))

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def sensor_sample(basis: BasisSet, fe: FunctionElement,
                  grid: SensorGrid) -> np.ndarray:
    """Evaluate the basis expansion at every sensor point."""
    return evaluate_many(basis, fe.coeffs, grid.points)


def sensor_matrix(basis: BasisSet, coeffs, grid: SensorGrid) -> np.ndarray:
    """Sensor vectors for a whole coefficient block: (records, n_points)."""
    return evaluate_many(basis, np.asarray(coeffs, dtype=np.float64),
                         grid.points)


@dataclass
class DeepONetParams:
    """Weights of both two-layer nets plus the scalar merge bias.

    Naming: bw/bb are branch weights/biases, tw/tb trunk ones, numbered by
    layer.  Weight matrices are (out, in).
    """

    bw1: np.ndarray
    bb1: np.ndarray
    bw2: np.ndarray
    bb2: np.ndarray
    tw1: np.ndarray
    tb1: np.ndarray
    tw2: np.ndarray
    tb2: np.ndarray
    merge_bias: float

    def __post_init__(self):
        for name in ("bw1", "bb1", "bw2", "bb2", "tw1", "tb1", "tw2", "tb2"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, arr)
            if not np.isfinite(arr).all():
                raise ContractError(f"{name} must be finite")
        self.merge_bias = float(self.merge_bias)
        if not math.isfinite(self.merge_bias):
            raise ContractError("merge_bias must be finite")
        width = self.bw1.shape[0]
        expect = {"bw1": (width, self.n_sensors), "bb1": (width,),
                  "bw2": (width, width), "bb2": (width,),
                  "tw1": (width, 1), "tb1": (width,),
                  "tw2": (width, width), "tb2": (width,)}
        for name, want in expect.items():
            got = getattr(self, name).shape
            if got != want:
                raise ContractError(f"{name} must have shape {want}, "
                                    f"got {got}")

    @property
    def n_sensors(self) -> int:
        return self.bw1.shape[1]

    @property
    def width(self) -> int:
        return self.bw1.shape[0]

    @property
    def param_count(self) -> int:
        return sum(getattr(self, n).size for n in
                   ("bw1", "bb1", "bw2", "bb2",
                    "tw1", "tb1", "tw2", "tb2")) + 1


_ARRAY_ORDER = ("bw1", "bb1", "bw2", "bb2", "tw1", "tb1", "tw2", "tb2")


def init_don(n_sensors, width, rng, init_scale=1.0) -> DeepONetParams:
    """Weights uniform(+-init_scale/sqrt(fan_in)), biases and the merge bias
    uniform(+-init_scale); drawn in field order."""
    if not init_scale > 0:
        raise ContractError("init_scale must be positive")

    def w(out_dim, in_dim):
        s = init_scale / math.sqrt(in_dim)
        return rng.uniform(-s, s, (out_dim, in_dim))

    def b(dim):
        return rng.uniform(-init_scale, init_scale, dim)

    return DeepONetParams(
        bw1=w(width, n_sensors), bb1=b(width),
        bw2=w(width, width), bb2=b(width),
        tw1=w(width, 1), tb1=b(width),
        tw2=w(width, width), tb2=b(width),
        merge_bias=float(rng.uniform(-init_scale, init_scale)))


def _forward_pass(params: DeepONetParams, sensors, xs):
    b_pre = sensors @ params.bw1.T + params.bb1
    b_hid = np.maximum(b_pre, 0.0)
    b_vec = b_hid @ params.bw2.T + params.bb2
    t_pre = xs[:, None] @ params.tw1.T + params.tb1
    t_hid = np.maximum(t_pre, 0.0)
    t_vec = t_hid @ params.tw2.T + params.tb2
    out = np.einsum("bw,bw->b", b_vec, t_vec) + params.merge_bias
    return out, (b_pre, b_hid, b_vec, t_pre, t_hid, t_vec)


def forward_don(params: DeepONetParams, sensors, x) -> float:
    """Prediction for one (sensor vector, point) pair."""
    sensors = np.asarray(sensors, dtype=np.float64)
    if sensors.shape != (params.n_sensors,):
        raise ContractError(
            f"sensors must have shape ({params.n_sensors},), "
            f"got {sensors.shape}")
    out, _ = _forward_pass(params, sensors[None, :],
                           np.array([float(x)]))
    return float(out[0])


def forward_don_batch(params: DeepONetParams, sensors, xs) -> np.ndarray:
    sensors = np.asarray(sensors, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    if sensors.ndim != 2 or sensors.shape[1] != params.n_sensors:
        raise ContractError("sensors must be (batch, n_sensors)")
    if xs.shape != (sensors.shape[0],):
        raise ContractError("xs must be (batch,)")
    return _forward_pass(params, sensors, xs)[0]


def loss_and_grad_don(params: DeepONetParams, sensors, xs, targets):
    """Mean squared error and exact gradients for one expanded batch."""
    sensors = np.asarray(sensors, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if sensors.ndim != 2 or sensors.shape[1] != params.n_sensors:
        raise ContractError("sensors must be (batch, n_sensors)")
    bsz = sensors.shape[0]
    if bsz == 0:
        raise ContractError("batch must be nonempty")
    if xs.shape != (bsz,) or targets.shape != (bsz,):
        raise ContractError("xs and targets must be (batch,)")

    out, (b_pre, b_hid, b_vec, t_pre, t_hid, t_vec) = _forward_pass(
        params, sensors, xs)
    residual = out - targets
    per_sample = residual * residual
    if not np.isfinite(per_sample).all():
        bad = int(np.where(~np.isfinite(per_sample))[0][0])
        raise NumericError("non-finite loss", record_index=bad)
    loss = float(per_sample.mean())

    dout = (2.0 / bsz) * residual
    d_bvec = dout[:, None] * t_vec
    d_tvec = dout[:, None] * b_vec
    d_bhid = d_bvec @ params.bw2
    d_bpre = d_bhid * (b_pre > 0)
    d_thid = d_tvec @ params.tw2
    d_tpre = d_thid * (t_pre > 0)
    grads = {
        "bw2": d_bvec.T @ b_hid, "bb2": d_bvec.sum(axis=0),
        "bw1": d_bpre.T @ sensors, "bb1": d_bpre.sum(axis=0),
        "tw2": d_tvec.T @ t_hid, "tb2": d_tvec.sum(axis=0),
        "tw1": d_tpre.T @ xs[:, None], "tb1": d_tpre.sum(axis=0),
        "merge_bias": float(dout.sum()),
    }
    return loss, grads


def expand_batch(basis: BasisSet, grid: SensorGrid, x_grid, coeffs, targets):
    """Turn one record batch into per-point training pairs.

    Record i with targets (t_1..t_n_x) becomes n_x consecutive pairs
    ((sensors_i, x_j), t_j); output arrays have batch * n_x rows.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    x_grid = np.asarray(x_grid, dtype=np.float64)
    if targets.shape != (coeffs.shape[0], x_grid.shape[0]):
        raise ContractError("targets must be (records, n_x)")
    sensors = sensor_matrix(basis, coeffs, grid)
    rep = np.repeat(sensors, x_grid.shape[0], axis=0)
    xs = np.tile(x_grid, coeffs.shape[0])
    return rep, xs, targets.reshape(-1)


def train_don(batch_source, cfg: TrainConfig, init_seed, x_grid,
              basis: Optional[BasisSet] = None,
              grid: Optional[SensorGrid] = None, n_basis=5, width=50):
    """Minibatch loop over record batches, each expanded across the x-grid.

    ``batch_source(epoch)`` yields (coeffs, targets) record batches; the
    loss trace entries are pair-weighted epoch means.  ``cfg.train_activation``
    is meaningless here and must stay off.
    """
    if cfg.train_activation:
        raise ContractError("train_activation does not apply to this model")
    basis = basis or build_basis(n_basis)
    grid = grid or SensorGrid.uniform()
    params = init_don(grid.n_points, width,
                      np.random.default_rng(init_seed),
                      init_scale=cfg.init_scale)
    opt = make_optimizer(cfg.optimizer, cfg.learning_rate,
                         cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    names = list(_ARRAY_ORDER)
    tensors = [getattr(params, n) for n in names]
    merge = np.array([params.merge_bias])
    losses = []
    for epoch in range(cfg.epochs):
        opt.learning_rate = schedule_lr(cfg.learning_rate, cfg.lr_schedule,
                                        epoch, cfg.epochs)
        total, seen = 0.0, 0
        for coeffs, targets in batch_source(epoch):
            sensors, xs, flat = expand_batch(basis, grid, x_grid, coeffs,
                                             targets)
            params.merge_bias = float(merge[0])
            loss, grads = loss_and_grad_don(params, sensors, xs, flat)
            if loss > 1e6:
                raise NumericError(
                    f"training diverged: batch loss {loss:.3g} at epoch "
                    f"{epoch} after {seen} pairs")
            opt.step(tensors + [merge],
                     [grads[n] for n in names]
                     + [np.array([grads["merge_bias"]])])
            total += loss * len(flat)
            seen += len(flat)
        if seen == 0:
            raise ContractError("batch source yielded no data")
        losses.append(total / seen)
    params.merge_bias = float(merge[0])
    return params, losses


def save_checkpoint_don(params: DeepONetParams, path, grid: SensorGrid):
    """Persist weights plus the sensor grid the branch was trained on."""
    arrays = {n: getattr(params, n) for n in _ARRAY_ORDER}
    arrays["merge_bias"] = np.array([params.merge_bias])
    arrays["sensor_points"] = grid.points
    save_arrays(path, kind="deeponet",
                meta={"n_sensors": params.n_sensors, "width": params.width},
                arrays=arrays)


def load_checkpoint_don(path, expected_n_sensors=None):
    """Returns (params, grid).  Raises CheckpointError on any inconsistency."""
    kind, meta, arrays = load_arrays(path)
    if kind != "deeponet":
        raise CheckpointError(f"checkpoint holds a {kind!r} model")
    if expected_n_sensors is not None and \
            meta.get("n_sensors") != expected_n_sensors:
        raise CheckpointError(
            f"checkpoint was built for n_sensors={meta.get('n_sensors')}, "
            f"expected {expected_n_sensors}")
    try:
        params = DeepONetParams(
            **{n: arrays[n] for n in _ARRAY_ORDER},
            merge_bias=float(arrays["merge_bias"][0]))
        grid = SensorGrid(points=arrays["sensor_points"])
    except (KeyError, ContractError) as exc:
        raise CheckpointError(f"inconsistent checkpoint: {exc}")
    return params, grid

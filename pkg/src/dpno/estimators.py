"""Scikit-learn style operator regressors.

All four models wrap into estimators with the usual surface: hyperparameters
stored verbatim in ``__init__`` (so ``get_params``/``set_params``/``clone``
work), ``fit(a, u)``, ``predict(a)``, and ``score(a, u)``. Inputs use the
bundle layouts:

    [N, m]        1-d scalar fields (burgers)
    [N, m, m]     2-d scalar fields (darcy)
    [N, C, m, m]  2-d fields with C channels, channels first (ns snapshots)

``score`` returns the NEGATIVE mean relative L2 error so that greater is
better, per the scikit-learn convention.

``fit`` accepts ``eval_set=(a_test, u_test)`` and ``metrics_path=...`` to
produce the per-epoch metrics CSV; neither affects the fitted model.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .autodiff import Tensor
from .blocks import make_coords
from .models import (
    DeepONetModel,
    DualPathDeepONetModel,
    DualPathFnoModel,
    StackedFnoModel,
    build_from_config,
)
from .training import TrainConfig, evaluate_forward, train_model

__all__ = [
    "FNORegressor",
    "DualPathFNORegressor",
    "DeepONetRegressor",
    "DualPathDeepONetRegressor",
    "estimator_for_model",
    "load_fitted",
]


def _as_internal(a: np.ndarray, dtype) -> tuple:
    """Bundle layout -> [N, *spatial, channels]; returns (fields, layout)."""
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise ValueError("input fields contain non-finite values")
    if a.ndim == 2:
        return a[..., None].astype(dtype), {"ndim": 1, "channels": None}
    if a.ndim == 3:
        return a[..., None].astype(dtype), {"ndim": 2, "channels": None}
    if a.ndim == 4:
        return np.moveaxis(a, 1, -1).astype(dtype), {"ndim": 2, "channels": int(a.shape[1])}
    raise ValueError(
        f"expected [N, m], [N, m, m] or [N, C, m, m] input, got shape {a.shape}"
    )


def _as_external(fields: np.ndarray, layout: dict) -> np.ndarray:
    if layout["channels"] is None:
        return fields[..., 0]
    return np.moveaxis(fields, -1, 1)


def _check_pair(a: np.ndarray, u: np.ndarray) -> None:
    if np.asarray(a).shape != np.asarray(u).shape:
        raise ValueError(
            f"inputs and targets must share the bundle layout, got {np.asarray(a).shape} "
            f"vs {np.asarray(u).shape}"
        )


class _OperatorRegressor(BaseEstimator):
    """Shared fit/predict/score plumbing; subclasses build the model."""

    _kind = None

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, lr=self.lr, test_every=self.test_every,
            batch_size=self.batch_size, seed=self.seed,
            weight_decay=self.weight_decay, precision=self.precision,
            lr_decay_every=self.lr_decay_every, lr_decay_rate=self.lr_decay_rate,
        )

    def _dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def fit(self, a, u, eval_set=None, metrics_path=None, verbose=False):
        _check_pair(a, u)
        cfg = self._train_config()
        dtype = self._dtype()
        fields, layout = _as_internal(a, dtype)
        targets, _ = _as_internal(u, dtype)
        self.layout_ = layout
        self.grid_shape_ = tuple(fields.shape[1 : 1 + layout["ndim"]])
        rng = np.random.default_rng(np.random.SeedSequence([int(self.seed), 0]))
        self.model_ = self._build_model(rng, fields)
        forward = self._forward_fn()
        packed_eval = None
        if eval_set is not None:
            ea, eu = eval_set
            _check_pair(ea, eu)
            packed_eval = (_as_internal(ea, dtype)[0], _as_internal(eu, dtype)[0])
        self.history_ = train_model(
            forward, self.model_.parameters(),
            fields, targets, cfg, eval_set=packed_eval,
            metrics_path=metrics_path, verbose=verbose,
        )
        return self

    def predict(self, a) -> np.ndarray:
        self._require_fitted()
        fields, layout = _as_internal(a, self._dtype())
        if layout != self.layout_:
            raise ValueError(f"input layout {layout} differs from fitted layout {self.layout_}")
        out = self._forward_fn()(fields).data
        return _as_external(out, layout)

    def score(self, a, u) -> float:
        """Negative mean relative L2 (greater is better)."""
        self._require_fitted()
        _check_pair(a, u)
        dtype = self._dtype()
        fields, _ = _as_internal(a, dtype)
        targets, _ = _as_internal(u, dtype)
        return -evaluate_forward(self._forward_fn(), fields, targets, self.batch_size)

    # -- checkpoint surface ------------------------------------------------

    def checkpoint_config(self) -> dict:
        self._require_fitted()
        return {
            "arch": self.model_.arch_config(),
            "estimator": type(self).__name__,
            "params": {k: (list(v) if isinstance(v, tuple) else v)
                       for k, v in self.get_params().items()},
            "layout": dict(self.layout_),
            "grid_shape": list(self.grid_shape_),
        }

    def state_arrays(self) -> dict:
        self._require_fitted()
        return self.model_.state_arrays()


class _FnoFamily(_OperatorRegressor):
    def _modes_tuple(self, ndim: int) -> tuple:
        modes = self.modes
        if np.isscalar(modes):
            return (int(modes),) * ndim
        modes = tuple(int(m) for m in modes)
        if len(modes) != ndim:
            raise ValueError(f"modes {modes} do not match spatial rank {ndim}")
        return modes

    def _coords(self, spatial: tuple) -> np.ndarray:
        return make_coords(spatial, endpoint=(self.grid_mode == "endpoint"),
                           dtype=self._dtype())

    def _forward_fn(self):
        model = self.model_

        def forward(batch: np.ndarray) -> Tensor:
            spatial = batch.shape[1:-1]
            return model(Tensor(batch), self._coords(spatial))

        return forward


class FNORegressor(_FnoFamily):
    """Stacked Fourier-operator baseline: lift, ``depth`` blocks, project."""

    _kind = "fno"

    def __init__(self, width=32, modes=16, depth=4, grid_mode="periodic",
                 epochs=1000, lr=1e-3, batch_size=20, test_every=20,
                 weight_decay=1e-4, seed=0, precision="f64",
                 lr_decay_every=0, lr_decay_rate=1.0):
        self.width = width
        self.modes = modes
        self.depth = depth
        self.grid_mode = grid_mode
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.test_every = test_every
        self.weight_decay = weight_decay
        self.seed = seed
        self.precision = precision
        self.lr_decay_every = lr_decay_every
        self.lr_decay_rate = lr_decay_rate

    def _build_model(self, rng, fields):
        ndim = fields.ndim - 2
        return StackedFnoModel.build(
            rng, d_a=fields.shape[-1], d_u=fields.shape[-1], ndim=ndim,
            width=self.width, modes=self._modes_tuple(ndim), depth=self.depth,
            precision=self.precision,
        )


class DualPathFNORegressor(_FnoFamily):
    """Residual + dense paths of Fourier blocks merged by a pointwise net."""

    _kind = "dp-fno"

    def __init__(self, width=32, modes=16, res_blocks=4, dense_blocks=3,
                 merge_hidden=128, merge_mode="full", grid_mode="periodic",
                 epochs=1000, lr=1e-3, batch_size=20, test_every=20,
                 weight_decay=1e-4, seed=0, precision="f64",
                 lr_decay_every=0, lr_decay_rate=1.0):
        self.width = width
        self.modes = modes
        self.res_blocks = res_blocks
        self.dense_blocks = dense_blocks
        self.merge_hidden = merge_hidden
        self.merge_mode = merge_mode
        self.grid_mode = grid_mode
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.test_every = test_every
        self.weight_decay = weight_decay
        self.seed = seed
        self.precision = precision
        self.lr_decay_every = lr_decay_every
        self.lr_decay_rate = lr_decay_rate

    def _build_model(self, rng, fields):
        ndim = fields.ndim - 2
        return DualPathFnoModel.build(
            rng, d_a=fields.shape[-1], d_u=fields.shape[-1], ndim=ndim,
            width=self.width, modes=self._modes_tuple(ndim),
            res_blocks=self.res_blocks, dense_blocks=self.dense_blocks,
            merge_hidden=self.merge_hidden, merge_mode=self.merge_mode,
            precision=self.precision,
        )


class _DeepONetFamily(_OperatorRegressor):
    """Sensors are the full training grid; queries are the grid coordinates
    (plus normalized snapshot time (t-C)/C for channelled 2-d fields, trunk
    input (x, y, t))."""

    def _queries(self) -> np.ndarray:
        coords = make_coords(self.grid_shape_, endpoint=(self.grid_mode == "endpoint"),
                             dtype=self._dtype())
        flat = coords.reshape(-1, coords.shape[-1])
        ch = self.layout_["channels"]
        if ch is None:
            return flat
        t_norm = (np.arange(1, ch + 1, dtype=self._dtype()) / ch)[:, None, None]
        tiled = np.broadcast_to(flat, (ch,) + flat.shape)
        t_col = np.broadcast_to(t_norm, (ch, flat.shape[0], 1))
        return np.concatenate([tiled, t_col], axis=-1).reshape(-1, coords.shape[-1] + 1)

    def _sensor_view(self, fields: np.ndarray) -> np.ndarray:
        # channels-last internal layout -> flatten per sample in the same
        # (channel-major) order the queries enumerate
        ch = self.layout_["channels"]
        if ch is None:
            return fields.reshape(fields.shape[0], -1)
        return np.moveaxis(fields, -1, 1).reshape(fields.shape[0], -1)

    def _forward_fn(self):
        model = self.model_
        queries = self._queries()
        out_shape = self.grid_shape_
        ch = self.layout_["channels"]

        def forward(batch: np.ndarray) -> Tensor:
            if batch.shape[1 : 1 + len(out_shape)] != out_shape:
                raise ValueError(
                    f"sensor grid {batch.shape[1:1 + len(out_shape)]} differs from the "
                    f"fitted grid {out_shape}"
                )
            from .autodiff import reshape as ad_reshape

            sensors = Tensor(self._sensor_view(batch))
            flat = model(sensors, queries)
            if ch is None:
                return ad_reshape(flat, (batch.shape[0],) + out_shape + (1,))
            per_ch = ad_reshape(flat, (batch.shape[0], ch) + out_shape)
            # back to channels-last internal layout via transpose-free reshape:
            # targets are compared in flattened form, so move axis explicitly
            return _move_channels_last(per_ch)

        return forward

    @property
    def n_sensors_(self) -> int:
        ch = self.layout_["channels"] or 1
        return int(np.prod(self.grid_shape_)) * ch


def _move_channels_last(t: Tensor) -> Tensor:
    """[B, C, *spatial] -> [B, *spatial, C] as a differentiable op."""
    import numpy as _np

    from . import autodiff as ad

    perm = (0,) + tuple(range(2, t.data.ndim)) + (1,)
    out, tape = ad._make_output(_np.ascontiguousarray(t.data.transpose(perm)), (t,), "moveaxis")
    if tape is not None:
        inv = _np.argsort(perm)

        def _bw():
            g = out.grad
            if g is None:
                return
            t.accumulate_grad(g.transpose(tuple(inv)))

        tape.record(_bw)
    return out


class DeepONetRegressor(_DeepONetFamily):
    """Branch/trunk operator regressor with a dot-product combination."""

    _kind = "deeponet"

    def __init__(self, hidden=128, depth=4, basis=128, combine_bias=False,
                 grid_mode="periodic", epochs=1000, lr=1e-3, batch_size=20,
                 test_every=20, weight_decay=1e-4, seed=0, precision="f64",
                 lr_decay_every=0, lr_decay_rate=1.0):
        self.hidden = hidden
        self.depth = depth
        self.basis = basis
        self.combine_bias = combine_bias
        self.grid_mode = grid_mode
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.test_every = test_every
        self.weight_decay = weight_decay
        self.seed = seed
        self.precision = precision
        self.lr_decay_every = lr_decay_every
        self.lr_decay_rate = lr_decay_rate

    def _build_model(self, rng, fields):
        query_dim = (fields.ndim - 2) + (1 if self.layout_["channels"] else 0)
        n_sensors = int(np.prod(fields.shape[1:]))
        return DeepONetModel.build(
            rng, n_sensors=n_sensors, query_dim=query_dim, basis=self.basis,
            hidden=self.hidden, depth=self.depth, combine_bias=self.combine_bias,
            precision=self.precision,
        )


class DualPathDeepONetRegressor(_DeepONetFamily):
    """DeepONet with the dual-path trunk; branch unchanged."""

    _kind = "dp-deeponet"

    def __init__(self, hidden=128, depth=4, basis=128, res_blocks=4,
                 dense_blocks=3, merge_hidden=128, merge_mode="full",
                 grid_mode="periodic", epochs=1000, lr=1e-3, batch_size=20,
                 test_every=20, weight_decay=1e-4, seed=0, precision="f64",
                 lr_decay_every=0, lr_decay_rate=1.0):
        self.hidden = hidden
        self.depth = depth
        self.basis = basis
        self.res_blocks = res_blocks
        self.dense_blocks = dense_blocks
        self.merge_hidden = merge_hidden
        self.merge_mode = merge_mode
        self.grid_mode = grid_mode
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.test_every = test_every
        self.weight_decay = weight_decay
        self.seed = seed
        self.precision = precision
        self.lr_decay_every = lr_decay_every
        self.lr_decay_rate = lr_decay_rate

    def _build_model(self, rng, fields):
        query_dim = (fields.ndim - 2) + (1 if self.layout_["channels"] else 0)
        n_sensors = int(np.prod(fields.shape[1:]))
        return DualPathDeepONetModel.build(
            rng, n_sensors=n_sensors, query_dim=query_dim, basis=self.basis,
            hidden=self.hidden, depth=self.depth, res_blocks=self.res_blocks,
            dense_blocks=self.dense_blocks, merge_hidden=self.merge_hidden,
            merge_mode=self.merge_mode, precision=self.precision,
        )


_ESTIMATORS = {
    "fno": FNORegressor,
    "dp-fno": DualPathFNORegressor,
    "deeponet": DeepONetRegressor,
    "dp-deeponet": DualPathDeepONetRegressor,
}


def estimator_for_model(kind: str, **overrides):
    if kind not in _ESTIMATORS:
        raise ValueError(f"unknown model '{kind}' (choose from {sorted(_ESTIMATORS)})")
    return _ESTIMATORS[kind](**overrides)


def load_fitted(arrays: dict, config: dict):
    """Rebuild a fitted estimator from checkpoint arrays + config echo."""
    name = config.get("estimator")
    classes = {cls.__name__: cls for cls in _ESTIMATORS.values()}
    if name not in classes:
        raise ValueError(f"checkpoint names unknown estimator '{name}'")
    params = dict(config["params"])
    for key, val in params.items():
        if isinstance(val, list):
            params[key] = tuple(val)
    est = classes[name](**params)
    est.layout_ = dict(config["layout"])
    est.grid_shape_ = tuple(config["grid_shape"])
    est.model_ = build_from_config(config["arch"])
    est.model_.load_state(arrays)
    est.history_ = {}
    return est

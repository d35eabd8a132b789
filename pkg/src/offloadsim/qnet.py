"""Minimal fully-connected value network with hand-derived backprop.

Two tanh hidden layers (200 units each by default) and a linear head, one
output per joint action. Parameters are plain numpy arrays so they can be
copied, averaged and serialized without any framework.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

import numpy as np

LAYER_ORDER = ("w1", "b1", "w2", "b2", "w3", "b3")
DEFAULT_HIDDEN = (200, 200)


@dataclass
class QNetParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def action_count(self) -> int:
        return self.w3.shape[0]

    def layers(self):
        return [(name, getattr(self, name)) for name in LAYER_ORDER]


@dataclass
class Gradients:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def layers(self):
        return [(name, getattr(self, name)) for name in LAYER_ORDER]


def init(input_dim: int, action_count: int, rng: np.random.Generator,
         hidden=DEFAULT_HIDDEN) -> QNetParams:
    """Symmetric uniform fan-based weights, zero biases, deterministic per stream."""
    if input_dim < 1 or action_count < 1 or min(hidden) < 1:
        raise ValueError("all layer widths must be >= 1")
    h1, h2 = hidden

    def layer(fan_out, fan_in):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_out, fan_in))

    return QNetParams(
        w1=layer(h1, input_dim), b1=np.zeros(h1),
        w2=layer(h2, h1), b2=np.zeros(h2),
        w3=layer(action_count, h2), b3=np.zeros(action_count),
    )


def forward(params: QNetParams, x: np.ndarray) -> np.ndarray:
    """Q-value vector for a feature vector, or a row of vectors per batch row."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.input_dim:
        raise ValueError(
            f"expected {params.input_dim} input features, got {x.shape[-1]}"
        )
    a1 = np.tanh(x @ params.w1.T + params.b1)
    a2 = np.tanh(a1 @ params.w2.T + params.b2)
    return a2 @ params.w3.T + params.b3


def backward(params: QNetParams, x: np.ndarray,
             upstream: np.ndarray) -> Gradients:
    """Exact gradients of the mean (over batch rows) loss wrt every parameter.

    ``upstream`` holds dLoss_i/dq for each sample i; a 1-D input is treated
    as a batch of one.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    upstream = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if x.shape[0] != upstream.shape[0]:
        raise ValueError("batch sizes of input and upstream differ")
    if upstream.shape[1] != params.action_count:
        raise ValueError("upstream width must equal the action count")
    batch = x.shape[0]

    a1 = np.tanh(x @ params.w1.T + params.b1)
    a2 = np.tanh(a1 @ params.w2.T + params.b2)

    dz3 = upstream / batch
    dw3 = dz3.T @ a2
    db3 = dz3.sum(axis=0)
    dz2 = (dz3 @ params.w3) * (1.0 - a2 * a2)
    dw2 = dz2.T @ a1
    db2 = dz2.sum(axis=0)
    dz1 = (dz2 @ params.w2) * (1.0 - a1 * a1)
    dw1 = dz1.T @ x
    db1 = dz1.sum(axis=0)
    return Gradients(dw1, db1, dw2, db2, dw3, db3)


def apply_gradients(params: QNetParams, grads: Gradients,
                    learning_rate: float) -> QNetParams:
    """Plain gradient-descent step, in place; rejects non-finite gradients."""
    if learning_rate <= 0.0:
        raise ValueError("learning rate must be > 0")
    for name, g in grads.layers():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}; update rejected")
    for name, g in grads.layers():
        getattr(params, name)[...] -= learning_rate * g
    return params


def copy_params(src: QNetParams) -> QNetParams:
    return QNetParams(*(getattr(src, f.name).copy() for f in fields(src)))


def params_equal(a: QNetParams, b: QNetParams) -> bool:
    return all(np.array_equal(getattr(a, n), getattr(b, n)) for n in LAYER_ORDER)


def to_payload(params: QNetParams) -> dict:
    """JSON-ready dict of nested float lists, layer order fixed."""
    return {name: arr.tolist() for name, arr in params.layers()}


def from_payload(payload: dict) -> QNetParams:
    if not isinstance(payload, dict):
        raise ValueError("weight payload must be a JSON object")
    missing = [n for n in LAYER_ORDER if n not in payload]
    if missing:
        raise ValueError(f"weight payload missing layers: {missing}")
    arrays = {}
    for name in LAYER_ORDER:
        arr = np.asarray(payload[name], dtype=np.float64)
        if arr.ndim != (2 if name.startswith("w") else 1):
            raise ValueError(f"layer {name} has the wrong rank")
        arrays[name] = arr
    p = QNetParams(**arrays)
    if p.w1.shape[0] != p.b1.shape[0] or p.w2.shape[0] != p.b2.shape[0] \
            or p.w3.shape[0] != p.b3.shape[0] or p.w2.shape[1] != p.w1.shape[0] \
            or p.w3.shape[1] != p.w2.shape[0]:
        raise ValueError("layer shapes are inconsistent")
    return p


def serialize(params: QNetParams) -> str:
    return json.dumps(to_payload(params))


def deserialize(text: str) -> QNetParams:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed weight payload: {exc}") from exc
    return from_payload(payload)

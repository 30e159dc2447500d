"""Single-layer LSTM with a tanh readout, hand-derived forward/backward.

The recurrent cell uses the standard forget/input/output gating over the
concatenated ``[hidden, input]`` vector.  For a length-T sequence the network
unrolls T cell steps from zero initial state and maps the final hidden state
through a tanh dense head.  The backward pass accumulates exact gradients of
the mean-squared error through the full unroll; no autodiff framework is
involved, so every operation here is plain float64 numpy and bit-reproducible
for fixed inputs.

All parameter containers are immutable: optimizer steps return new containers
and never write in place, which keeps shared initializations safe to adapt
from concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

PARAM_FIELDS = ("w_f", "w_i", "w_c", "w_o", "b_f", "b_i", "b_c", "b_o", "w_y", "b_y")

DEFAULT_HIDDEN_SIZE = 32

# Stacking order of the gate blocks inside the fused (4H, H+D) weight matrix.
_GATE_FIELDS = ("w_f", "w_i", "w_c", "w_o")
_GATE_BIASES = ("b_f", "b_i", "b_c", "b_o")


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


@dataclass(frozen=True)
class _ParamContainer:
    """Shape-congruent bundle of the network's weights and biases.

    ``w_f/w_i/w_c/w_o`` are (H, H+D_in) gate matrices acting on the
    concatenated ``[hidden, input]`` vector, ``b_*`` their (H,) biases;
    ``w_y`` (D_out, H) and ``b_y`` (D_out,) form the readout.
    """

    w_f: np.ndarray
    w_i: np.ndarray
    w_c: np.ndarray
    w_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray
    w_y: np.ndarray
    b_y: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.w_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_f.shape[1] - self.w_f.shape[0]

    @property
    def output_size(self) -> int:
        return self.w_y.shape[0]

    def arrays(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, f) for f in PARAM_FIELDS)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def map(self, fn) -> "_ParamContainer":
        return type(self)(**{f: fn(getattr(self, f)) for f in PARAM_FIELDS})

    def zip_map(self, other: "_ParamContainer", fn) -> "_ParamContainer":
        return type(self)(
            **{f: fn(getattr(self, f), getattr(other, f)) for f in PARAM_FIELDS}
        )

    def from_vector(self, vec: np.ndarray) -> "_ParamContainer":
        """Rebuild a congruent container from a flat vector (test helper)."""
        out = {}
        offset = 0
        for name in PARAM_FIELDS:
            arr = getattr(self, name)
            n = arr.size
            out[name] = vec[offset : offset + n].reshape(arr.shape).copy()
            offset += n
        if offset != vec.size:
            raise ValidationError(f"vector length {vec.size} != parameter count {offset}")
        return type(self)(**out)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


class ModelParams(_ParamContainer):
    @staticmethod
    def zeros(hidden_size: int, input_size: int, output_size: int) -> "ModelParams":
        concat = hidden_size + input_size
        return ModelParams(
            w_f=np.zeros((hidden_size, concat)),
            w_i=np.zeros((hidden_size, concat)),
            w_c=np.zeros((hidden_size, concat)),
            w_o=np.zeros((hidden_size, concat)),
            b_f=np.zeros(hidden_size),
            b_i=np.zeros(hidden_size),
            b_c=np.zeros(hidden_size),
            b_o=np.zeros(hidden_size),
            w_y=np.zeros((output_size, hidden_size)),
            b_y=np.zeros(output_size),
        )


class ParamGrads(_ParamContainer):
    @staticmethod
    def zeros_like(params: _ParamContainer) -> "ParamGrads":
        return ParamGrads(**{f: np.zeros_like(getattr(params, f)) for f in PARAM_FIELDS})


def init_params(
    hidden_size: int,
    input_size: int,
    output_size: int,
    rng: np.random.Generator,
) -> ModelParams:
    """Seeded initialization: Xavier-uniform weights, forget bias at 1.

    The forget-gate bias starts at 1.0 so early cell state survives long
    enough for gradients to flow; all other biases start at 0.
    """
    if min(hidden_size, input_size, output_size) < 1:
        raise ValidationError("all dimensions must be positive")

    def xavier(rows: int, cols: int) -> np.ndarray:
        s = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-s, s, size=(rows, cols))

    concat = hidden_size + input_size
    return ModelParams(
        w_f=xavier(hidden_size, concat),
        w_i=xavier(hidden_size, concat),
        w_c=xavier(hidden_size, concat),
        w_o=xavier(hidden_size, concat),
        b_f=np.ones(hidden_size),
        b_i=np.zeros(hidden_size),
        b_c=np.zeros(hidden_size),
        b_o=np.zeros(hidden_size),
        w_y=xavier(output_size, hidden_size),
        b_y=np.zeros(output_size),
    )


@dataclass(frozen=True)
class CellState:
    """One step's hidden/cell state plus the gate activations cached for BPTT."""

    h: np.ndarray
    c: np.ndarray
    forget_gate: np.ndarray
    input_gate: np.ndarray
    output_gate: np.ndarray
    candidate: np.ndarray
    tanh_c: np.ndarray
    # concatenated [h_prev, x] the gates were computed from
    z: np.ndarray

    @staticmethod
    def initial(batch: int, hidden_size: int) -> "CellState":
        z = np.zeros((batch, 0))
        h = np.zeros((batch, hidden_size))
        return CellState(h=h, c=h.copy(), forget_gate=h, input_gate=h,
                         output_gate=h, candidate=h, tanh_c=h, z=z)


def _stack_gates(params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    w_all = np.concatenate([getattr(params, f) for f in _GATE_FIELDS], axis=0)
    b_all = np.concatenate([getattr(params, f) for f in _GATE_BIASES])
    return w_all, b_all


def cell_step(params: ModelParams, x: np.ndarray, state: CellState) -> CellState:
    """Advance the recurrent cell by one time step.

    ``x`` is (D_in,) or (batch, D_in); the returned state is always batched.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise ValidationError("non-finite input to cell_step")
    if x.shape[1] != params.input_size:
        raise ValidationError(
            f"input width {x.shape[1]} != expected {params.input_size}"
        )
    w_all, b_all = _stack_gates(params)
    return _cell_step_fused(params.hidden_size, w_all, b_all, x, state)


def _cell_step_fused(
    hidden: int, w_all: np.ndarray, b_all: np.ndarray, x: np.ndarray, state: CellState
) -> CellState:
    z = np.concatenate([state.h, x], axis=1)
    a = z @ w_all.T + b_all
    f = sigmoid(a[:, :hidden])
    i = sigmoid(a[:, hidden : 2 * hidden])
    cand = np.tanh(a[:, 2 * hidden : 3 * hidden])
    o = sigmoid(a[:, 3 * hidden :])
    c = f * state.c + i * cand
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return CellState(h=h, c=c, forget_gate=f, input_gate=i, output_gate=o,
                     candidate=cand, tanh_c=tanh_c, z=z)


@dataclass(frozen=True)
class ForwardTape:
    """Everything backward() needs: per-step caches and the readout."""

    params: ModelParams
    states: tuple[CellState, ...]
    prediction: np.ndarray  # (batch, D_out)
    batched_input: bool     # False when the caller passed a single sequence


def forward(params: ModelParams, sequence: np.ndarray) -> tuple[np.ndarray, ForwardTape]:
    """Run the unrolled network over ``sequence``.

    ``sequence`` is (T, D_in) for one sample or (batch, T, D_in); the
    prediction is tanh of the readout of the final hidden state, shaped
    (D_out,) respectively (batch, D_out).
    """
    seq = np.asarray(sequence, dtype=float)
    batched = seq.ndim == 3
    if not batched:
        if seq.ndim != 2:
            raise ValidationError(f"sequence must be 2- or 3-dimensional, got {seq.ndim}")
        seq = seq[np.newaxis]
    if seq.shape[1] < 1:
        raise ValidationError("sequence length must be >= 1")
    if seq.shape[2] != params.input_size:
        raise ValidationError(
            f"input width {seq.shape[2]} != expected {params.input_size}"
        )
    if not np.all(np.isfinite(seq)):
        raise ValidationError("non-finite input sequence")

    batch, steps, _ = seq.shape
    w_all, b_all = _stack_gates(params)
    state = CellState.initial(batch, params.hidden_size)
    states = []
    for t in range(steps):
        state = _cell_step_fused(params.hidden_size, w_all, b_all, seq[:, t, :], state)
        states.append(state)

    pred = np.tanh(state.h @ params.w_y.T + params.b_y)
    tape = ForwardTape(params=params, states=tuple(states), prediction=pred,
                       batched_input=batched)
    return (pred if batched else pred[0]), tape


def mse_loss(pred: np.ndarray, label: np.ndarray) -> float:
    """Mean squared error over components, and over samples for batches."""
    pred = np.asarray(pred, dtype=float)
    label = np.asarray(label, dtype=float)
    if pred.shape != label.shape:
        raise ValidationError(f"shape mismatch: pred {pred.shape} vs label {label.shape}")
    return float(np.mean((pred - label) ** 2))


def backward(tape: ForwardTape, label: np.ndarray) -> ParamGrads:
    """Exact gradient of the batch-mean MSE w.r.t. every parameter."""
    params = tape.params
    hidden = params.hidden_size
    pred = tape.prediction
    label = np.asarray(label, dtype=float)
    if not tape.batched_input and label.ndim == 1:
        label = label[np.newaxis]
    if label.shape != pred.shape:
        raise ValidationError(f"label shape {label.shape} does not match prediction {pred.shape}")

    batch = pred.shape[0]
    # d(mean MSE)/d(pred); the 1/(batch*D_out) factor makes batch gradients
    # the mean of per-sample gradients.
    dpred = 2.0 * (pred - label) / pred.size
    da_y = dpred * (1.0 - pred ** 2)

    h_last = tape.states[-1].h
    g_w_y = da_y.T @ h_last
    g_b_y = da_y.sum(axis=0)
    dh = da_y @ params.w_y

    w_all, _ = _stack_gates(params)
    g_w_all = np.zeros_like(w_all)
    g_b_all = np.zeros(4 * hidden)
    dc_carry = np.zeros((batch, hidden))

    for t in range(len(tape.states) - 1, -1, -1):
        st = tape.states[t]
        c_prev = tape.states[t - 1].c if t > 0 else np.zeros((batch, hidden))
        dc = dh * st.output_gate * (1.0 - st.tanh_c ** 2) + dc_carry
        da_o = dh * st.tanh_c * st.output_gate * (1.0 - st.output_gate)
        da_f = dc * c_prev * st.forget_gate * (1.0 - st.forget_gate)
        da_i = dc * st.candidate * st.input_gate * (1.0 - st.input_gate)
        da_c = dc * st.input_gate * (1.0 - st.candidate ** 2)
        da_all = np.concatenate([da_f, da_i, da_c, da_o], axis=1)
        g_w_all += da_all.T @ st.z
        g_b_all += da_all.sum(axis=0)
        dz = da_all @ w_all
        dh = dz[:, :hidden]
        dc_carry = dc * st.forget_gate

    return ParamGrads(
        w_f=g_w_all[:hidden],
        w_i=g_w_all[hidden : 2 * hidden],
        w_c=g_w_all[2 * hidden : 3 * hidden],
        w_o=g_w_all[3 * hidden :],
        b_f=g_b_all[:hidden],
        b_i=g_b_all[hidden : 2 * hidden],
        b_c=g_b_all[2 * hidden : 3 * hidden],
        b_o=g_b_all[3 * hidden :],
        w_y=g_w_y,
        b_y=g_b_y,
    )


def loss_and_grads(
    params: ModelParams, inputs: np.ndarray, labels: np.ndarray
) -> tuple[float, ParamGrads]:
    """One fused forward/backward pass over a batch."""
    pred, tape = forward(params, inputs)
    return mse_loss(pred, labels), backward(tape, labels)


def sgd_step(params: ModelParams, grads: ParamGrads, lr: float) -> ModelParams:
    if lr <= 0:
        raise ValidationError("learning rate must be positive")
    return ModelParams(
        **{f: getattr(params, f) - lr * getattr(grads, f) for f in PARAM_FIELDS}
    )


@dataclass(frozen=True)
class AdamState:
    """First/second moment estimates plus the step counter."""

    mean: ParamGrads
    var: ParamGrads
    step: int

    @staticmethod
    def fresh(params: ModelParams) -> "AdamState":
        return AdamState(mean=ParamGrads.zeros_like(params),
                         var=ParamGrads.zeros_like(params), step=0)


def adam_step(
    params: ModelParams,
    grads: ParamGrads,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ModelParams, AdamState]:
    """Standard Adam update with bias correction."""
    if lr <= 0:
        raise ValidationError("learning rate must be positive")
    t = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    corr1 = 1.0 - beta1 ** t
    corr2 = 1.0 - beta2 ** t
    for f in PARAM_FIELDS:
        g = getattr(grads, f)
        m = beta1 * getattr(state.mean, f) + (1.0 - beta1) * g
        v = beta2 * getattr(state.var, f) + (1.0 - beta2) * g * g
        new_m[f] = m
        new_v[f] = v
        new_p[f] = getattr(params, f) - lr * (m / corr1) / (np.sqrt(v / corr2) + eps)
    return (
        ModelParams(**new_p),
        AdamState(mean=ParamGrads(**new_m), var=ParamGrads(**new_v), step=t),
    )


def clip_grads(grads: ParamGrads, max_norm: float) -> ParamGrads:
    """Optional global-norm clip; identity when already within the bound."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.arrays())))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return grads.map(lambda a: a * scale)


def params_checksum(params: _ParamContainer) -> int:
    """Cheap content hash used by immutability tests."""
    import hashlib

    digest = hashlib.sha256()
    for a in params.arrays():
        digest.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return int.from_bytes(digest.digest()[:8], "big")

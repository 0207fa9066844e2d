"""LSTM sequence-to-sequence autoencoder, implemented from scratch on numpy.

Architecture: a two-layer LSTM encoder reads the segment one sample per step;
the final hidden state of the second layer is the latent code. The decoder is a
mirrored two-layer LSTM that receives the latent as its input at every step
(repeat-vector scheme, zero initial states), and a linear projection maps the
top decoder hidden state to one output sample per step, in original time order.

Training is plain minibatch Adam on mean-squared reconstruction error with
global-norm gradient clipping, Xavier-uniform initialization, and a forget-gate
bias of +1. Everything runs in float64 and is deterministic given the seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .dsp import PIPELINE_RATE_HZ, SEGMENT_LEN_S, Segment

MODEL_VERSION = "pulseguard.lstm-ae.v1"
DEFAULT_HIDDEN = (80, 40)
DEFAULT_SEQ_LEN = 256
GATE_NAMES = ("i", "f", "g", "o")
# Stacked row-block order: sigmoid gates first so one expit call covers them.
_STACK_ORDER = ("i", "f", "o", "g")

_INFER_CHUNK = 256


class NnetError(ValueError):
    """Bad arguments or state in the network API."""


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or empty corpus)."""


class ModelIOError(Exception):
    """Base class for model (de)serialization failures."""


class ModelFormatError(ModelIOError):
    """File is not a well-formed model document."""


class ModelVersionError(ModelIOError):
    """Model document carries an unsupported version tag."""


class ModelDimensionError(ModelIOError):
    """Model document's parameter shapes are inconsistent."""


@dataclass(eq=False)
class LstmLayerParams:
    """One LSTM layer: per-gate input weights W_*, recurrent weights U_*, biases b_*."""

    input_dim: int
    hidden_dim: int
    W_i: np.ndarray
    W_f: np.ndarray
    W_g: np.ndarray
    W_o: np.ndarray
    U_i: np.ndarray
    U_f: np.ndarray
    U_g: np.ndarray
    U_o: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray

    def validate(self) -> None:
        d, h = self.input_dim, self.hidden_dim
        for g in GATE_NAMES:
            w, u, b = getattr(self, f"W_{g}"), getattr(self, f"U_{g}"), getattr(self, f"b_{g}")
            if w.shape != (h, d) or u.shape != (h, h) or b.shape != (h,):
                raise NnetError(f"layer parameter W/U/b_{g} shapes inconsistent with ({h},{d})")
            if not (np.isfinite(w).all() and np.isfinite(u).all() and np.isfinite(b).all()):
                raise NnetError(f"non-finite values in gate {g}")

    @classmethod
    def xavier(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator,
               forget_bias: float = 1.0) -> "LstmLayerParams":
        def w(fan_in, fan_out, shape):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, size=shape)

        kw = {}
        for g in GATE_NAMES:
            kw[f"W_{g}"] = w(input_dim, hidden_dim, (hidden_dim, input_dim))
            kw[f"U_{g}"] = w(hidden_dim, hidden_dim, (hidden_dim, hidden_dim))
            kw[f"b_{g}"] = np.zeros(hidden_dim)
        kw["b_f"] = np.full(hidden_dim, forget_bias, dtype=np.float64)
        return cls(input_dim=input_dim, hidden_dim=hidden_dim, **kw)


@dataclass(eq=False)
class ModelParams:
    """Complete autoencoder: encoder and decoder layer stacks plus output projection."""

    encoder: list[LstmLayerParams]
    decoder: list[LstmLayerParams]
    output_w: np.ndarray  # (1, decoder[-1].hidden_dim)
    output_b: np.ndarray  # shape (1,)
    seq_len: int = DEFAULT_SEQ_LEN
    pipeline_rate_hz: float = PIPELINE_RATE_HZ
    segment_len_s: float = SEGMENT_LEN_S
    version: str = MODEL_VERSION

    @property
    def encoder_hidden(self) -> list[int]:
        return [l.hidden_dim for l in self.encoder]

    @property
    def decoder_hidden(self) -> list[int]:
        return [l.hidden_dim for l in self.decoder]

    @property
    def latent_dim(self) -> int:
        return self.encoder[-1].hidden_dim

    def validate(self) -> None:
        if len(self.encoder) != 2 or len(self.decoder) != 2:
            raise NnetError("expected two encoder and two decoder layers")
        if self.seq_len < 1:
            raise NnetError("seq_len must be positive")
        for layer in (*self.encoder, *self.decoder):
            layer.validate()
        if self.encoder[0].input_dim != 1:
            raise NnetError("encoder input dimension must be 1")
        if self.encoder[1].input_dim != self.encoder[0].hidden_dim:
            raise NnetError("encoder layer dimensions do not chain")
        if self.decoder[0].input_dim != self.latent_dim:
            raise NnetError("decoder input dimension must equal the latent dimension")
        if self.decoder[1].input_dim != self.decoder[0].hidden_dim:
            raise NnetError("decoder layer dimensions do not chain")
        if self.output_w.shape != (1, self.decoder[-1].hidden_dim):
            raise NnetError("output projection shape mismatch")
        if self.output_b.shape != (1,):
            raise NnetError("output bias must have shape (1,)")


def init_model(seed_or_rng, hidden1: int = DEFAULT_HIDDEN[0], hidden2: int = DEFAULT_HIDDEN[1],
               seq_len: int = DEFAULT_SEQ_LEN, pipeline_rate_hz: float = PIPELINE_RATE_HZ,
               segment_len_s: float = SEGMENT_LEN_S) -> ModelParams:
    """Xavier-uniform model with forget-gate bias +1 and mirrored decoder sizes."""
    rng = np.random.default_rng(seed_or_rng) if not isinstance(seed_or_rng, np.random.Generator) \
        else seed_or_rng
    limit = math.sqrt(6.0 / (hidden1 + 1))
    model = ModelParams(
        encoder=[
            LstmLayerParams.xavier(1, hidden1, rng),
            LstmLayerParams.xavier(hidden1, hidden2, rng),
        ],
        decoder=[
            LstmLayerParams.xavier(hidden2, hidden2, rng),
            LstmLayerParams.xavier(hidden2, hidden1, rng),
        ],
        output_w=rng.uniform(-limit, limit, size=(1, hidden1)),
        output_b=np.zeros(1),
        seq_len=seq_len,
        pipeline_rate_hz=pipeline_rate_hz,
        segment_len_s=segment_len_s,
    )
    model.validate()
    return model


def sigmoid(x):
    """Logistic function, computed as 0.5*(1 + tanh(x/2)).

    numpy's tanh has a SIMD kernel while scipy's expit does not, and the fast
    path spends most of its time in gate activations; the tanh form keeps the
    reference step and the batched path numerically identical.
    """
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def lstm_step(layer: LstmLayerParams, x, h_prev, c_prev):
    """Single LSTM cell step; the readable reference for the batched fast path.

    i = sigmoid(W_i x + U_i h + b_i), f likewise, g = tanh(...), o = sigmoid(...),
    c = f*c_prev + i*g, h = o*tanh(c).
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    h_prev = np.asarray(h_prev, dtype=np.float64).reshape(-1)
    c_prev = np.asarray(c_prev, dtype=np.float64).reshape(-1)
    if x.size != layer.input_dim or h_prev.size != layer.hidden_dim or c_prev.size != layer.hidden_dim:
        raise NnetError(
            f"lstm_step dimension mismatch: x {x.size}, h {h_prev.size}, c {c_prev.size} "
            f"for layer ({layer.hidden_dim}, {layer.input_dim})"
        )
    i = sigmoid(layer.W_i @ x + layer.U_i @ h_prev + layer.b_i)
    f = sigmoid(layer.W_f @ x + layer.U_f @ h_prev + layer.b_f)
    g = np.tanh(layer.W_g @ x + layer.U_g @ h_prev + layer.b_g)
    o = sigmoid(layer.W_o @ x + layer.U_o @ h_prev + layer.b_o)
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


def loss_mse(recon, target) -> float:
    recon = np.asarray(recon, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if recon.shape != target.shape:
        raise NnetError(f"loss_mse shape mismatch: {recon.shape} vs {target.shape}")
    return float(np.mean((recon - target) ** 2))


# ---------------------------------------------------------------------------
# Stacked fast path. Parameters of a layer are fused into W (4H, D), U (4H, H)
# and b (4H,) with row blocks ordered i, f, o, g: the three sigmoid gates sit
# in one contiguous block so their activation is a single tanh pass. All batch
# math is laid out feature-major, (..., H, B), to keep every activation and
# gate view contiguous; strided transcendental calls fall off numpy's SIMD
# kernels and dominated the runtime in the naive layout.
# ---------------------------------------------------------------------------

def _stack_layer(p: LstmLayerParams):
    W = np.concatenate([getattr(p, f"W_{g}") for g in _STACK_ORDER], axis=0)
    U = np.concatenate([getattr(p, f"U_{g}") for g in _STACK_ORDER], axis=0)
    b = np.concatenate([getattr(p, f"b_{g}") for g in _STACK_ORDER])
    return W, U, b


def _unstack_gates(arr: np.ndarray) -> dict[str, np.ndarray]:
    blocks = np.split(arr, 4, axis=0)
    return dict(zip(_STACK_ORDER, blocks))


class _Stacked:
    """Fused-parameter view of a model, shared by training and inference."""

    def __init__(self, model: ModelParams):
        model.validate()
        self.layers = [_stack_layer(p) for p in (*model.encoder, *model.decoder)]
        self.out_w = model.output_w
        self.out_b = model.output_b
        self.seq_len = model.seq_len
        self.hidden = [p.hidden_dim for p in (*model.encoder, *model.decoder)]
        self.input_dims = [p.input_dim for p in (*model.encoder, *model.decoder)]
        self._ws: dict[tuple, dict[str, np.ndarray]] = {}

    def workspace(self, B: int, kind: str) -> dict[str, np.ndarray]:
        """Reusable per-batch-size buffers; every slot is fully overwritten
        before it is read, so reuse cannot leak state between batches."""
        key = (B, kind)
        if key not in self._ws:
            T = self.seq_len
            ws: dict[str, np.ndarray] = {}
            for idx, h in enumerate(self.hidden):
                ws[f"xp{idx}"] = np.empty((T, 4 * h, B)) if idx != 2 else np.empty((4 * h, B))
                ws[f"hseq{idx}"] = np.empty((T, h, B))
            if kind == "train":
                for idx, h in enumerate(self.hidden):
                    ws[f"G{idx}"] = np.empty((T, 4 * h, B))
                    ws[f"C{idx}"] = np.empty((T, h, B))
                    ws[f"TC{idx}"] = np.empty((T, h, B))
                for h in set(self.hidden):
                    ws[f"dA{h}"] = np.empty((T, 4 * h, B))
                    ws[f"dX{h}"] = np.empty((T, h, B))
            self._ws[key] = ws
        return self._ws[key]


def _activate_gates(a: np.ndarray, H: int) -> None:
    """In place: logistic on rows [0, 3H) via tanh(x/2), tanh on rows [3H, 4H)."""
    sig = a[: 3 * H]
    sig *= 0.5
    np.tanh(a, out=a)
    sig += 1.0
    sig *= 0.5


def _layer_forward_fast(U, xp, H_seq, G=None, C=None, TC=None):
    """One layer for T steps, feature-major. xp (T, 4H, B) or (4H, B) when the
    input is constant (repeat-vector decoder), with the bias already added.
    With cache arrays given, stores activated gates G, cell states C, and
    tanh(c) TC for BPTT; H_seq always receives the hidden-state sequence."""
    T = H_seq.shape[0]
    H, B = H_seq.shape[1], H_seq.shape[2]
    keep = G is not None
    const = xp.ndim == 2
    h = np.zeros((H, B))
    c = np.zeros((H, B))
    Uh = np.empty((4 * H, B))
    a_step = np.empty((4 * H, B))
    ig = np.empty((H, B))
    tc_step = np.empty((H, B))
    for t in range(T):
        a = G[t] if keep else a_step
        np.dot(U, h, out=Uh)
        np.add(xp if const else xp[t], Uh, out=a)
        _activate_gates(a, H)
        i, f, o, g = a[:H], a[H : 2 * H], a[2 * H : 3 * H], a[3 * H :]
        np.multiply(i, g, out=ig)
        c_new = C[t] if keep else c
        np.multiply(f, c, out=c_new)
        c_new += ig
        c = c_new
        tc = TC[t] if keep else tc_step
        np.tanh(c, out=tc)
        np.multiply(o, tc, out=H_seq[t])
        h = H_seq[t]
    return h


def _layer_backward_fast(U, G, C, TC, H_seq, dh_out, dh_last, dA):
    """BPTT through one layer (feature-major). dh_out (T, H, B) carries per-step
    upstream gradients (may be None); dh_last seeds only the final step. Writes
    pre-activation gradients into dA (T, 4H, B) and returns it. The loop runs
    entirely on preallocated buffers."""
    T, H4, B = G.shape
    H = H4 // 4
    Ut = np.ascontiguousarray(U.T)
    dh_rec = np.zeros((H, B))
    dc_rec = np.zeros((H, B))
    if dh_last is not None:
        dh_rec += dh_last
    zeros = np.zeros((H, B))
    dh = np.empty((H, B))
    do = np.empty((H, B))
    dc = np.empty((H, B))
    t1 = np.empty((H, B))
    for t in range(T - 1, -1, -1):
        a = G[t]
        i, f, o, g = a[:H], a[H : 2 * H], a[2 * H : 3 * H], a[3 * H :]
        tc = TC[t]
        if dh_out is None:
            dh, dh_rec = dh_rec, dh
        else:
            np.add(dh_out[t], dh_rec, out=dh)
        np.multiply(dh, tc, out=do)  # dh * tanh(c), feeds the o-gate grad
        np.multiply(tc, tc, out=t1)
        np.subtract(1.0, t1, out=t1)
        np.multiply(dh, o, out=dc)
        dc *= t1
        dc += dc_rec
        c_prev = C[t - 1] if t > 0 else zeros
        d = dA[t]
        d_i, d_f, d_o, d_g = d[:H], d[H : 2 * H], d[2 * H : 3 * H], d[3 * H :]
        np.subtract(1.0, i, out=t1)
        t1 *= i
        np.multiply(dc, g, out=d_i)
        d_i *= t1
        np.subtract(1.0, f, out=t1)
        t1 *= f
        np.multiply(dc, c_prev, out=d_f)
        d_f *= t1
        np.subtract(1.0, o, out=t1)
        t1 *= o
        np.multiply(do, t1, out=d_o)
        np.multiply(g, g, out=t1)
        np.subtract(1.0, t1, out=t1)
        np.multiply(dc, i, out=d_g)
        d_g *= t1
        np.multiply(dc, f, out=dc_rec)
        np.dot(Ut, d, out=dh_rec)
    return dA


def _grad_WUb(dA, x_seq, H_seq):
    """Weight, recurrent, and bias gradients from per-step pre-activation grads.

    dA (T, 4H, B); x_seq (T, D, B) or (D, B) for a constant input; H_seq is the
    layer's own hidden sequence (h_prev comes from shifting it one step).
    """
    if x_seq.ndim == 2:
        dW = dA.sum(axis=0) @ x_seq.T
    else:
        dW = np.tensordot(dA, x_seq, axes=([0, 2], [0, 2]))
    dU = np.tensordot(dA[1:], H_seq[:-1], axes=([0, 2], [0, 2]))
    db = dA.sum(axis=(0, 2))
    return dW, dU, db


def _forward(stacked: _Stacked, X: np.ndarray, keep_cache: bool):
    """Full autoencoder forward over a batch X of shape (B, T); returns the
    reconstruction (B, T) and, for training, the context for the backward pass."""
    T = stacked.seq_len
    B = X.shape[0]
    (W1, U1, b1), (W2, U2, b2), (W3, U3, b3), (W4, U4, b4) = stacked.layers
    ws = stacked.workspace(B, "train" if keep_cache else "infer")
    x_T = np.ascontiguousarray(X.T)  # (T, B)

    # Input projections with biases folded in; xp shapes (T, 4H, B).
    np.multiply(W1[:, 0][None, :, None], x_T[:, None, :], out=ws["xp0"])
    ws["xp0"] += b1[:, None]
    caches = (lambda i: (ws[f"G{i}"], ws[f"C{i}"], ws[f"TC{i}"])) if keep_cache else (
        lambda i: (None, None, None))
    _layer_forward_fast(U1, ws["xp0"], ws["hseq0"], *caches(0))
    np.matmul(W2, ws["hseq0"], out=ws["xp1"])
    ws["xp1"] += b2[:, None]
    latent = _layer_forward_fast(U2, ws["xp1"], ws["hseq1"], *caches(1))

    np.dot(W3, latent, out=ws["xp2"])  # constant decoder input projection
    ws["xp2"] += b3[:, None]
    _layer_forward_fast(U3, ws["xp2"], ws["hseq2"], *caches(2))
    np.matmul(W4, ws["hseq2"], out=ws["xp3"])
    ws["xp3"] += b4[:, None]
    _layer_forward_fast(U4, ws["xp3"], ws["hseq3"], *caches(3))

    recon = np.matmul(stacked.out_w, ws["hseq3"])[:, 0, :].T + stacked.out_b[0]  # (B, T)
    ctx = (x_T, latent, ws) if keep_cache else None
    return recon, ctx


def _forward_backward(stacked: _Stacked, X: np.ndarray):
    """Loss plus gradients (same structure as the stacked parameter list)."""
    T = stacked.seq_len
    B = X.shape[0]
    (W1, U1, _), (W2, U2, _), (W3, U3, _), (W4, U4, _) = stacked.layers
    H1, H2, H3, H4 = stacked.hidden
    recon, (x_T, latent, ws) = _forward(stacked, X, keep_cache=True)

    diff = recon - X
    loss = float(np.mean(diff**2))
    dR = np.ascontiguousarray((2.0 / (B * T)) * diff.T)  # (T, B)

    D2 = ws["hseq3"]
    d_out_w = np.tensordot(dR, D2, axes=([0, 1], [0, 2]))[None, :]  # (1, H4)
    d_out_b = np.array([dR.sum()])
    dD2 = ws[f"dX{H4}"]  # dead by the time dE1 reuses the buffer
    np.multiply(dR[:, None, :], stacked.out_w[0][None, :, None], out=dD2)

    dA = _layer_backward_fast(U4, ws["G3"], ws["C3"], ws["TC3"], D2, dD2, None, ws[f"dA{H4}"])
    dW4, dU4, db4 = _grad_WUb(dA, ws["hseq2"], D2)
    dD1 = ws[f"dX{H3}"]
    np.matmul(W4.T, dA, out=dD1)

    dA = _layer_backward_fast(U3, ws["G2"], ws["C2"], ws["TC2"], ws["hseq2"], dD1, None, ws[f"dA{H3}"])
    dW3, dU3, db3 = _grad_WUb(dA, latent, ws["hseq2"])
    d_latent = W3.T @ dA.sum(axis=0)  # gradient fanned into the repeated latent

    dA = _layer_backward_fast(U2, ws["G1"], ws["C1"], ws["TC1"], ws["hseq1"], None, d_latent, ws[f"dA{H2}"])
    dW2, dU2, db2 = _grad_WUb(dA, ws["hseq0"], ws["hseq1"])
    dE1 = ws[f"dX{H1}"]
    np.matmul(W2.T, dA, out=dE1)

    dA = _layer_backward_fast(U1, ws["G0"], ws["C0"], ws["TC0"], ws["hseq0"], dE1, None, ws[f"dA{H1}"])
    dW1, dU1, db1 = _grad_WUb(dA, x_T[:, None, :], ws["hseq0"])

    grads = [
        (dW1, dU1, db1),
        (dW2, dU2, db2),
        (dW3, dU3, db3),
        (dW4, dU4, db4),
    ]
    return loss, grads, d_out_w, d_out_b


def reconstruct_batch(model: ModelParams, X: np.ndarray) -> np.ndarray:
    """Reconstructions for a batch of normalized segments, shape (N, seq_len)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.seq_len:
        raise NnetError(f"expected (N, {model.seq_len}) input, got {X.shape}")
    stacked = _Stacked(model)
    out = np.empty_like(X)
    for lo in range(0, X.shape[0], _INFER_CHUNK):
        chunk = X[lo : lo + _INFER_CHUNK]
        out[lo : lo + chunk.shape[0]], _ = _forward(stacked, chunk, keep_cache=False)
    return out


def reconstruct(model: ModelParams, seg: Segment | np.ndarray) -> np.ndarray:
    """Reconstruction of one normalized segment (length seq_len)."""
    if isinstance(seg, Segment):
        if not seg.normalized:
            raise NnetError("segment must be normalized before reconstruction")
        x = seg.samples
    else:
        x = np.asarray(seg, dtype=np.float64)
    if x.shape != (model.seq_len,):
        raise NnetError(f"expected {model.seq_len} samples, got {x.shape}")
    return reconstruct_batch(model, x[None, :])[0]


# ---------------------------------------------------------------------------
# Named parameters, per-segment gradients, serialization.
# ---------------------------------------------------------------------------

def _layer_names() -> list[str]:
    return [f"encoder.{i}" for i in range(2)] + [f"decoder.{i}" for i in range(2)]


def _model_layers(model: ModelParams) -> list[LstmLayerParams]:
    return [*model.encoder, *model.decoder]


def named_params(model: ModelParams) -> list[tuple[str, np.ndarray]]:
    """Canonical (name, array) list; arrays are the model's own buffers."""
    out = []
    for name, layer in zip(_layer_names(), _model_layers(model)):
        for kind in ("W", "U", "b"):
            for g in GATE_NAMES:
                out.append((f"{name}.{kind}_{g}", getattr(layer, f"{kind}_{g}")))
    out.append(("output.W", model.output_w))
    out.append(("output.b", model.output_b))
    return out


def models_equal(a: ModelParams, b: ModelParams) -> bool:
    """Bit-level parameter and metadata equality."""
    meta = (a.seq_len, a.pipeline_rate_hz, a.segment_len_s, a.version) == (
        b.seq_len, b.pipeline_rate_hz, b.segment_len_s, b.version)
    pa, pb = named_params(a), named_params(b)
    return meta and all(na == nb and np.array_equal(va, vb) for (na, va), (nb, vb) in zip(pa, pb))


def backward(model: ModelParams, seg: Segment | np.ndarray) -> dict[str, np.ndarray]:
    """Analytic gradients of loss_mse(reconstruct(model, seg), seg) for every
    weight and bias, keyed by the names of :func:`named_params`."""
    x = seg.samples if isinstance(seg, Segment) else np.asarray(seg, dtype=np.float64)
    if x.shape != (model.seq_len,):
        raise NnetError(f"expected {model.seq_len} samples, got {x.shape}")
    stacked = _Stacked(model)
    _, layer_grads, d_out_w, d_out_b = _forward_backward(stacked, x[None, :])
    grads: dict[str, np.ndarray] = {}
    for name, layer, (dW, dU, db) in zip(_layer_names(), _model_layers(model), layer_grads):
        h = layer.hidden_dim
        for kind, stackgrad in (("W", dW), ("U", dU), ("b", db)):
            for g, block in _unstack_gates(stackgrad).items():
                grads[f"{name}.{kind}_{g}"] = block
    grads["output.W"] = d_out_w
    grads["output.b"] = d_out_b
    return grads


def save_model(model: ModelParams, path: str | Path) -> Path:
    model.validate()
    doc = {
        "version": model.version,
        "architecture": {
            "input_dim": 1,
            "encoder_hidden": model.encoder_hidden,
            "decoder_hidden": model.decoder_hidden,
            "seq_len": model.seq_len,
        },
        "normalization": {
            "pipeline_rate_hz": model.pipeline_rate_hz,
            "segment_len_s": model.segment_len_s,
        },
        "parameters": {},
    }
    for name, layer in zip(_layer_names(), _model_layers(model)):
        doc["parameters"][name] = {
            f"{kind}_{g}": getattr(layer, f"{kind}_{g}").tolist()
            for kind in ("W", "U", "b")
            for g in GATE_NAMES
        }
    doc["parameters"]["output"] = {"W": model.output_w.tolist(), "b": float(model.output_b[0])}
    path = Path(path)
    path.write_text(json.dumps(doc, allow_nan=False) + "\n", encoding="utf-8")
    return path


def load_model(path: str | Path) -> ModelParams:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"cannot parse model file {path}: {exc}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise ModelFormatError(f"model file {path} lacks a version field")
    if doc["version"] != MODEL_VERSION:
        raise ModelVersionError(f"unsupported model version {doc['version']!r}")
    try:
        arch = doc["architecture"]
        norm = doc["normalization"]
        params = doc["parameters"]
        enc_hidden = list(arch["encoder_hidden"])
        dec_hidden = list(arch["decoder_hidden"])
        seq_len = int(arch["seq_len"])
        layer_dims = list(zip([1, enc_hidden[0], enc_hidden[1], dec_hidden[0]],
                              enc_hidden + dec_hidden))
        layers = []
        for name, (d, h) in zip(_layer_names(), layer_dims):
            raw = params[name]
            kw = {f"{kind}_{g}": np.asarray(raw[f"{kind}_{g}"], dtype=np.float64)
                  for kind in ("W", "U", "b") for g in GATE_NAMES}
            layers.append(LstmLayerParams(input_dim=d, hidden_dim=h, **kw))
        out_w = np.asarray(params["output"]["W"], dtype=np.float64)
        out_b = np.asarray([params["output"]["b"]], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"model file {path} is malformed: {exc}") from exc
    model = ModelParams(
        encoder=layers[:2],
        decoder=layers[2:],
        output_w=out_w,
        output_b=out_b,
        seq_len=seq_len,
        pipeline_rate_hz=float(norm["pipeline_rate_hz"]),
        segment_len_s=float(norm["segment_len_s"]),
        version=doc["version"],
    )
    try:
        model.validate()
    except NnetError as exc:
        raise ModelDimensionError(f"model file {path}: {exc}") from exc
    return model


# ---------------------------------------------------------------------------
# Training.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    clip_norm: float = 5.0
    seed: int = 0
    hidden1: int = DEFAULT_HIDDEN[0]
    hidden2: int = DEFAULT_HIDDEN[1]

    def validate(self) -> None:
        if self.learning_rate < 0:
            raise NnetError("learning_rate must be non-negative")
        for name in ("batch_size", "max_epochs", "patience", "hidden1", "hidden2"):
            if getattr(self, name) < 1:
                raise NnetError(f"{name} must be positive")
        if self.clip_norm <= 0:
            raise NnetError("clip_norm must be positive")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


class Adam:
    """Standard Adam over a list of parameter arrays (beta1 0.9, beta2 0.999)."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale all gradients so the joint L2 norm is at most max_norm; returns the
    pre-clip norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


def _segments_matrix(segments, seq_len: int) -> np.ndarray:
    if not segments:
        raise TrainingError("empty segment list")
    rows = []
    for s in segments:
        x = s.samples if isinstance(s, Segment) else np.asarray(s, dtype=np.float64)
        if x.shape != (seq_len,):
            raise NnetError(f"segment length {x.shape} != seq_len {seq_len}")
        rows.append(x)
    return np.asarray(rows, dtype=np.float64)


def _flatten_stacked(stacked: _Stacked) -> list[np.ndarray]:
    arrs = []
    for W, U, b in stacked.layers:
        arrs.extend((W, U, b))
    arrs.extend((stacked.out_w, stacked.out_b))
    return arrs


def _flatten_grads(layer_grads, d_out_w, d_out_b) -> list[np.ndarray]:
    arrs = []
    for dW, dU, db in layer_grads:
        arrs.extend((dW, dU, db))
    arrs.extend((d_out_w, d_out_b))
    return arrs


def _model_from_stacked(stacked: _Stacked, template: ModelParams) -> ModelParams:
    layers = []
    dims = [(l.input_dim, l.hidden_dim) for l in _model_layers(template)]
    for (W, U, b), (d, h) in zip(stacked.layers, dims):
        kw = {}
        for kind, arr in (("W", W), ("U", U), ("b", b)):
            for g, block in _unstack_gates(arr).items():
                kw[f"{kind}_{g}"] = block.copy()
        layers.append(LstmLayerParams(input_dim=d, hidden_dim=h, **kw))
    return ModelParams(
        encoder=layers[:2],
        decoder=layers[2:],
        output_w=stacked.out_w.copy(),
        output_b=stacked.out_b.copy(),
        seq_len=template.seq_len,
        pipeline_rate_hz=template.pipeline_rate_hz,
        segment_len_s=template.segment_len_s,
        version=template.version,
    )


def _mean_loss(stacked: _Stacked, X: np.ndarray, batch: int) -> float:
    total = 0.0
    for lo in range(0, X.shape[0], batch):
        chunk = X[lo : lo + batch]
        recon, _ = _forward(stacked, chunk, keep_cache=False)
        total += float(np.sum((recon - chunk) ** 2))
    return total / X.size


def train(corpus, cfg: TrainConfig) -> tuple[ModelParams, list[EpochStats]]:
    """Minibatch Adam on reconstruction MSE with early stopping on validation
    loss; returns the best-validation checkpoint and the per-epoch history."""
    cfg.validate()
    if hasattr(corpus, "train") and hasattr(corpus, "val"):
        train_segs, val_segs = corpus.train, corpus.val
    else:
        train_segs, val_segs = corpus
    if not train_segs:
        raise TrainingError("training corpus is empty")
    if not val_segs:
        raise TrainingError("validation split is empty")

    first = train_segs[0]
    seq_len = first.samples.size if isinstance(first, Segment) else np.asarray(first).size
    rate = first.sample_rate_hz if isinstance(first, Segment) else PIPELINE_RATE_HZ
    rng = np.random.default_rng(cfg.seed)
    template = init_model(
        rng, hidden1=cfg.hidden1, hidden2=cfg.hidden2, seq_len=seq_len,
        pipeline_rate_hz=rate, segment_len_s=seq_len / rate,
    )
    X_train = _segments_matrix(train_segs, seq_len)
    X_val = _segments_matrix(val_segs, seq_len)

    stacked = _Stacked(template)
    params = _flatten_stacked(stacked)
    opt = Adam(params, cfg.learning_rate)

    history: list[EpochStats] = []
    best_val = math.inf
    best_arrays = [p.copy() for p in params]
    stale = 0
    n = X_train.shape[0]
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            loss, layer_grads, d_out_w, d_out_b = _forward_backward(stacked, X_train[idx])
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {lo // cfg.batch_size}: {loss}"
                )
            grads = _flatten_grads(layer_grads, d_out_w, d_out_b)
            clip_global_norm(grads, cfg.clip_norm)
            opt.step(grads)
            total += loss * idx.size
        train_loss = total / n
        val_loss = _mean_loss(stacked, X_val, max(cfg.batch_size, 128))
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        history.append(EpochStats(epoch=epoch, train_loss=train_loss, val_loss=val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_arrays = [p.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    for p, best in zip(params, best_arrays):
        p[...] = best
    return _model_from_stacked(stacked, template), history

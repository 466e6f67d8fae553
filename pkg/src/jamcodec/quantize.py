"""Post-training 8-bit quantization and an integer-only inference path.

Weights are quantized symmetrically per tensor (zero point 0), activations
asymmetrically from calibration ranges, biases as int32 at the combined
input*weight scale. Inference accumulates in int32 (emulated exactly, with
saturation counted), requantizes through a 32-bit fixed-point multiplier and
a rounding right shift (round half away from zero), and touches no float
arithmetic between the input quantizer and the output dequantizer -- so
results are bit-identical across platforms.
"""

from dataclasses import dataclass
import json
import math
import struct

import numpy as np

from . import nn
from .errors import InvalidSpecError, MissingStatsError, ShapeError

QUANT_MAGIC = b"AEQ1"
QMIN, QMAX = -128, 127
INT32_MIN, INT32_MAX = -(2**31), 2**31 - 1
SCALE_FLOOR = 1e-8


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int

    def __post_init__(self):
        if self.scale <= 0:
            raise InvalidSpecError("scale must be positive")
        if not (QMIN <= self.zero_point <= QMAX):
            raise InvalidSpecError(f"zero point {self.zero_point} outside int8 range")


def _round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def activation_qparams(lo: float, hi: float) -> QuantParams:
    """Asymmetric int8 parameters covering [lo, hi] and the real value 0."""
    lo = min(float(lo), 0.0)
    hi = max(float(hi), 0.0)
    scale = max((hi - lo) / (QMAX - QMIN), SCALE_FLOOR)
    zp = int(np.clip(_round_half_away(QMIN - lo / scale), QMIN, QMAX))
    return QuantParams(scale, zp)


def weight_qparams(w) -> QuantParams:
    """Symmetric int8 parameters (zero point 0)."""
    peak = float(np.max(np.abs(w))) if np.asarray(w).size else 0.0
    return QuantParams(max(peak / QMAX, SCALE_FLOOR), 0)


def quantize_tensor(x, params: QuantParams) -> np.ndarray:
    """q = clamp(round(x / scale) + zero_point, -128, 127) as int8."""
    q = _round_half_away(np.asarray(x, dtype=np.float64) / params.scale) + params.zero_point
    return np.clip(q, QMIN, QMAX).astype(np.int8)


def dequantize(q, params: QuantParams) -> np.ndarray:
    return (np.asarray(q, dtype=np.float64) - params.zero_point) * params.scale


@dataclass
class CalibrationStats:
    """Observed per-tensor ranges: activations at layer boundaries, weights."""

    activations: dict
    weights: dict

    def activation_range(self, name):
        if name not in self.activations:
            raise MissingStatsError(f"no calibration range for activation tensor {name!r}")
        return self.activations[name]


def _inference_layers(model: nn.AeModel):
    """Deterministic compression path: encoder, mu head for VAEs, decoder."""
    layers = list(model.encoder)
    if model.variational:
        layers.append(model.mu_head)
    layers.extend(model.decoder)
    return layers


def _range(values, mode, percentile):
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if mode == "minmax" or percentile >= 100.0:
        return float(v[0]), float(v[-1])
    n = len(v)
    k = min(n - 1, max(0, math.ceil(percentile / 100.0 * n) - 1))
    return float(v[max(0, n - 1 - k)]), float(v[k])


def calibrate(model: nn.AeModel, calib_x, mode="percentile", percentile=99.9) -> CalibrationStats:
    """Record min/max (or percentile-clipped) ranges over a calibration set.

    Needs at least 16 vectors. Activations are recorded at the network input
    and after every layer; weights always use their exact min/max.
    """
    calib_x = np.atleast_2d(np.asarray(calib_x, dtype=np.float64))
    if calib_x.shape[0] < 16:
        raise InvalidSpecError(f"calibration needs >= 16 vectors, got {calib_x.shape[0]}")
    if calib_x.shape[-1] != model.input_dim:
        raise ShapeError(f"calibration vectors must have {model.input_dim} dims")

    activations = {"input": _range(calib_x, mode, percentile)}
    weights = {}
    h = calib_x
    for i, layer in enumerate(_inference_layers(model)):
        h = layer.forward(h)
        name = f"L{i}"
        activations[name] = _range(h, mode, percentile)
        if layer.params:
            weights[name] = (float(np.min(layer.params[0])), float(np.max(layer.params[0])))
    return CalibrationStats(activations=activations, weights=weights)


def _fixed_point_multiplier(m_real: float) -> tuple:
    """m_real ~= m * 2^-shift with m an int32 in [2^30, 2^31)."""
    if m_real <= 0.0:
        return 0, 0
    shift = 0
    while m_real < 2**30:
        m_real *= 2.0
        shift += 1
    while m_real >= 2**31:
        m_real /= 2.0
        shift -= 1
    m = int(_round_half_away(m_real))
    if m == 2**31:
        m //= 2
        shift -= 1
    return m, shift


def _rounding_rshift(t: np.ndarray, shift: int) -> np.ndarray:
    """Integer right shift rounding half away from zero."""
    if shift <= 0:
        return t << (-shift)
    offset = np.int64(1) << np.int64(shift - 1)
    mag = (np.abs(t) + offset) >> np.int64(shift)
    return np.where(t >= 0, mag, -mag)


@dataclass
class QuantLayer:
    kind: str
    w_q: np.ndarray  # int8
    b_q: np.ndarray  # int32
    in_qp: QuantParams
    out_qp: QuantParams
    w_scale: float
    multiplier: int
    shift: int
    activation: str
    geometry: dict


@dataclass
class QuantizedModel:
    layers: list
    input_qp: QuantParams
    arch: dict
    latent_dim: int
    input_dim: int

    def n_params(self) -> int:
        return int(sum(l.w_q.size + l.b_q.size for l in self.layers if l.kind != "reshape"))

    def memory_bytes(self) -> int:
        blobs = sum(l.w_q.size + 4 * l.b_q.size for l in self.layers if l.kind != "reshape")
        meta = 5 * sum(2 for l in self.layers if l.kind != "reshape")
        return int(blobs + meta)


def quantize_model(model: nn.AeModel, stats: CalibrationStats) -> QuantizedModel:
    """Freeze an autoencoder into int8 tensors plus requantization constants."""
    layers = []
    in_name = "input"
    for i, layer in enumerate(_inference_layers(model)):
        name = f"L{i}"
        out_lo, out_hi = stats.activation_range(name)
        out_qp = activation_qparams(out_lo, out_hi)
        in_qp = activation_qparams(*stats.activation_range(in_name))
        if layer.kind == "reshape":
            layers.append(QuantLayer("reshape", np.zeros(0, np.int8), np.zeros(0, np.int32),
                                     in_qp, in_qp, 1.0, 0, 0, "linear",
                                     {"out_shape": list(layer.out_shape)}))
            # reshape does not change values; keep the previous boundary name
            continue
        if layer.activation not in ("relu", "linear"):
            raise InvalidSpecError(f"int8 path supports relu/linear only, got {layer.activation}")
        w = layer.params[0].astype(np.float64)
        b = layer.params[1].astype(np.float64)
        w_qp = weight_qparams(w)
        w_q = quantize_tensor(w, w_qp)
        bias_scale = w_qp.scale * in_qp.scale
        b_q = np.clip(_round_half_away(b / bias_scale), INT32_MIN, INT32_MAX).astype(np.int32)
        m, shift = _fixed_point_multiplier(bias_scale / out_qp.scale)
        geometry = {k: v for k, v in layer.spec().items() if k not in ("kind", "activation")}
        layers.append(QuantLayer(layer.kind, w_q, b_q, in_qp, out_qp, w_qp.scale, m, shift,
                                 layer.activation, geometry))
        in_name = name
    input_qp = activation_qparams(*stats.activation_range("input"))
    return QuantizedModel(layers=layers, input_qp=input_qp, arch=dict(model.arch or {}),
                          latent_dim=model.latent_dim, input_dim=model.input_dim)


def _saturate_i32(acc: np.ndarray) -> tuple:
    over = int(np.count_nonzero((acc > INT32_MAX) | (acc < INT32_MIN)))
    return np.clip(acc, INT32_MIN, INT32_MAX), over


def _requant(ql: QuantLayer, acc: np.ndarray) -> np.ndarray:
    t = acc * np.int64(ql.multiplier)
    y = _rounding_rshift(t, ql.shift) + np.int64(ql.out_qp.zero_point)
    y = np.clip(y, QMIN, QMAX)
    if ql.activation == "relu":
        y = np.maximum(y, np.int64(ql.out_qp.zero_point))
    return y


def _conv_geom(length, kernel, stride):
    out_len = -(-length // stride)
    total_pad = max(0, (out_len - 1) * stride + kernel - length)
    pad_left = total_pad // 2
    idx = np.arange(out_len)[:, None] * stride + np.arange(kernel)[None, :]
    return out_len, pad_left, total_pad, idx


def int8_forward(qm: QuantizedModel, x, return_info=False):
    """Reconstruction through the integer path; float only at the ends.

    Accepts one vector or a batch. With ``return_info`` also returns a dict
    holding the int32-saturation count.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[-1] != qm.input_dim:
        raise ShapeError(f"quantized model expects {qm.input_dim} inputs, got {x.shape[-1]}")
    h = quantize_tensor(x, qm.input_qp).astype(np.int64)
    overflows = 0
    last = None
    for ql in qm.layers:
        if ql.kind == "reshape":
            h = h.reshape(h.shape[0], *ql.geometry["out_shape"])
            continue
        if ql.kind == "dense":
            centered = h - np.int64(ql.in_qp.zero_point)
            acc = centered @ ql.w_q.astype(np.int64) + ql.b_q.astype(np.int64)
        elif ql.kind == "conv1d":
            centered = h - np.int64(ql.in_qp.zero_point)
            batch, length, in_ch = centered.shape
            kernel, stride = ql.geometry["kernel"], ql.geometry["stride"]
            out_len, pad_left, total_pad, idx = _conv_geom(length, kernel, stride)
            xp = np.pad(centered, ((0, 0), (pad_left, total_pad - pad_left), (0, 0)))
            cols = xp[:, idx, :].reshape(batch, out_len, kernel * in_ch)
            wmat = ql.w_q.astype(np.int64).reshape(kernel * in_ch, -1)
            acc = cols @ wmat + ql.b_q.astype(np.int64)
        elif ql.kind == "conv1d_t":
            centered = h - np.int64(ql.in_qp.zero_point)
            batch = centered.shape[0]
            kernel, stride = ql.geometry["kernel"], ql.geometry["stride"]
            out_len = ql.geometry["output_len"]
            _, pad_left, total_pad, idx = _conv_geom(out_len, kernel, stride)
            contrib = np.einsum("blc,kco->blko", centered, ql.w_q.astype(np.int64))
            zpad = np.zeros((batch, out_len + total_pad, ql.w_q.shape[2]), dtype=np.int64)
            np.add.at(zpad, (slice(None), idx), contrib)
            acc = zpad[:, pad_left : pad_left + out_len, :] + ql.b_q.astype(np.int64)
        else:
            raise InvalidSpecError(f"unsupported quantized layer kind {ql.kind!r}")
        acc, over = _saturate_i32(acc)
        overflows += over
        h = _requant(ql, acc)
        last = ql
    out = dequantize(h, last.out_qp)
    out = out[0] if single else out
    if return_info:
        return out, {"int32_saturations": overflows}
    return out


def quant_report(model: nn.AeModel, qm: QuantizedModel, eval_x) -> dict:
    """Float vs int8 reconstruction quality plus size accounting."""
    eval_x = np.atleast_2d(np.asarray(eval_x, dtype=np.float64))
    recon_f, _ = nn.forward(model, eval_x)
    recon_q, info = int8_forward(qm, eval_x, return_info=True)
    per_layer = {}
    for i, (layer, ql) in enumerate(zip(
        (l for l in _inference_layers(model) if l.params),
        (l for l in qm.layers if l.kind != "reshape"),
    )):
        w = layer.params[0].astype(np.float64)
        err = np.max(np.abs(w - ql.w_q.astype(np.float64) * ql.w_scale))
        per_layer[f"L{i}"] = {"weight_max_abs_error": float(err), "weight_scale": ql.w_scale}
    noise = recon_q - recon_f
    denom = float(np.sum(recon_f**2))
    snr_db = 10.0 * math.log10(denom / float(np.sum(noise**2))) if np.any(noise) and denom > 0 else math.inf
    return {
        "recon_mse_float": nn.mse_loss(eval_x, recon_f),
        "recon_mse_int8": nn.mse_loss(eval_x, recon_q),
        "int8_vs_float_snr_db": snr_db,
        "per_layer": per_layer,
        "size_bytes_float": 4 * model.n_params(),
        "size_bytes_int8": qm.memory_bytes(),
        "int32_saturations": info["int32_saturations"],
    }


def save_quantized(path, qm: QuantizedModel) -> None:
    """AEQ1 binary: magic, JSON descriptor, per-tensor int8/int32 blobs."""
    descriptor = {
        "format": "AEQ1",
        "version": 1,
        "arch": qm.arch,
        "input_dim": qm.input_dim,
        "latent_dim": qm.latent_dim,
        "input_qp": [qm.input_qp.scale, qm.input_qp.zero_point],
        "layers": [
            {
                "kind": l.kind,
                "w_shape": list(l.w_q.shape),
                "b_shape": list(l.b_q.shape),
                "in_qp": [l.in_qp.scale, l.in_qp.zero_point],
                "out_qp": [l.out_qp.scale, l.out_qp.zero_point],
                "w_scale": l.w_scale,
                "multiplier": l.multiplier,
                "shift": l.shift,
                "activation": l.activation,
                "geometry": l.geometry,
            }
            for l in qm.layers
        ],
    }
    desc = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(QUANT_MAGIC)
        fh.write(struct.pack("<I", len(desc)))
        fh.write(desc)
        for l in qm.layers:
            fh.write(np.ascontiguousarray(l.w_q, dtype="<i1").tobytes())
            fh.write(np.ascontiguousarray(l.b_q, dtype="<i4").tobytes())


def load_quantized(path) -> QuantizedModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != QUANT_MAGIC:
            raise InvalidSpecError(f"{path}: bad magic {magic!r}, expected {QUANT_MAGIC!r}")
        (desc_len,) = struct.unpack("<I", fh.read(4))
        descriptor = json.loads(fh.read(desc_len).decode("utf-8"))
        if descriptor.get("version") != 1:
            raise InvalidSpecError(f"{path}: unsupported quantized model version")
        layers = []
        for spec in descriptor["layers"]:
            w_size = int(np.prod(spec["w_shape"])) if spec["w_shape"] else 0
            b_size = int(np.prod(spec["b_shape"])) if spec["b_shape"] else 0
            w_q = np.frombuffer(fh.read(w_size), dtype="<i1").reshape(spec["w_shape"]).copy()
            b_q = np.frombuffer(fh.read(4 * b_size), dtype="<i4").reshape(spec["b_shape"]).copy()
            layers.append(QuantLayer(
                spec["kind"], w_q.astype(np.int8), b_q.astype(np.int32),
                QuantParams(*spec["in_qp"]) if spec["in_qp"][0] > 0 else QuantParams(1.0, 0),
                QuantParams(*spec["out_qp"]) if spec["out_qp"][0] > 0 else QuantParams(1.0, 0),
                spec["w_scale"], spec["multiplier"], spec["shift"], spec["activation"],
                spec["geometry"],
            ))
    return QuantizedModel(
        layers=layers,
        input_qp=QuantParams(*descriptor["input_qp"]),
        arch=descriptor.get("arch", {}),
        latent_dim=descriptor["latent_dim"],
        input_dim=descriptor["input_dim"],
    )

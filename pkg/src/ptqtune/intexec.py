"""Execution of quantized graphs.

Two paths over the same graph walk:

  run_quantized     — int32 accumulation with float-multiplier requantization
                      (the usual int8 simulation); mixed-precision fp32 layers
                      run in fp32 with quantize/dequantize at the boundary.
  run_integer_only  — multiplication, addition and bit-shifts only; requires
                      SymmetricPower2 + Tensor granularity + mixed Off, and
                      power-of-two avgpool areas.  Returns raw output codes.

Both use round-half-up for requantization, so for power-of-two scales the
shift path and the float-simulated path agree bit-for-bit:
(acc + (1 << (s-1))) >> s  ==  floor(acc * 2**-s + 0.5).

Every intermediate value is an integer; NumPy carries the matmuls in float64
purely for speed.  Products of zero-shifted int8 codes are < 2**16 and
accumulate over < 2**10 taps, so all values stay far below 2**53 and the
float64 arithmetic is exact — bit-identical to true integer execution.  The
OpTrace records the *semantic* operation categories of the quantized
program, which is what the integer-only audit asserts over.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Dataset
from .fp32 import (AccuracyResult, avgpool, conv2d, depthwise_conv2d, maxpool,
                   run_fp32, softmax, top1_from_scores, _windows)
from .ir import COMPUTE_KINDS, CONV_KINDS, Graph, INPUT_TENSOR, Node
from .quantize import INT32_MAX, INT32_MIN, QuantizedGraph
from .schemes import QMAX, QMIN, QuantParams, Scheme, ceil_log2, dequantize_array, quantize_array

# float_kernel marks a layer whose matrix/conv arithmetic runs in fp32
# (the precision map); float_mul/float_add are elementwise float steps
# (dequantize, requantize multiplier, boundary quantize)
FLOAT_CATS = ("float_mul", "float_add", "float_kernel")


class IntegerOnlyError(ValueError):
    """Raised when a graph is not eligible for integer-only execution."""


@dataclass
class OpTrace:
    events: list[tuple[str, str]] = field(default_factory=list)

    def add(self, node_id: str, *categories: str) -> None:
        for c in categories:
            self.events.append((node_id, c))

    def count(self, *categories: str) -> int:
        return sum(1 for _, c in self.events if c in categories)

    def float_ops(self) -> int:
        return self.count(*FLOAT_CATS)

    def to_csv(self) -> str:
        lines = ["node,category"]
        lines += [f"{n},{c}" for n, c in self.events]
        return "\n".join(lines) + "\n"


def _rhu(x: np.ndarray) -> np.ndarray:
    """Round half up (toward +inf), the requantization rounding mode."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def requantize(acc: np.ndarray | int, multiplier: float | np.ndarray | None = None,
               shift: int | None = None, zero_point: int = 0) -> np.ndarray:
    """int32 accumulator -> int8 code, via float multiplier or right-shift."""
    acc = np.asarray(acc, dtype=np.int64)
    if (multiplier is None) == (shift is None):
        raise ValueError("pass exactly one of multiplier/shift")
    if multiplier is not None:
        scaled = _rhu(acc * np.asarray(multiplier, dtype=np.float64))
    elif shift >= 0:
        half = (1 << (shift - 1)) if shift > 0 else 0
        scaled = (acc + half) >> shift
    else:
        scaled = acc << (-shift)
    return np.clip(scaled + zero_point, QMIN, QMAX).astype(np.int8)


def _exact_log2(scale: float) -> int:
    k = ceil_log2(scale)
    if 2.0**k != scale:
        raise IntegerOnlyError(f"scale {scale} is not a power of two")
    return k


def _int_conv(kind: str, x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Integer conv/fc via exact float64 carrier; returns int64."""
    xf = x.astype(np.float64)
    wf = w.astype(np.float64)
    if kind == "conv2d" or kind == "pointwise_conv2d":
        out = conv2d(xf, wf, None, stride, pad)
    elif kind == "depthwise_conv2d":
        out = depthwise_conv2d(xf, wf, None, stride, pad)
    else:  # fully_connected
        out = xf.reshape(xf.shape[0], -1) @ wf.T
    return out.astype(np.int64)


def _per_channel(vec: np.ndarray, ndim: int) -> np.ndarray:
    """Reshape an (O,) vector to broadcast over (N, O, ...) activations."""
    shape = [1] * ndim
    shape[1] = -1
    return np.asarray(vec).reshape(shape)


def _requant_to(codes: np.ndarray, src: QuantParams, dst: QuantParams,
                integer_only: bool, trace: OpTrace | None, node_id: str) -> np.ndarray:
    """Re-express codes from src params in dst params (for add/concat inputs)."""
    shifted = codes.astype(np.int64) - int(src.zero_point)
    if integer_only:
        s = _exact_log2(float(dst.scale)) - _exact_log2(float(src.scale))
        out = requantize(shifted, shift=s, zero_point=int(dst.zero_point))
        if trace is not None:
            trace.add(node_id, "int_add", "shift", "clamp")
    else:
        m = float(src.scale) / float(dst.scale)
        out = requantize(shifted, multiplier=m, zero_point=int(dst.zero_point))
        if trace is not None:
            trace.add(node_id, "int_add", "float_mul", "round", "clamp")
    return out.astype(np.int64)


def check_integer_only(qg: QuantizedGraph) -> None:
    cfg = qg.config
    if cfg.scheme != Scheme.SymmetricPower2 or cfg.granularity != "Tensor" \
            or cfg.mixed != "Off":
        raise IntegerOnlyError(
            "integer-only execution requires scheme=SymmetricPower2, "
            f"granularity=Tensor, mixed=Off; got {cfg.scheme.value}/"
            f"{cfg.granularity}/{cfg.mixed}")
    for node in qg.graph.nodes:
        if node.kind == "avgpool":
            k = int(node.attrs["kernel"])
            area = k * k
            if area & (area - 1):
                raise IntegerOnlyError(f"avgpool {node.id}: area {area} not a power of two")


def _execute(qg: QuantizedGraph, batch: np.ndarray, trace: OpTrace | None,
             integer_only: bool, sink=None) -> np.ndarray:
    g = qg.graph
    batch = np.asarray(batch, dtype=np.float32)
    if batch.ndim == 3:
        batch = batch[None]
    if tuple(batch.shape[1:]) != tuple(g.input_shape):
        raise ValueError(f"batch shape {batch.shape} does not match input {g.input_shape}")

    env: dict[str, np.ndarray] = {}
    if INPUT_TENSOR in qg.act_params:
        # host-side input quantization (not part of the traced graph program)
        env[INPUT_TENSOR] = quantize_array(batch, qg.act_params[INPUT_TENSOR]).astype(np.int64)
    else:
        env[INPUT_TENSOR] = batch

    def is_codes(t: str) -> bool:
        return t in qg.act_params

    for node in g.nodes:
        x = env[node.data_inputs[0]]
        fused_relu = bool(node.attrs.get("fused_relu", False))
        if node.kind in COMPUTE_KINDS:
            if node.id in qg.fp32_nodes:
                env[node.output] = _run_fp32_node(qg, node, env, trace)
                continue
            wp = qg.weight_params[node.weight_id]
            in_p = qg.act_params[node.data_inputs[0]]
            out_p = qg.act_params[node.output]
            xs = x - int(in_p.zero_point)
            w = qg.weight_codes[node.weight_id].astype(np.int64)
            w = w - wp.zp_vec().reshape((-1,) + (1,) * (w.ndim - 1))
            stride = int(node.attrs.get("stride", 1))
            pad = int(node.attrs.get("padding", 0))
            acc = _int_conv(node.kind, xs, w, stride, pad)
            if trace is not None:
                trace.add(node.id, "int_mul", "int_add")
            if node.bias_id is not None:
                b = qg.bias_codes[node.bias_id].astype(np.int64)
                acc = acc + (_per_channel(b, acc.ndim) if acc.ndim == 4 else b)
                if trace is not None:
                    trace.add(node.id, "int_add")
            acc = np.clip(acc, INT32_MIN, INT32_MAX)  # saturating int32 contract
            sx = float(in_p.scale)
            sy = float(out_p.scale)
            zy = int(out_p.zero_point)
            sw = np.asarray(wp.scale, dtype=np.float64)
            if integer_only:
                s = _exact_log2(sy) - _exact_log2(sx) - _exact_log2(float(sw))
                out = requantize(acc, shift=s, zero_point=zy)
                if trace is not None:
                    trace.add(node.id, "int_add", "shift", "clamp")
            else:
                m = sx * sw / sy
                if wp.axis is not None:
                    m = _per_channel(m, acc.ndim) if acc.ndim == 4 else m
                out = requantize(acc, multiplier=m, zero_point=zy)
                if trace is not None:
                    trace.add(node.id, "float_mul", "round", "int_add", "clamp")
            if fused_relu:
                out = np.maximum(out, np.int8(zy))
                if trace is not None:
                    trace.add(node.id, "clamp")
            env[node.output] = out.astype(np.int64)
        elif node.kind == "relu":
            if is_codes(node.output):
                zp = int(qg.act_params[node.output].zero_point)
                env[node.output] = np.maximum(x, zp)
                if trace is not None:
                    trace.add(node.id, "clamp")
            else:
                env[node.output] = np.maximum(x, np.float32(0))
        elif node.kind == "maxpool":
            k = int(node.attrs["kernel"])
            s = int(node.attrs.get("stride", k))
            env[node.output] = maxpool(x, k, s) if not is_codes(node.output) \
                else _windows(x, k, k, s, 0).max(axis=(-1, -2))
        elif node.kind == "avgpool":
            k = int(node.attrs["kernel"])
            s = int(node.attrs.get("stride", k))
            if not is_codes(node.output):
                env[node.output] = avgpool(x, k, s)
            else:
                zp = int(qg.act_params[node.output].zero_point)
                total = _windows(x, k, k, s, 0).sum(axis=(-1, -2))
                area = k * k
                if integer_only:
                    out = requantize(total - zp * area, shift=_exact_log2(float(area)),
                                     zero_point=zp)
                    if trace is not None:
                        trace.add(node.id, "int_add", "shift", "clamp")
                else:
                    out = requantize(total - zp * area, multiplier=1.0 / area,
                                     zero_point=zp)
                    if trace is not None:
                        trace.add(node.id, "int_add", "float_mul", "round", "clamp")
                env[node.output] = out.astype(np.int64)
        elif node.kind == "add":
            y = env[node.data_inputs[1]]
            if is_codes(node.output):
                # align both inputs to a common scale WITHOUT clamping, sum in
                # the wide accumulator, then round/clamp once -- clamping the
                # addends separately would destroy negative contributions when
                # the output range is relu-narrowed
                out_p = qg.act_params[node.output]
                pa = qg.act_params[node.data_inputs[0]]
                pb = qg.act_params[node.data_inputs[1]]
                zo = int(out_p.zero_point)
                xs = x - int(pa.zero_point)
                ys = y - int(pb.zero_point)
                if integer_only:
                    ka = _exact_log2(float(pa.scale))
                    kb = _exact_log2(float(pb.scale))
                    ko = _exact_log2(float(out_p.scale))
                    kmin = min(ka, kb)
                    acc = (xs << (ka - kmin)) + (ys << (kb - kmin))
                    out = requantize(acc, shift=ko - kmin, zero_point=zo)
                    if trace is not None:
                        trace.add(node.id, "int_add", "shift", "int_add",
                                  "shift", "int_add", "shift", "clamp")
                else:
                    so = float(out_p.scale)
                    acc = xs * (float(pa.scale) / so) + ys * (float(pb.scale) / so)
                    out = np.clip(_rhu(acc) + zo, QMIN, QMAX)
                    if trace is not None:
                        trace.add(node.id, "int_add", "float_mul", "int_add",
                                  "float_mul", "float_add", "round", "int_add",
                                  "clamp")
                env[node.output] = out.astype(np.int64)
            else:
                env[node.output] = x + y
                if trace is not None:
                    trace.add(node.id, "float_add")
        elif node.kind == "concat":
            if is_codes(node.output):
                out_p = qg.act_params[node.output]
                parts = [_requant_to(env[t], qg.act_params[t], out_p,
                                     integer_only, trace, node.id)
                         for t in node.data_inputs]
                env[node.output] = np.concatenate(parts, axis=1)
            else:
                env[node.output] = np.concatenate([env[t] for t in node.data_inputs], axis=1)
        elif node.kind == "softmax":
            if is_codes(node.output):
                env[node.output] = x  # monotone map: identity on codes
            else:
                env[node.output] = softmax(x)
                if trace is not None:
                    trace.add(node.id, "float_add", "float_mul")
        else:  # pragma: no cover
            raise ValueError(f"unknown node kind {node.kind!r}")
        if sink is not None:
            sink(node.output, env[node.output])
    return env[g.output_tensor()]


def _run_fp32_node(qg: QuantizedGraph, node: Node, env: dict, trace: OpTrace | None) -> np.ndarray:
    """Mixed-precision layer: dequantize inputs, compute fp32, re-quantize boundary."""
    g = qg.graph
    t_in = node.data_inputs[0]
    x = env[t_in]
    if t_in in qg.act_params:
        x = dequantize_array(x.astype(np.int8, copy=False), qg.act_params[t_in])
        if trace is not None:
            trace.add(node.id, "int_add", "float_mul")
    w = g.weights[node.weight_id]
    b = g.weights[node.bias_id] if node.bias_id else None
    if node.kind in CONV_KINDS:
        stride = int(node.attrs.get("stride", 1))
        pad = int(node.attrs.get("padding", 0))
        fn = depthwise_conv2d if node.kind == "depthwise_conv2d" else conv2d
        out = fn(x.astype(np.float32), w, b, stride, pad)
    else:
        out = x.reshape(x.shape[0], -1).astype(np.float32) @ w.T
        if b is not None:
            out = out + b
    if trace is not None:
        trace.add(node.id, "float_kernel")
    if bool(node.attrs.get("fused_relu", False)):
        out = np.maximum(out, np.float32(0))
        if trace is not None:
            trace.add(node.id, "clamp")
    if node.output in qg.act_params:  # quantize boundary
        out = quantize_array(out, qg.act_params[node.output]).astype(np.int64)
        if trace is not None:
            trace.add(node.id, "float_mul", "round", "int_add", "clamp")
    return out


def run_quantized(qg: QuantizedGraph, batch: np.ndarray,
                  trace: OpTrace | None = None,
                  return_codes: bool = False, sink=None) -> np.ndarray:
    """Simulated-int8 forward pass; returns fp32 logits (or codes).

    ``sink(tensor_id, values)`` observes every node output (codes for
    quantized tensors; fp32 for tensors kept in float)."""
    out = _execute(qg, batch, trace, integer_only=False, sink=sink)
    t = qg.graph.output_tensor()
    if t in qg.act_params:
        codes = out.astype(np.int8)
        return codes if return_codes else dequantize_array(codes, qg.act_params[t])
    if return_codes:
        raise ValueError("graph output is fp32; no codes to return")
    return out


def run_integer_only(qg: QuantizedGraph, batch: np.ndarray,
                     trace: OpTrace | None = None) -> np.ndarray:
    """Strict integer path (mul/add/shift only); returns int8 output codes."""
    check_integer_only(qg)
    out = _execute(qg, batch, trace, integer_only=True)
    return out.astype(np.int8)


def evaluate_quantized(qg: QuantizedGraph, d: Dataset) -> AccuracyResult:
    if len(d.eval_images) == 0:
        raise ValueError("empty evaluation set")
    scores = run_quantized(qg, d.eval_images)
    return top1_from_scores(scores, d.eval_labels)


def fuse_conv_relu(qg: QuantizedGraph) -> QuantizedGraph:
    """Merge conv/fc -> relu pairs; numerics are unchanged by construction
    (producer and relu output share one QuantParams)."""
    g = qg.graph
    fuse_map: dict[str, Node] = {}  # producer node id -> its sole relu consumer
    for n in g.nodes:
        if n.kind in COMPUTE_KINDS:
            consumers = g.consumers(n.output)
            if len(consumers) == 1 and consumers[0].kind == "relu":
                fuse_map[n.id] = consumers[0]
    if not fuse_map:
        return qg
    drop_ids = {relu.id for relu in fuse_map.values()}
    fused_nodes: list[Node] = []
    for n in g.nodes:
        if n.id in drop_ids:
            continue
        if n.id in fuse_map:
            fused_nodes.append(Node(id=n.id, kind=n.kind, inputs=list(n.inputs),
                                    output=fuse_map[n.id].output,
                                    attrs={**n.attrs, "fused_relu": True}))
        else:
            fused_nodes.append(Node(id=n.id, kind=n.kind, inputs=list(n.inputs),
                                    output=n.output, attrs=dict(n.attrs)))
    new_graph = Graph(name=g.name, nodes=fused_nodes, weights=g.weights,
                      input_shape=g.input_shape, output_classes=g.output_classes)
    live = {INPUT_TENSOR} | {n.output for n in fused_nodes} \
        | {t for n in fused_nodes for t in n.data_inputs}
    act_params = {t: p for t, p in qg.act_params.items() if t in live}
    return replace(qg, graph=new_graph, act_params=act_params, fused=True)

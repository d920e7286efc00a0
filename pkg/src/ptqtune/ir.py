"""Graph IR for small CNN models.

A Graph is a topologically ordered list of nodes over named tensors.  The
node vocabulary is deliberately small — ten kinds, enough to express
LeNet/ResNet/MobileNet-style blocks (plain, residual, depthwise-separable,
branch-concat).  Weights are fp32 numpy arrays referenced by tensor id from
node input lists, so "every node input is a prior node output or a weight
tensor" holds structurally.

Conventions:
  * the graph input tensor is always named ``"input"``;
  * compute kinds (conv family + fully_connected) take inputs
    ``[data, weight]`` or ``[data, weight, bias]``;
  * ``fully_connected`` flattens its data input row-major (there is no
    separate flatten node);
  * exactly one node output is consumed by nothing — that is the graph
    output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .container import read_container, write_container

INPUT_TENSOR = "input"

CONV_KINDS = ("conv2d", "depthwise_conv2d", "pointwise_conv2d")
COMPUTE_KINDS = CONV_KINDS + ("fully_connected",)
NODE_KINDS = COMPUTE_KINDS + ("relu", "maxpool", "avgpool", "add", "concat", "softmax")


class GraphError(ValueError):
    """Raised for malformed graphs or containers."""


@dataclass
class Node:
    id: str
    kind: str
    inputs: list[str]
    output: str
    attrs: dict[str, Any] = field(default_factory=dict)

    @property
    def weight_id(self) -> str | None:
        if self.kind in COMPUTE_KINDS and len(self.inputs) >= 2:
            return self.inputs[1]
        return None

    @property
    def bias_id(self) -> str | None:
        if self.kind in COMPUTE_KINDS and len(self.inputs) >= 3:
            return self.inputs[2]
        return None

    @property
    def data_inputs(self) -> list[str]:
        if self.kind in COMPUTE_KINDS:
            return self.inputs[:1]
        return list(self.inputs)


@dataclass
class Graph:
    name: str
    nodes: list[Node]
    weights: dict[str, np.ndarray]
    input_shape: tuple[int, int, int]  # (C, H, W)
    output_classes: int

    def node_by_output(self, tensor_id: str) -> Node:
        for n in self.nodes:
            if n.output == tensor_id:
                return n
        raise KeyError(tensor_id)

    def consumers(self, tensor_id: str) -> list[Node]:
        return [n for n in self.nodes if tensor_id in n.data_inputs]

    def output_tensor(self) -> str:
        consumed = {t for n in self.nodes for t in n.data_inputs}
        terminal = [n.output for n in self.nodes if n.output not in consumed]
        if len(terminal) != 1:
            raise GraphError(f"graph must have exactly one output, found {terminal}")
        return terminal[0]

    def compute_nodes(self) -> list[Node]:
        return [n for n in self.nodes if n.kind in COMPUTE_KINDS]


def _conv_out_hw(h: int, w: int, kh: int, kw: int, stride: int, pad: int) -> tuple[int, int]:
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise GraphError(f"kernel {kh}x{kw} stride {stride} pad {pad} does not fit {h}x{w}")
    return oh, ow


def propagate_shapes(g: Graph) -> dict[str, tuple[int, ...]]:
    """Return per-tensor shapes (without the batch dim); validates as it goes."""
    shapes: dict[str, tuple[int, ...]] = {INPUT_TENSOR: tuple(g.input_shape)}
    for n in g.nodes:
        for t in n.data_inputs:
            if t not in shapes:
                raise GraphError(f"node {n.id}: input {t!r} not defined before use")
        x = shapes[n.data_inputs[0]]
        if n.kind in CONV_KINDS:
            if len(x) != 3:
                raise GraphError(f"node {n.id}: {n.kind} needs a CHW input, got {x}")
            w = g.weights.get(n.weight_id or "")
            if w is None:
                raise GraphError(f"node {n.id}: missing weight tensor")
            if w.ndim != 4:
                raise GraphError(f"node {n.id}: conv weight must be 4-d, got {w.shape}")
            stride = int(n.attrs.get("stride", 1))
            pad = int(n.attrs.get("padding", 0))
            if stride < 1 or pad < 0:
                raise GraphError(f"node {n.id}: bad stride/padding")
            o, i, kh, kw = w.shape
            if n.kind == "conv2d":
                if i != x[0]:
                    raise GraphError(f"node {n.id}: weight expects {i} channels, input has {x[0]}")
            elif n.kind == "depthwise_conv2d":
                if i != 1 or o != x[0]:
                    raise GraphError(f"node {n.id}: depthwise weight must be (C,1,kh,kw) with C={x[0]}")
            else:  # pointwise
                if (kh, kw) != (1, 1) or i != x[0]:
                    raise GraphError(f"node {n.id}: pointwise weight must be (O,{x[0]},1,1)")
            oh, ow = _conv_out_hw(x[1], x[2], kh, kw, stride, pad)
            shapes[n.output] = (o, oh, ow)
        elif n.kind == "fully_connected":
            w = g.weights.get(n.weight_id or "")
            if w is None or w.ndim != 2:
                raise GraphError(f"node {n.id}: fully_connected weight must be 2-d")
            flat = int(np.prod(x))
            if w.shape[1] != flat:
                raise GraphError(f"node {n.id}: weight expects {w.shape[1]} inputs, got {flat}")
            shapes[n.output] = (w.shape[0],)
        elif n.kind in ("maxpool", "avgpool"):
            if len(x) != 3:
                raise GraphError(f"node {n.id}: pooling needs a CHW input")
            k = int(n.attrs.get("kernel", 0))
            stride = int(n.attrs.get("stride", k))
            if k < 1 or stride < 1:
                raise GraphError(f"node {n.id}: bad pool kernel/stride")
            oh, ow = _conv_out_hw(x[1], x[2], k, k, stride, 0)
            shapes[n.output] = (x[0], oh, ow)
        elif n.kind == "relu" or n.kind == "softmax":
            shapes[n.output] = x
        elif n.kind == "add":
            if len(n.data_inputs) != 2:
                raise GraphError(f"node {n.id}: add takes exactly two inputs")
            y = shapes[n.data_inputs[1]]
            if x != y:
                raise GraphError(f"node {n.id}: add shape mismatch {x} vs {y}")
            shapes[n.output] = x
        elif n.kind == "concat":
            parts = [shapes[t] for t in n.data_inputs]
            if any(len(p) != 3 for p in parts):
                raise GraphError(f"node {n.id}: concat needs CHW inputs")
            hw = {p[1:] for p in parts}
            if len(hw) != 1:
                raise GraphError(f"node {n.id}: concat spatial mismatch {hw}")
            shapes[n.output] = (sum(p[0] for p in parts),) + parts[0][1:]
        else:
            raise GraphError(f"node {n.id}: unknown kind {n.kind!r}")
    return shapes


def validate(g: Graph) -> None:
    ids = [n.id for n in g.nodes]
    if len(set(ids)) != len(ids):
        raise GraphError("duplicate node ids")
    outs = [n.output for n in g.nodes]
    if len(set(outs)) != len(outs):
        raise GraphError("duplicate output tensor ids")
    if INPUT_TENSOR in outs or set(outs) & set(g.weights):
        raise GraphError("node outputs collide with reserved/weight tensor ids")
    for n in g.nodes:
        if n.kind not in NODE_KINDS:
            raise GraphError(f"node {n.id}: unknown kind {n.kind!r}")
        if n.kind in COMPUTE_KINDS:
            if not 2 <= len(n.inputs) <= 3:
                raise GraphError(f"node {n.id}: {n.kind} takes [data, weight(, bias)]")
            for t in n.inputs[1:]:
                if t not in g.weights:
                    raise GraphError(f"node {n.id}: {t!r} is not a weight tensor")
            b = g.weights.get(n.bias_id or "")
            if b is not None and b.ndim != 1:
                raise GraphError(f"node {n.id}: bias must be 1-d")
    for wid, w in g.weights.items():
        if w.dtype != np.float32:
            raise GraphError(f"weight {wid!r} must be float32, got {w.dtype}")
    shapes = propagate_shapes(g)
    for n in g.nodes:
        if n.kind in COMPUTE_KINDS and n.bias_id is not None:
            b = g.weights[n.bias_id]
            if b.shape[0] != shapes[n.output][0]:
                raise GraphError(f"node {n.id}: bias length {b.shape[0]} != out channels")
    g.output_tensor()


@dataclass
class ModelFeatures:
    """Macro-architecture counts fed to the cost model."""

    n_nodes: int
    n_layers: int  # weighted layers: conv family + fully_connected
    n_conv: int
    n_depthwise: int
    n_pointwise: int
    n_skip: int
    n_fc: int
    n_concat: int
    activation_kinds: dict[str, int]  # relu / maxpool / avgpool / softmax

    def to_dict(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "n_layers": self.n_layers,
            "n_conv": self.n_conv,
            "n_depthwise": self.n_depthwise,
            "n_pointwise": self.n_pointwise,
            "n_skip": self.n_skip,
            "n_fc": self.n_fc,
            "n_concat": self.n_concat,
            "activation_kinds": dict(self.activation_kinds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelFeatures":
        return cls(
            n_nodes=d["n_nodes"],
            n_layers=d["n_layers"],
            n_conv=d["n_conv"],
            n_depthwise=d["n_depthwise"],
            n_pointwise=d["n_pointwise"],
            n_skip=d["n_skip"],
            n_fc=d["n_fc"],
            n_concat=d["n_concat"],
            activation_kinds=dict(d["activation_kinds"]),
        )


def extract_features(g: Graph) -> ModelFeatures:
    kinds = [n.kind for n in g.nodes]
    count = lambda k: kinds.count(k)  # noqa: E731
    acts = {k: count(k) for k in ("relu", "maxpool", "avgpool", "softmax")}
    n_conv = count("conv2d")
    n_dw = count("depthwise_conv2d")
    n_pw = count("pointwise_conv2d")
    n_fc = count("fully_connected")
    return ModelFeatures(
        n_nodes=len(kinds),
        n_layers=n_conv + n_dw + n_pw + n_fc,
        n_conv=n_conv,
        n_depthwise=n_dw,
        n_pointwise=n_pw,
        n_skip=count("add"),
        n_fc=n_fc,
        n_concat=count("concat"),
        activation_kinds=acts,
    )


# --- container I/O ---------------------------------------------------------

def save_model(g: Graph, path: str, meta: dict | None = None) -> None:
    validate(g)
    order = sorted(g.weights)
    header = {
        "format": "qtm",
        "version": 1,
        "name": g.name,
        "input_shape": list(g.input_shape),
        "output_classes": g.output_classes,
        "nodes": [
            {"id": n.id, "kind": n.kind, "inputs": list(n.inputs),
             "output": n.output, "attrs": dict(n.attrs)}
            for n in g.nodes
        ],
        "weight_order": order,
    }
    if meta:
        header["meta"] = meta
    write_container(path, header, [g.weights[k] for k in order])


def load_model(path: str) -> Graph:
    try:
        header, buffers = read_container(path)
    except ValueError as e:
        raise GraphError(str(e)) from e
    if header.get("format") != "qtm":
        raise GraphError(f"{path}: not a model container")
    order = header["weight_order"]
    if len(order) != len(buffers):
        raise GraphError(f"{path}: weight table/buffer count mismatch")
    weights = {k: b for k, b in zip(order, buffers)}
    g = Graph(
        name=header["name"],
        nodes=[Node(id=d["id"], kind=d["kind"], inputs=list(d["inputs"]),
                    output=d["output"], attrs=dict(d["attrs"]))
               for d in header["nodes"]],
        weights=weights,
        input_shape=tuple(header["input_shape"]),
        output_classes=int(header["output_classes"]),
    )
    validate(g)
    return g

"""In-memory network description: layers, their parameters, graph checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .errors import (
    CycleError,
    DanglingReferenceError,
    DuplicateTopError,
    ModelError,
    UnknownLayerError,
)


class LayerKind(str, Enum):
    INPUT = "Input"
    CONVOLUTION = "Convolution"
    DECONVOLUTION = "Deconvolution"
    BATCH_NORM = "BatchNorm"
    SCALE = "Scale"
    RELU = "ReLU"
    ELU = "ELU"
    SIGMOID = "Sigmoid"
    POOLING = "Pooling"
    ELTWISE = "Eltwise"
    MERGE_CROP = "MergeCrop"
    # Internal to the optimizer; not accepted in network descriptions.
    PAD = "Pad"

    def __str__(self):
        return self.value


MODEL_KINDS = tuple(k for k in LayerKind if k is not LayerKind.PAD)

ACTIVATION_KINDS = (LayerKind.RELU, LayerKind.ELU, LayerKind.SIGMOID)
LINEAR_KINDS = (LayerKind.BATCH_NORM, LayerKind.SCALE)

ELTWISE_OPS = ("add", "mul", "div")
POOL_MODES = ("max", "avg")

DEFAULT_ELU_ALPHA = 1.0


def layer_kind(type_name: str) -> LayerKind:
    for kind in MODEL_KINDS:
        if kind.value == type_name:
            return kind
    raise UnknownLayerError("unknown layer type %r" % type_name)


@dataclass(frozen=True)
class LayerSpec:
    """One layer: a name, a kind, blob wiring, and kind-specific params."""

    name: str
    kind: LayerKind
    bottoms: tuple[str, ...]
    tops: tuple[str, ...]
    params: dict = field(default_factory=dict)

    def param(self, key, default=None):
        return self.params.get(key, default)


_REQUIRED_PARAMS = {
    LayerKind.INPUT: ("shape",),
    LayerKind.CONVOLUTION: ("num_output", "kernel", "stride", "pad"),
    LayerKind.DECONVOLUTION: ("num_output", "kernel", "stride", "pad"),
    LayerKind.POOLING: ("mode", "window", "stride"),
    LayerKind.ELTWISE: ("op",),
}

_BOTTOM_COUNTS = {
    LayerKind.INPUT: 0,
    LayerKind.ELTWISE: 2,
    LayerKind.MERGE_CROP: 2,
}


def check_layer(layer: LayerSpec) -> None:
    if not layer.name:
        raise ModelError("layer without a name")
    if not layer.tops:
        raise ModelError("layer %r produces no blob" % layer.name)
    if len(layer.tops) != 1:
        raise ModelError("layer %r must produce exactly one blob" % layer.name)
    want = _BOTTOM_COUNTS.get(layer.kind, 1)
    if len(layer.bottoms) != want:
        raise ModelError(
            "layer %r (%s) takes %d input blob(s), got %d"
            % (layer.name, layer.kind, want, len(layer.bottoms))
        )
    for key in _REQUIRED_PARAMS.get(layer.kind, ()):
        if key not in layer.params:
            raise ModelError("layer %r (%s) is missing %s" % (layer.name, layer.kind, key))
    if layer.kind in (LayerKind.CONVOLUTION, LayerKind.DECONVOLUTION):
        if layer.params["num_output"] < 1:
            raise ModelError("layer %r needs a positive num_output" % layer.name)
        for key in ("kernel", "stride"):
            if any(v < 1 for v in layer.params[key]):
                raise ModelError("layer %r has a non-positive %s" % (layer.name, key))
        if any(v < 0 for v in layer.params["pad"]):
            raise ModelError("layer %r has a negative pad" % layer.name)
    if layer.kind is LayerKind.POOLING:
        if layer.params["mode"] not in POOL_MODES:
            raise ModelError("layer %r has unknown pooling mode %r" % (layer.name, layer.params["mode"]))
        if any(v < 1 for v in layer.params["window"] + layer.params["stride"]):
            raise ModelError("layer %r has a non-positive pooling size" % layer.name)
    if layer.kind is LayerKind.ELTWISE and layer.params["op"] not in ELTWISE_OPS:
        raise ModelError("layer %r has unknown eltwise op %r" % (layer.name, layer.params["op"]))


@dataclass(frozen=True)
class NetworkSpec:
    """A named, ordered collection of layers forming a dataflow graph."""

    name: str
    layers: tuple[LayerSpec, ...]

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise ModelError("no layer named %r" % name)

    def producers(self) -> dict[str, int]:
        """Blob name to producing layer index; raises on double assignment."""
        out: dict[str, int] = {}
        for i, layer in enumerate(self.layers):
            for top in layer.tops:
                if top in out:
                    raise DuplicateTopError(
                        "blob %r written by both %r and %r"
                        % (top, self.layers[out[top]].name, layer.name)
                    )
                out[top] = i
        return out

    def topological_order(self) -> list[int]:
        """Layer indices in dependency order; raises on cycles or dangling blobs."""
        producers = self.producers()
        deps: list[list[int]] = []
        for layer in self.layers:
            row = []
            for bottom in layer.bottoms:
                if bottom not in producers:
                    raise DanglingReferenceError(
                        "layer %r consumes blob %r, which nothing produces"
                        % (layer.name, bottom)
                    )
                row.append(producers[bottom])
            deps.append(row)
        indeg = [len(set(row)) for row in deps]
        fanout: dict[int, set[int]] = {i: set() for i in range(len(deps))}
        for i, row in enumerate(deps):
            for p in set(row):
                fanout[p].add(i)
        ready = sorted(i for i, d in enumerate(indeg) if d == 0)
        order: list[int] = []
        while ready:
            i = ready.pop(0)
            order.append(i)
            for j in sorted(fanout[i]):
                indeg[j] -= 1
                if indeg[j] == 0:
                    ready.append(j)
            ready.sort()
        if len(order) != len(self.layers):
            stuck = [self.layers[i].name for i, d in enumerate(indeg) if d > 0]
            raise CycleError("layer graph has a cycle through %s" % ", ".join(sorted(stuck)))
        return order

    def validate(self) -> None:
        if not self.layers:
            raise ModelError("network %r has no layers" % self.name)
        seen = set()
        for layer in self.layers:
            if layer.name in seen:
                raise ModelError("duplicate layer name %r" % layer.name)
            seen.add(layer.name)
            check_layer(layer)
        self.topological_order()

    def input_layers(self) -> list[LayerSpec]:
        return [l for l in self.layers if l.kind is LayerKind.INPUT]

    def output_blobs(self) -> list[str]:
        """Blobs no layer consumes, in production order."""
        consumed = {b for layer in self.layers for b in layer.bottoms}
        return [t for layer in self.layers for t in layer.tops if t not in consumed]

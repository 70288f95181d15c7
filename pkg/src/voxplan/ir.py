"""Graph IR and the optimization passes that rewrite it.

The IR is built from a validated network description.  Spatial padding is
split out of convolutions into explicit Pad nodes so that the padding
eliminator can later turn them back into strided views.  Four passes run
in a fixed order:

1. fuse_addition: an eltwise add whose operand is a convolution it solely
   consumes becomes part of that convolution (the other operand turns into
   a base edge, added during accumulator initialization).
2. fold_linear: BatchNorm and Scale layers directly after a convolution
   collapse into its kernel and bias (and scale the base contribution of
   an additive convolution).
3. fuse_activation: ReLU / ELU / Sigmoid directly after a convolution
   becomes its store epilogue.
4. eliminate_padding: a Pad whose producer is a convolution writing only
   pads of the same width is deleted; the producer writes the interior of
   a zero-halo buffer instead and consumers read the whole allocation.

Every pass preserves semantics; running the pipeline twice changes
nothing the second time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PlanError
from .formats import (
    ROLE_BIAS,
    ROLE_BN_EPS,
    ROLE_BN_MEAN,
    ROLE_BN_VAR,
    ROLE_KERNEL,
    ROLE_SCALE_BETA,
    ROLE_SCALE_GAMMA,
    WeightStore,
)
from .netspec import (
    ACTIVATION_KINDS,
    DEFAULT_ELU_ALPHA,
    LayerKind,
    NetworkSpec,
)
from .shapes import Shape, validate_shapes

_ACT_NAME = {
    LayerKind.RELU: "relu",
    LayerKind.ELU: "elu",
    LayerKind.SIGMOID: "sigmoid",
}

CONV_KINDS = (LayerKind.CONVOLUTION, LayerKind.DECONVOLUTION)


@dataclass
class IRNode:
    """One executable operation plus its fused extras."""

    id: int
    kind: LayerKind
    name: str
    params: dict
    inputs: list[int]
    out_shape: Shape
    # convolution extras
    additive: bool = False
    base_input: int | None = None
    base_scale: np.ndarray | None = None
    fused_act: tuple[str, float] | None = None
    output_pads: tuple[int, int, int] = (0, 0, 0)

    def all_inputs(self) -> list[int]:
        ids = list(self.inputs)
        if self.base_input is not None:
            ids.append(self.base_input)
        return ids


@dataclass
class IRGraph:
    """Nodes keyed by id; edges live in each node's input lists."""

    nodes: dict[int, IRNode] = field(default_factory=dict)
    inputs: list[int] = field(default_factory=list)
    outputs: list[int] = field(default_factory=list)
    next_id: int = 0
    # blob names survive fusion: when an output-producing node is fused
    # away, the surviving producer keeps publishing under the old name
    input_names: dict[int, str] = field(default_factory=dict)
    output_names: dict[int, str] = field(default_factory=dict)

    def add(self, kind, name, params, inputs, out_shape) -> IRNode:
        node = IRNode(self.next_id, kind, name, dict(params), list(inputs), tuple(out_shape))
        self.nodes[node.id] = node
        self.next_id += 1
        return node

    def node(self, nid: int) -> IRNode:
        return self.nodes[nid]

    def consumer_edges(self, nid: int) -> list[int]:
        """Ids of nodes reading ``nid``, one entry per edge (base edges count)."""
        out = []
        for node in self.nodes.values():
            for src in node.all_inputs():
                if src == nid:
                    out.append(node.id)
        return out

    def is_output(self, nid: int) -> bool:
        return nid in self.outputs

    def replace_consumers(self, old: int, new: int) -> None:
        for node in self.nodes.values():
            node.inputs = [new if src == old else src for src in node.inputs]
            if node.base_input == old:
                node.base_input = new
        self.outputs = [new if nid == old else nid for nid in self.outputs]
        if old in self.output_names:
            self.output_names[new] = self.output_names.pop(old)

    def input_name(self, nid: int) -> str:
        return self.input_names.get(nid, self.node(nid).name)

    def output_name(self, nid: int) -> str:
        return self.output_names.get(nid, self.node(nid).name)

    def remove(self, nid: int) -> None:
        del self.nodes[nid]

    def reachable_from(self, start: int) -> set[int]:
        """Every node downstream of ``start`` along data edges, start included."""
        seen = {start}
        frontier = [start]
        while frontier:
            nid = frontier.pop()
            for consumer in set(self.consumer_edges(nid)):
                if consumer not in seen:
                    seen.add(consumer)
                    frontier.append(consumer)
        return seen

    def topo_order(self) -> list[int]:
        order = []
        indeg = {nid: len(set(n.all_inputs())) for nid, n in self.nodes.items()}
        ready = sorted(nid for nid, d in indeg.items() if d == 0)
        fanout: dict[int, set[int]] = {nid: set() for nid in self.nodes}
        for nid, node in self.nodes.items():
            for src in set(node.all_inputs()):
                fanout[src].add(nid)
        while ready:
            nid = ready.pop(0)
            order.append(nid)
            for consumer in sorted(fanout[nid]):
                indeg[consumer] -= 1
                if indeg[consumer] == 0:
                    ready.append(consumer)
            ready.sort()
        if len(order) != len(self.nodes):
            raise PlanError("optimizer produced a cyclic graph")
        return order

    def count(self, *kinds) -> int:
        return sum(1 for n in self.nodes.values() if n.kind in kinds)


def build_ir(spec: NetworkSpec, shapes: dict[str, Shape] | None = None) -> IRGraph:
    """Lower a validated description to IR, splitting conv pads into Pad nodes."""
    if shapes is None:
        shapes = validate_shapes(spec)
    graph = IRGraph()
    by_blob: dict[str, int] = {}
    for idx in spec.topological_order():
        layer = spec.layers[idx]
        ins = [by_blob[b] for b in layer.bottoms]
        params = dict(layer.params)
        if layer.kind is LayerKind.CONVOLUTION and any(p > 0 for p in params["pad"]):
            pads = params["pad"]
            in_shape = graph.node(ins[0]).out_shape
            padded_shape = (
                in_shape[0], in_shape[1],
                in_shape[2] + 2 * pads[0], in_shape[3] + 2 * pads[1], in_shape[4] + 2 * pads[2],
            )
            pad_node = graph.add(
                LayerKind.PAD, layer.name + ":pad", {"pads": tuple(pads)}, ins, padded_shape
            )
            params["pad"] = (0, 0, 0)
            ins = [pad_node.id]
        if layer.kind is LayerKind.DECONVOLUTION and any(p > 0 for p in params["pad"]):
            raise PlanError("layer %r: deconvolution with nonzero pad is unsupported" % layer.name)
        node = graph.add(layer.kind, layer.name, params, ins, shapes[layer.tops[0]])
        if layer.kind is LayerKind.INPUT:
            graph.inputs.append(node.id)
            graph.input_names[node.id] = layer.tops[0]
        by_blob[layer.tops[0]] = node.id
    consumed = {b for layer in spec.layers for b in layer.bottoms}
    graph.outputs = [
        by_blob[t] for layer in spec.layers for t in layer.tops if t not in consumed
    ]
    graph.output_names = {nid: blob for blob, nid in by_blob.items() if nid in graph.outputs}
    return graph


# ---------------------------------------------------------------------------
# Passes

@dataclass
class PassStats:
    name: str
    applied: int = 0
    removed_nodes: int = 0


def fuse_addition(graph: IRGraph, store: WeightStore) -> PassStats:
    """Fold eltwise additions into a convolution operand.

    The convolution L1 must be consumed only by the addition, and the other
    operand L2 must not be reachable from L1 (the base edge L2 -> L1 must
    not create a cycle).  When both operands qualify the later one in
    topological order wins.
    """
    stats = PassStats("fuse_addition")
    for nid in graph.topo_order():
        node = graph.nodes.get(nid)
        if node is None or node.kind is not LayerKind.ELTWISE or node.params.get("op") != "add":
            continue
        left, right = node.inputs
        candidates = []
        for cand, other in ((left, right), (right, left)):
            c = graph.node(cand)
            if c.kind is not LayerKind.CONVOLUTION:
                continue
            if c.additive or c.fused_act is not None:
                continue
            if graph.is_output(cand) or graph.consumer_edges(cand) != [nid]:
                continue
            if other in graph.reachable_from(cand):
                continue
            candidates.append((cand, other))
        if not candidates:
            continue
        # prefer the later conv in the current order
        order_pos = {n: i for i, n in enumerate(graph.topo_order())}
        cand, other = max(candidates, key=lambda pair: order_pos[pair[0]])
        conv = graph.node(cand)
        conv.additive = True
        conv.base_input = other
        graph.replace_consumers(nid, cand)
        graph.remove(nid)
        stats.applied += 1
        stats.removed_nodes += 1
    return stats


def _linear_coeffs(node: IRNode, store: WeightStore, fmaps: int):
    """Per-fmap multiplier and offset of a BatchNorm or Scale layer (float64)."""
    if node.kind is LayerKind.BATCH_NORM:
        mean = store.tensor(node.name, ROLE_BN_MEAN).astype(np.float64)
        var = store.tensor(node.name, ROLE_BN_VAR).astype(np.float64)
        eps = store.bn_eps(node.name)
        mult = 1.0 / np.sqrt(var + eps)
        add = -mean * mult
    else:
        mult = store.tensor(node.name, ROLE_SCALE_GAMMA).astype(np.float64)
        add = store.tensor(node.name, ROLE_SCALE_BETA).astype(np.float64)
    if mult.shape != (fmaps,) or add.shape != (fmaps,):
        raise PlanError("layer %r: linear coefficients do not match %d fmaps" % (node.name, fmaps))
    return mult, add


def _drop_linear_entries(node: IRNode, store: WeightStore) -> None:
    for role in (ROLE_BN_MEAN, ROLE_BN_VAR, ROLE_BN_EPS, ROLE_SCALE_GAMMA, ROLE_SCALE_BETA):
        store.remove("%s.%s" % (node.name, role))


def fold_linear(graph: IRGraph, store: WeightStore) -> PassStats:
    """Collapse BatchNorm / Scale into the producing convolution's weights.

    K' = K * M per out fmap and B' = B * M + A, computed in float64 and
    stored back as float32.  An additive convolution also scales its base
    contribution by M so that init = B' + base_scale * Base keeps the
    pre-fold semantics.
    """
    stats = PassStats("fold_linear")
    for nid in graph.topo_order():
        node = graph.nodes.get(nid)
        if node is None or node.kind not in (LayerKind.BATCH_NORM, LayerKind.SCALE):
            continue
        producer = graph.node(node.inputs[0])
        if producer.kind not in CONV_KINDS:
            continue
        if producer.fused_act is not None:
            continue
        if graph.is_output(producer.id) or graph.consumer_edges(producer.id) != [nid]:
            continue
        fmaps = producer.out_shape[1]
        mult, add = _linear_coeffs(node, store, fmaps)
        kernel = store.tensor(producer.name, ROLE_KERNEL).astype(np.float64)
        bias = store.tensor(producer.name, ROLE_BIAS).astype(np.float64)
        kernel *= mult.reshape(-1, 1, 1, 1, 1)
        bias = bias * mult + add
        store.set_tensor(producer.name, ROLE_KERNEL, kernel.astype(np.float32))
        store.set_tensor(producer.name, ROLE_BIAS, bias.astype(np.float32))
        if producer.additive:
            scale = producer.base_scale
            if scale is None:
                scale = np.ones(fmaps, dtype=np.float64)
            producer.base_scale = (scale.astype(np.float64) * mult).astype(np.float32)
        _drop_linear_entries(node, store)
        graph.replace_consumers(nid, producer.id)
        graph.remove(nid)
        stats.applied += 1
        stats.removed_nodes += 1
    return stats


def fuse_activation(graph: IRGraph, store: WeightStore) -> PassStats:
    """Turn an activation directly after a convolution into its store epilogue."""
    stats = PassStats("fuse_activation")
    for nid in graph.topo_order():
        node = graph.nodes.get(nid)
        if node is None or node.kind not in ACTIVATION_KINDS:
            continue
        producer = graph.node(node.inputs[0])
        if producer.kind not in CONV_KINDS:
            continue
        if producer.fused_act is not None:
            continue
        if graph.is_output(producer.id) or graph.consumer_edges(producer.id) != [nid]:
            continue
        alpha = float(node.params.get("alpha", DEFAULT_ELU_ALPHA))
        producer.fused_act = (_ACT_NAME[node.kind], alpha)
        graph.replace_consumers(nid, producer.id)
        graph.remove(nid)
        stats.applied += 1
        stats.removed_nodes += 1
    return stats


def eliminate_padding(graph: IRGraph, store: WeightStore) -> PassStats:
    """Delete Pad nodes fed by a convolution that can write a zero halo.

    Applies when every consumer edge of the producing convolution goes to
    Pad nodes of one common width and the producer is not a network
    output.  The producer then writes the interior of a halo allocation
    and the pads' consumers read the whole allocation as a dense tensor;
    no arithmetic changes, only addressing.
    """
    stats = PassStats("eliminate_padding")
    for nid in list(graph.topo_order()):
        node = graph.nodes.get(nid)
        if node is None or node.kind is not LayerKind.PAD:
            continue
        producer = graph.node(node.inputs[0])
        if producer.kind not in CONV_KINDS:
            continue
        if graph.is_output(producer.id):
            continue
        if producer.output_pads != (0, 0, 0):
            continue
        pads = node.params["pads"]
        siblings = set(graph.consumer_edges(producer.id))
        ok = True
        for sid in siblings:
            sib = graph.node(sid)
            if sib.kind is not LayerKind.PAD or sib.params["pads"] != pads:
                ok = False
                break
            if graph.is_output(sid):
                ok = False
                break
        if not ok:
            continue
        producer.output_pads = tuple(pads)
        for sid in siblings:
            graph.replace_consumers(sid, producer.id)
            graph.remove(sid)
            stats.removed_nodes += 1
        stats.applied += 1
    return stats


PASS_ORDER = (
    ("fuse_addition", fuse_addition),
    ("fold_linear", fold_linear),
    ("fuse_activation", fuse_activation),
    ("eliminate_padding", eliminate_padding),
)


@dataclass
class PassReport:
    stats: list[PassStats]
    nodes_before: int
    nodes_after: int

    def stat(self, name: str) -> PassStats:
        for s in self.stats:
            if s.name == name:
                return s
        raise KeyError(name)

    def lines(self) -> list[str]:
        out = ["nodes_before: %d" % self.nodes_before]
        for s in self.stats:
            out.append("pass %s: applied=%d removed=%d" % (s.name, s.applied, s.removed_nodes))
        out.append("nodes_after: %d" % self.nodes_after)
        return out


def optimize(graph: IRGraph, store: WeightStore, *, fuse_add: bool = True,
             fold_lin: bool = True, fuse_act: bool = True,
             elide_pad: bool = True) -> PassReport:
    """Run the pass pipeline in its fixed order, mutating graph and store."""
    enabled = {
        "fuse_addition": fuse_add,
        "fold_linear": fold_lin,
        "fuse_activation": fuse_act,
        "eliminate_padding": elide_pad,
    }
    before = len(graph.nodes)
    stats = []
    for name, fn in PASS_ORDER:
        if enabled[name]:
            stats.append(fn(graph, store))
        else:
            stats.append(PassStats(name))
        graph.topo_order()  # acyclicity invariant after every pass
    return PassReport(stats, before, len(graph.nodes))

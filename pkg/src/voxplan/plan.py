"""Executable plans: buffer table, ordered steps, and the planner.

A plan binds each IR node to an output buffer from a reusable arena.
Buffers are freed once their last consumer has run and handed out again
best-fit; an allocation that needs a zero halo only reuses a buffer whose
halo is still provably zero (same allocation shape, never reused for a
plain write in between), because halos are written once at arena setup
and convolution outputs only touch the interior.

A plan file is the magic, a version word, a JSON header, and the folded
weight store embedded as its own container.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

from .blocked import DEFAULT_SIMD_WIDTH, fmap_blocks, validate_simd_width
from .errors import FormatError, PlanError
from .formats import FORMAT_VERSION, WeightStore, dump_weights, parse_weights
from .ir import CONV_KINDS, IRGraph, build_ir, optimize, PassReport
from .netspec import LayerKind, NetworkSpec
from .shapes import Shape, validate_shapes

PLAN_MAGIC = b"PZNP"

DEFAULT_PATCH_EXTENT = (4, 4, 8)


@dataclass(frozen=True)
class BufferSpec:
    id: int
    elements: int
    haloed: bool


@dataclass(frozen=True)
class StepInput:
    buffer: int
    dims: Shape  # standard (b, f, x, y, z) the consumer sees


@dataclass(frozen=True)
class StepOutput:
    buffer: int
    dims: Shape
    pads: tuple[int, int, int]


@dataclass(frozen=True)
class Step:
    kind: LayerKind
    name: str
    params: dict
    inputs: tuple[StepInput, ...]
    output: StepOutput
    additive: bool = False
    base: StepInput | None = None
    base_scale: tuple[float, ...] | None = None
    fused_act: tuple[str, float] | None = None


@dataclass
class ExecutionPlan:
    name: str
    simd: int
    patch_extent: tuple[int, int, int]
    buffers: tuple[BufferSpec, ...]
    inputs: tuple[tuple[str, int, Shape], ...]   # name, buffer, dims
    outputs: tuple[tuple[str, int, Shape], ...]
    steps: tuple[Step, ...]
    weights: WeightStore

    @property
    def arena_elements(self) -> int:
        return sum(b.elements for b in self.buffers)

    @property
    def arena_bytes(self) -> int:
        return self.arena_elements * 4


def _blocked_elements(dims: Shape, pads, simd: int) -> int:
    n, f, x, y, z = dims
    fb = fmap_blocks(f, simd)
    px, py, pz = pads
    return n * fb * (x + 2 * px) * (y + 2 * py) * (z + 2 * pz) * simd


class _Arena:
    """Best-fit buffer pool with halo-cleanliness tracking."""

    def __init__(self, simd: int):
        self.simd = simd
        self.buffers: list[BufferSpec] = []
        self.free_plain: list[int] = []
        self.free_clean: dict[tuple, list[int]] = {}
        self.clean_key: dict[int, tuple] = {}

    def alloc(self, dims: Shape, pads) -> int:
        need = _blocked_elements(dims, pads, self.simd)
        if pads != (0, 0, 0):
            key = (tuple(dims[:2]), tuple(dims[2:]), tuple(pads))
            pool = self.free_clean.get(key)
            if pool:
                return pool.pop()
            buf = BufferSpec(len(self.buffers), need, True)
            self.buffers.append(buf)
            self.clean_key[buf.id] = key
            return buf.id
        fits = [bid for bid in self.free_plain if self.buffers[bid].elements >= need]
        if fits:
            bid = min(fits, key=lambda b: (self.buffers[b].elements, b))
            self.free_plain.remove(bid)
            return bid
        buf = BufferSpec(len(self.buffers), need, False)
        self.buffers.append(buf)
        return buf.id

    def release(self, bid: int) -> None:
        key = self.clean_key.get(bid)
        if key is not None:
            self.free_clean.setdefault(key, []).append(bid)
        else:
            self.free_plain.append(bid)


def plan_network(graph: IRGraph, store: WeightStore, *, simd: int = DEFAULT_SIMD_WIDTH,
                 patch_extent=DEFAULT_PATCH_EXTENT, name: str = "net") -> ExecutionPlan:
    """Lower an optimized graph to steps plus a liveness-reused arena."""
    simd = validate_simd_width(simd)
    patch_extent = tuple(int(p) for p in patch_extent)
    if len(patch_extent) != 3 or any(p < 1 for p in patch_extent):
        raise PlanError("patch extent must be three positive integers")
    order = graph.topo_order()
    remaining: dict[int, int] = {}
    for nid in order:
        remaining[nid] = len(graph.consumer_edges(nid))
    arena = _Arena(simd)
    node_buffer: dict[int, int] = {}
    node_dims: dict[int, Shape] = {}
    steps: list[Step] = []
    plan_inputs = []

    def consumer_dims(nid: int) -> Shape:
        """Dims a consumer sees: halo outputs are read whole, as dense."""
        node = graph.node(nid)
        n, f, x, y, z = node.out_shape
        px, py, pz = node.output_pads
        return (n, f, x + 2 * px, y + 2 * py, z + 2 * pz)

    def step_input(src: int) -> StepInput:
        return StepInput(node_buffer[src], consumer_dims(src))

    for nid in order:
        node = graph.node(nid)
        pads = node.output_pads
        if node.kind in CONV_KINDS and any(p > 0 for p in node.params.get("pad", (0, 0, 0))):
            raise PlanError("layer %r: plan building expects pads split out" % node.name)
        bid = arena.alloc(node.out_shape, pads)
        node_buffer[nid] = bid
        node_dims[nid] = node.out_shape
        if node.kind is LayerKind.INPUT:
            plan_inputs.append((graph.input_name(nid), bid, node.out_shape))
        else:
            ins = tuple(step_input(src) for src in node.inputs)
            base = step_input(node.base_input) if node.base_input is not None else None
            base_scale = None
            if node.base_scale is not None:
                base_scale = tuple(float(v) for v in node.base_scale)
            params = {k: v for k, v in node.params.items() if k != "pad"}
            if node.kind in CONV_KINDS:
                params["stride"] = tuple(node.params["stride"])
                params["kernel"] = tuple(node.params["kernel"])
            steps.append(Step(
                kind=node.kind, name=node.name, params=params, inputs=ins,
                output=StepOutput(bid, node.out_shape, pads),
                additive=node.additive, base=base, base_scale=base_scale,
                fused_act=node.fused_act,
            ))
        # inputs of this step are done being read once it runs
        for src in graph.node(nid).all_inputs():
            remaining[src] -= 1
            if remaining[src] == 0 and not graph.is_output(src):
                arena.release(node_buffer[src])
        if remaining[nid] == 0 and not graph.is_output(nid):
            # dead node: nothing reads it, release right away
            arena.release(bid)

    outputs = []
    for nid in graph.outputs:
        node = graph.node(nid)
        if node.output_pads != (0, 0, 0):
            raise PlanError("output %r still carries a halo" % node.name)
        outputs.append((graph.output_name(nid), node_buffer[nid], node.out_shape))
    return ExecutionPlan(
        name=name, simd=simd, patch_extent=patch_extent,
        buffers=tuple(arena.buffers), inputs=tuple(plan_inputs),
        outputs=tuple(outputs), steps=tuple(steps), weights=store,
    )


def compile_network(spec: NetworkSpec, store: WeightStore, *,
                    simd: int = DEFAULT_SIMD_WIDTH, patch_extent=DEFAULT_PATCH_EXTENT,
                    fuse_add: bool = True, fold_lin: bool = True,
                    fuse_act: bool = True, elide_pad: bool = True,
                    ) -> tuple[ExecutionPlan, PassReport]:
    """Validate, lower, optimize, and plan in one step.

    The weight store is copied; the plan embeds the folded copy and the
    caller's store stays untouched.
    """
    shapes = validate_shapes(spec, store)
    graph = build_ir(spec, shapes)
    folded = store.copy()
    report = optimize(graph, folded, fuse_add=fuse_add, fold_lin=fold_lin,
                      fuse_act=fuse_act, elide_pad=elide_pad)
    plan = plan_network(graph, folded, simd=simd, patch_extent=patch_extent,
                        name=spec.name)
    return plan, report


# ---------------------------------------------------------------------------
# Serialization

def _step_to_json(step: Step) -> dict:
    out = {
        "kind": step.kind.value,
        "name": step.name,
        "params": _params_to_json(step.params),
        "inputs": [{"buffer": i.buffer, "dims": list(i.dims)} for i in step.inputs],
        "output": {
            "buffer": step.output.buffer,
            "dims": list(step.output.dims),
            "pads": list(step.output.pads),
        },
    }
    if step.additive:
        out["additive"] = True
        out["base"] = {"buffer": step.base.buffer, "dims": list(step.base.dims)}
        if step.base_scale is not None:
            out["base_scale"] = list(step.base_scale)
    if step.fused_act is not None:
        out["fused_act"] = [step.fused_act[0], step.fused_act[1]]
    return out


def _params_to_json(params: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


def _params_from_json(params: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in params.items()}


def _step_from_json(blob: dict) -> Step:
    base = None
    if blob.get("additive"):
        base = StepInput(blob["base"]["buffer"], tuple(blob["base"]["dims"]))
    scale = blob.get("base_scale")
    act = blob.get("fused_act")
    return Step(
        kind=LayerKind(blob["kind"]),
        name=blob["name"],
        params=_params_from_json(blob["params"]),
        inputs=tuple(StepInput(i["buffer"], tuple(i["dims"])) for i in blob["inputs"]),
        output=StepOutput(
            blob["output"]["buffer"], tuple(blob["output"]["dims"]),
            tuple(blob["output"]["pads"]),
        ),
        additive=bool(blob.get("additive")),
        base=base,
        base_scale=tuple(scale) if scale is not None else None,
        fused_act=(act[0], float(act[1])) if act else None,
    )


def dump_plan(plan: ExecutionPlan) -> bytes:
    header = {
        "name": plan.name,
        "simd": plan.simd,
        "patch_extent": list(plan.patch_extent),
        "buffers": [
            {"id": b.id, "elements": b.elements, "haloed": b.haloed} for b in plan.buffers
        ],
        "inputs": [{"name": n, "buffer": b, "dims": list(d)} for n, b, d in plan.inputs],
        "outputs": [{"name": n, "buffer": b, "dims": list(d)} for n, b, d in plan.outputs],
        "steps": [_step_to_json(s) for s in plan.steps],
    }
    encoded = json.dumps(header, sort_keys=True).encode()
    weights = dump_weights(plan.weights)
    return b"".join([
        PLAN_MAGIC,
        struct.pack("<II", FORMAT_VERSION, len(encoded)),
        encoded,
        weights,
    ])


def parse_plan(blob: bytes) -> ExecutionPlan:
    if blob[:4] != PLAN_MAGIC:
        raise FormatError("bad plan magic %r" % blob[:4])
    if len(blob) < 12:
        raise FormatError("truncated plan header")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise FormatError("unsupported plan version %d" % version)
    if len(blob) < 12 + hlen:
        raise FormatError("truncated plan header")
    try:
        header = json.loads(blob[12:12 + hlen].decode())
    except ValueError as exc:
        raise FormatError("bad plan header: %s" % exc) from None
    weights = parse_weights(blob[12 + hlen:])
    return ExecutionPlan(
        name=header["name"],
        simd=int(header["simd"]),
        patch_extent=tuple(header["patch_extent"]),
        buffers=tuple(
            BufferSpec(b["id"], b["elements"], b["haloed"]) for b in header["buffers"]
        ),
        inputs=tuple((i["name"], i["buffer"], tuple(i["dims"])) for i in header["inputs"]),
        outputs=tuple((o["name"], o["buffer"], tuple(o["dims"])) for o in header["outputs"]),
        steps=tuple(_step_from_json(s) for s in header["steps"]),
        weights=weights,
    )


def write_plan(path, plan: ExecutionPlan) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_plan(plan))


def read_plan(path) -> ExecutionPlan:
    with open(path, "rb") as fh:
        return parse_plan(fh.read())

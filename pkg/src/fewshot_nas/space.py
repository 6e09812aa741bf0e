"""Cell-based search spaces, subnet encoding and structural metrics.

A search space is a DAG cell whose edges each pick one candidate operation,
repeated over a fixed macro plan (stem, stages of cells joined by reduction
blocks, global pooling and a linear classifier). A subnet is the vector of
chosen op indices, one per edge.

FLOPs convention: one multiply-accumulate counts as 2 FLOPs. BatchNorm, ReLU,
pooling and additions cost nothing. Parameter counts cover conv and linear
weights (plus the classifier bias); BatchNorm affine parameters are excluded.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

import yaml

FLOPS_CONVENTION = "flops=2*MAC; bn/relu/pool/add=0; params=conv+linear weights (bn excluded)"
DEFAULT_ENUMERATION_LIMIT = 1_000_000

FLOPS_MODELS = ("conv", "pool", "skip", "none")


class SpaceError(ValueError):
    """Invalid search space definition or subnet."""


@dataclass(frozen=True)
class OpSpec:
    name: str
    kernel_size: int
    nonlinearity_count: int
    has_weights: bool
    flops_model: str
    window: int = 0  # pooling window, only for flops_model == "pool"

    def __post_init__(self):
        if self.flops_model not in FLOPS_MODELS:
            raise SpaceError(f"op {self.name!r}: unknown flops_model {self.flops_model!r}")
        if self.has_weights:
            if self.kernel_size < 1 or self.kernel_size % 2 == 0:
                raise SpaceError(f"op {self.name!r}: weighted ops need an odd kernel_size >= 1")
            if self.nonlinearity_count < 1:
                raise SpaceError(f"op {self.name!r}: ReLU-conv-BN ops carry at least one ReLU")
        else:
            if self.kernel_size != 0:
                raise SpaceError(f"op {self.name!r}: kernel_size must be 0 without weights")
            if self.nonlinearity_count != 0:
                raise SpaceError(f"op {self.name!r}: weightless ops have no nonlinearity")
        if self.flops_model == "pool" and (self.window < 1 or self.window % 2 == 0):
            raise SpaceError(f"op {self.name!r}: pooling needs an odd window")


BUILTIN_OPS = {
    "none": OpSpec("none", 0, 0, False, "none"),
    "skip_connect": OpSpec("skip_connect", 0, 0, False, "skip"),
    "nor_conv_1x1": OpSpec("nor_conv_1x1", 1, 1, True, "conv"),
    "nor_conv_3x3": OpSpec("nor_conv_3x3", 3, 1, True, "conv"),
    "nor_conv_5x5": OpSpec("nor_conv_5x5", 5, 1, True, "conv"),
    "avg_pool_3x3": OpSpec("avg_pool_3x3", 0, 0, False, "pool", window=3),
}


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    ops: tuple[OpSpec, ...]


@dataclass(frozen=True)
class SearchSpace:
    """Immutable search-space description.

    ``edges`` are in declaration order; edge 0 is the least significant digit
    of the mixed-radix encoding.
    """

    name: str
    nodes: int
    edges: tuple[Edge, ...]
    channel_plan: tuple[int, ...]
    cell_repeats: int
    input_shape: tuple[int, int, int]
    num_classes: int
    arities: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if self.nodes < 2:
            raise SpaceError("a cell needs at least 2 nodes")
        if not self.edges:
            raise SpaceError("a cell needs at least one edge")
        for j, e in enumerate(self.edges):
            if len(e.ops) < 2:
                raise SpaceError(f"edge {j} has {len(e.ops)} candidate ops; at least 2 required")
            if not 0 <= e.src < e.dst < self.nodes:
                raise SpaceError(f"edge {j} ({e.src}->{e.dst}) is not a forward edge of a {self.nodes}-node cell")
        if self.cell_repeats < 1:
            raise SpaceError("cell_repeats must be positive")
        if not self.channel_plan or any(c < 1 for c in self.channel_plan):
            raise SpaceError("channel_plan must list positive widths")
        if len(self.input_shape) != 3 or any(d < 1 for d in self.input_shape):
            raise SpaceError("input_shape must be (channels, height, width)")
        if self.num_classes < 2:
            raise SpaceError("num_classes must be at least 2")
        h, w = self.input_shape[1:]
        if h % 2 ** (len(self.channel_plan) - 1) or w % 2 ** (len(self.channel_plan) - 1):
            raise SpaceError("input height/width must halve cleanly at every reduction")
        object.__setattr__(self, "arities", tuple(len(e.ops) for e in self.edges))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def size(self) -> int:
        return math.prod(self.arities)

    def stage_shapes(self) -> list[tuple[int, int, int]]:
        """(channels, height, width) at full width for each stage."""
        _, h, w = self.input_shape
        return [(c, h >> s, w >> s) for s, c in enumerate(self.channel_plan)]

    def op_names(self, subnet: "Subnet") -> list[str]:
        self.validate(subnet)
        return [e.ops[c].name for e, c in zip(self.edges, subnet.choices)]

    def validate(self, subnet: "Subnet") -> None:
        if len(subnet.choices) != self.num_edges:
            raise SpaceError(f"subnet has {len(subnet.choices)} choices; space has {self.num_edges} edges")
        for j, (c, a) in enumerate(zip(subnet.choices, self.arities)):
            if not 0 <= c < a:
                raise SpaceError(f"choice {c} at edge {j} out of range [0, {a})")

    def check_divisor(self, G: int) -> None:
        if not isinstance(G, int) or G < 1:
            raise SpaceError(f"channel divisor G must be a positive integer, got {G!r}")
        for c in self.channel_plan:
            if c % G:
                raise SpaceError(f"channel width {c} is not divisible by G={G}")


@dataclass(frozen=True, order=True)
class Subnet:
    choices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(int(c) for c in self.choices))


@dataclass(frozen=True)
class StructMetrics:
    nonlinearity_count: int
    flops: int
    params: int


def _parse_op(entry) -> OpSpec:
    if isinstance(entry, str):
        try:
            return BUILTIN_OPS[entry]
        except KeyError:
            raise SpaceError(f"unknown op {entry!r}; define it under op_specs") from None
    return OpSpec(
        name=entry["name"],
        kernel_size=int(entry.get("kernel_size", 0)),
        nonlinearity_count=int(entry.get("nonlinearity_count", 0)),
        has_weights=bool(entry.get("has_weights", False)),
        flops_model=entry.get("flops_model", "none"),
        window=int(entry.get("window", 0)),
    )


def space_from_dict(doc: dict) -> SearchSpace:
    custom = {d["name"]: _parse_op(d) for d in doc.get("op_specs", [])}

    def lookup(name):
        return custom[name] if name in custom else _parse_op(name)

    default_ops = doc.get("ops")
    edges = []
    for j, e in enumerate(doc["edges"]):
        if isinstance(e, dict):
            src, dst = e["from"], e["to"]
            names = e.get("ops", default_ops)
        else:
            src, dst = e
            names = default_ops
        if names is None:
            raise SpaceError(f"edge {j} lists no ops and no default ops are given")
        edges.append(Edge(int(src), int(dst), tuple(lookup(n) for n in names)))
    return SearchSpace(
        name=str(doc.get("name", "space")),
        nodes=int(doc.get("nodes", max(e.dst for e in edges) + 1)),
        edges=tuple(edges),
        channel_plan=tuple(int(c) for c in doc["channel_plan"]),
        cell_repeats=int(doc.get("cell_repeats", 1)),
        input_shape=tuple(int(d) for d in doc["input_shape"]),
        num_classes=int(doc["num_classes"]),
    )


def load_space(path: str | Path) -> SearchSpace:
    """Load a space from a YAML/JSON file, or a bundled asset by name."""
    p = Path(path)
    if not p.exists():
        name = str(path)
        if not name.endswith(".yaml"):
            name += ".yaml"
        try:
            text = resources.files("fewshot_nas.assets").joinpath(name).read_text()
        except FileNotFoundError:
            raise SpaceError(f"no such space file or bundled space: {path}") from None
    else:
        text = p.read_text()
    return space_from_dict(yaml.safe_load(text))


def space_to_dict(space: SearchSpace) -> dict:
    names = {op.name for e in space.edges for op in e.ops}
    return {
        "name": space.name,
        "nodes": space.nodes,
        "op_specs": [
            {"name": op.name, "kernel_size": op.kernel_size, "nonlinearity_count": op.nonlinearity_count,
             "has_weights": op.has_weights, "flops_model": op.flops_model, "window": op.window}
            for op in {op.name: op for e in space.edges for op in e.ops}.values()
            if op.name in names and BUILTIN_OPS.get(op.name) != op
        ],
        "edges": [{"from": e.src, "to": e.dst, "ops": [op.name for op in e.ops]} for e in space.edges],
        "channel_plan": list(space.channel_plan),
        "cell_repeats": space.cell_repeats,
        "input_shape": list(space.input_shape),
        "num_classes": space.num_classes,
    }


# -- encoding -----------------------------------------------------------------

def encode(space: SearchSpace, subnet: Subnet) -> int:
    space.validate(subnet)
    code = 0
    for c, a in zip(reversed(subnet.choices), reversed(space.arities)):
        code = code * a + c
    return code


def decode(space: SearchSpace, code: int) -> Subnet:
    code = int(code)
    if not 0 <= code < space.size:
        raise SpaceError(f"code {code} out of range [0, {space.size})")
    choices = []
    for a in space.arities:
        code, c = divmod(code, a)
        choices.append(c)
    return Subnet(tuple(choices))


def enumerate_subnets(space: SearchSpace, limit: int = DEFAULT_ENUMERATION_LIMIT) -> Iterator[Subnet]:
    """Yield every subnet in encoding order.

    Refuses spaces larger than ``limit``; use evolutionary search there.
    """
    if space.size > limit:
        raise SpaceError(
            f"space {space.name!r} has {space.size} subnets, above the enumeration limit {limit}; "
            "use evolutionary search instead"
        )
    ranges = [range(a) for a in reversed(space.arities)]
    for rev in itertools.product(*ranges):
        yield Subnet(tuple(reversed(rev)))


def random_subnet(space: SearchSpace, rng) -> Subnet:
    return Subnet(tuple(int(rng.integers(a)) for a in space.arities))


# -- structural metrics -------------------------------------------------------

def count_nonlinearities(space: SearchSpace, subnet: Subnet) -> int:
    """ReLU applications in one cell (the cell_repeats multiplier is left out)."""
    space.validate(subnet)
    return sum(e.ops[c].nonlinearity_count for e, c in zip(space.edges, subnet.choices))


def _op_weight_count(op: OpSpec, channels: int, G: int) -> int:
    if not op.has_weights:
        return 0
    c = channels // G
    return c * c * op.kernel_size * op.kernel_size


def _op_flops(op: OpSpec, channels: int, h: int, w: int, G: int) -> int:
    if op.flops_model != "conv":
        return 0
    return 2 * _op_weight_count(op, channels, G) * h * w


def _fixed_layers(space: SearchSpace, G: int) -> tuple[int, int]:
    """(flops, params) of stem, reduction blocks and classifier."""
    in_ch, h, w = space.input_shape
    shapes = space.stage_shapes()
    c0 = shapes[0][0] // G
    params = c0 * in_ch * 9
    flops = 2 * c0 * in_ch * 9 * h * w
    for (cp, _, _), (c, hs, ws) in zip(shapes, shapes[1:]):
        p = (c // G) * (cp // G)
        params += p
        flops += 2 * p * hs * ws
    c_last = shapes[-1][0] // G
    params += c_last * space.num_classes + space.num_classes
    flops += 2 * c_last * space.num_classes
    return flops, params


def flops(space: SearchSpace, subnet: Subnet, G: int = 1, include_fixed: bool = True) -> int:
    space.validate(subnet)
    space.check_divisor(G)
    total = 0
    for c, hs, ws in space.stage_shapes():
        per_cell = sum(_op_flops(e.ops[i], c, hs, ws, G) for e, i in zip(space.edges, subnet.choices))
        total += per_cell * space.cell_repeats
    if include_fixed:
        total += _fixed_layers(space, G)[0]
    return total


def param_count(space: SearchSpace, subnet: Subnet, G: int = 1, include_fixed: bool = True) -> int:
    space.validate(subnet)
    space.check_divisor(G)
    total = 0
    for c, _, _ in space.stage_shapes():
        per_cell = sum(_op_weight_count(e.ops[i], c, G) for e, i in zip(space.edges, subnet.choices))
        total += per_cell * space.cell_repeats
    if include_fixed:
        total += _fixed_layers(space, G)[1]
    return total


def supernet_op_weight_count(space: SearchSpace, G: int = 1) -> int:
    """Conv weights of every candidate op on every edge of one supernet."""
    space.check_divisor(G)
    total = 0
    for c, _, _ in space.stage_shapes():
        total += space.cell_repeats * sum(_op_weight_count(op, c, G) for e in space.edges for op in e.ops)
    return total


def struct_metrics(space: SearchSpace, subnet: Subnet, G: int = 1) -> StructMetrics:
    return StructMetrics(
        nonlinearity_count=count_nonlinearities(space, subnet),
        flops=flops(space, subnet, G),
        params=param_count(space, subnet, G),
    )


def subnet_from_names(space: SearchSpace, names: Sequence[str]) -> Subnet:
    if len(names) != space.num_edges:
        raise SpaceError(f"expected {space.num_edges} op names, got {len(names)}")
    choices = []
    for j, (e, n) in enumerate(zip(space.edges, names)):
        idx = [op.name for op in e.ops]
        if n not in idx:
            raise SpaceError(f"op {n!r} is not a candidate at edge {j}")
        choices.append(idx.index(n))
    return Subnet(tuple(choices))

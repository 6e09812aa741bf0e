"""Channel-reduced supernets and the subnet forward pass.

Network layout, shared by supernets and stand-alone models:

    stem:   conv3x3(in -> C0/G) -> BN
    stage s (s > 0 first applies a reduction: avgpool 2x2/2 -> conv1x1 -> BN)
            cell_repeats x cell
    head:   global average pool -> linear

Inside a cell, node t sums op(node_src) over its incoming edges; the last
node is the cell output. Conv ops are ReLU -> conv -> BN. ``none`` edges
contribute nothing and a node without live inputs is a zero tensor.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import engine as E
from .engine import Tensor
from .partition import Partition
from .space import OpSpec, SearchSpace, Subnet, encode


class ContractError(RuntimeError):
    """A subnet was routed to a supernet other than the one its partition assigns."""


def op_prefix(stage: int, rep: int, edge: int, op: int) -> str:
    return f"s{stage}.c{rep}.e{edge}.o{op}"


def init_params(space: SearchSpace, G: int, rng: np.random.Generator, dtype=np.float32) -> dict[str, Tensor]:
    """Fan-in scaled init for one supernet holding every candidate op.

    Conv weights are He-normal, BN gamma=1 and beta=0, the classifier bias 0.
    """
    space.check_divisor(G)
    shapes: list[tuple[str, tuple[int, ...], str]] = []
    in_ch = space.input_shape[0]
    widths = [c // G for c in space.channel_plan]
    shapes.append(("stem.conv", (widths[0], in_ch, 3, 3), "conv"))
    shapes += [("stem.bn.g", (widths[0],), "one"), ("stem.bn.b", (widths[0],), "zero")]
    for s, c in enumerate(widths):
        if s > 0:
            shapes.append((f"s{s}.red.conv", (c, widths[s - 1], 1, 1), "conv"))
            shapes += [(f"s{s}.red.bn.g", (c,), "one"), (f"s{s}.red.bn.b", (c,), "zero")]
        for r in range(space.cell_repeats):
            for j, e in enumerate(space.edges):
                for i, op in enumerate(e.ops):
                    if op.has_weights:
                        p = op_prefix(s, r, j, i)
                        k = op.kernel_size
                        shapes.append((f"{p}.conv", (c, c, k, k), "conv"))
                        shapes += [(f"{p}.bn.g", (c,), "one"), (f"{p}.bn.b", (c,), "zero")]
    shapes.append(("head.fc.w", (space.num_classes, widths[-1]), "fc"))
    shapes.append(("head.fc.b", (space.num_classes,), "zero"))

    params = {}
    for name, shape, kind in shapes:
        if kind == "conv":
            fan_in = shape[1] * shape[2] * shape[3]
            data = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        elif kind == "fc":
            data = rng.standard_normal(shape) * np.sqrt(1.0 / shape[1])
        elif kind == "one":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)
    return params


def _apply_op(op: OpSpec, x: Tensor, params: dict[str, Tensor], prefix: str, training: bool) -> Tensor | None:
    kind = op.flops_model
    if kind == "none":
        return None
    if kind == "skip":
        return x
    if kind == "pool":
        return E.avgpool(x, op.window, stride=1, padding=op.window // 2)
    h = E.relu(x)
    h = E.conv2d(h, params[f"{prefix}.conv"], stride=1, padding=op.kernel_size // 2)
    return E.batchnorm(h, params[f"{prefix}.bn.g"], params[f"{prefix}.bn.b"], training)


def _cell(space: SearchSpace, subnet: Subnet, x: Tensor, params, stage: int, rep: int, training: bool) -> Tensor:
    nodes: list[Tensor] = [x]
    for t in range(1, space.nodes):
        terms = []
        for j, (e, c) in enumerate(zip(space.edges, subnet.choices)):
            if e.dst != t:
                continue
            out = _apply_op(e.ops[c], nodes[e.src], params, op_prefix(stage, rep, j, c), training)
            if out is not None:
                terms.append(out)
        if not terms:
            nodes.append(Tensor(np.zeros_like(x.data)))
        elif len(terms) == 1:
            nodes.append(terms[0])
        else:
            nodes.append(E.add(*terms))
    return nodes[-1]


def forward(params: dict[str, Tensor], space: SearchSpace, subnet: Subnet, x, training: bool = True) -> Tensor:
    """Logits of ``subnet`` for the NCHW batch ``x`` using ``params``."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    h = E.conv2d(x, params["stem.conv"], stride=1, padding=1)
    h = E.batchnorm(h, params["stem.bn.g"], params["stem.bn.b"], training)
    for s in range(len(space.channel_plan)):
        if s > 0:
            h = E.avgpool(h, 2, stride=2)
            h = E.conv2d(h, params[f"s{s}.red.conv"])
            h = E.batchnorm(h, params[f"s{s}.red.bn.g"], params[f"s{s}.red.bn.b"], training)
        for r in range(space.cell_repeats):
            h = _cell(space, subnet, h, params, s, r, training)
    return E.linear(E.global_avgpool(h), params["head.fc.w"], params["head.fc.b"])


def subnet_param_names(space: SearchSpace, subnet: Subnet) -> set[str]:
    """Names of the parameters a forward pass of ``subnet`` reads."""
    names = {"stem.conv", "stem.bn.g", "stem.bn.b", "head.fc.w", "head.fc.b"}
    for s in range(len(space.channel_plan)):
        if s > 0:
            names |= {f"s{s}.red.conv", f"s{s}.red.bn.g", f"s{s}.red.bn.b"}
        for r in range(space.cell_repeats):
            for j, (e, c) in enumerate(zip(space.edges, subnet.choices)):
                if e.ops[c].has_weights:
                    p = op_prefix(s, r, j, c)
                    names |= {f"{p}.conv", f"{p}.bn.g", f"{p}.bn.b"}
    return names


_OP_CONV = re.compile(r"^s\d+\.c\d+\.e\d+\.o\d+\.conv$")


def is_op_conv(name: str) -> bool:
    return _OP_CONV.match(name) is not None


@dataclass
class SupernetStore:
    """K disjoint parameter sets, each at channel width C/G."""

    space: SearchSpace
    partition: Partition
    G: int
    seed: int
    params: list[dict[str, Tensor]]
    opt_state: list[dict[str, np.ndarray]] = field(default_factory=list)
    update_counts: list[int] = field(default_factory=list)
    step: int = 0
    epoch: int = 0
    probe_engine: object = None

    def __post_init__(self):
        if len(self.params) != self.partition.K:
            raise ValueError(f"store has {len(self.params)} supernets, partition has K={self.partition.K}")
        if not self.opt_state:
            self.opt_state = [{} for _ in self.params]
        if not self.update_counts:
            self.update_counts = [0] * self.K

    @property
    def K(self) -> int:
        return len(self.params)

    @property
    def dtype(self):
        return self.params[0]["stem.conv"].dtype

    def supernet_of(self, subnet: Subnet) -> int:
        return self.partition.assign_subnet(self.space, subnet, self.probe_engine)

    def forward(self, subnet: Subnet, k: int, x, training: bool = True) -> Tensor:
        expected = self.supernet_of(subnet)
        if k != expected:
            raise ContractError(
                f"subnet {encode(self.space, subnet)} belongs to supernet {expected}, not {k}"
            )
        return forward(self.params[k], self.space, subnet, x, training)

    def checksums(self) -> list[str]:
        out = []
        for p in self.params:
            h = hashlib.sha256()
            for name in sorted(p):
                h.update(name.encode())
                h.update(np.ascontiguousarray(p[name].data).tobytes())
            out.append(h.hexdigest())
        return out


def init_supernets(space: SearchSpace, partition: Partition, G: int, seed: int,
                   dtype=np.float32, probe_engine=None) -> SupernetStore:
    space.check_divisor(G)
    params = [init_params(space, G, np.random.default_rng([seed, k]), dtype) for k in range(partition.K)]
    return SupernetStore(space, partition, G, seed, params, probe_engine=probe_engine)


def total_params(store: SupernetStore, which: str = "op_conv") -> int:
    """Element count over all K supernets.

    ``op_conv``: conv weights of the candidate ops only (the tensors whose
    count scales exactly as K/G^2); ``all``: every parameter.
    """
    if which not in ("op_conv", "all"):
        raise ValueError(f"unknown parameter group {which!r}")
    total = 0
    for p in store.params:
        for name, t in p.items():
            if which == "all" or is_op_conv(name):
                total += t.data.size
    return total


class ProbeEngine:
    """Counts distinct ReLU sign patterns of a subnet over a fixed probe batch.

    The probe network is a G=1 random init in float64, fixed by ``seed``;
    scores are cached per subnet encoding.
    """

    def __init__(self, space: SearchSpace, samples: int = 8, seed: int = 0):
        if samples < 2:
            raise ValueError("probe batch needs at least 2 samples")
        rng = np.random.default_rng([seed, 7919])
        self.space = space
        self.params = init_params(space, 1, rng, np.float64)
        self.batch = rng.standard_normal((samples, *space.input_shape))
        self._cache: dict[int, int] = {}

    def sign_patterns(self, subnet: Subnet) -> np.ndarray:
        with E.record_relu_patterns() as masks:
            forward(self.params, self.space, subnet, self.batch, training=True)
        n = self.batch.shape[0]
        if not masks:
            return np.zeros((n, 0), dtype=bool)
        return np.concatenate([m.reshape(n, -1) for m in masks], axis=1)

    def linear_regions(self, subnet: Subnet) -> int:
        code = encode(self.space, subnet)
        if code not in self._cache:
            pats = self.sign_patterns(subnet)
            self._cache[code] = 1 if pats.shape[1] == 0 else len(np.unique(pats, axis=0))
        return self._cache[code]


def clone_params(params: Sequence[dict[str, Tensor]]) -> list[dict[str, Tensor]]:
    return [{n: Tensor(t.data.copy(), True, n) for n, t in p.items()} for p in params]

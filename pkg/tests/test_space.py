import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fewshot_nas.space import (
    SpaceError,
    Subnet,
    count_nonlinearities,
    decode,
    encode,
    enumerate_subnets,
    flops,
    load_space,
    param_count,
    space_from_dict,
    space_to_dict,
    subnet_from_names,
)


@pytest.fixture(scope="module")
def nas201():
    return load_space("nas201")


def one_edge_space(op="nor_conv_3x3", width=16, hw=32):
    return space_from_dict({
        "nodes": 2,
        "ops": [op, "skip_connect"],
        "edges": [[0, 1]],
        "channel_plan": [width],
        "input_shape": [3, hw, hw],
        "num_classes": 10,
    })


def subnets_of(space):
    return st.tuples(*[st.integers(0, a - 1) for a in space.arities]).map(Subnet)


NAS201 = load_space("nas201")


def test_bundled_space_shape(nas201):
    assert nas201.num_edges == 6
    assert nas201.arities == (5,) * 6
    assert nas201.size == 15625


@pytest.mark.parametrize("choices, code", [
    ((0,) * 6, 0),
    ((4,) * 6, 15624),
    ((1, 0, 0, 0, 0, 0), 1),
])
def test_encode_examples(nas201, choices, code):
    assert encode(nas201, Subnet(choices)) == code


def test_decode_examples(nas201):
    assert decode(nas201, 0).choices == (0,) * 6
    assert decode(nas201, 15624).choices == (4,) * 6
    assert decode(nas201, 5).choices == (0, 1, 0, 0, 0, 0)


def test_round_trip_exhaustive(nas201):
    # independent oracle: positional value sum with edge 0 least significant
    for choices in itertools.product(range(5), repeat=6):
        expected = sum(c * 5 ** j for j, c in enumerate(choices))
        s = Subnet(choices)
        assert encode(nas201, s) == expected
        assert decode(nas201, expected) == s


def test_encode_rejects_bad_choice(nas201):
    with pytest.raises(SpaceError):
        encode(nas201, Subnet((5, 0, 0, 0, 0, 0)))
    with pytest.raises(SpaceError):
        encode(nas201, Subnet((0, 0, 0)))


def test_decode_range(nas201):
    with pytest.raises(SpaceError):
        decode(nas201, 15625)
    with pytest.raises(SpaceError):
        decode(nas201, -1)


def test_enumerate(nas201):
    subnets = list(enumerate_subnets(nas201))
    assert len(subnets) == 15625
    assert [encode(nas201, s) for s in subnets] == list(range(15625))
    assert len(list(enumerate_subnets(load_space("toy3")))) == 27


def test_enumerate_refuses_large_space(nas201):
    with pytest.raises(SpaceError, match="evolutionary search"):
        list(enumerate_subnets(nas201, limit=100))


def test_count_nonlinearities(nas201):
    skip = nas201.edges[0].ops.index(next(o for o in nas201.edges[0].ops if o.name == "skip_connect"))
    assert count_nonlinearities(nas201, Subnet((skip,) * 6)) == 0
    mixed = subnet_from_names(nas201, ["nor_conv_3x3", "nor_conv_1x1", "skip_connect", "avg_pool_3x3", "none",
                                       "nor_conv_3x3"])
    assert count_nonlinearities(nas201, mixed) == 3
    assert count_nonlinearities(nas201, subnet_from_names(nas201, ["nor_conv_3x3"] * 6)) == 6


def test_flops_single_conv_edge():
    sp = one_edge_space()
    conv, skip = Subnet((0,)), Subnet((1,))
    assert flops(sp, conv, 1, include_fixed=False) == 2 * 16 * 16 * 9 * 32 * 32 == 4_718_592
    assert flops(sp, conv, 2, include_fixed=False) == 1_179_648
    assert flops(sp, skip, 1, include_fixed=False) == 0


def test_param_count_single_conv_edge():
    sp = one_edge_space()
    assert param_count(sp, Subnet((0,)), 1, include_fixed=False) == 2304
    assert param_count(sp, Subnet((0,)), 2, include_fixed=False) == 576
    assert param_count(sp, Subnet((1,)), 1, include_fixed=False) == 0


def test_fixed_layers_counted(nas201):
    s = Subnet((0,) * 6)  # all "none"
    assert flops(nas201, s, include_fixed=False) == 0
    # stem 16x3x3x3, reductions 32x16 and 64x32, classifier 64x10 + 10 bias
    assert param_count(nas201, s) == 16 * 27 + 32 * 16 + 64 * 32 + 640 + 10


def test_invalid_divisor(nas201):
    s = Subnet((0,) * 6)
    for G in (0, 3, -2):
        with pytest.raises(SpaceError):
            flops(nas201, s, G)
        with pytest.raises(SpaceError):
            param_count(nas201, s, G)


def test_space_needs_two_ops_per_edge():
    with pytest.raises(SpaceError, match="at least 2"):
        space_from_dict({"ops": ["nor_conv_3x3"], "edges": [[0, 1]], "channel_plan": [8],
                         "input_shape": [3, 8, 8], "num_classes": 2})


def test_custom_op_specs_round_trip():
    doc = {
        "nodes": 2,
        "op_specs": [{"name": "wide", "kernel_size": 5, "nonlinearity_count": 2, "has_weights": True,
                      "flops_model": "conv"}],
        "ops": ["wide", "none"],
        "edges": [[0, 1]],
        "channel_plan": [8],
        "input_shape": [3, 8, 8],
        "num_classes": 2,
    }
    sp = space_from_dict(doc)
    assert count_nonlinearities(sp, Subnet((0,))) == 2
    assert space_from_dict(space_to_dict(sp)) == sp


@settings(max_examples=200, deadline=None)
@given(subnets_of(NAS201), st.sampled_from([1, 2, 4]))
def test_param_ratio_exact(s, G):
    assert param_count(NAS201, s, G, include_fixed=False) * G * G == param_count(NAS201, s, 1, include_fixed=False)


@settings(max_examples=200, deadline=None)
@given(subnets_of(NAS201), st.integers(0, 5), st.integers(0, 4))
def test_nonlinearity_edge_separable(s, j, new_op):
    before = count_nonlinearities(NAS201, s)
    changed = list(s.choices)
    old_op = changed[j]
    changed[j] = new_op
    after = count_nonlinearities(NAS201, Subnet(tuple(changed)))
    ops = NAS201.edges[j].ops
    assert after - before == ops[new_op].nonlinearity_count - ops[old_op].nonlinearity_count


@settings(max_examples=200, deadline=None)
@given(subnets_of(NAS201), st.integers(0, 5))
def test_flops_monotone_under_none(s, j):
    none_idx = [o.name for o in NAS201.edges[j].ops].index("none")
    changed = list(s.choices)
    changed[j] = none_idx
    assert flops(NAS201, Subnet(tuple(changed))) <= flops(NAS201, s)


def test_load_space_from_file(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("ops: [skip_connect, nor_conv_1x1]\nedges: [[0, 1], [0, 2], [1, 2]]\nchannel_plan: [4]\n"
                 "input_shape: [1, 4, 4]\nnum_classes: 2\n")
    sp = load_space(p)
    assert sp.size == 8 and sp.nodes == 3


def test_load_unknown_space():
    with pytest.raises(SpaceError):
        load_space("does-not-exist")

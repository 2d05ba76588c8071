import pytest

from zipper.errors import ModelError, ParseError
from zipper.model import (BINARY_ELW, GEMM_KINDS, GOP_KINDS, UNARY_ELW,
                          ModelGraph, build_model, defuse, parse_model,
                          primitive_class, structural_equal, validate)

GCN_TEXT = """
# single gcn layer
x = input(vertex, 128)
w = input(weight, 128, 128)
s = scatter_src(x)
agg = gather_sum(s)
h = matmul(agg, w)
y = relu(h)
out = output(y)
"""


def test_gcn_structure():
    m = build_model("gcn", 128, 128)
    kinds = m.kind_multiset()
    assert kinds == {"input": 2, "scatter_src": 1, "gather": 1,
                     "matmul": 1, "relu": 1, "output": 1}


def test_rgcn_has_one_bmm():
    m = build_model("rgcn", 16, 8)
    assert m.kind_multiset().get("bmm") == 1


def test_gat_has_two_plus_gathers():
    m = build_model("gat", 16, 8)
    gathers = [n for n in m.nodes if n.kind == "gather"]
    assert len(gathers) >= 2
    reduces = {n.attrs["reduce"] for n in gathers}
    assert "sum" in reduces


def test_sage_weights():
    m = build_model("sage", 16, 8)
    assert set(m.weight_specs()) == {"w_pool", "w_self", "w_neigh"}
    assert m.weight_specs()["w_neigh"] == (8, 8)


def test_ggnn_requires_square():
    with pytest.raises(ModelError):
        build_model("ggnn", 16, 8)
    m = build_model("ggnn", 16, 16)
    assert len(m.weight_specs()) == 6


def test_unknown_model():
    with pytest.raises(ModelError):
        build_model("nosuch", 8, 8)


@pytest.mark.parametrize("name,fin,fout", [
    ("gcn", 128, 128), ("gat", 16, 8), ("sage", 16, 8),
    ("ggnn", 16, 16), ("rgcn", 16, 8)])
def test_validate_accepts_benchmarks(name, fin, fout):
    validate(build_model(name, fin, fout))


def test_taxonomy_is_total():
    for kind in GOP_KINDS + GEMM_KINDS + UNARY_ELW + BINARY_ELW:
        assert primitive_class(kind) in ("gop", "gemm", "elw")
    classes = [primitive_class(k) for k in GOP_KINDS + GEMM_KINDS + UNARY_ELW + BINARY_ELW]
    # each kind falls in exactly one class
    assert all(c is not None for c in classes)
    assert primitive_class("input") is None


def test_parse_gcn_matches_builder():
    assert structural_equal(parse_model(GCN_TEXT), build_model("gcn", 128, 128))


def test_parse_domain_mismatch():
    bad = """
x = input(vertex, 8)
w = input(weight, 8, 8)
s = scatter_src(x)
y = add(s, x)     # edge + vertex
out = output(y)
"""
    with pytest.raises(ModelError, match="share"):
        parse_model(bad)


def test_parse_empty_text():
    with pytest.raises(ModelError, match="no output node"):
        parse_model("")


def test_parse_undefined_name():
    with pytest.raises(ParseError, match="undefined"):
        parse_model("y = relu(x)\nout = output(y)\n")


def test_parse_error_has_line():
    with pytest.raises(ParseError, match="line 2"):
        parse_model("x = input(vertex, 8)\nwhat even is this\n")


def test_defuse_spmm_shape():
    m = ModelGraph()
    x = m.input("x", "vertex", 8)
    m.output(m.fused("spmm", x))
    validate(m)
    d = defuse(m)
    assert d.kind_multiset() == {"input": 1, "scatter_src": 1, "gather": 1, "output": 1}


def test_defuse_edge_softmax_four_nodes():
    m = ModelGraph()
    x = m.input("x", "vertex", 1)
    e = m.scatter_src(x)
    m.output(m.gather(m.fused("edge_softmax", e), "sum"))
    d = defuse(m)
    added = {"exp": 1, "gather": 2, "scatter_dst": 1, "div": 1}
    kinds = d.kind_multiset()
    for k, v in added.items():
        assert kinds.get(k, 0) >= v
    assert "fused" not in kinds


def test_defuse_identity_when_atomic():
    m = build_model("gcn", 8, 8)
    assert defuse(m) is m


@pytest.mark.parametrize("name,fin,fout", [
    ("gcn", 16, 16), ("gat", 16, 8), ("rgcn", 16, 8)])
def test_json_roundtrip(name, fin, fout):
    from zipper.model import model_from_json, model_to_json
    m = build_model(name, fin, fout)
    back = model_from_json(model_to_json(m))
    assert structural_equal(m, back)


def test_gop_only_domain_changers():
    for name, fin, fout in [("gat", 8, 4), ("sage", 8, 4), ("ggnn", 8, 8)]:
        m = build_model(name, fin, fout)
        for n in m.nodes:
            doms = [m.nodes[i].out.domain for i in n.inputs
                    if m.nodes[i].out.domain != "weight"]
            if n.kind in ("scatter_src", "scatter_dst", "gather"):
                assert doms[0] != n.out.domain
            elif n.kind not in ("input", "output") and doms:
                assert all(d == n.out.domain for d in doms)

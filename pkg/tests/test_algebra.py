import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrforge.algebra import (
    CATALOGUE_KINDS,
    AffineMR,
    FlatLayout,
    MRSet,
    apply_mr,
    catalogue_mr,
    compose,
    dense_mr,
    flatten,
    identity_mr,
    manual_catalogue,
    mr_distance,
    unflatten,
)
from mrforge.errors import ValidationError
from mrforge.model import GridSpec, ModelInput, random_sea_level

TINY = ModelInput(eta=[[[3.0, 4.0]]], xs=[0.0, 1.0], ys=[5.0], ts=[0.0], G=9.81, F=1.0)
TINY_LAYOUT = FlatLayout(1, 1, 2)
PERMUTATIONS = ("transpose_xy", "reverse_x", "reverse_y", "cyclic_shift_x", "cyclic_shift_y")


def rand_vectors(layout, n, seed=0):
    return np.random.default_rng(seed).normal(size=(n, layout.total_dim))


def brute_force_apply(g, x):
    out = np.empty(g.out_layout.total_dim)
    gamma = g.dense_gamma()
    for i in range(len(out)):
        acc = g.beta[i]
        for j in range(len(x)):
            acc += gamma[i, j] * x[j]
        out[i] = acc
    return out


def test_layout_segments_cover_total_dim():
    layout = FlatLayout(30, 10, 20)
    assert layout.total_dim == 30 * 10 * 20 + 20 + 10 + 30 + 2 == 6062
    pos = 0
    for seg in layout.segments.values():
        assert seg.start == pos
        pos = seg.stop
    assert pos == layout.total_dim
    assert layout.block_of(layout.index("ys", 3)) == ("ys", 3)
    with pytest.raises(ValidationError):
        layout.index("xs", 20)
    with pytest.raises(ValidationError):
        FlatLayout(0, 1, 1)


def test_flatten_example_and_roundtrip():
    np.testing.assert_array_equal(flatten(TINY), [3, 4, 0, 1, 5, 0, 9.81, 1])
    inp = random_sea_level(GridSpec(nx=4, ny=3, nt=2), 1)
    assert unflatten(flatten(inp), FlatLayout.of(inp)) == inp
    with pytest.raises(ValidationError):
        unflatten(np.zeros(7), TINY_LAYOUT)
    with pytest.raises(ValidationError):
        flatten(inp, TINY_LAYOUT)


def test_identity():
    g = identity_mr(TINY_LAYOUT)
    x = flatten(TINY)
    np.testing.assert_array_equal(apply_mr(g, x), x)
    assert g.provenance == "identity"
    assert mr_distance(g, g, [x]) == 0.0
    np.testing.assert_array_equal(g.dense_gamma(), np.eye(8))


def test_dense_apply_examples():
    x = np.zeros(8)
    x[:2] = [1, -3]
    np.testing.assert_array_equal(apply_mr(dense_mr(2 * np.eye(8), np.zeros(8), TINY_LAYOUT), x)[:2], [2, -6])
    np.testing.assert_array_equal(apply_mr(dense_mr(np.eye(8), np.ones(8), TINY_LAYOUT), np.zeros(8)), np.ones(8))
    with pytest.raises(ValidationError):
        apply_mr(identity_mr(TINY_LAYOUT), np.zeros(5))
    with pytest.raises(ValidationError):
        dense_mr(np.eye(7), np.zeros(8), TINY_LAYOUT)


def test_catalogue_examples_on_tiny_layout():
    x = flatten(TINY)
    shift = catalogue_mr("cyclic_shift_x", {"k": 1}, TINY_LAYOUT)
    np.testing.assert_array_equal(apply_mr(shift, x), [4, 3, 0, 1, 5, 0, 9.81, 1])
    scale = catalogue_mr("scale_GF", {"c": 2.0}, TINY_LAYOUT)
    np.testing.assert_array_equal(apply_mr(scale, x), [3, 4, 0, 1, 5, 0, 19.62, 2])
    rev = catalogue_mr("reverse_x", {}, TINY_LAYOUT)
    np.testing.assert_array_equal(apply_mr(rev, x), [4, 3, 1, 0, 5, 0, 9.81, 1])


def test_catalogue_errors_and_shift_reduction():
    layout = FlatLayout(2, 3, 4)
    with pytest.raises(ValidationError):
        catalogue_mr("scale_GF", {"c": 0.0}, layout)
    with pytest.raises(ValidationError):
        catalogue_mr("scale_eta_xy", {"c": 0.0}, layout)
    with pytest.raises(ValidationError):
        catalogue_mr("rotate", {}, layout)
    full = catalogue_mr("cyclic_shift_x", {"k": 4}, layout)
    assert full.params["k"] == 0
    np.testing.assert_array_equal(full.dense_gamma(), np.eye(layout.total_dim))
    assert catalogue_mr("cyclic_shift_y", {"k": -1}, layout).params["k"] == 2


def test_cyclic_shift_matches_index_loop():
    layout = FlatLayout(2, 3, 4)
    x = rand_vectors(layout, 1)[0]
    got = apply_mr(catalogue_mr("cyclic_shift_x", {"k": 1}, layout), x)
    eta = x[:24].reshape(2, 3, 4)
    want = np.empty_like(eta)
    for t in range(2):
        for j in range(3):
            for i in range(4):
                want[t, j, i] = eta[t, j, (i - 1) % 4]
    np.testing.assert_array_equal(got[:24], want.ravel())
    np.testing.assert_array_equal(got[24:], x[24:])


def test_transpose_maps_between_layouts():
    layout = FlatLayout(2, 3, 4)
    g = catalogue_mr("transpose_xy", {}, layout)
    assert g.out_layout == FlatLayout(2, 4, 3)
    inp = random_sea_level(GridSpec(nx=4, ny=3, nt=2), 3)
    out = unflatten(apply_mr(g, flatten(inp)), g.out_layout)
    np.testing.assert_array_equal(out.eta, np.asarray(inp.eta).transpose(0, 2, 1))
    np.testing.assert_array_equal(out.xs, inp.ys)
    np.testing.assert_array_equal(out.ys, inp.xs)
    back = compose(catalogue_mr("transpose_xy", {}, g.out_layout), g)
    x = flatten(inp)
    np.testing.assert_array_equal(apply_mr(back, x), x)


@pytest.mark.parametrize("kind", CATALOGUE_KINDS)
def test_structured_equals_dense_expansion(kind):
    layout = FlatLayout(2, 3, 4)
    g = catalogue_mr(kind, {"c": 1.7, "k": 2}, layout)
    X = rand_vectors(layout, 5, seed=1)
    dense = g.to_dense()
    assert dense.is_dense and dense.out_layout == g.out_layout
    np.testing.assert_allclose(apply_mr(g, X), apply_mr(dense, X), rtol=1e-14, atol=0)
    np.testing.assert_allclose(apply_mr(g, X[0]), brute_force_apply(g, X[0]), rtol=1e-14, atol=0)


@pytest.mark.parametrize("kind", PERMUTATIONS)
def test_permutations_are_orthogonal(kind):
    layout = FlatLayout(2, 3, 4)
    g = catalogue_mr(kind, {"k": 1}, layout)
    gamma = g.dense_gamma()
    np.testing.assert_array_equal(gamma @ gamma.T, np.eye(layout.total_dim))
    assert not np.any(g.beta)
    x = rand_vectors(layout, 1)[0]
    assert np.linalg.norm(apply_mr(g, x)) == pytest.approx(np.linalg.norm(x), rel=1e-14)


def test_mr_distance_examples():
    layout = FlatLayout(1, 2, 2)
    ident = identity_mr(layout)
    beta = np.zeros(layout.total_dim)
    beta[0] = 1.0
    offset = dense_mr(np.eye(layout.total_dim), beta, layout)
    X = rand_vectors(layout, 4)
    assert mr_distance(ident, offset, X) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(ValidationError):
        mr_distance(ident, offset, np.zeros((0, layout.total_dim)))
    with pytest.raises(ValidationError):
        mr_distance(ident, identity_mr(TINY_LAYOUT), X)


def test_mr_distance_matches_loop():
    layout = FlatLayout(1, 2, 3)
    n = layout.total_dim
    rng = np.random.default_rng(5)
    a = dense_mr(rng.normal(size=(n, n)), rng.normal(size=n), layout)
    b = dense_mr(rng.normal(size=(n, n)), rng.normal(size=n), layout)
    X = rng.normal(size=(6, n))
    acc = 0.0
    for x in X:
        d = brute_force_apply(a, x) - brute_force_apply(b, x)
        acc += sum(v * v for v in d)
    assert mr_distance(a, b, X) == pytest.approx(acc / len(X), rel=1e-12)
    assert mr_distance(a, b, X) == mr_distance(b, a, X)


def test_compose_examples():
    layout = FlatLayout(2, 3, 5)
    X = rand_vectors(layout, 4, seed=2)
    g = catalogue_mr("scale_eta_xy", {"c": 3.0}, layout)
    ident = identity_mr(layout)
    np.testing.assert_array_equal(apply_mr(compose(ident, g), X), apply_mr(g, X))
    rev = catalogue_mr("reverse_x", {}, layout)
    np.testing.assert_array_equal(apply_mr(compose(rev, rev), X), X)
    s1 = catalogue_mr("cyclic_shift_x", {"k": 1}, layout)
    s2 = catalogue_mr("cyclic_shift_x", {"k": 2}, layout)
    s3 = catalogue_mr("cyclic_shift_x", {"k": 3}, layout)
    np.testing.assert_array_equal(apply_mr(compose(s1, s2), X), apply_mr(s3, X))
    assert compose(s1, s2).label == "cyclic_shift_x∘cyclic_shift_x"
    with pytest.raises(ValidationError):
        compose(identity_mr(TINY_LAYOUT), g)


def test_compose_dense_formula():
    layout = FlatLayout(1, 2, 2)
    n = layout.total_dim
    rng = np.random.default_rng(9)
    a = dense_mr(rng.normal(size=(n, n)), rng.normal(size=n), layout)
    b = catalogue_mr("reverse_y", {}, layout).with_meta(beta=rng.normal(size=n))
    c = compose(a, b)
    np.testing.assert_allclose(c.gamma, a.gamma @ b.dense_gamma(), rtol=1e-14)
    np.testing.assert_allclose(c.beta, a.gamma @ b.beta + a.beta, rtol=1e-14)
    x = rng.normal(size=n)
    np.testing.assert_allclose(apply_mr(c, x), apply_mr(a, apply_mr(b, x)), rtol=1e-12)


def test_structured_composition_stays_structured_with_offsets():
    layout = FlatLayout(1, 2, 3)
    rng = np.random.default_rng(4)
    a = catalogue_mr("reverse_x", {}, layout).with_meta(beta=rng.normal(size=layout.total_dim))
    b = catalogue_mr("scale_GF", {"c": 2.0}, layout).with_meta(beta=rng.normal(size=layout.total_dim))
    c = compose(a, b)
    assert not c.is_dense
    X = rand_vectors(layout, 3)
    np.testing.assert_allclose(apply_mr(c, X), apply_mr(a, apply_mr(b, X)), rtol=1e-14)


def test_manual_catalogue_labels():
    labels = [g.label for g in manual_catalogue(FlatLayout(30, 10, 20))]
    assert labels == ["scale_GF", "keep_G_over_F", "scale_eta_xy", "transpose_xy",
                      "reverse_x", "reverse_y", "cyclic_shift_x", "cyclic_shift_y"]
    assert all(g.provenance == "catalogue" for g in manual_catalogue(FlatLayout(1, 2, 2)))


@pytest.mark.parametrize("kind", CATALOGUE_KINDS)
def test_mr_json_roundtrip(kind):
    layout = FlatLayout(2, 3, 4)
    g = catalogue_mr(kind, {"c": 0.5, "k": 3}, layout)
    back = AffineMR.from_json(json.loads(json.dumps(g.to_json())))
    X = rand_vectors(layout, 2)
    np.testing.assert_array_equal(apply_mr(back, X), apply_mr(g, X))
    assert (back.label, back.kind, back.provenance) == (g.label, g.kind, g.provenance)


def test_dense_and_composite_json_roundtrip():
    layout = FlatLayout(1, 2, 2)
    n = layout.total_dim
    rng = np.random.default_rng(0)
    d = dense_mr(rng.normal(size=(n, n)), rng.normal(size=n), layout, label="d", meta={"cost": 1e-9})
    back = AffineMR.from_json(json.loads(json.dumps(d.to_json())))
    np.testing.assert_array_equal(back.gamma, d.gamma)
    assert back.meta == {"cost": 1e-9}
    data = d.to_json()
    assert set(data) >= {"form", "kind", "params", "gamma", "beta", "label", "provenance"}
    comp = compose(catalogue_mr("reverse_x", {}, layout), catalogue_mr("cyclic_shift_y", {"k": 1}, layout))
    back = AffineMR.from_json(json.loads(json.dumps(comp.to_json())))
    X = rand_vectors(layout, 3)
    np.testing.assert_array_equal(apply_mr(back, X), apply_mr(comp, X))
    with pytest.raises(ValidationError):
        AffineMR.from_json({"form": "dense"})


def test_mrset_contract(tmp_path):
    layout = FlatLayout(1, 2, 2)
    with pytest.raises(ValidationError):
        MRSet(members=[catalogue_mr("reverse_x", {}, layout)])
    s = MRSet.start(layout, function_id="cyclic")
    s.add(catalogue_mr("reverse_y", {}, layout))
    s.add(dense_mr(np.eye(layout.total_dim), np.ones(layout.total_dim), layout, label="d"))
    assert [m.label for m in s.discovered()] == ["d"]
    with pytest.raises(ValidationError):
        s.add(identity_mr(TINY_LAYOUT))
    path = tmp_path / "set.json"
    s.save(path)
    back = MRSet.load(path)
    assert back.function_id == "cyclic"
    assert [m.label for m in back] == [m.label for m in s]
    assert MRSet.from_json(json.loads(path.read_text())["members"]).layout == layout


layouts = st.builds(FlatLayout, nt=st.integers(1, 3), ny=st.integers(1, 4), nx=st.integers(1, 4))


@settings(max_examples=40, deadline=None)
@given(layout=layouts, seed=st.integers(0, 10_000), alpha=st.floats(-3, 3),
       kind=st.sampled_from(CATALOGUE_KINDS))
def test_apply_is_affine(layout, seed, alpha, kind):
    rng = np.random.default_rng(seed)
    g = catalogue_mr(kind, {"c": 1.5, "k": 1}, layout).with_meta(
        beta=rng.normal(size=catalogue_mr(kind, {"c": 1.5, "k": 1}, layout).out_layout.total_dim))
    x, y = rng.normal(size=(2, layout.total_dim))
    lhs = apply_mr(g, alpha * x + (1 - alpha) * y)
    rhs = alpha * apply_mr(g, x) + (1 - alpha) * apply_mr(g, y)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * (1 + np.abs(rhs).max()))


@settings(max_examples=30, deadline=None)
@given(layout=layouts, seed=st.integers(0, 10_000))
def test_distance_symmetric_and_zero_iff_agree(layout, seed):
    rng = np.random.default_rng(seed)
    n = layout.total_dim
    X = rng.normal(size=(3, n))
    a = dense_mr(rng.normal(size=(n, n)), rng.normal(size=n), layout)
    b = dense_mr(rng.normal(size=(n, n)), rng.normal(size=n), layout)
    assert mr_distance(a, b, X) == pytest.approx(mr_distance(b, a, X), rel=1e-14)
    assert mr_distance(a, b, X) > 0
    assert mr_distance(a, a, X) == 0.0

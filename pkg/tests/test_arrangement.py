import numpy as np
import pytest

from sgcert.arrangement import (
    Arrangement,
    ComplexSubspace,
    InvariantViolation,
    Subspace,
    complex_to_real,
    generate,
    generate_complex_planted,
    generate_grid,
    generate_grouped,
    generate_random_planted,
    k_bounded_check,
    pairwise_zero_intersection,
    planted_triples,
    principal_cosine,
    read_arrangement,
    tau_separated,
    write_arrangement,
)
from sgcert.errors import ParseError, PreconditionError
from sgcert.linalg import rank


def line(ambient, direction):
    v = np.zeros(ambient)
    v[: len(direction)] = direction
    return Subspace.from_spanning(v, ambient)


def test_subspace_rejects_non_orthonormal():
    with pytest.raises(InvariantViolation):
        Subspace(2, [[1.0, 1.0]])


def test_subspace_zero_space():
    z = Subspace(3, np.zeros((0, 3)))
    assert z.dim == 0
    assert Subspace(3, np.eye(3)[[0]]).contains(z)


def test_k_bounded_check():
    lines = Arrangement(3, [line(3, [1]), line(3, [0, 1])])
    assert k_bounded_check(lines, 1)
    full = Arrangement(3, [Subspace(3, np.eye(3))])
    assert not k_bounded_check(full, 2)
    grid = generate_grid(4)
    assert k_bounded_check(grid, 2)


def test_pairwise_zero_intersection_examples():
    e = np.eye(3)
    arr = Arrangement(3, [Subspace(3, e[[0]]), Subspace(3, e[[1]])])
    assert pairwise_zero_intersection(arr) == []
    dup = Arrangement(3, [Subspace(3, e[[0]]), Subspace(3, e[[0]])])
    assert pairwise_zero_intersection(dup) == [(0, 1)]
    # coordinate-pair planes sharing an axis intersect in that axis
    grid = Arrangement(3, [Subspace(3, e[[0, 1]]), Subspace(3, e[[0, 2]])])
    assert pairwise_zero_intersection(grid) == [(0, 1)]


def test_tau_separated_examples():
    e = np.eye(2)
    v, w = Subspace(2, e[[0]]), Subspace(2, e[[1]])
    assert tau_separated(v, w, 0.5)
    assert not tau_separated(v, v, 1e-6)
    # lines at 60 degrees have cosine exactly 0.5; boundary counts as separated
    u = Subspace(2, np.array([[0.5, np.sqrt(3.0) / 2.0]]))
    assert principal_cosine(v, u) == pytest.approx(0.5, abs=1e-15)
    assert tau_separated(v, u, 0.5)
    assert not tau_separated(v, u, 0.5 + 1e-9)


def test_tau_separated_symmetric():
    rng = np.random.default_rng(2)
    for _ in range(20):
        v = Subspace.from_spanning(rng.standard_normal((2, 5)), 5)
        w = Subspace.from_spanning(rng.standard_normal((3, 5)), 5)
        tau = float(rng.uniform(0.05, 1.0))
        assert tau_separated(v, w, tau) == tau_separated(w, v, tau)


def test_complex_to_real_real_entries_only():
    cs = ComplexSubspace(3, np.eye(3)[[0, 1]], np.zeros((2, 3)))
    arr = complex_to_real([cs])
    assert arr.spaces[0].dim == 2
    assert rank(np.vstack([arr.spaces[0].basis, np.eye(3)[[0, 1]]])) == 2


def test_complex_to_real_one_complex_line_fills_r2():
    # span_C{(1, i)} realifies to span_R{(1,0), (0,1)} = R^2
    cs = ComplexSubspace(2, [[1.0, 0.0]], [[0.0, 1.0]])
    arr = complex_to_real([cs])
    assert arr.spaces[0].dim == 2
    assert arr.field_tag == "complex"


def test_complex_dependent_triple_preserved():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((2, 6)) + 1j * rng.standard_normal((2, 6))
    b = rng.standard_normal((2, 6)) + 1j * rng.standard_normal((2, 6))
    coeff = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
    c = coeff @ np.vstack([a, b])
    arr = complex_to_real([
        ComplexSubspace(6, m.real, m.imag) for m in (a, b, c)
    ])
    v1, v2, v3 = arr.spaces
    stacked12 = np.vstack([v1.basis, v2.basis])
    assert rank(np.vstack([stacked12, v3.basis])) == rank(stacked12)


def test_generate_grouped_dimensions():
    arr = generate_grouped(k=1, delta=0.5, n=6, seed=0)
    assert arr.n == 6
    assert arr.dimension() == 4  # 2k * ceil(1/delta)
    assert pairwise_zero_intersection(arr) == []


def test_generate_grouped_infeasible():
    with pytest.raises(PreconditionError):
        generate_grouped(k=2, delta=0.5, n=6, ambient=3)


def test_generate_grid():
    arr = generate_grid(4)
    assert arr.n == 6
    assert arr.dimension() == 4
    assert len(pairwise_zero_intersection(arr)) > 0


def test_generate_random_planted():
    arr = generate_random_planted(n=10, k=2, ambient=20, triple_count=5, seed=7)
    assert arr.n == 10
    assert pairwise_zero_intersection(arr) == []
    for a, b, c in planted_triples(10, 5):
        pair = np.vstack([arr.spaces[a].basis, arr.spaces[b].basis])
        assert rank(np.vstack([pair, arr.spaces[c].basis])) == rank(pair)


def test_generate_dispatch():
    arr = generate("grouped", {"k": 1, "delta": 0.25, "n": 8}, seed=1)
    assert arr.dimension() == 8
    with pytest.raises(PreconditionError):
        generate("nope", {})


def test_complex_planted_realification_dims():
    carr = generate_complex_planted(n=9, k=2, ambient=8, triple_count=3, seed=5)
    arr = complex_to_real(carr.spaces)
    assert all(v.dim <= 4 for v in arr.spaces)
    # real span dimension dominates the complex one
    stack_c = np.vstack([s.basis_re + 1j * s.basis_im for s in carr.spaces])
    dim_c = np.linalg.matrix_rank(stack_c, tol=1e-9)
    assert arr.dimension() >= dim_c


def test_roundtrip_real(tmp_path):
    arr = generate_random_planted(n=6, k=2, ambient=7, triple_count=1, seed=3)
    path = tmp_path / "a.arr"
    write_arrangement(path, arr)
    back = read_arrangement(path)
    assert back.ambient == arr.ambient and back.n == arr.n
    for v, w in zip(arr.spaces, back.spaces):
        assert np.array_equal(v.basis, w.basis)
    # byte-identical rewrite
    path2 = tmp_path / "b.arr"
    write_arrangement(path2, back)
    assert path.read_bytes() == path2.read_bytes()


def test_roundtrip_complex(tmp_path):
    carr = generate_complex_planted(n=5, k=1, ambient=4, triple_count=1, seed=9)
    path = tmp_path / "c.arr"
    write_arrangement(path, carr)
    back = read_arrangement(path)
    for v, w in zip(carr.spaces, back.spaces):
        assert np.array_equal(v.basis_re, w.basis_re)
        assert np.array_equal(v.basis_im, w.basis_im)


def test_read_rejects_garbage(tmp_path):
    path = tmp_path / "bad.arr"
    path.write_text("arrangement v2\n")
    with pytest.raises(ParseError):
        read_arrangement(path)
    path.write_text("arrangement v1\nfield real\nambient 2\nn 1\nspace 0 dim 1\n1.0\n")
    with pytest.raises(ParseError):
        read_arrangement(path)


def test_read_rejects_non_orthonormal(tmp_path):
    path = tmp_path / "skew.arr"
    path.write_text(
        "arrangement v1\nfield real\nambient 2\nn 1\nspace 0 dim 1\n1.0 1.0\n"
    )
    with pytest.raises(InvariantViolation):
        read_arrangement(path)

from fractions import Fraction

import numpy as np
import pytest

from instances import (
    boundary_cluster_instance,
    duplicate_line_instance,
    far_clusters_instance,
    mercedes_lines,
)
from sgcert.arrangement import (
    Arrangement,
    Subspace,
    complex_to_real,
    generate_complex_planted,
    generate_grouped,
)
from sgcert.certifier import (
    CertifyBudget,
    _collapse_from_scaled,
    certify,
    coefficient_expand,
    decompose_step,
    diagdom_rank_bound,
    separated_certificate,
    separation_witness,
    verify_certificate,
)
from sgcert.dependency import TripleSystem, build_sg_system, build_triple_family
from sgcert.errors import (
    BudgetExceededError,
    MembershipError,
    PreconditionError,
)
from sgcert.linalg import rank, spectral_norm


def line(ambient, direction):
    v = np.asarray(direction, dtype=float)
    full = np.zeros(ambient)
    full[: v.size] = v
    return Subspace.from_spanning(full, ambient)


# ---------------------------------------------------------------------------
# coefficient expansion and separation witnesses


def test_coefficient_expand_orthogonal():
    v1 = Subspace(4, np.eye(4)[[0, 1]])
    v2 = Subspace(4, np.eye(4)[[2]])
    u = np.array([0.6, 0.8, 0.0, 0.0])
    lam, mu = coefficient_expand(u, v1, v2, tau=0.5)
    assert np.allclose(lam, [0.6, 0.8])
    assert np.allclose(mu, [0.0])
    assert lam @ lam + mu @ mu == pytest.approx(1.0)


def test_coefficient_expand_sixty_degrees():
    # unit bisector of two lines at 60 degrees: coefficients 1/sqrt(3) each
    # (solving the 2x2 system by hand gives lam = mu = 1/sqrt(3))
    v1 = Subspace(2, [[1.0, 0.0]])
    v2 = Subspace(2, [[0.5, np.sqrt(3.0) / 2.0]])
    u = v1.basis[0] + v2.basis[0]
    u /= np.linalg.norm(u)
    lam, mu = coefficient_expand(u, v1, v2, tau=0.5)
    mass = lam @ lam + mu @ mu
    assert mass == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert mass <= 2.0


def test_coefficient_expand_boundary_mass():
    # at inner product exactly -(1 - tau) the 1/tau bound is tight
    v1 = Subspace(2, [[1.0, 0.0]])
    v2 = Subspace(2, [[-0.5, np.sqrt(3.0) / 2.0]])
    u = v1.basis[0] + v2.basis[0]
    lam, mu = coefficient_expand(u, v1, v2, tau=0.5)
    assert lam @ lam + mu @ mu == pytest.approx(2.0, rel=1e-9)


def test_coefficient_expand_membership_error():
    v1 = Subspace(3, np.eye(3)[[0]])
    v2 = Subspace(3, np.eye(3)[[1]])
    with pytest.raises(MembershipError):
        coefficient_expand(np.array([0.0, 0.0, 1.0]), v1, v2, tau=0.5)
    with pytest.raises(PreconditionError):
        coefficient_expand(np.array([2.0, 0.0, 0.0]), v1, v2, tau=0.5)


def test_coefficient_expand_requires_separation():
    v = line(2, [1.0, 0.0])
    with pytest.raises(PreconditionError):
        coefficient_expand(v.basis[0], v, v, tau=0.5)


def test_separation_witness_equal_spaces():
    v = Subspace(4, np.eye(4)[[0, 1]])
    j, norm_sq = separation_witness(v, v, tau=0.5)
    assert norm_sq == pytest.approx(1.0)
    assert norm_sq >= 0.25 / 2


def test_separation_witness_orthogonal_none():
    v = Subspace(4, np.eye(4)[[0]])
    w = Subspace(4, np.eye(4)[[1, 2]])
    assert separation_witness(v, w, tau=0.5) is None


def test_separation_witness_principal_angles():
    # plane vs a line 10 degrees off its first axis: cosine 0.985, witness
    # projection at least (1 - tau)^2 / 2
    v = Subspace(3, np.eye(3)[[0, 1]])
    t = np.deg2rad(10.0)
    w = line(3, [np.cos(t), 0.0, np.sin(t)])
    j, norm_sq = separation_witness(v, w, tau=0.5)
    assert j == 0
    assert norm_sq == pytest.approx(np.cos(t) ** 2, abs=1e-12)
    assert norm_sq >= 0.125


# ---------------------------------------------------------------------------
# diagonally dominant rank bound


def test_diagdom_examples():
    bound, l_val, k_val = diagdom_rank_bound(2.0 * np.eye(4))
    assert (bound, l_val, k_val) == (4, 2.0, 0.0)
    d = 2.0 * np.eye(4)
    d[0, 1] = d[1, 0] = d[2, 3] = d[3, 2] = 1.0
    bound, l_val, k_val = diagdom_rank_bound(d)
    assert bound == 3 and k_val == 4.0
    assert np.linalg.matrix_rank(d) >= 3
    weak = np.ones((3, 3))
    assert diagdom_rank_bound(weak)[0] == 0


def test_diagdom_rejects_nonconstant_diagonal():
    with pytest.raises(PreconditionError):
        diagdom_rank_bound(np.diag([1.0, 2.0]))
    with pytest.raises(PreconditionError):
        diagdom_rank_bound(np.diag([-1.0, -1.0]))


def test_diagdom_never_exceeds_rank():
    rng = np.random.default_rng(0)
    for _ in range(200):
        m = int(rng.integers(2, 21))
        l_val = float(rng.uniform(0.5, 3.0))
        d = rng.standard_normal((m, m)) * rng.uniform(0.01, 0.3)
        np.fill_diagonal(d, l_val)
        bound, _, _ = diagdom_rank_bound(d)
        assert bound <= np.linalg.matrix_rank(d)


# ---------------------------------------------------------------------------
# separated certificate


def quad_lines_instance():
    """Four coplanar lines at 45-degree spacing: pairwise 0.25-separated."""
    spaces = [line(2, [np.cos(t), np.sin(t)])
              for t in np.deg2rad([0.0, 45.0, 90.0, 135.0])]
    arr = Arrangement(2, spaces)
    sets = [tuple(t) for t in build_triple_family(4)]
    sys = TripleSystem(4, sets, alpha=6, delta=9 / 4)
    return arr, sys


def test_separated_certificate_quad_lines():
    arr, sys = quad_lines_instance()
    cert = separated_certificate(arr, sys, tau=0.25)
    assert cert.kind == "bound"
    assert cert.params["measured"] == 2
    assert cert.d_bound == 10  # floor(6 * 1 / (0.25 * 2.25))
    dm = cert.evidence[0]
    assert np.abs(np.diag(dm.D) - 9).max() < 1e-9  # ceil(delta n) = 9
    scale = spectral_norm(dm.D) * spectral_norm(dm.A)
    assert spectral_norm(dm.D @ dm.A) <= 1e-6 * scale
    # the annihilator is itself certifiably high rank
    bound, _, _ = diagdom_rank_bound(dm.D)
    assert np.linalg.matrix_rank(dm.D) >= bound


def test_separated_certificate_two_set_mass():
    # a 2-set of equal spaces contributes coefficient mass exactly 1
    v = line(3, [1.0, 0.0, 0.0])
    arr = Arrangement(3, [v, Subspace(3, v.basis.copy())])
    sys = TripleSystem(2, [(0, 1)], alpha=1, delta=0.5)
    cert = separated_certificate(arr, sys, tau=0.5)
    dm = cert.evidence[0]
    off = dm.D - np.diag(np.diag(dm.D))
    assert np.allclose(np.abs(off).max(axis=1), 1.0)
    assert cert.params["measured"] == 1


def test_separated_certificate_rejects_close_pair():
    spaces = [line(2, [np.cos(t), np.sin(t)]) for t in np.deg2rad([0, 30, 60])]
    arr = Arrangement(2, spaces)
    sys = TripleSystem(3, [tuple(t) for t in build_triple_family(3)],
                       alpha=6, delta=2.0)
    with pytest.raises(PreconditionError, match="separated"):
        separated_certificate(arr, sys, tau=0.5)


def test_separated_certificate_boundary_sixty_degrees():
    spaces = mercedes_lines(2, 0, 1)
    arr = Arrangement(2, spaces)
    sys = TripleSystem(3, [tuple(t) for t in build_triple_family(3)],
                       alpha=6, delta=2.0)
    cert = separated_certificate(arr, sys, tau=0.5)
    assert cert.params["measured"] == 2
    assert cert.d_bound == 6  # floor(6 * 1 / (0.5 * 2))


# ---------------------------------------------------------------------------
# decomposition dichotomy


def test_decompose_entry_branch():
    arr = generate_grouped(k=1, delta=0.25, n=16, seed=1)
    sys = build_sg_system(arr, 1)
    cert = decompose_step(arr, sys, beta=0.5, trials=64, seed=0)
    assert cert.kind == "bound"
    assert cert.params["branch"] == "entry"
    assert cert.params["measured"] == 8
    verify_certificate(cert, arr, sys, beta=0.5)


def test_decompose_harvest_branch():
    arr, sys = duplicate_line_instance(n_dup=60, groups=4, seed=2)
    cert = decompose_step(arr, sys, beta=0.8, trials=4096, seed=3,
                          entry_check=False)
    assert cert.kind == "collapse"
    assert cert.params["branch"] == "harvest"
    # witness: the duplicated line plus the sampled prefix
    assert len(cert.indices) >= 60
    assert cert.w_dim <= int(0.8 * arr.dimension())
    verify_certificate(cert, arr, sys, beta=0.8)


def test_decompose_harvest_witness_reverifies():
    arr, sys = duplicate_line_instance(n_dup=60, groups=4, seed=5)
    cert = decompose_step(arr, sys, beta=0.8, trials=4096, seed=7,
                          entry_check=False)
    # re-verify by hand: every z vector is nonzero and inside its space
    for row, i in zip(cert.z_vectors, cert.indices):
        basis = arr.spaces[i].basis
        assert np.linalg.norm(row) > 1e-8
        assert np.linalg.norm(row - (row @ basis.T) @ basis) < 1e-8
    assert rank(cert.z_vectors) <= int(0.8 * arr.dimension())


def test_decompose_far_clusters():
    # one cluster inside a single 2k-space: its members are picked far
    # below their share, and the witness vectors live in that 2k-space
    # plus the sampled prefix
    arr, sys = far_clusters_instance(cluster=60, groups=10, seed=41)
    cert = decompose_step(arr, sys, beta=0.8, trials=4096, seed=43,
                          entry_check=False)
    assert cert.kind == "collapse"
    assert cert.params["branch"] == "harvest"
    assert len(cert.indices) >= 60
    assert cert.w_dim <= int(0.8 * arr.dimension())
    verify_certificate(cert, arr, sys, beta=0.8)


def test_collapse_from_scaled_boundary_instance():
    # scale-collapse tail on an already-scaled configuration: the two
    # boundary planes survive the separation filter, the clustered planes
    # drop out, and the witness spans 4 of 12 dimensions
    arr, sys = boundary_cluster_instance()
    cert = _collapse_from_scaled(arr, sys, list(arr.spaces), beta=0.5,
                                 d=arr.dimension())
    assert cert.kind == "collapse"
    assert cert.params["branch"] == "scale-collapse"
    assert sorted(cert.indices) == [0, 1, 2, 3, 4, 5]
    assert cert.w_dim == 4
    verify_certificate(cert, arr, sys, beta=0.5)


def test_decompose_scale_branch_falls_back_to_entry():
    # grouped blocks after scaling never keep enough separated sets at
    # desk scale; with the entry check deferred, the step must still
    # terminate with the (valid) entry bound rather than fail
    arr = generate_grouped(k=1, delta=1 / 3, n=12, seed=11)
    sys = build_sg_system(arr, 1)
    cert = decompose_step(arr, sys, beta=0.5, trials=512, seed=1,
                          entry_check=False)
    assert cert.kind == "bound"
    assert cert.params["branch"] == "entry"
    verify_certificate(cert, arr, sys, beta=0.5)


def test_decompose_rejects_bad_beta():
    arr = generate_grouped(k=1, delta=1.0, n=4, seed=0)
    sys = build_sg_system(arr, 1)
    with pytest.raises(PreconditionError):
        decompose_step(arr, sys, beta=1.5)


# ---------------------------------------------------------------------------
# the full recursion


def test_certify_grouped_lower_bound():
    arr = generate_grouped(k=1, delta=0.25, n=16, seed=13)
    sys = build_sg_system(arr, 1)
    result = certify(arr, sys, budget=CertifyBudget(trials=64))
    assert result.measured == 8
    assert result.final_bound >= 8
    assert result.rounds[-1].branch == "entry"
    assert result.sound


def test_certify_single_special_space():
    arr = generate_grouped(k=2, delta=1.0, n=5, seed=17)
    sys = build_sg_system(arr, 2)
    result = certify(arr, sys, budget=CertifyBudget(trials=64))
    assert result.measured == 4  # one 2k-dimensional space
    assert result.final_bound >= 4
    assert len(result.rounds) == 1


def test_certify_recursion_on_duplicates():
    arr, sys = duplicate_line_instance(n_dup=60, groups=4, seed=19)
    result = certify(arr, sys, beta=0.8, entry_check=False,
                     budget=CertifyBudget(trials=4096, seed=23))
    assert result.sound
    assert result.rounds[0].branch == "harvest"
    assert len(result.rounds) >= 2
    assert result.rounds[-1].loss == 0  # terminating round is a bound
    # delta_t * n_t conserved exactly across rounds
    base = (Fraction(result.rounds[0].delta).limit_denominator(10**9)
            * result.rounds[0].n)
    for rec in result.rounds[1:]:
        assert (Fraction(rec.delta).limit_denominator(10**9) * rec.n) == base
    # dimension loss accounting: measured d drops by the kernel size
    for a, b in zip(result.rounds[:-1], result.rounds[1:]):
        assert b.d >= a.d - a.loss


def test_certify_complex_reduction_path():
    carr = generate_complex_planted(n=9, k=2, ambient=10, triple_count=3, seed=29)
    arr = complex_to_real(carr.spaces)
    sys = build_sg_system(arr, 4)
    result = certify(arr, sys, budget=CertifyBudget(trials=64))
    assert result.sound
    stacked = np.vstack([s.basis_re + 1j * s.basis_im for s in carr.spaces])
    dim_c = int(np.linalg.matrix_rank(stacked, tol=1e-9))
    assert dim_c <= result.measured <= result.final_bound


def test_certify_budget_exhaustion():
    arr, sys = duplicate_line_instance(n_dup=60, groups=4, seed=31)
    with pytest.raises(BudgetExceededError):
        certify(arr, sys, beta=0.8, entry_check=False,
                budget=CertifyBudget(trials=4096, max_rounds=1))


def test_certify_requires_positive_delta():
    arr = generate_grouped(k=1, delta=0.5, n=6, seed=37)
    sys = TripleSystem(arr.n, [], alpha=6, delta=0.0)
    with pytest.raises(PreconditionError):
        certify(arr, sys)

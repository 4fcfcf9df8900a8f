"""Dimension certification for arrangements carrying dependency systems.

Three layers:

* separated_certificate: the well-separated path: build the stacked basis
  matrix A and an explicit annihilator D with constant diagonal ceil(delta n)
  and bounded off-diagonal mass, which forces rank(A) <= alpha k / (tau delta).
* decompose_step: the dichotomy: either the dimension is already below the
  theorem threshold, or a sublist of spaces admits nonzero vectors spanning
  at most beta d dimensions (found via sampling statistics or via scaling,
  bad-pair removal, pruning and the separated certificate).
* certify: the recursion: each collapse witness becomes the kernel of an
  orthogonal projection, the system is mapped and cleaned, and delta_t n_t
  is conserved exactly until a bound certificate terminates the loop.
"""

import time
from dataclasses import dataclass, field
from fractions import Fraction
from math import ceil

import numpy as np

from .arrangement import Arrangement, Subspace, tau_separated
from .dependency import (
    TripleSystem,
    as_fraction,
    map_and_clean,
    prune_low_degree,
    validate_system,
)
from .errors import (
    BudgetExceededError,
    CertificationError,
    InconclusiveError,
    MembershipError,
    PreconditionError,
)
from .linalg import (
    DEFAULT_TOL,
    Tolerance,
    orthonormalize,
    projector,
    rank,
    spectral_norm,
)
from .scaling import admissible_hull_vector, spanning_model, optimize, sample_admissible


def _frac_ceil(x: Fraction) -> int:
    return -((-x.numerator) // x.denominator)


def _frac_floor(x: Fraction) -> int:
    return x.numerator // x.denominator


@dataclass
class DependencyMatrix:
    """Annihilator evidence: D A = 0 with constant diagonal L = ceil(delta n)."""

    A: np.ndarray
    D: np.ndarray
    L: float
    K: float           # measured off-diagonal squared mass
    psi: list          # flat row index -> space index


@dataclass
class Certificate:
    """Outcome of one decomposition step.

    kind "bound": rank(A) <= d_bound, with annihilator evidence when the
    separated path produced it.  kind "collapse": q spaces indexed by
    ``indices`` carry nonzero vectors (rows of z_vectors, one per space)
    spanning at most beta d dimensions (w_dim is the measured span).
    """

    kind: str
    params: dict = field(default_factory=dict)
    d_bound: int = None
    evidence: list = field(default_factory=list)
    indices: list = None
    z_vectors: np.ndarray = None
    w_dim: int = None


def coefficient_expand(u, v1: Subspace, v2: Subspace, tau: float,
                       tol: Tolerance = DEFAULT_TOL) -> tuple:
    """Expand a unit vector of V1 + V2 over the two orthonormal bases.

    Returns (lam, mu) with u = lam . B1 + mu . B2 and, because the spaces
    are tau-separated, squared coefficient mass at most 1/tau.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    if abs(np.linalg.norm(u) - 1.0) > tol.residual_tol:
        raise PreconditionError("expansion requires a unit vector")
    if not tau_separated(v1, v2, tau):
        raise PreconditionError(f"spaces are not {tau}-separated")
    stacked = np.vstack([v1.basis, v2.basis])
    coeff, *_ = np.linalg.lstsq(stacked.T, u, rcond=None)
    resid = np.linalg.norm(u - coeff @ stacked)
    if resid > tol.residual_tol:
        raise MembershipError(
            f"vector lies outside V1 + V2 (residual {resid:.3e})"
        )
    mass = float(coeff @ coeff)
    if mass > 1.0 / tau + 1e-9 * max(1.0, 1.0 / tau):
        raise CertificationError(
            f"coefficient mass {mass:.6f} exceeds 1/tau = {1.0 / tau:.6f}"
        )
    return coeff[: v1.dim].copy(), coeff[v1.dim:].copy()


def separation_witness(v: Subspace, w: Subspace, tau: float,
                       tol: Tolerance = DEFAULT_TOL):
    """Basis direction of v with a large projection onto w, if any.

    Returns None when the spaces are tau-separated; otherwise a pair
    (j, norm_sq) with norm_sq >= (1 - tau)^2 / dim(v).
    """
    if tau_separated(v, w, tau):
        return None
    overlaps = v.basis @ w.basis.T
    norms_sq = np.einsum("ij,ij->i", overlaps, overlaps)
    j = int(np.argmax(norms_sq))
    bound = (1.0 - tau) ** 2 / v.dim
    if norms_sq[j] < bound - tol.residual_tol:
        raise CertificationError(
            f"witness projection {norms_sq[j]:.6f} below guaranteed {bound:.6f}"
        )
    return j, float(norms_sq[j])


def diagdom_rank_bound(d_mat) -> tuple:
    """Rank lower bound ceil(m - K/L^2) for a constant-diagonal matrix.

    L is the common diagonal value (must be positive), K the off-diagonal
    squared mass.  Floored at zero when the bound is vacuous.
    """
    d_mat = np.asarray(d_mat, dtype=float)
    m = d_mat.shape[0]
    if d_mat.shape != (m, m) or m == 0:
        raise PreconditionError("rank bound needs a nonempty square matrix")
    diag = np.diag(d_mat)
    l_val = float(diag[0])
    if l_val <= 0:
        raise PreconditionError("diagonal value must be positive")
    if np.abs(diag - l_val).max() > 1e-8 * max(1.0, abs(l_val)):
        raise PreconditionError("diagonal entries are not constant")
    k_val = float(np.sum(d_mat**2) - np.sum(diag**2))
    bound = max(0, ceil(m - k_val / l_val**2 - 1e-12))
    return bound, l_val, k_val


def _flat_layout(arr: Arrangement):
    psi, offsets = [], {}
    for i, v in enumerate(arr.spaces):
        offsets[i] = len(psi)
        psi.extend([i] * v.dim)
    return psi, offsets


def separated_certificate(arr: Arrangement, sys: TripleSystem, tau: float,
                          tol: Tolerance = DEFAULT_TOL) -> Certificate:
    """Rank certificate: d <= alpha k / (tau delta) for separated systems.

    Every pair inside a 3-set must be tau-separated (2-sets pair equal
    spaces and use the unit-mass expansion instead).  Builds one
    annihilator row per basis vector from the first ceil(delta n) sets
    through its space, verifies D A = 0 and the diagonal and off-diagonal
    budgets, and cross-checks the measured rank of A against the bound.
    """
    report = validate_system(arr, sys, tol)
    if not report.ok:
        raise PreconditionError(
            "system does not validate: " + "; ".join(report.violations[:3])
        )
    for j, s in enumerate(sys.sets):
        if len(s) == 3:
            for a in range(3):
                for b in range(a + 1, 3):
                    if not tau_separated(arr.spaces[s[a]], arr.spaces[s[b]], tau):
                        raise PreconditionError(
                            f"set {j}: spaces {s[a]} and {s[b]} are not {tau}-separated"
                        )
    n = arr.n
    delta = as_fraction(sys.delta)
    if delta <= 0:
        raise PreconditionError("separated certificate needs delta > 0")
    need = _frac_ceil(delta * n)
    psi, offsets = _flat_layout(arr)
    m = len(psi)
    a_mat = arr.stacked_basis()
    sets_by_index = [[] for _ in range(n)]
    for j, s in enumerate(sys.sets):
        for i in s:
            sets_by_index[i].append(j)
    d_mat = np.zeros((m, m))
    for s_row in range(m):
        i0 = psi[s_row]
        through = sets_by_index[i0]
        if len(through) < need:
            raise PreconditionError(
                f"index {i0} lies in {len(through)} sets, fewer than ceil(delta n) = {need}"
            )
        u = a_mat[s_row]
        y = np.zeros(m)
        for j in through[:need]:
            s = sys.sets[j]
            others = [i for i in s if i != i0]
            c = np.zeros(m)
            c[s_row] = 1.0
            if len(s) == 3:
                i1, i2 = others
                lam, mu = coefficient_expand(u, arr.spaces[i1], arr.spaces[i2],
                                             tau, tol)
                c[offsets[i1]: offsets[i1] + arr.spaces[i1].dim] = -lam
                c[offsets[i2]: offsets[i2] + arr.spaces[i2].dim] = -mu
            else:
                (i1,) = others
                lam = arr.spaces[i1].basis @ u
                resid = np.linalg.norm(u - lam @ arr.spaces[i1].basis)
                if resid > tol.residual_tol:
                    raise PreconditionError(
                        f"set {j}: paired spaces are not equal (residual {resid:.3e})"
                    )
                c[offsets[i1]: offsets[i1] + arr.spaces[i1].dim] = -lam
            y += c
        d_mat[s_row] = y
    # re-verify the construction
    da = spectral_norm(d_mat @ a_mat)
    scale = spectral_norm(d_mat) * spectral_norm(a_mat)
    if da > 1e-6 * max(scale, 1.0):
        raise CertificationError(f"annihilation failed: |DA| = {da:.3e}")
    if np.abs(np.diag(d_mat) - need).max() > 1e-9 * need:
        raise CertificationError("annihilator diagonal is not ceil(delta n)")
    off_sq = d_mat**2 - np.diag(np.diag(d_mat)) ** 2
    row_budget = sys.alpha * need / tau
    worst_row = float(off_sq.sum(axis=1).max())
    if worst_row > row_budget * (1 + 1e-6) + 1e-9:
        raise CertificationError(
            f"off-diagonal row mass {worst_row:.3f} exceeds alpha ceil(delta n)/tau = {row_budget:.3f}"
        )
    k_bound = max(v.dim for v in arr.spaces)
    tau_frac = as_fraction(tau)
    bound = _frac_floor(Fraction(sys.alpha) * k_bound / (tau_frac * delta))
    measured = rank(a_mat, tol)
    if measured > bound:
        raise CertificationError(
            f"measured rank {measured} exceeds certified bound {bound}"
        )
    evidence = DependencyMatrix(A=a_mat, D=d_mat, L=float(need),
                                K=float(off_sq.sum()), psi=psi)
    return Certificate(kind="bound", d_bound=bound, evidence=[evidence],
                       params={"alpha": sys.alpha, "delta": float(delta),
                               "tau": tau, "k": k_bound, "n": n,
                               "branch": "separated", "measured": measured})


def verify_certificate(cert: Certificate, arr: Arrangement, sys: TripleSystem,
                       beta: float, tol: Tolerance = DEFAULT_TOL) -> None:
    """Re-verify a certificate against its arrangement; raises on failure."""
    d = arr.dimension(tol)
    if cert.kind == "bound":
        if d > cert.d_bound:
            raise CertificationError(
                f"bound certificate claims {cert.d_bound} but dimension is {d}"
            )
        return
    delta = as_fraction(sys.delta)
    q_needed = _frac_ceil(delta * arr.n / (20 * sys.alpha))
    if len(cert.indices) < q_needed:
        raise CertificationError(
            f"collapse witness has {len(cert.indices)} spaces, needs {q_needed}"
        )
    for row, i in zip(cert.z_vectors, cert.indices):
        norm = np.linalg.norm(row)
        if norm <= tol.residual_tol:
            raise CertificationError(f"witness vector for space {i} is zero")
        basis = arr.spaces[i].basis
        resid = np.linalg.norm(row - (row @ basis.T) @ basis) / norm
        if resid > tol.residual_tol:
            raise CertificationError(
                f"witness vector for space {i} is outside its space (residual {resid:.3e})"
            )
    z_rank = rank(cert.z_vectors, tol)
    allowed = _frac_floor(as_fraction(beta) * d)
    if z_rank > allowed:
        raise CertificationError(
            f"witness vectors span {z_rank} dimensions, more than floor(beta d) = {allowed}"
        )


def _harvest_from_run(arr: Arrangement, run, t_pref: int, tol: Tolerance):
    """Intersections of every space with the span of a run's first picks."""
    prefix = list(run[:t_pref])
    rows = np.vstack([arr.spaces[i].basis for i in prefix])
    span = orthonormalize(rows, tol)
    proj = span.T @ span
    indices, vectors = [], []
    for i, v in enumerate(arr.spaces):
        if v.dim == 0:
            continue
        resid = v.basis - v.basis @ proj
        u_left, svals, _ = np.linalg.svd(resid, full_matrices=False)
        if svals[-1] <= tol.residual_tol:
            c = u_left[:, -1]
            indices.append(i)
            vectors.append(c @ v.basis)
    return indices, np.array(vectors) if vectors else np.zeros((0, arr.ambient))


def _collapse_from_scaled(arr: Arrangement, sys: TripleSystem, scaled: list,
                          beta: float, d: int,
                          tol: Tolerance = DEFAULT_TOL) -> Certificate:
    """Scale-collapse tail: drop badly separated sets, prune, certify, pull back.

    ``scaled`` holds the images of the original spaces under the scaling map
    (in any common ambient).  Sets whose 3-set contains a pair that is not
    0.5-separated are removed (2-sets pair equal spaces and are never
    separated, so they drop automatically); the rest is pruned to an
    (alpha, delta/20)-system whose separated certificate bounds the span of
    the survivors, and the witness vectors are taken from the original
    spaces at the surviving indices.
    """
    n = arr.n
    delta = as_fraction(sys.delta)
    surviving = []
    for s in sys.sets:
        ok = True
        for a in range(len(s)):
            for b in range(a + 1, len(s)):
                if not tau_separated(scaled[s[a]], scaled[s[b]], 0.5):
                    ok = False
                    break
            if not ok:
                break
        if ok:
            surviving.append(s)
    lemma_delta = delta / 10
    if Fraction(len(surviving)) < lemma_delta * n * n:
        raise InconclusiveError(
            "too few sets survive the separation filter for the pruning lemma",
            diagnostics={"surviving": len(surviving),
                         "needed": float(lemma_delta * n * n),
                         "branch": "scale-collapse"},
        )
    scaled_arr = Arrangement(scaled[0].ambient, list(scaled))
    filtered = TripleSystem(n, surviving, alpha=sys.alpha, delta=float(lemma_delta))
    sub_arr, sub_sys, idx_map = prune_low_degree(scaled_arr, filtered, lemma_delta)
    inner = separated_certificate(sub_arr, sub_sys, 0.5, tol)
    z_rows = np.vstack([arr.spaces[i].basis[0] for i in idx_map])
    cert = Certificate(kind="collapse", indices=list(idx_map), z_vectors=z_rows,
                       w_dim=rank(z_rows, tol),
                       params={"branch": "scale-collapse",
                               "inner_bound": inner.d_bound,
                               "surviving_sets": len(surviving)})
    verify_certificate(cert, arr, sys, beta, tol)
    return cert


def decompose_step(arr: Arrangement, sys: TripleSystem, beta: float,
                   trials: int = 2048, seed: int = 0,
                   tol: Tolerance = DEFAULT_TOL, entry_check: bool = True,
                   harvest_retries: int = 8, workers: int = 1) -> Certificate:
    """One application of the dichotomy: a bound or a collapse witness.

    Pipeline: (entry) if the dimension is already at most
    400 alpha k^3 / (beta delta), return that bound; (a) estimate pick
    probabilities by sampling; (b) if more than delta n / (10 alpha)
    indices sit confidently below beta d / (4 k n), harvest witness vectors
    from the span of a run's first ceil(beta d / (2k)) picks; (c) otherwise
    scale via the augmented model, drop badly separated sets, prune, and
    pull the separated certificate back as a witness.  With
    entry_check=False the entry bound is used only as a last resort after
    the collapse branches fail.
    """
    if not (0.0 < beta < 1.0):
        raise PreconditionError(f"beta must be in (0, 1), got {beta}")
    report = validate_system(arr, sys, tol)
    if not report.ok:
        raise PreconditionError(
            "system does not validate: " + "; ".join(report.violations[:3])
        )
    delta = as_fraction(sys.delta)
    if delta <= 0:
        raise PreconditionError("decomposition needs delta > 0")
    alpha = sys.alpha
    k_bound = max(v.dim for v in arr.spaces)
    n = arr.n
    d = arr.dimension(tol)
    beta_frac = as_fraction(beta)
    threshold = Fraction(400 * alpha * k_bound**3) / (beta_frac * delta)

    def entry_certificate():
        return Certificate(kind="bound", d_bound=_frac_floor(threshold),
                           params={"alpha": alpha, "delta": float(delta),
                                   "k": k_bound, "n": n, "beta": beta,
                                   "branch": "entry", "measured": d})

    if entry_check and Fraction(d) <= threshold:
        return entry_certificate()

    sample = sample_admissible(arr, trials, seed, tol, workers)
    p_hat = sample.p_hat
    sigma = np.sqrt(np.maximum(p_hat * (1.0 - p_hat), 0.0) / trials)
    pick_floor = float(beta_frac * d / (4 * k_bound * n))
    below = np.flatnonzero(p_hat + 3.0 * sigma < pick_floor)
    diagnostics = {"d": d, "n": n, "below": len(below),
                   "pick_floor": pick_floor, "branch_tried": []}

    if Fraction(len(below)) > delta * n / (10 * alpha):
        diagnostics["branch_tried"].append("harvest")
        t_pref = _frac_ceil(beta_frac * d / (2 * k_bound))
        q_needed = _frac_ceil(delta * n / (20 * alpha))
        z_cap = _frac_floor(beta_frac * d)
        for run in sample.sets[:harvest_retries]:
            if len(run) < t_pref:
                continue
            indices, vectors = _harvest_from_run(arr, run, t_pref, tol)
            if len(indices) < q_needed:
                continue
            if rank(vectors, tol) > z_cap:
                continue
            cert = Certificate(kind="collapse", indices=indices,
                               z_vectors=vectors, w_dim=rank(vectors, tol),
                               params={"branch": "harvest",
                                       "prefix": int(t_pref)})
            verify_certificate(cert, arr, sys, beta, tol)
            return cert

    diagnostics["branch_tried"].append("scale-collapse")
    try:
        hull = admissible_hull_vector(sample)
        model = spanning_model(arr, hull, tol)
        scaling = optimize(model.arrangement, model.p, eps_target=1.0, tol=tol)
        if scaling.obstruction is not None:
            raise InconclusiveError(
                f"scaling diverged: {scaling.obstruction}",
                diagnostics={**diagnostics, "obstruction": str(scaling.obstruction)},
            )
        scaled = [
            Subspace(model.d, orthonormalize(
                model.arrangement.spaces[i].basis @ scaling.M.T, tol))
            for i in range(n)
        ]
        return _collapse_from_scaled(arr, sys, scaled, beta, d, tol)
    except InconclusiveError as exc:
        if not entry_check and Fraction(d) <= threshold:
            return entry_certificate()
        exc.diagnostics.update(diagnostics)
        raise


@dataclass
class CertifyBudget:
    trials: int = 2048
    seed: int = 0
    max_rounds: int = None
    wall_clock: float = None
    harvest_retries: int = 8
    workers: int = 1


@dataclass
class RoundRecord:
    index: int
    n: int
    delta: float
    d: int
    branch: str
    loss: int


@dataclass
class CertifyResult:
    final_bound: int
    measured: int
    rounds: list
    beta: float

    @property
    def sound(self) -> bool:
        return self.measured <= self.final_bound


def certify(arr: Arrangement, sys: TripleSystem, tol: Tolerance = DEFAULT_TOL,
            budget: CertifyBudget = None, beta: float = None,
            entry_check: bool = True) -> CertifyResult:
    """Project-and-recurse until a bound certificate terminates the loop.

    Every collapse witness becomes the kernel of the orthogonal projection
    I - Proj_span(z); the mapped system keeps delta_t n_t = delta n exactly
    (checked in rational arithmetic).  The final bound converts the
    terminating round's threshold back through the per-round (1 - beta)
    dimension-loss factor; the recursion is hard-capped at
    ceil(20 alpha k / delta) rounds.
    """
    budget = budget or CertifyBudget()
    report = validate_system(arr, sys, tol)
    if not report.ok:
        raise PreconditionError(
            "system does not validate: " + "; ".join(report.violations[:3])
        )
    delta0 = as_fraction(sys.delta)
    if delta0 <= 0:
        raise PreconditionError("certification needs delta > 0")
    alpha = sys.alpha
    k_bound = max(v.dim for v in arr.spaces)
    beta_frac = (min(Fraction(1, 2), delta0 / (alpha * k_bound))
                 if beta is None else as_fraction(beta))
    if not (0 < beta_frac < 1):
        raise PreconditionError(f"beta must be in (0, 1), got {float(beta_frac)}")
    hard_cap = _frac_ceil(Fraction(20 * alpha * k_bound) / delta0)
    max_rounds = hard_cap if budget.max_rounds is None else min(budget.max_rounds, hard_cap)

    measured0 = arr.dimension(tol)
    start = time.monotonic()
    rounds = []
    cur_arr, cur_sys = arr, sys
    delta_t = delta0
    t = 0
    while True:
        if t >= hard_cap:
            raise CertificationError(
                f"recursion exceeded the hard cap of {hard_cap} rounds"
            )
        if budget.max_rounds is not None and t >= max_rounds:
            raise BudgetExceededError(
                f"round budget {budget.max_rounds} exhausted", trace=rounds
            )
        if budget.wall_clock is not None and time.monotonic() - start > budget.wall_clock:
            raise BudgetExceededError(
                f"wall clock budget {budget.wall_clock}s exhausted", trace=rounds
            )
        d_t = cur_arr.dimension(tol)
        cert = decompose_step(cur_arr, cur_sys, float(beta_frac),
                              trials=budget.trials, seed=budget.seed + t,
                              tol=tol, entry_check=entry_check,
                              harvest_retries=budget.harvest_retries,
                              workers=budget.workers)
        if cert.kind == "bound":
            rounds.append(RoundRecord(t, cur_arr.n, float(delta_t), d_t,
                                      cert.params.get("branch", "bound"), 0))
            bound_here = Fraction(400 * alpha * k_bound**3) / (beta_frac * delta_t)
            inflate = (Fraction(1) / (1 - beta_frac)) ** t
            final_bound = _frac_floor(inflate * bound_here)
            if measured0 > final_bound:
                raise CertificationError(
                    f"measured dimension {measured0} exceeds final bound {final_bound}"
                )
            return CertifyResult(final_bound=final_bound, measured=measured0,
                                 rounds=rounds, beta=float(beta_frac))
        verify_certificate(cert, cur_arr, cur_sys, float(beta_frac), tol)
        kernel = orthonormalize(cert.z_vectors, tol)
        loss = kernel.shape[0]
        proj = np.eye(cur_arr.ambient) - projector(kernel, tol)
        new_arr, new_sys, _ = map_and_clean(cur_arr, cur_sys, proj, tol)
        rounds.append(RoundRecord(t, cur_arr.n, float(delta_t), d_t,
                                  cert.params.get("branch", "collapse"), loss))
        new_delta = delta_t * cur_arr.n / new_arr.n
        if as_fraction(new_sys.delta) * new_arr.n != delta_t * cur_arr.n:
            raise CertificationError(
                "delta * n conservation failed across the projection round"
            )
        cur_arr, cur_sys, delta_t = new_arr, new_sys, new_delta
        t += 1

"""Frame scaling for subspace arrangements.

Given subspaces V_1..V_n and weights p in the convex hull of admissible
basis indicators, find an invertible map M with

    || sum_i p_i Proj_{M(V_i)} - I ||  <=  eps.

The functional f(t, R_1..R_n) = <gamma, t> - ln det(sum_s e^{t_s} x_s x_s^T)
is maximized by interleaving three moves that never decrease f: an exact
orthogonalization inside tied-t classes (which leaves f unchanged), a
damped Newton / gradient ascent step on t, and Givens-rotation ascent
steps acting on each space's orthogonal factor.  At a joint stationary
point the map M = X^{-1/2} satisfies the conclusion; divergence of t is
reported as an obstruction diagnostic instead of a map.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .arrangement import Arrangement, Subspace
from .errors import (
    DegenerateStateError,
    OptimizeTimeoutError,
    PreconditionError,
    SgcertError,
)
from .linalg import (
    DEFAULT_TOL,
    Tolerance,
    orthonormalize,
    rank,
    spectral_norm,
)

# Smallest residual singular value treated as "clear of the current span"
# by the greedy sampler; far above eigensolver noise, far below generic
# clearances.  The admissibility of every emitted set is re-verified with
# the exact integer rank equation.
_ELIGIBLE_MIN_SV = 1e-7


# ---------------------------------------------------------------------------
# sampling admissible sets


@dataclass
class AdmissibleSample:
    """Greedy-to-maximality samples: per-trial pick sequences and frequencies."""

    sets: list
    p_hat: np.ndarray
    trials: int
    seed: int


@dataclass
class HullCertificate:
    """A vector p with an explicit convex combination over admissible sets."""

    p: np.ndarray
    terms: list  # (sorted index tuple, weight), weights sum to 1


def _greedy_run(dim_groups, rng, ambient):
    """One greedy-to-maximality run; returns picks in order."""
    residuals = {k: mats.copy() for k, (idx, mats) in dim_groups.items()}
    alive = {k: np.ones(len(idx), dtype=bool) for k, (idx, mats) in dim_groups.items()}
    picks = []
    span_rows = 0
    while True:
        eligible = []
        for k, (idx, _) in dim_groups.items():
            r3 = residuals[k]
            if k == 1:
                minsv2 = np.einsum("ijl,ijl->i", r3, r3)
            else:
                gram = r3 @ r3.transpose(0, 2, 1)
                minsv2 = np.linalg.eigvalsh(gram)[:, 0]
            ok = alive[k] & (minsv2 > _ELIGIBLE_MIN_SV**2)
            alive[k] = ok  # ineligibility is permanent: the span only grows
            eligible.extend((k, pos) for pos in np.flatnonzero(ok))
        if not eligible or span_rows >= ambient:
            break
        k, pos = eligible[rng.integers(len(eligible))]
        picks.append(dim_groups[k][0][pos])
        q = orthonormalize(residuals[k][pos])
        for kk in residuals:
            r3 = residuals[kk]
            r3 -= (r3 @ q.T) @ q
        alive[k][pos] = False
        span_rows += q.shape[0]
    return tuple(picks)


def sample_admissible(arr: Arrangement, trials: int, seed: int = 0,
                      tol: Tolerance = DEFAULT_TOL, workers: int = 1) -> AdmissibleSample:
    """Run the greedy admissible-set sampler ``trials`` times.

    Each run starts empty and repeatedly picks, uniformly at random, a
    space meeting the current span only at the origin, until no eligible
    space remains.  Every emitted set is verified against the exact
    admissibility equation dim(sum) = sum(dim).  Zero-dimensional spaces
    are never picked.  Per-trial seeds derive from (seed, trial), so runs
    are independent and reproducible under any worker count.
    """
    if trials < 1:
        raise PreconditionError("trials must be >= 1")
    dim_groups = {}
    for i, v in enumerate(arr.spaces):
        if v.dim == 0:
            continue
        dim_groups.setdefault(v.dim, ([], []))
        dim_groups[v.dim][0].append(i)
        dim_groups[v.dim][1].append(v.basis)
    dim_groups = {k: (idx, np.stack(mats)) for k, (idx, mats) in dim_groups.items()}

    def run(t):
        return _greedy_run(dim_groups, np.random.default_rng((seed, t)), arr.ambient)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sets = list(pool.map(run, range(trials)))
    else:
        sets = [run(t) for t in range(trials)]

    counts = np.zeros(arr.n)
    for h in sets:
        if not h:
            continue
        stacked = np.vstack([arr.spaces[i].basis for i in h])
        if rank(stacked, tol) != sum(arr.spaces[i].dim for i in h):
            raise SgcertError(f"sampled set {h} failed the admissibility equation")
        counts[list(h)] += 1.0
    return AdmissibleSample(sets=sets, p_hat=counts / trials, trials=trials, seed=seed)


def admissible_hull_vector(sample: AdmissibleSample) -> HullCertificate:
    """Empirical frequencies as an explicit convex combination of indicators.

    The returned p is computed as sum_H q_H 1_H over the distinct sampled
    sets with q_H = (occurrences / trials), so hull membership holds by
    construction.
    """
    if sample.trials < 1:
        raise PreconditionError("sample has no trials")
    weights = {}
    for h in sample.sets:
        key = tuple(sorted(h))
        weights[key] = weights.get(key, 0) + 1
    terms = [(h, c / sample.trials) for h, c in sorted(weights.items())]
    p = np.zeros_like(sample.p_hat)
    for h, q in terms:
        p[list(h)] += q
    return HullCertificate(p=p, terms=terms)


# ---------------------------------------------------------------------------
# the scaling state


@dataclass
class ScalingState:
    """Everything derived from (t, R_1..R_n) for fixed bases and weights."""

    bases: list          # orthonormal row bases, one per space
    p: np.ndarray        # weight per space
    offsets: list        # flat start index per space
    gamma: np.ndarray    # gamma_(i,j) = p_i
    t: np.ndarray
    R: list              # orthogonal k_i x k_i factors
    x_rows: np.ndarray = field(default=None)  # row s = x_(i,j)
    X: np.ndarray = field(default=None)
    M: np.ndarray = field(default=None)
    f: float = 0.0
    grad: np.ndarray = field(default=None)
    cond: float = 1.0

    @property
    def m(self) -> int:
        return self.t.size

    def slots(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i] + self.bases[i].shape[0])


def _refresh(state: ScalingState, tol: Tolerance) -> ScalingState:
    """Recompute x rows, X, M = X^{-1/2}, f and the gradient from (t, R).

    Unlike inv_sqrt_factor this tolerates extreme (but still positive)
    conditioning: trajectories drifting toward the admissible-hull
    boundary make X nearly singular, and the optimizer needs to see that
    as a measured condition number, not an exception.
    """
    rows = [state.R[i].T @ state.bases[i] for i in range(len(state.bases))]
    x_rows = np.vstack(rows)
    e_t = np.exp(state.t)
    x_mat = x_rows.T * e_t
    x = x_mat @ x_rows
    x = (x + x.T) / 2.0
    w, v = np.linalg.eigh(x)
    if w[0] <= 0.0:
        raise DegenerateStateError("scaling matrix X is not positive definite")
    m_factor = (v * (1.0 / np.sqrt(w))) @ v.T
    mx = x_rows @ m_factor
    state.x_rows = x_rows
    state.X = x
    state.M = m_factor
    state.cond = float(w[-1] / w[0])
    state.f = float(state.gamma @ state.t - np.log(w).sum())
    state.grad = state.gamma - e_t * np.einsum("ij,ij->i", mx, mx)
    return state


def make_state(arr: Arrangement, p, t=None, rotations=None,
               tol: Tolerance = DEFAULT_TOL) -> ScalingState:
    """Initial scaling state (t = 0 and identity rotations unless given)."""
    p = np.asarray(p, dtype=float)
    if p.shape != (arr.n,):
        raise PreconditionError(f"p must have length {arr.n}")
    bases = [v.basis for v in arr.spaces]
    dims = [b.shape[0] for b in bases]
    if any(d == 0 for d in dims):
        raise PreconditionError("scaling requires every space to be nonzero")
    offsets = list(np.cumsum([0] + dims[:-1]))
    m = sum(dims)
    gamma = np.concatenate([np.full(d, p[i]) for i, d in enumerate(dims)])
    t = np.zeros(m) if t is None else np.asarray(t, dtype=float).copy()
    rotations = ([np.eye(d) for d in dims] if rotations is None
                 else [np.asarray(r, dtype=float).copy() for r in rotations])
    state = ScalingState(bases=bases, p=p, offsets=offsets, gamma=gamma,
                         t=t, R=rotations)
    return _refresh(state, tol)


def _tie_classes(values: np.ndarray, tie_tol: float) -> list:
    """Partition indices into classes of (chained) nearly equal values."""
    order = np.argsort(values)
    classes = []
    current = [int(order[0])]
    for a, b in zip(order[:-1], order[1:]):
        if values[b] - values[a] <= tie_tol:
            current.append(int(b))
        else:
            classes.append(current)
            current = [int(b)]
    classes.append(current)
    return classes


def r_step(state: ScalingState, tie_tol: float = 1e-9,
           tol: Tolerance = DEFAULT_TOL) -> ScalingState:
    """Orthogonalize M x_(i,j) within every tied-t class of every space.

    Replaces R_i by R_i diag(Q_1..Q_b) where Q_r comes from the singular
    value decomposition of M L_(J_r); X, M and f are unchanged (exactly so
    for exact ties).
    """
    changed = False
    for i, basis in enumerate(state.bases):
        k = basis.shape[0]
        if k < 2:
            continue
        sl = state.slots(i)
        t_i = state.t[sl]
        for cls in _tie_classes(t_i, tie_tol):
            if len(cls) < 2:
                continue
            cols = state.M @ state.x_rows[sl][cls].T
            _, _, wt = np.linalg.svd(cols, full_matrices=False)
            q_full = np.eye(k)
            q_full[np.ix_(cls, cls)] = wt.T
            state.R[i] = state.R[i] @ q_full
            changed = True
    if changed:
        _refresh(state, tol)
    return state


def t_gradient(state: ScalingState) -> np.ndarray:
    """Closed-form partials: eps_(i,j) = p_i - e^{t_(i,j)} ||M x_(i,j)||^2."""
    if state.grad is None:
        raise DegenerateStateError("state has not been refreshed")
    return state.grad.copy()


def projector_gap(arr: Arrangement, p, m_factor, tol: Tolerance = DEFAULT_TOL) -> float:
    """Spectral norm of sum_i p_i Proj_{M(V_i)} - I, measured directly."""
    p = np.asarray(p, dtype=float)
    total = -np.eye(arr.ambient)
    for i, v in enumerate(arr.spaces):
        if v.dim == 0 or p[i] == 0.0:
            continue
        image = orthonormalize(v.basis @ m_factor.T, tol)
        total += p[i] * (image.T @ image)
    return spectral_norm(total)


@dataclass
class ScalingObstruction:
    """Diagnostic for a diverging trajectory: slots at the t cap."""

    slots: list          # (space index, j, direction +1/-1)
    t_inf_norm: float

    def __str__(self):
        kinds = ", ".join(f"t[{i},{j}] -> {'+' if d > 0 else '-'}inf"
                          for i, j, d in self.slots[:6])
        return f"divergence at |t| = {self.t_inf_norm:.2f}: {kinds}"


@dataclass
class ScalingMap:
    """Result of optimize: the map, the measured gap, and diagnostics."""

    M: np.ndarray
    achieved_eps: float
    obstruction: ScalingObstruction = None
    iterations: int = 0
    f_history: list = field(default_factory=list)
    state: ScalingState = None


def _ascent_t_step(state: ScalingState, tol: Tolerance, step_cap: float = 4.0) -> bool:
    """One ascent step on t: Levenberg-damped Newton with line search.

    The Hessian of f in t is negative semidefinite (and singular along the
    all-ones direction when the weights are balanced), so the step solves
    (lambda I - H) d = g with lambda escalated until the step passes an
    Armijo test.  Near the optimum the predicted increase sinks below the
    evaluation noise of the log-determinant; tiny steps that do not
    measurably decrease f are then accepted so Newton contraction can
    finish the job.
    """
    g = state.grad
    e_t = np.exp(state.t)
    mx = state.x_rows @ state.M
    c = mx @ mx.T
    half = np.sqrt(e_t)
    k_mat = half[:, None] * c * half[None, :]
    hess = k_mat * k_mat - np.diag(np.diag(k_mat))
    scale = max(float(np.abs(np.diag(hess)).max()), 1e-12)
    eye = np.eye(state.m)
    t0, f0 = state.t.copy(), state.f
    noise = 1e-11 * max(1.0, abs(f0))
    lam = 1e-8 * scale
    for _ in range(12):
        try:
            direction = np.linalg.solve(lam * eye - hess, g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        if not np.isfinite(direction).all():
            lam *= 10.0
            continue
        sup = float(np.abs(direction).max())
        if sup > step_cap:
            direction *= step_cap / sup
            sup = step_cap
        slope = float(g @ direction)
        if slope <= 0:
            lam *= 10.0
            continue
        eta = 1.0
        for _ in range(30):
            state.t = t0 + eta * direction
            try:
                _refresh(state, tol)
                if state.f >= f0 + 1e-4 * eta * slope:
                    return True
                if eta * sup <= 1e-3 and state.f >= f0 - noise:
                    return True
            except DegenerateStateError:
                pass
            eta /= 2.0
        lam *= 10.0
    state.t = t0
    _refresh(state, tol)
    return False


def _givens_sweep(state: ScalingState, tie_tol: float, tol: Tolerance,
                  grad_target: float) -> float:
    """Ascent rotations on cross-class pairs; returns max |angle derivative|.

    The derivative of f along a rotation of the pair (j, j') inside space i
    is 2 (e^{t_j} - e^{t_j'}) <M x_j, M x_j'>; each rotation with a
    derivative above ``grad_target`` gets a backtracking line search.
    """
    worst = 0.0
    for i, basis in enumerate(state.bases):
        k = basis.shape[0]
        if k < 2:
            continue
        sl = state.slots(i)
        for j in range(k):
            for jp in range(j + 1, k):
                tj = state.t[sl.start + j]
                tjp = state.t[sl.start + jp]
                if abs(tj - tjp) <= tie_tol:
                    continue  # handled exactly by r_step
                mxj = state.M @ state.x_rows[sl.start + j]
                mxjp = state.M @ state.x_rows[sl.start + jp]
                deriv = 2.0 * (np.exp(tj) - np.exp(tjp)) * float(mxj @ mxjp)
                worst = max(worst, abs(deriv))
                if abs(deriv) <= grad_target:
                    continue
                f0 = state.f
                r0 = state.R[i].copy()
                theta = np.sign(deriv) * 0.5
                improved = False
                for _ in range(40):
                    rot = np.eye(k)
                    cj, sj = np.cos(theta), np.sin(theta)
                    rot[j, j] = rot[jp, jp] = cj
                    rot[j, jp] = sj
                    rot[jp, j] = -sj
                    state.R[i] = r0 @ rot
                    _refresh(state, tol)
                    if state.f >= f0 + 1e-4 * abs(theta * deriv):
                        improved = True
                        break
                    theta /= 2.0
                if not improved:
                    state.R[i] = r0
                    _refresh(state, tol)
    return worst


def optimize(arr: Arrangement, p, eps_target: float = 1e-6,
             max_iter: int = 10000, tie_tol: float = 1e-9,
             t_cap: float = 60.0, tol: Tolerance = DEFAULT_TOL,
             grad_target: float = None) -> ScalingMap:
    """Drive f to a near-stationary point and assemble M = X^{-1/2}.

    Succeeds when every partial |eps_(i,j)| is at most eps_target / m and
    the measured projector gap is at most eps_target; then M is returned
    with the measured gap as ``achieved_eps``.  If some t coordinate
    leaves [-t_cap, t_cap] before that, an obstruction diagnostic is
    returned instead of a guarantee (p sits on or outside the admissible
    hull boundary).  Exhausting max_iter raises OptimizeTimeoutError.
    """
    p = np.asarray(p, dtype=float)
    if np.any(p < -1e-12) or np.any(p > 1.0 + 1e-9):
        raise PreconditionError("weights must lie in [0, 1]")
    if arr.dimension(tol) != arr.ambient:
        raise PreconditionError(
            "arrangement does not span its ambient space; apply spanning_model first"
        )
    state = make_state(arr, p, tol=tol)
    m = state.m
    target = eps_target / m if grad_target is None else grad_target
    history = [state.f]
    for it in range(max_iter):
        r_step(state, tie_tol, tol)
        gap = None
        if np.abs(state.grad).max() <= target:
            gap = projector_gap(arr, p, state.M, tol)
            if gap <= eps_target:
                history.append(state.f)
                return ScalingMap(M=state.M.copy(), achieved_eps=float(gap),
                                  obstruction=None, iterations=it,
                                  f_history=history, state=state)
        # divergence: |t| beyond the cap, or X numerically singular, both
        # witness p at (or outside) the admissible hull boundary
        diverged = np.abs(state.t).max() > t_cap or state.cond > 1e13
        if diverged:
            extreme = np.abs(state.t) > max(0.8 * np.abs(state.t).max(), 1.0)
            slots = []
            for i in range(len(state.bases)):
                sl = state.slots(i)
                for j in range(state.bases[i].shape[0]):
                    s = sl.start + j
                    if extreme[s]:
                        slots.append((i, j, 1 if state.t[s] > 0 else -1))
            gap = projector_gap(arr, p, state.M, tol)
            return ScalingMap(M=state.M.copy(), achieved_eps=float(gap),
                              obstruction=ScalingObstruction(
                                  slots=slots,
                                  t_inf_norm=float(np.abs(state.t).max())),
                              iterations=it, f_history=history, state=state)
        moved = _ascent_t_step(state, tol)
        _givens_sweep(state, tie_tol, tol, target / 2.0)
        history.append(state.f)
        if not moved and np.abs(state.grad).max() > target:
            # flat along t but not converged: rotations alone must make
            # progress; if f stalls completely we are numerically stuck
            if len(history) > 3 and abs(history[-1] - history[-3]) < 1e-15 * max(1.0, abs(history[-1])):
                break
    raise OptimizeTimeoutError(
        f"no convergence or divergence within {max_iter} iterations "
        f"(max |eps| = {np.abs(state.grad).max():.3e})",
        state=state,
    )


# ---------------------------------------------------------------------------
# the convenient form: augment, extend p, restrict to the span


@dataclass
class SpanningModel:
    """Restriction of an arrangement to its span plus auxiliary lines.

    ``arrangement`` lives in R^d (d = dim of the original sum); the first
    n_original spaces are the isometric images of the input spaces, then
    one coordinate line per span direction.  ``p`` extends the certified
    hull vector with the auxiliary weights.  ``restriction`` is the d x l
    matrix of orthonormal span rows: model coordinates = restriction @ v.
    """

    arrangement: Arrangement
    p: np.ndarray
    restriction: np.ndarray
    n_original: int

    @property
    def d(self) -> int:
        return self.arrangement.ambient


def spanning_model(arr: Arrangement, hull: HullCertificate,
                 tol: Tolerance = DEFAULT_TOL) -> SpanningModel:
    """Build the spanning model whose optimum yields the sum-of-squares <= 2 bound.

    Appends one 1-dimensional space per direction of the span, extends
    every hull term H to an admissible basis set H' = H + G by greedily
    adding auxiliary lines, and restricts everything to R^d through the
    isometry sending the span basis to coordinates.  The input p is a
    prefix of the returned p.
    """
    if hull is None or not isinstance(hull, HullCertificate):
        raise PreconditionError("a hull certificate from admissible_hull_vector is required")
    span_rows = orthonormalize(arr.stacked_basis(), tol)
    d = span_rows.shape[0]
    if d == 0:
        raise PreconditionError("arrangement sum is the zero space")
    model_spaces = []
    for v in arr.spaces:
        rows = v.basis @ span_rows.T  # isometric on the span
        model_spaces.append(Subspace(d, orthonormalize(rows, tol)))
    eye = np.eye(d)
    aux = [Subspace(d, eye[[s]]) for s in range(d)]
    model_arr = Arrangement(d, model_spaces + aux, field_tag=arr.field_tag)

    p_model = np.zeros(arr.n + d)
    for h, q in hull.terms:
        span = np.zeros((0, d))
        for i in h:
            span = np.vstack([span, model_spaces[i].basis])
        span = orthonormalize(span, tol)
        extension = []
        for s in range(d):
            if span.shape[0] == d:
                break
            resid = eye[s] - (eye[s] @ span.T) @ span
            if np.linalg.norm(resid) > _ELIGIBLE_MIN_SV:
                extension.append(s)
                span = np.vstack([span, resid / np.linalg.norm(resid)])
        if span.shape[0] != d:
            raise SgcertError(f"failed to extend admissible set {h} to a basis set")
        full = list(h) + [arr.n + s for s in extension]
        dims = sum(model_arr.spaces[i].dim for i in full)
        if dims != d:
            raise SgcertError(f"extended set {full} is not a basis set")
        p_model[full] += q
    if not np.allclose(p_model[: arr.n], hull.p, atol=1e-12):
        raise SgcertError("hull prefix mismatch while extending to basis sets")
    return SpanningModel(arrangement=model_arr, p=p_model,
                       restriction=span_rows, n_original=arr.n)

"""Dependent triples, special spaces, and (alpha, delta)-systems.

A system is a multiset of 2- and 3-element index sets over an arrangement:
3-sets record triples where each space is contained in the sum of the other
two, 2-sets record equal spaces (these arise when a linear map kills one
member of a triple).  Degree and counting thresholds are compared in exact
rational arithmetic so that ceil/floor decisions never flip on float noise.
"""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .arrangement import Arrangement, Subspace, pairwise_zero_intersection
from .errors import (
    InconsistentSystemError,
    ParseError,
    PreconditionError,
    SgcertError,
)
from .linalg import DEFAULT_TOL, Tolerance, as_matrix, orthonormalize, rank


def as_fraction(x) -> Fraction:
    """Exact rational view of a threshold parameter.

    Floats are snapped to the nearest rational with denominator <= 1e9,
    which recovers every count/n ratio that occurs in practice.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(x).limit_denominator(10**9)


@dataclass
class TripleSystem:
    """Multiset of dependency sets with declared parameters (alpha, delta)."""

    n: int
    sets: list
    alpha: int
    delta: float

    def __post_init__(self):
        self.sets = [tuple(sorted(s)) for s in self.sets]

    @property
    def w(self) -> int:
        return len(self.sets)

    def degrees(self) -> list:
        deg = [0] * self.n
        for s in self.sets:
            for i in s:
                deg[i] += 1
        return deg

    def pair_counts(self) -> dict:
        counts = {}
        for s in self.sets:
            for a in range(len(s)):
                for b in range(a + 1, len(s)):
                    key = (s[a], s[b])
                    counts[key] = counts.get(key, 0) + 1
        return counts


@dataclass(frozen=True)
class SpecialSpace:
    """A pair span containing at least three arrangement members."""

    span_basis: np.ndarray
    member_indices: tuple

    @property
    def size(self) -> int:
        return len(self.member_indices)


@dataclass
class SystemReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def is_dependent_triple(v1: Subspace, v2: Subspace, v3: Subspace,
                        tol: Tolerance = DEFAULT_TOL) -> bool:
    """True iff the three spaces lie inside one pair's span.

    Decided by rank: some rotation satisfies dim(V_b + V_c) equal to
    dim(V_a + V_b + V_c).  For pairwise zero-intersecting spaces of equal
    dimension this is equivalent to all three one-sided containments
    (each space inside the sum of the other two).
    """
    if not (v1.ambient == v2.ambient == v3.ambient):
        raise PreconditionError("triple spans different ambient spaces")
    bases = [v1.basis, v2.basis, v3.basis]
    total = rank(np.vstack(bases), tol)
    for a in range(3):
        others = np.vstack([bases[b] for b in range(3) if b != a])
        if rank(others, tol) == total:
            return True
    return False


def find_special_spaces(arr: Arrangement, k: int,
                        tol: Tolerance = DEFAULT_TOL) -> list:
    """All pair spans containing >= 3 arrangement members, deduplicated.

    Requires pairwise zero intersections so that each pair of spaces has a
    unique span of full combined dimension; raises naming the first
    offending pair otherwise.  Zero-dimensional spaces are ignored.
    """
    bad = pairwise_zero_intersection(arr, tol)
    if bad:
        i, j = bad[0]
        raise PreconditionError(
            f"spaces {i} and {j} intersect nontrivially; special spaces are ill-defined"
        )
    if any(v.dim > k for v in arr.spaces):
        raise PreconditionError(f"arrangement is not {k}-bounded")
    live = [i for i in range(arr.n) if arr.spaces[i].dim > 0]
    stacked = np.vstack([arr.spaces[i].basis for i in live]) if live else None
    bounds = np.cumsum([0] + [arr.spaces[i].dim for i in live])
    seen = set()
    out = []
    for ai in range(len(live)):
        a = live[ai]
        for bi in range(ai + 1, len(live)):
            b = live[bi]
            span = orthonormalize(
                np.vstack([arr.spaces[a].basis, arr.spaces[b].basis]), tol
            )
            resid = stacked - (stacked @ span.T) @ span
            row_err = np.linalg.norm(resid, axis=1)
            members = [
                live[pos]
                for pos in range(len(live))
                if row_err[bounds[pos]: bounds[pos + 1]].max() <= tol.residual_tol
            ]
            if len(members) >= 3:
                key = frozenset(members)
                if key not in seen:
                    seen.add(key)
                    out.append(SpecialSpace(span, tuple(sorted(members))))
    return out


# ---------------------------------------------------------------------------
# triple family over [r]


def _idempotent_quasigroup(r: int) -> list:
    """Multiplication table of an idempotent quasigroup on {0..r-1}.

    Odd r: the modular averaging x*y = (x+y)(r+1)/2.  Even r: prolongation
    of the odd table of order r-1 along the transversal (x, x+1), with the
    displaced values rerouted through the new element r-1.
    """
    if r % 2 == 1:
        h = (r + 1) // 2
        return [[((a + b) * h) % r for b in range(r)] for a in range(r)]
    q = r - 1
    h = (q + 1) // 2
    base = [[((a + b) * h) % q for b in range(q)] for a in range(q)]
    table = [[0] * r for _ in range(r)]
    for a in range(q):
        for b in range(q):
            table[a][b] = base[a][b]
    table[q][q] = q
    for x in range(q):
        y = (x + 1) % q
        displaced = base[x][y]
        table[x][y] = q
        table[x][q] = displaced
        table[q][y] = displaced
    return table


def build_triple_family(r: int) -> list:
    """Deterministic multiset of r^2 - r triples over {0..r-1}.

    Every element appears in exactly 3(r-1) triples and every pair appears
    together in exactly 6; triples always have three distinct elements.
    Built as {x, y, x*y} over all ordered pairs of an idempotent
    quasigroup, which forces the counts; the postcondition re-verifies.
    """
    if r < 3:
        raise PreconditionError(f"triple family needs r >= 3, got {r}")
    table = _idempotent_quasigroup(r)
    family = []
    for x in range(r):
        for y in range(r):
            if x != y:
                family.append(tuple(sorted((x, y, table[x][y]))))
    if len(family) != r * r - r:
        raise SgcertError("triple family has wrong size")
    deg = [0] * r
    pair = {}
    for t in family:
        if len(set(t)) != 3:
            raise SgcertError(f"degenerate triple {t}")
        for e in t:
            deg[e] += 1
        for a in range(3):
            for b in range(a + 1, 3):
                pair[(t[a], t[b])] = pair.get((t[a], t[b]), 0) + 1
    if any(d != 3 * (r - 1) for d in deg):
        raise SgcertError("triple family element counts are off")
    if any(c > 6 for c in pair.values()):
        raise SgcertError("triple family pair multiplicity exceeds 6")
    return family


def build_sg_system(arr: Arrangement, k: int,
                    tol: Tolerance = DEFAULT_TOL) -> TripleSystem:
    """Union of triple families over every special space's member list.

    Returns alpha = 6 and delta measured from the construction: the largest
    value such that every index lies in at least delta * n sets (zero when
    there are no special spaces).
    """
    specials = find_special_spaces(arr, k, tol)
    sets = []
    for sp in specials:
        members = sp.member_indices
        for t in build_triple_family(len(members)):
            sets.append(tuple(sorted(members[e] for e in t)))
    sys = TripleSystem(arr.n, sets, alpha=6, delta=0.0)
    if sets and arr.n:
        sys.delta = min(sys.degrees()) / arr.n
    return sys


def validate_system(arr: Arrangement, sys: TripleSystem,
                    tol: Tolerance = DEFAULT_TOL) -> SystemReport:
    """Check every system requirement; violations are report content.

    Covers set sizes, the containment/equality semantics of 3- and 2-sets,
    per-index degree >= delta * n, per-pair multiplicity <= alpha, and the
    counting consequences delta n^2 / 3 <= w <= alpha n^2 / 2 and
    delta/alpha <= 3/2.
    """
    report = SystemReport()
    v = report.violations
    if sys.n != arr.n:
        v.append(f"system indexes {sys.n} spaces, arrangement has {arr.n}")
        return report
    n = arr.n
    for j, s in enumerate(sys.sets):
        if len(s) not in (2, 3) or len(set(s)) != len(s):
            v.append(f"set {j}: size must be 2 or 3 with distinct indices, got {s}")
            continue
        if any(i < 0 or i >= n for i in s):
            v.append(f"set {j}: index out of range in {s}")
            continue
        spaces = [arr.spaces[i] for i in s]
        if len(s) == 3:
            if not is_dependent_triple(*spaces, tol=tol):
                v.append(f"set {j}: {s} is not a dependent triple")
        else:
            a, b = spaces
            if a.dim != b.dim or rank(np.vstack([a.basis, b.basis]), tol) != a.dim:
                v.append(f"set {j}: spaces {s[0]} and {s[1]} are not equal")
    delta = as_fraction(sys.delta)
    deg = sys.degrees()
    for i in range(n):
        if Fraction(deg[i]) < delta * n:
            v.append(
                f"index {i} lies in {deg[i]} sets, fewer than delta*n = {float(delta * n):g}"
            )
    for (a, b), c in sys.pair_counts().items():
        if c > sys.alpha:
            v.append(f"pair ({a},{b}) appears in {c} sets, more than alpha = {sys.alpha}")
    w = sys.w
    if Fraction(3 * w) < delta * n * n:
        v.append(f"count bound failed: w = {w} < delta*n^2/3 = {float(delta * n * n / 3):g}")
    if Fraction(2 * w) > Fraction(sys.alpha) * n * n:
        v.append(f"count bound failed: w = {w} > alpha*n^2/2 = {sys.alpha * n * n / 2:g}")
    if 2 * delta > 3 * sys.alpha:
        v.append(f"delta/alpha = {float(delta) / sys.alpha:g} exceeds 3/2")
    return report


def prune_low_degree(arr: Arrangement, sys: TripleSystem, delta) -> tuple:
    """Iteratively drop spaces in fewer than delta*n/2 sets (and their sets).

    Requires w >= delta * n^2 (with requirements 1, 2, 4 assumed to hold).
    Returns (sub_arrangement, sub_system, index_map) where index_map sends
    new positions to original ones and the sub-system is a validated
    (alpha, delta/2)-system of the sub-arrangement.
    """
    delta = as_fraction(delta)
    n = arr.n
    if Fraction(sys.w) < delta * n * n:
        raise PreconditionError(
            f"pruning needs w >= delta*n^2 = {float(delta * n * n):g}, got {sys.w}"
        )
    threshold = delta * n / 2
    alive_sets = list(range(sys.w))
    alive = [True] * n
    while True:
        deg = [0] * n
        for j in alive_sets:
            for i in sys.sets[j]:
                deg[i] += 1
        doomed = [i for i in range(n) if alive[i] and Fraction(deg[i]) < threshold]
        if not doomed:
            break
        for i in doomed:
            alive[i] = False
        doomed_set = set(doomed)
        alive_sets = [j for j in alive_sets
                      if not doomed_set.intersection(sys.sets[j])]
    index_map = [i for i in range(n) if alive[i]]
    if Fraction(len(index_map)) * 2 * sys.alpha < delta * n:
        raise InconsistentSystemError(
            "pruning kept fewer spaces than delta*n/(2*alpha); input system was inconsistent"
        )
    renum = {old: new for new, old in enumerate(index_map)}
    sub_arr = Arrangement(arr.ambient, [arr.spaces[i] for i in index_map],
                          field_tag=arr.field_tag)
    sub_sys = TripleSystem(
        len(index_map),
        [tuple(renum[i] for i in sys.sets[j]) for j in alive_sets],
        alpha=sys.alpha,
        delta=float(delta / 2),
    )
    report = validate_system(sub_arr, sub_sys)
    if not report.ok:
        raise InconsistentSystemError(
            "pruned system failed re-validation: " + "; ".join(report.violations[:3])
        )
    return sub_arr, sub_sys, index_map


def _project_space(v: Subspace, p: np.ndarray, tol: Tolerance) -> Subspace:
    """Image of a subspace under a linear map, with dead directions removed.

    Basis rows are unit vectors, so singular values of the image below
    rank_tol relative to max(largest, 1) are genuine zeros, not small
    surviving directions.
    """
    if v.dim == 0:
        return v
    rows = v.basis @ p.T
    u, s, vt = np.linalg.svd(rows, full_matrices=False)
    cutoff = tol.rank_tol * max(float(s[0]) if s.size else 0.0, 1.0)
    r = int(np.count_nonzero(s >= cutoff))
    if r == 0:
        return Subspace(v.ambient, np.zeros((0, v.ambient)))
    return Subspace(v.ambient, vt[:r].copy())


def map_and_clean(arr: Arrangement, sys: TripleSystem, p,
                  tol: Tolerance = DEFAULT_TOL) -> tuple:
    """Apply a linear map, drop zero images, and relabel the system.

    3-sets that lose exactly one member demote to 2-sets of equal spaces;
    sets losing all members are dropped.  A 3-set losing exactly two
    members (or a 2-set losing exactly one) contradicts the system
    semantics and raises.  Returns (arrangement, system, delta_prime) with
    delta_prime = delta * n / n'.
    """
    p = as_matrix(p)
    if p.shape != (arr.ambient, arr.ambient):
        raise PreconditionError(
            f"map must be {arr.ambient}x{arr.ambient}, got {p.shape}"
        )
    images = [_project_space(v, p, tol) for v in arr.spaces]
    phi = {}
    kept = []
    for i, img in enumerate(images):
        if img.dim > 0:
            phi[i] = len(kept)
            kept.append(img)
    n_prime = len(kept)
    if n_prime == 0:
        raise PreconditionError("the map killed every space in the arrangement")
    new_sets = []
    for j, s in enumerate(sys.sets):
        alive = [i for i in s if i in phi]
        if len(s) == 3 and len(alive) == 1:
            raise InconsistentSystemError(
                f"set {j}: two members of a dependent triple were killed but the "
                "third survived, contradicting the containment"
            )
        if len(s) == 2 and len(alive) == 1:
            raise InconsistentSystemError(
                f"set {j}: one of two equal spaces was killed but not the other"
            )
        if len(alive) >= 2:
            new_sets.append(tuple(sorted(phi[i] for i in alive)))
    delta = as_fraction(sys.delta)
    delta_prime = delta * sys.n / n_prime
    new_arr = Arrangement(arr.ambient, kept, field_tag=arr.field_tag)
    new_sys = TripleSystem(n_prime, new_sets, alpha=sys.alpha,
                           delta=float(delta_prime))
    report = validate_system(new_arr, new_sys, tol)
    if not report.ok:
        raise InconsistentSystemError(
            "mapped system failed re-validation: " + "; ".join(report.violations[:3])
        )
    return new_arr, new_sys, float(delta_prime)


# ---------------------------------------------------------------------------
# system file format
#
#   system v1
#   n <n> alpha <a> delta <d>
#   3 i j k | 2 i j          (0-based indices, one set per line)


def write_system(path, sys: TripleSystem) -> None:
    lines = ["system v1", f"n {sys.n} alpha {sys.alpha} delta {sys.delta:.17g}"]
    for s in sys.sets:
        lines.append(f"{len(s)} " + " ".join(str(i) for i in s))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_system(path) -> TripleSystem:
    with open(path, encoding="utf-8") as fh:
        raw = [ln.strip() for ln in fh]
    lines = [(no + 1, ln) for no, ln in enumerate(raw) if ln]
    if not lines or lines[0][1] != "system v1":
        raise ParseError("expected 'system v1' header", lines[0][0] if lines else 1)
    if len(lines) < 2:
        raise ParseError("missing parameter line", 2)
    no, params = lines[1]
    parts = params.split()
    if len(parts) != 6 or parts[0] != "n" or parts[2] != "alpha" or parts[4] != "delta":
        raise ParseError(f"bad parameter line {params!r}", no)
    try:
        n, alpha, delta = int(parts[1]), int(parts[3]), float(parts[5])
    except ValueError as exc:
        raise ParseError(str(exc), no) from None
    sets = []
    for no, ln in lines[2:]:
        cells = ln.split()
        try:
            size = int(cells[0])
            idx = [int(c) for c in cells[1:]]
        except (ValueError, IndexError) as exc:
            raise ParseError(f"bad set line: {exc}", no) from None
        if size not in (2, 3) or len(idx) != size:
            raise ParseError(f"set line declares size {size} but has {len(idx)} indices", no)
        sets.append(tuple(idx))
    return TripleSystem(n, sets, alpha=alpha, delta=delta)

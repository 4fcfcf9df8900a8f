"""Subspace arrangements: data model, validation, generators, file format.

A subspace is stored as an orthonormal row basis; an arrangement is an
ordered list of subspaces sharing one ambient dimension.  Complex inputs
are realified here at the ingestion boundary; no complex arithmetic
survives past this module.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, PreconditionError, SgcertError
from .linalg import DEFAULT_TOL, Tolerance, as_matrix, orthonormalize, rank, spectral_norm


class InvariantViolation(SgcertError):
    """A data-model invariant does not hold for the given content."""


@dataclass(frozen=True)
class Subspace:
    """A subspace of R^ambient given by an orthonormal row basis.

    A 0-row basis encodes the zero space.
    """

    ambient: int
    basis: np.ndarray

    def __post_init__(self):
        b = as_matrix(self.basis).reshape(-1, self.ambient) if np.asarray(self.basis).size else np.zeros((0, self.ambient))
        object.__setattr__(self, "basis", b)
        if b.shape[1] != self.ambient:
            raise InvariantViolation(
                f"basis has {b.shape[1]} columns, ambient is {self.ambient}"
            )
        if b.shape[0] > self.ambient:
            raise InvariantViolation("basis has more rows than the ambient dimension")
        if b.shape[0]:
            gram = b @ b.T
            err = np.abs(gram - np.eye(b.shape[0])).max()
            if err > DEFAULT_TOL.residual_tol:
                raise InvariantViolation(
                    f"basis rows are not orthonormal (Gram residual {err:.3e})"
                )

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @staticmethod
    def from_spanning(rows, ambient: int, tol: Tolerance = DEFAULT_TOL) -> "Subspace":
        """Build a subspace from arbitrary spanning rows (orthonormalized)."""
        rows = np.asarray(rows, dtype=float).reshape(-1, ambient)
        return Subspace(ambient, orthonormalize(rows, tol))

    def contains(self, other: "Subspace", tol: Tolerance = DEFAULT_TOL) -> bool:
        """True iff every basis row of ``other`` lies in this subspace."""
        if other.dim == 0:
            return True
        if self.dim == 0:
            return False
        resid = other.basis - (other.basis @ self.basis.T) @ self.basis
        return bool(np.linalg.norm(resid, axis=1).max() <= tol.residual_tol)


@dataclass
class Arrangement:
    """Ordered list of subspaces of a common ambient space."""

    ambient: int
    spaces: list
    field_tag: str = "real"

    def __post_init__(self):
        for i, v in enumerate(self.spaces):
            if v.ambient != self.ambient:
                raise InvariantViolation(
                    f"space {i} has ambient {v.ambient}, arrangement has {self.ambient}"
                )

    @property
    def n(self) -> int:
        return len(self.spaces)

    def stacked_basis(self) -> np.ndarray:
        parts = [v.basis for v in self.spaces if v.dim > 0]
        if not parts:
            return np.zeros((0, self.ambient))
        return np.vstack(parts)

    def dimension(self, tol: Tolerance = DEFAULT_TOL) -> int:
        """dim of the sum of all subspaces (numerical rank of stacked bases)."""
        return rank(self.stacked_basis(), tol)

    def dims(self) -> list:
        return [v.dim for v in self.spaces]

    def max_dim(self) -> int:
        return max((v.dim for v in self.spaces), default=0)


@dataclass(frozen=True)
class ComplexSubspace:
    """A k-dim subspace of C^ambient with basis rows given as (re, im) parts."""

    ambient: int
    basis_re: np.ndarray
    basis_im: np.ndarray

    def __post_init__(self):
        re = as_matrix(self.basis_re).reshape(-1, self.ambient)
        im = as_matrix(self.basis_im).reshape(-1, self.ambient)
        object.__setattr__(self, "basis_re", re)
        object.__setattr__(self, "basis_im", im)
        if re.shape != im.shape:
            raise InvariantViolation("real and imaginary parts differ in shape")
        k = re.shape[0]
        if k:
            # Rows independent over C iff the realification has rank 2k.
            realified = np.block([[re, im], [-im, re]])
            if rank(realified) < 2 * k:
                raise InvariantViolation("complex basis rows are linearly dependent over C")

    @property
    def dim(self) -> int:
        return self.basis_re.shape[0]


@dataclass
class ComplexArrangement:
    ambient: int
    spaces: list = field(default_factory=list)

    def __post_init__(self):
        for i, v in enumerate(self.spaces):
            if v.ambient != self.ambient:
                raise InvariantViolation(
                    f"space {i} has ambient {v.ambient}, arrangement has {self.ambient}"
                )

    @property
    def n(self) -> int:
        return len(self.spaces)


def k_bounded_check(arr: Arrangement, k: int) -> bool:
    """True iff every subspace has dimension at most k."""
    return all(v.dim <= k for v in arr.spaces)


def pairwise_zero_intersection(arr: Arrangement, tol: Tolerance = DEFAULT_TOL) -> list:
    """All pairs (i, j), i < j, whose subspaces intersect nontrivially.

    An empty list certifies that every pair meets only at the origin.
    """
    bad = []
    for i in range(arr.n):
        vi = arr.spaces[i]
        for j in range(i + 1, arr.n):
            vj = arr.spaces[j]
            if vi.dim == 0 or vj.dim == 0:
                continue
            stacked = np.vstack([vi.basis, vj.basis])
            if rank(stacked, tol) < vi.dim + vj.dim:
                bad.append((i, j))
    return bad


def tau_separated(v: Subspace, w: Subspace, tau: float) -> bool:
    """True iff all unit-vector inner products between v and w are <= 1 - tau.

    Decided by the largest singular value of B_v B_w^T (the cosine of the
    smallest principal angle).  A cosine exactly equal to 1 - tau counts
    as separated.
    """
    if v.ambient != w.ambient:
        raise PreconditionError("subspaces have different ambient dimensions")
    if not (0.0 < tau <= 1.0):
        raise PreconditionError(f"tau must be in (0, 1], got {tau}")
    if v.dim == 0 or w.dim == 0:
        return True
    cos = spectral_norm(v.basis @ w.basis.T)
    return cos <= 1.0 - tau


def principal_cosine(v: Subspace, w: Subspace) -> float:
    """Cosine of the smallest principal angle between two subspaces."""
    if v.dim == 0 or w.dim == 0:
        return 0.0
    return spectral_norm(v.basis @ w.basis.T)


def complex_to_real(spaces, tol: Tolerance = DEFAULT_TOL) -> Arrangement:
    """Realify complex subspaces: each image is the span of all re/im parts.

    Image dimensions are at most twice the complex dimension, and any
    containment V_a in V_b + V_c over C is preserved over R.
    """
    spaces = list(spaces)
    if not spaces:
        raise PreconditionError("empty complex space list")
    ambient = spaces[0].ambient
    out = []
    for v in spaces:
        if v.ambient != ambient:
            raise PreconditionError("complex spaces have mixed ambient dimensions")
        rows = np.vstack([v.basis_re, v.basis_im]) if v.dim else np.zeros((0, ambient))
        out.append(Subspace(ambient, orthonormalize(rows, tol)))
    return Arrangement(ambient, out, field_tag="complex")


# ---------------------------------------------------------------------------
# generators


def _random_orthogonal(n: int, rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _draw_inside(frame: np.ndarray, k: int, rng, tol: Tolerance) -> Subspace:
    ambient = frame.shape[1]
    for _ in range(100):
        rows = rng.standard_normal((k, frame.shape[0])) @ frame
        q = orthonormalize(rows, tol)
        if q.shape[0] == k:
            return Subspace(ambient, q)
    raise SgcertError("failed to draw a full-dimensional subspace")


def generate_grouped(k: int, delta: float, n: int, ambient=None,
                     seed: int = 0, tol: Tolerance = DEFAULT_TOL) -> Arrangement:
    """n spaces split into ceil(1/delta) blocks, each inside one 2k-space.

    Block frames are mutually orthogonal 2k-row slices of a random
    orthogonal matrix, so the total dimension is exactly 2k * ceil(1/delta)
    whenever every block is populated.  Within a block, spaces are generic
    k-subspaces with pairwise zero intersection (re-checked, not assumed).
    """
    if k < 1 or n < 1 or delta <= 0:
        raise PreconditionError("grouped generator needs k >= 1, n >= 1, delta > 0")
    groups = int(np.ceil(1.0 / delta - 1e-12))
    if ambient is None:
        ambient = 2 * k * groups
    if ambient < 2 * k * groups:
        raise PreconditionError(
            f"ambient {ambient} cannot hold {groups} orthogonal blocks of dimension {2 * k}"
        )
    rng = np.random.default_rng(seed)
    basis = _random_orthogonal(ambient, rng)
    sizes = [n // groups + (1 if g < n % groups else 0) for g in range(groups)]
    spaces = []
    for g, size in enumerate(sizes):
        frame = basis[2 * k * g : 2 * k * (g + 1)]
        block = []
        for _ in range(size):
            for _ in range(100):
                cand = _draw_inside(frame, k, rng, tol)
                if all(
                    rank(np.vstack([cand.basis, other.basis]), tol) == 2 * k
                    for other in block
                ):
                    block.append(cand)
                    break
            else:
                raise SgcertError("could not place a block member in generic position")
        spaces.extend(block)
    return Arrangement(ambient, spaces)


def generate_grid(ambient: int) -> Arrangement:
    """The ambient*(ambient-1)/2 coordinate-pair planes span{e_i, e_j}."""
    if ambient < 2:
        raise PreconditionError("grid generator needs ambient >= 2")
    eye = np.eye(ambient)
    spaces = [
        Subspace(ambient, eye[[i, j]])
        for i in range(ambient)
        for j in range(i + 1, ambient)
    ]
    return Arrangement(ambient, spaces)


def planted_triples(n: int, triple_count: int) -> list:
    """Index triples (a, b, c) used by the planted generators.

    Overwritten spaces c descend from n-1 so that the a, b parents are
    never themselves overwritten; parents cycle over the stable prefix.
    """
    if triple_count < 0 or n < triple_count + 2:
        raise PreconditionError(f"{triple_count} triples need n >= {triple_count + 2}")
    prefix = n - triple_count
    return [((2 * t) % prefix, (2 * t + 1) % prefix, n - 1 - t)
            for t in range(triple_count)]


def generate_random_planted(n: int, k: int, ambient: int, triple_count: int,
                            seed: int = 0, tol: Tolerance = DEFAULT_TOL) -> Arrangement:
    """Random k-spaces with ``triple_count`` planted dependent triples.

    For each (a, b, c) from :func:`planted_triples`, space c is redrawn
    generically inside the sum of spaces a and b.  Pairwise zero
    intersection is re-checked on the output, not assumed.
    """
    if 2 * k > ambient:
        raise PreconditionError(f"need ambient >= 2k = {2 * k} for zero pairwise intersections")
    plan = planted_triples(n, triple_count)
    rng = np.random.default_rng(seed)
    eye = np.eye(ambient)
    for _ in range(100):
        spaces = [_draw_inside(eye, k, rng, tol) for _ in range(n)]
        for a, b, c in plan:
            pair_frame = orthonormalize(
                np.vstack([spaces[a].basis, spaces[b].basis]), tol
            )
            spaces[c] = _draw_inside(pair_frame, k, rng, tol)
        arr = Arrangement(ambient, spaces)
        if not pairwise_zero_intersection(arr, tol):
            return arr
    raise SgcertError("could not reach generic position for planted arrangement")


def generate_complex_planted(n: int, k: int, ambient: int, triple_count: int,
                             seed: int = 0) -> ComplexArrangement:
    """Complex analogue of the planted generator, for the realification path."""
    if 2 * k > ambient:
        raise PreconditionError(f"need ambient >= 2k = {2 * k}")
    plan = planted_triples(n, triple_count)
    rng = np.random.default_rng(seed)
    mats = [
        rng.standard_normal((k, ambient)) + 1j * rng.standard_normal((k, ambient))
        for _ in range(n)
    ]
    for a, b, c in plan:
        stacked = np.vstack([mats[a], mats[b]])
        coeff = rng.standard_normal((k, 2 * k)) + 1j * rng.standard_normal((k, 2 * k))
        mats[c] = coeff @ stacked
    spaces = [ComplexSubspace(ambient, m.real.copy(), m.imag.copy()) for m in mats]
    return ComplexArrangement(ambient, spaces)


def generate(kind: str, params: dict, seed: int = 0,
             tol: Tolerance = DEFAULT_TOL):
    """Dispatch to a named generator; params are keyword arguments."""
    if kind == "grouped":
        return generate_grouped(params["k"], params["delta"], params["n"],
                                params.get("ambient"), seed, tol)
    if kind == "grid":
        return generate_grid(params["ambient"])
    if kind == "random_planted":
        return generate_random_planted(params["n"], params["k"], params["ambient"],
                                       params.get("triples", 0), seed, tol)
    raise PreconditionError(f"unknown generator kind {kind!r}")


# ---------------------------------------------------------------------------
# file format (line oriented, whitespace separated, UTF-8)
#
#   arrangement v1
#   field real|complex
#   ambient <l>
#   n <count>
#   space <id> dim <k>
#   <k rows of l reals, or l "re,im" pairs when complex>


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_arrangement(path, arr) -> None:
    complex_mode = isinstance(arr, ComplexArrangement)
    lines = ["arrangement v1",
             f"field {'complex' if complex_mode else 'real'}",
             f"ambient {arr.ambient}",
             f"n {arr.n}"]
    for idx, v in enumerate(arr.spaces):
        lines.append(f"space {idx} dim {v.dim}")
        for r in range(v.dim):
            if complex_mode:
                row = " ".join(
                    f"{_fmt(v.basis_re[r, c])},{_fmt(v.basis_im[r, c])}"
                    for c in range(arr.ambient)
                )
            else:
                row = " ".join(_fmt(v.basis[r, c]) for c in range(arr.ambient))
            lines.append(row)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


class _LineReader:
    def __init__(self, path):
        with open(path, encoding="utf-8") as fh:
            self.lines = [ln.rstrip("\n") for ln in fh]
        self.pos = 0

    def next(self) -> str:
        while self.pos < len(self.lines):
            ln = self.lines[self.pos]
            self.pos += 1
            if ln.strip():
                return ln.strip()
        raise ParseError("unexpected end of file", self.pos)

    @property
    def lineno(self) -> int:
        return self.pos


def _expect(reader: _LineReader, *words):
    ln = reader.next()
    parts = ln.split()
    if len(parts) < len(words) or any(p != w for p, w in zip(parts, words) if w is not None):
        raise ParseError(f"expected {' '.join(w or '<value>' for w in words)!r}, got {ln!r}",
                         reader.lineno)
    return parts


def read_arrangement(path):
    """Parse an arrangement file; returns Arrangement or ComplexArrangement."""
    reader = _LineReader(path)
    _expect(reader, "arrangement", "v1")
    field_kind = _expect(reader, "field", None)[1]
    if field_kind not in ("real", "complex"):
        raise ParseError(f"unknown field {field_kind!r}", reader.lineno)
    ambient = int(_expect(reader, "ambient", None)[1])
    count = int(_expect(reader, "n", None)[1])
    spaces = []
    for idx in range(count):
        parts = _expect(reader, "space", None, "dim", None)
        if int(parts[1]) != idx:
            raise ParseError(f"expected space {idx}, got {parts[1]}", reader.lineno)
        dim = int(parts[3])
        rows_re, rows_im = [], []
        for _ in range(dim):
            ln = reader.next()
            cells = ln.split()
            if len(cells) != ambient:
                raise ParseError(f"row has {len(cells)} entries, ambient is {ambient}",
                                 reader.lineno)
            try:
                if field_kind == "complex":
                    pairs = [c.split(",") for c in cells]
                    rows_re.append([float(p[0]) for p in pairs])
                    rows_im.append([float(p[1]) for p in pairs])
                else:
                    rows_re.append([float(c) for c in cells])
            except (ValueError, IndexError) as exc:
                raise ParseError(f"bad numeric row: {exc}", reader.lineno) from None
        if field_kind == "complex":
            spaces.append(ComplexSubspace(ambient,
                                          np.array(rows_re).reshape(dim, ambient),
                                          np.array(rows_im).reshape(dim, ambient)))
        else:
            spaces.append(Subspace(ambient, np.array(rows_re).reshape(dim, ambient)))
    if field_kind == "complex":
        return ComplexArrangement(ambient, spaces)
    return Arrangement(ambient, spaces)

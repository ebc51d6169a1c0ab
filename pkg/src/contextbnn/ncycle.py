"""n-cycle measurement behaviours: tables, feasibility, contextuality labels.

A behaviour in the n-cycle scenario records, for n dichotomic (+/-1)
observables arranged in a ring, the expectation of each observable together
with the correlator of each adjacent (jointly measurable) pair.  For the
5-cycle this is the 10-vector

    (<B_0>, ..., <B_4>, <B_0 B_1>, ..., <B_4 B_0>),

with pair indices taken mod n.  Three exact facts drive this module:

* The four outcome probabilities of each adjacent pair (++, +-, -+, --) are
  linear in the behaviour entries, so the full conditional probability table
  is recoverable from the 2n numbers.
* The behaviour is consistent (non-disturbing) iff every reconstructed
  probability is non-negative.
* A non-disturbing behaviour is non-contextual iff every cyclic correlator
  sum with an odd number of minus signs stays at or below n - 2.  For n = 5
  these are the 16 KCBS facet inequalities with bound 3.

Deterministic +/-1 assignments generate the vertices of the non-contextual
polytope; a linear-programming feasibility solve over those vertices gives an
independent membership oracle used to cross-check the facet labeling.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog

DEFAULT_TOL = 1e-9

# Rows of the probability table in order ++, +-, -+, --.  Column k holds the
# sign applied to (<B_j>, <B_{j+1}>, <B_j B_{j+1}>) in 4*p = 1 +-... .
_ROW_SIGNS = np.array(
    [
        [+1.0, +1.0, +1.0],
        [+1.0, -1.0, -1.0],
        [-1.0, +1.0, -1.0],
        [-1.0, -1.0, +1.0],
    ]
)

MAX_VERTEX_CYCLE = 16  # 2^16 vertices; larger rings would exhaust memory


class ContextualityLabel(IntEnum):
    NONCONTEXTUAL = 0
    CONTEXTUAL = 1


class LpInconclusiveError(RuntimeError):
    """The LP membership solve ended in a numerically degenerate state."""


@dataclass(frozen=True)
class Behaviour:
    """Single-observable expectations and neighbour correlators of a cycle.

    ``singles[j]`` is <B_j>, ``correlators[j]`` is <B_j B_{j+1}> with j+1
    taken mod n.  All entries must lie in [-1, 1]; n is the common length.
    """

    singles: tuple[float, ...]
    correlators: tuple[float, ...]

    # convex mixtures of valid behaviours can overshoot +-1 by float
    # rounding; overshoot up to this much is clamped, more is rejected
    _BOUND_SLACK = 1e-12

    def __post_init__(self):
        singles = self._checked(self.singles)
        correlators = self._checked(self.correlators)
        object.__setattr__(self, "singles", singles)
        object.__setattr__(self, "correlators", correlators)
        if len(singles) != len(correlators):
            raise ValueError(
                f"need one correlator per observable, got {len(singles)} "
                f"singles and {len(correlators)} correlators"
            )
        if len(singles) < 3:
            raise ValueError("cycle length must be at least 3")

    @classmethod
    def _checked(cls, values) -> tuple[float, ...]:
        out = []
        for x in values:
            x = float(x)
            if not np.isfinite(x) or abs(x) > 1.0 + cls._BOUND_SLACK:
                raise ValueError(f"behaviour entries must lie in [-1, 1], got {x!r}")
            out.append(min(1.0, max(-1.0, x)))
        return tuple(out)

    @property
    def n(self) -> int:
        return len(self.singles)

    @classmethod
    def from_flat(cls, vec) -> "Behaviour":
        """Build from the flattened (singles, correlators) layout."""
        vec = np.asarray(vec, dtype=float).ravel()
        if vec.size % 2 != 0:
            raise ValueError(f"flat behaviour must have even length, got {vec.size}")
        n = vec.size // 2
        return cls(tuple(vec[:n]), tuple(vec[n:]))

    def flat(self) -> np.ndarray:
        """Flatten to the canonical (singles, correlators) vector."""
        return np.asarray(self.singles + self.correlators, dtype=float)


@dataclass(frozen=True)
class ProbabilityTable:
    """4 x n table of outcome probabilities, rows ordered ++, +-, -+, --.

    Column j holds the outcome distribution of the pair (B_j, B_{j+1}).
    Columns always sum to 1 (an algebraic identity of the reconstruction);
    individual entries may be negative when the source behaviour is
    infeasible, which is exactly what the non-disturbance check detects.
    """

    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != 4:
            raise ValueError(f"table must be 4 x n, got shape {entries.shape}")
        sums = entries.sum(axis=0)
        if not np.allclose(sums, 1.0, atol=1e-9):
            raise ValueError(f"table columns must sum to 1, got {sums}")
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    def min_entry(self) -> float:
        return float(self.entries.min())


# ---------------------------------------------------------------------------
# Vectorized core.  ``flat`` arrays have shape (..., 2n) in the canonical
# (singles, correlators) layout; these helpers back both the object API and
# the bulk dataset generator.
# ---------------------------------------------------------------------------


def flat_table_entries(flat: np.ndarray) -> np.ndarray:
    """Signed probability tables for flattened behaviours.

    Input shape (..., 2n), output shape (..., 4, n) with rows ++, +-, -+, --.
    """
    flat = np.asarray(flat, dtype=float)
    n = flat.shape[-1] // 2
    if flat.shape[-1] != 2 * n or n < 3:
        raise ValueError(f"flat behaviours need an even trailing dim >= 6, got {flat.shape}")
    b = flat[..., :n]
    b_next = np.roll(b, -1, axis=-1)
    c = flat[..., n:]
    terms = np.stack([b, b_next, c], axis=-1)  # (..., n, 3)
    tables = (1.0 + terms @ _ROW_SIGNS.T) / 4.0  # (..., n, 4)
    return np.swapaxes(tables, -1, -2)


def flat_nondisturbing(flat: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Boolean mask of behaviours whose table entries are all >= -tol."""
    tables = flat_table_entries(flat)
    return tables.min(axis=(-1, -2)) >= -tol


def flat_facet_margin(flat: np.ndarray) -> np.ndarray:
    """Largest odd-signed correlator sum; non-contextual iff <= n - 2."""
    flat = np.asarray(flat, dtype=float)
    n = flat.shape[-1] // 2
    return _facet_sums(flat[..., n:], n).max(axis=-1)


def _facet_sums(correlators: np.ndarray, n: int) -> np.ndarray:
    return correlators @ odd_sign_vectors(n).T


def flat_labels(flat: np.ndarray) -> np.ndarray:
    """Contextuality labels (0/1) for flattened behaviours, no feasibility check."""
    flat = np.asarray(flat, dtype=float)
    n = flat.shape[-1] // 2
    margins = _facet_sums(flat[..., n:], n).max(axis=-1)
    return (margins > float(n - 2)).astype(np.int64)


@lru_cache(maxsize=8)
def odd_sign_vectors(n: int) -> np.ndarray:
    """All 2^(n-1) sign vectors in {-1,+1}^n with an odd number of -1 entries."""
    rows = [g for g in itertools.product((-1.0, 1.0), repeat=n) if g.count(-1.0) % 2 == 1]
    out = np.array(rows)
    out.flags.writeable = False
    return out


# ---------------------------------------------------------------------------
# Object API
# ---------------------------------------------------------------------------


def behaviour_to_table(b: Behaviour) -> ProbabilityTable:
    """Reconstruct the conditional probability table of ``b``.

    Each column follows the four sign patterns
    4p = 1 +- <B_j> +- <B_{j+1}> +- <B_j B_{j+1}> (rows ++, +-, -+, --);
    entries can be negative for infeasible behaviours.
    """
    return ProbabilityTable(flat_table_entries(b.flat()))


def is_nondisturbing(b: Behaviour, tol: float = DEFAULT_TOL) -> bool:
    """True iff every reconstructed table probability is >= -tol."""
    return bool(flat_nondisturbing(b.flat(), tol=tol))


def facet_margin(b: Behaviour) -> float:
    """Largest odd-signed cyclic correlator sum of ``b``.

    The behaviour is non-contextual exactly when this does not exceed n - 2;
    exposing the raw margin lets callers detect near-facet ambiguity.
    """
    c = np.asarray(b.correlators)
    return float(_facet_sums(c, b.n).max())


def kcbs_label(b: Behaviour, tol: float = DEFAULT_TOL) -> ContextualityLabel:
    """Exact contextuality label from the odd-signed facet inequalities.

    Checks all 2^(n-1) sums of correlators with an odd number of minus
    signs against the bound n - 2 (the KCBS bound 3 at n = 5).  Behaviours
    exactly on a facet count as non-contextual.  Raises ``ValueError`` for
    behaviours that fail non-disturbance; the label is only defined on the
    consistent polytope.
    """
    if not is_nondisturbing(b, tol=tol):
        raise ValueError("behaviour is not non-disturbing; label undefined")
    if facet_margin(b) > float(b.n - 2):
        return ContextualityLabel.CONTEXTUAL
    return ContextualityLabel.NONCONTEXTUAL


def noncontextual_vertices(n: int = 5) -> list[Behaviour]:
    """All 2^n deterministic assignments, the non-contextual polytope vertices.

    Each vertex fixes every observable to +/-1, so the correlators are the
    products of adjacent assignments.
    """
    if n < 3:
        raise ValueError("cycle length must be at least 3")
    if n > MAX_VERTEX_CYCLE:
        raise ValueError(f"refusing to enumerate 2^{n} vertices (cap is n <= {MAX_VERTEX_CYCLE})")
    vertices = []
    for assignment in itertools.product((-1.0, 1.0), repeat=n):
        s = np.array(assignment)
        c = s * np.roll(s, -1)
        vertices.append(Behaviour(tuple(s), tuple(c)))
    return vertices


@lru_cache(maxsize=8)
def _vertex_matrix(n: int) -> np.ndarray:
    m = np.array([v.flat() for v in noncontextual_vertices(n)])
    m.flags.writeable = False
    return m


def lp_membership_oracle(b: Behaviour, tol: float = 1e-7) -> ContextualityLabel:
    """Decide membership in the non-contextual polytope by LP feasibility.

    Searches for convex weights over the 2^n deterministic vertices that
    reproduce ``b`` exactly; feasible means non-contextual.  This route is
    independent of the facet inequalities and serves as the brute-force
    cross-check for :func:`kcbs_label`.  ``tol`` is the LP primal
    feasibility tolerance.  Raises ``LpInconclusiveError`` when the solver
    ends in a degenerate state instead of guessing.
    """
    if not is_nondisturbing(b):
        raise ValueError("behaviour is not non-disturbing; membership undefined")
    vertices = _vertex_matrix(b.n)
    n_vert = vertices.shape[0]
    a_eq = np.vstack([vertices.T, np.ones(n_vert)])
    b_eq = np.concatenate([b.flat(), [1.0]])
    result = linprog(
        c=np.zeros(n_vert),
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=(0.0, None),
        method="highs",
        options={"primal_feasibility_tolerance": tol},
    )
    if result.status == 0:
        return ContextualityLabel.NONCONTEXTUAL
    if result.status == 2:
        return ContextualityLabel.CONTEXTUAL
    raise LpInconclusiveError(f"LP membership solve inconclusive: {result.message}")


# ---------------------------------------------------------------------------
# Line serialization: comma-separated entries, optional trailing 0/1 label.
# ---------------------------------------------------------------------------


def behaviour_to_line(b: Behaviour, label: int | None = None) -> str:
    """Serialize to one CSV line of 17-significant-digit reals."""
    fields = [f"{x:.17g}" for x in b.flat()]
    if label is not None:
        fields.append(str(int(label)))
    return ",".join(fields)


def behaviour_from_line(line: str, n: int = 5) -> tuple[Behaviour, int | None]:
    """Parse one serialized behaviour; returns (behaviour, label-or-None)."""
    fields = line.strip().split(",")
    if len(fields) == 2 * n:
        label = None
    elif len(fields) == 2 * n + 1:
        label = int(fields[-1])
        fields = fields[:-1]
    else:
        raise ValueError(
            f"expected {2 * n} fields (plus optional label), got {len(fields)}"
        )
    return Behaviour.from_flat([float(x) for x in fields]), label

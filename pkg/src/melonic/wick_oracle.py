"""Exact Gaussian averages of hourglass diagrams by exhaustive Wick enumeration.

``x^(p) . x^(p')`` is drawn as two rooted trees of black vertices (copies of
the tensor) joined at the root edge; tree leaves end on stars (copies of the
unit start vector).  Averaging over the Gaussian tensor pairs the black
vertices (a perfect matching) and, for every pair, wires the ``q+1`` slots of
one vertex to the other by a permutation.  The wired lines either run between
two stars (chains, weight 1) or close up (faces, weight ``N`` each).  Summing
``N^faces / ((q+1)!)^V`` over all matchings and wirings gives the exact
average as a polynomial in ``N`` with rational coefficients.

Endpoint numbering: slot ``a`` of vertex ``v`` is ``v*(q+1) + a`` (slot 0
points toward the root, slots ``1..q`` toward the leaves); star ``s`` is
``n_vertices*(q+1) + s``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import permutations, product
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import CapacityError, InputError, StructuralError
from .power_iter import q_bracket

__all__ = [
    "NPolynomial",
    "HourglassDiagram",
    "FaceChainCensus",
    "DominanceReport",
    "build_hourglass",
    "disjoint_union",
    "enumerate_pairings",
    "count_pairings",
    "assignments",
    "census_of_assignment",
    "loop_counts",
    "evaluate_pairing",
    "expected_norm_polynomial",
    "expected_norm_squared_polynomial",
    "variance_polynomial",
    "is_dominant_pairing",
    "dominance_report",
    "dominant_count",
    "leading_term",
    "census_summary",
    "SUPPORTED_NORM",
    "SUPPORTED_NORM_SQUARED",
]

MAX_VERTICES = 10
# matchings x wirings evaluated per call without opting in
WORK_LIMIT = 2_000_000
LARGE_WORK_LIMIT = 50_000_000

SUPPORTED_NORM = ((2, 1), (3, 1), (4, 1), (2, 2))
SUPPORTED_NORM_SQUARED = ((2, 1), (3, 1))


# ---------------------------------------------------------------------------
# exact polynomials


class NPolynomial:
    """Polynomial in ``N`` with exact rational coefficients; zeros are dropped."""

    __slots__ = ("_c",)

    def __init__(self, coefficients: Mapping[int, Fraction | int] | None = None):
        c = {}
        for k, v in (coefficients or {}).items():
            if int(k) != k or k < 0:
                raise InputError(f"exponent {k!r} is not a nonnegative integer")
            v = Fraction(v)
            if v:
                c[int(k)] = c.get(int(k), Fraction(0)) + v
        self._c = {k: v for k, v in c.items() if v}

    @property
    def coefficients(self) -> dict[int, Fraction]:
        return dict(sorted(self._c.items()))

    def __getitem__(self, k: int) -> Fraction:
        return self._c.get(k, Fraction(0))

    def __bool__(self):
        return bool(self._c)

    def __eq__(self, other):
        if isinstance(other, (int, Fraction)):
            other = NPolynomial({0: other})
        if not isinstance(other, NPolynomial):
            return NotImplemented
        return self._c == other._c

    def __hash__(self):
        return hash(frozenset(self._c.items()))

    def __add__(self, other: NPolynomial) -> NPolynomial:
        out = dict(self._c)
        for k, v in other._c.items():
            out[k] = out.get(k, Fraction(0)) + v
        return NPolynomial(out)

    def __neg__(self) -> NPolynomial:
        return NPolynomial({k: -v for k, v in self._c.items()})

    def __sub__(self, other: NPolynomial) -> NPolynomial:
        return self + (-other)

    def __mul__(self, other: NPolynomial | Fraction | int) -> NPolynomial:
        if not isinstance(other, NPolynomial):
            return NPolynomial({k: v * Fraction(other) for k, v in self._c.items()})
        out: dict[int, Fraction] = {}
        for i, a in self._c.items():
            for j, b in other._c.items():
                out[i + j] = out.get(i + j, Fraction(0)) + a * b
        return NPolynomial(out)

    __rmul__ = __mul__

    def __call__(self, n: int | Fraction) -> Fraction:
        return sum((v * Fraction(n) ** k for k, v in self._c.items()), Fraction(0))

    @property
    def degree(self) -> int:
        if not self._c:
            raise InputError("zero polynomial has no degree")
        return max(self._c)

    def __repr__(self):
        if not self._c:
            return "NPolynomial(0)"
        terms = " + ".join(f"({v})*N^{k}" for k, v in sorted(self._c.items(), reverse=True))
        return f"NPolynomial({terms})"

    def to_json(self, q: int, p: int) -> dict:
        return {
            "q": q,
            "p": p,
            "coefficients": [
                {"power": k, "num": str(v.numerator), "den": str(v.denominator)}
                for k, v in sorted(self._c.items(), reverse=True)
            ],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> NPolynomial:
        return cls({int(t["power"]): Fraction(int(t["num"]), int(t["den"])) for t in doc["coefficients"]})


def leading_term(poly: NPolynomial) -> tuple[int, Fraction]:
    """Highest power of ``N`` and its coefficient."""
    if not poly:
        raise InputError("zero polynomial has no leading term")
    d = poly.degree
    return d, poly[d]


# ---------------------------------------------------------------------------
# diagrams


@dataclass(frozen=True)
class HourglassDiagram:
    """One or more hourglasses as black vertices, stars and edges.

    ``levels[v]`` is the branching level (positive on the top tree, negative
    on the bottom one), ``parents[v]`` the parent vertex or -1 for a root,
    ``hourglass[v]`` the connected piece the vertex belongs to.
    """

    q: int
    p_top: int
    p_bottom: int
    levels: tuple[int, ...]
    parents: tuple[int, ...]
    hourglass: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    n_stars: int
    n_hourglasses: int = 1

    @property
    def n_vertices(self) -> int:
        return len(self.levels)

    @property
    def n_slots(self) -> int:
        return self.n_vertices * (self.q + 1)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def balanced(self) -> bool:
        return self.p_top == self.p_bottom

    def is_star(self, endpoint: int) -> bool:
        return endpoint >= self.n_slots

    def edge_partner(self) -> np.ndarray:
        partner = np.full(self.n_slots + self.n_stars, -1, dtype=np.int64)
        for a, b in self.edges:
            partner[a], partner[b] = b, a
        return partner


def _grow_tree(q, depth, sign, levels, parents, edges, star_counter):
    """Append a rooted tree of ``depth`` levels; return its root vertex."""
    root = len(levels)
    levels.append(sign)
    parents.append(-1)
    frontier = [root]
    for r in range(1, depth):
        nxt = []
        for v in frontier:
            for c in range(1, q + 1):
                w = len(levels)
                levels.append(sign * (r + 1))
                parents.append(v)
                nxt.append((w, v, c))
        frontier = [w for w, _, _ in nxt]
        edges.extend(("slot", v, c, "slot", w, 0) for w, v, c in nxt)
    for v in frontier:
        for c in range(1, q + 1):
            edges.append(("slot", v, c, "star", star_counter[0], 0))
            star_counter[0] += 1
    return root


def build_hourglass(q: int, p_top: int, p_bottom: int, *, max_vertices: int = MAX_VERTICES) -> HourglassDiagram:
    """The ``(p_top, p_bottom)``-hourglass: two regular q-ary trees joined at the root.

    With ``p_bottom = 0`` the root leg of the top tree ends on a star.
    """
    if q < 1 or p_top < 0 or p_bottom < 0 or (p_top == 0 and p_bottom == 0):
        raise InputError(f"invalid hourglass (q={q}, p_top={p_top}, p_bottom={p_bottom})")
    if p_top < p_bottom:
        raise InputError("hourglasses are built with p_top >= p_bottom")
    n_vert = q_bracket(p_top, q) + q_bracket(p_bottom, q)
    if n_vert > max_vertices:
        raise CapacityError(f"hourglass ({p_top},{p_bottom}) at q={q} has {n_vert} vertices > limit {max_vertices}")
    levels: list[int] = []
    parents: list[int] = []
    raw: list[tuple] = []
    stars = [0]
    top = _grow_tree(q, p_top, +1, levels, parents, raw, stars)
    if p_bottom > 0:
        bottom = _grow_tree(q, p_bottom, -1, levels, parents, raw, stars)
        raw.append(("slot", top, 0, "slot", bottom, 0))
    else:
        raw.append(("slot", top, 0, "star", stars[0], 0))
        stars[0] += 1
    n_slots = len(levels) * (q + 1)

    def endpoint(kind, a, b):
        return a * (q + 1) + b if kind == "slot" else n_slots + a

    edges = tuple((endpoint(*e[:3]), endpoint(*e[3:])) for e in raw)
    return HourglassDiagram(
        q=q,
        p_top=p_top,
        p_bottom=p_bottom,
        levels=tuple(levels),
        parents=tuple(parents),
        hourglass=(0,) * len(levels),
        edges=edges,
        n_stars=stars[0],
    )


def disjoint_union(*diagrams: HourglassDiagram, max_vertices: int = MAX_VERTICES) -> HourglassDiagram:
    """Side-by-side copy of several diagrams sharing one ``q``."""
    if not diagrams:
        raise InputError("disjoint_union needs at least one diagram")
    q = diagrams[0].q
    if any(d.q != q for d in diagrams):
        raise InputError("diagrams have different q")
    n_vert = sum(d.n_vertices for d in diagrams)
    if n_vert > max_vertices:
        raise CapacityError(f"union has {n_vert} vertices > limit {max_vertices}")
    n_slots = n_vert * (q + 1)
    levels, parents, piece, edges = [], [], [], []
    v_off = s_off = h_off = 0
    for d in diagrams:
        levels += d.levels
        parents += [p + v_off if p >= 0 else -1 for p in d.parents]
        piece += [h + h_off for h in d.hourglass]

        def move(e, d=d, v_off=v_off, s_off=s_off):
            if d.is_star(e):
                return n_slots + s_off + (e - d.n_slots)
            return e + v_off * (q + 1)

        edges += [(move(a), move(b)) for a, b in d.edges]
        v_off += d.n_vertices
        s_off += d.n_stars
        h_off += d.n_hourglasses
    return HourglassDiagram(
        q=q,
        p_top=diagrams[0].p_top,
        p_bottom=diagrams[0].p_bottom,
        levels=tuple(levels),
        parents=tuple(parents),
        hourglass=tuple(piece),
        edges=tuple(edges),
        n_stars=s_off,
        n_hourglasses=h_off,
    )


# ---------------------------------------------------------------------------
# matchings and wirings

Matching = tuple[tuple[int, int], ...]


def _pairings(items: list[int]) -> Iterator[list[tuple[int, int]]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for i, other in enumerate(rest):
        for tail in _pairings(rest[:i] + rest[i + 1:]):
            yield [(first, other)] + tail


def enumerate_pairings(diagram: HourglassDiagram) -> Iterator[Matching]:
    """All perfect matchings of the black vertices, smallest partner first."""
    if diagram.n_vertices % 2:
        raise StructuralError(f"{diagram.n_vertices} black vertices cannot be perfectly matched")
    for m in _pairings(list(range(diagram.n_vertices))):
        yield tuple(m)


def count_pairings(n_vertices: int) -> int:
    """``(n-1)!!`` perfect matchings of ``n`` points."""
    if n_vertices % 2:
        return 0
    return math.prod(range(n_vertices - 1, 0, -2))


def assignments(q: int, n_pairs: int) -> Iterator[tuple[tuple[int, ...], ...]]:
    """Every choice of one slot permutation per pair, last pair varying fastest."""
    return product(list(permutations(range(q + 1))), repeat=n_pairs)


def _check_matching(diagram: HourglassDiagram, matching: Sequence[tuple[int, int]]) -> Matching:
    m = tuple((int(a), int(b)) for a, b in matching)
    seen = sorted(v for pair in m for v in pair)
    if seen != list(range(diagram.n_vertices)):
        raise StructuralError(f"{m} is not a perfect matching of {diagram.n_vertices} vertices")
    return m


def _propagator_partner(diagram, matching, assignment) -> np.ndarray:
    q1 = diagram.q + 1
    partner = np.full(diagram.n_slots, -1, dtype=np.int64)
    for (a, b), sigma in zip(matching, assignment):
        for s in range(q1):
            partner[a * q1 + s] = b * q1 + sigma[s]
            partner[b * q1 + sigma[s]] = a * q1 + s
    return partner


# ---------------------------------------------------------------------------
# census of a single wiring


@dataclass(frozen=True)
class FaceChainCensus:
    faces_by_perimeter: dict[int, int]
    chains_by_perimeter: dict[int, int]
    loop_count: int
    V: int
    E: int
    L: int

    @property
    def n_chains(self) -> int:
        return sum(self.chains_by_perimeter.values())

    def edge_total(self) -> int:
        """``sum l F_l + sum (l+1) C_l``; equals the number of edges."""
        return sum(l * f for l, f in self.faces_by_perimeter.items()) + sum(
            (l + 1) * c for l, c in self.chains_by_perimeter.items()
        )

    @property
    def saturates_face_bound(self) -> bool:
        return self.loop_count == self.V


def census_of_assignment(
    diagram: HourglassDiagram, matching: Sequence[tuple[int, int]], assignment: Sequence[Sequence[int]]
) -> FaceChainCensus:
    """Resolve one wiring into faces and chains and count them by perimeter.

    The perimeter is the number of doubled vertices a line passes through,
    so a face of perimeter ``l`` has ``l`` edges and a chain ``l+1``.
    """
    matching = _check_matching(diagram, matching)
    if len(assignment) != len(matching):
        raise InputError("one permutation per matched pair is required")
    edge = diagram.edge_partner()
    prop = _propagator_partner(diagram, matching, assignment)
    n_slots = diagram.n_slots
    seen = np.zeros(len(edge), dtype=bool)
    faces: dict[int, int] = {}
    chains: dict[int, int] = {}

    for star in range(n_slots, n_slots + diagram.n_stars):
        if seen[star]:
            continue
        cur, jumps = star, 0
        seen[cur] = True
        while True:
            nxt = edge[cur]
            seen[nxt] = True
            if nxt >= n_slots:
                break
            cur = prop[nxt]
            seen[cur] = True
            jumps += 1
        chains[jumps] = chains.get(jumps, 0) + 1

    for start in range(n_slots):
        if seen[start]:
            continue
        cur, jumps = start, 0
        while True:
            seen[cur] = True
            nxt = edge[cur]
            seen[nxt] = True
            cur = prop[nxt]
            jumps += 1
            if cur == start:
                break
        faces[jumps] = faces.get(jumps, 0) + 1

    return FaceChainCensus(
        faces_by_perimeter=dict(sorted(faces.items())),
        chains_by_perimeter=dict(sorted(chains.items())),
        loop_count=sum(faces.values()),
        V=len(matching),
        E=diagram.n_edges,
        L=diagram.n_stars // 2,
    )


# ---------------------------------------------------------------------------
# vectorized face counting over all wirings of a matching


def _work(diagram: HourglassDiagram, n_matchings: int) -> int:
    return n_matchings * math.factorial(diagram.q + 1) ** (diagram.n_vertices // 2)


def _guard(diagram: HourglassDiagram, n_matchings: int, allow_large: bool) -> None:
    limit = LARGE_WORK_LIMIT if allow_large else WORK_LIMIT
    work = _work(diagram, n_matchings)
    if work > limit:
        hint = "" if allow_large else " (pass allow_large=True to raise the limit)"
        raise CapacityError(f"{work} wirings exceed the limit {limit}{hint}")


def loop_counts(diagram: HourglassDiagram, matching: Sequence[tuple[int, int]], *, chunk: int = 1 << 15) -> np.ndarray:
    """Number of faces for every wiring of ``matching``, in :func:`assignments` order.

    Faces are cycles of ``f = prop o edge`` on slot endpoints, each seen
    once per orientation; lines that reach a star drain into a sink.
    Cycles are found for all wirings at once by pointer doubling.
    """
    matching = _check_matching(diagram, matching)
    q1 = diagram.q + 1
    n_slots = diagram.n_slots
    sink = n_slots
    perms = np.array(list(permutations(range(q1))), dtype=np.int64)
    inv = np.argsort(perms, axis=1)
    n_perm = len(perms)
    n_pairs = len(matching)
    total = n_perm**n_pairs

    edge = diagram.edge_partner()[:n_slots]
    edge_to = np.where(edge < n_slots, edge, sink)
    steps = max(1, int(np.ceil(np.log2(n_slots + 1))) + 1)
    out = np.empty(total, dtype=np.int64)

    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        rows = len(idx)
        prop = np.empty((rows, n_slots + 1), dtype=np.int64)
        prop[:, sink] = sink
        for j, (a, b) in enumerate(matching):
            digit = (idx // n_perm ** (n_pairs - 1 - j)) % n_perm
            prop[:, a * q1: (a + 1) * q1] = b * q1 + perms[digit]
            prop[:, b * q1: (b + 1) * q1] = a * q1 + inv[digit]
        f = np.empty((rows, n_slots + 1), dtype=np.int64)
        f[:, :n_slots] = np.take_along_axis(prop, np.broadcast_to(edge_to, (rows, n_slots)), axis=1)
        f[:, sink] = sink
        label = np.broadcast_to(np.arange(n_slots + 1), (rows, n_slots + 1)).copy()
        g = f
        for _ in range(steps):
            label = np.minimum(label, np.take_along_axis(label, g, axis=1))
            g = np.take_along_axis(g, g, axis=1)
        on_cycle = g[:, :n_slots] != sink
        leaders = on_cycle & (label[:, :n_slots] == np.arange(n_slots))
        out[start: start + rows] = leaders.sum(axis=1) // 2
    return out


def _poly_from_histogram(counts: np.ndarray, q: int, n_pairs: int) -> NPolynomial:
    hist = np.bincount(counts)
    denom = math.factorial(q + 1) ** n_pairs
    return NPolynomial({k: Fraction(int(c), denom) for k, c in enumerate(hist) if c})


def evaluate_pairing(diagram: HourglassDiagram, matching: Sequence[tuple[int, int]]) -> NPolynomial:
    """``sum over wirings of N^faces / ((q+1)!)^V`` for one matching."""
    matching = _check_matching(diagram, matching)
    return _poly_from_histogram(loop_counts(diagram, matching), diagram.q, len(matching))


def _sum_over_matchings(diagram: HourglassDiagram, allow_large: bool) -> NPolynomial:
    _guard(diagram, count_pairings(diagram.n_vertices), allow_large)
    total = NPolynomial()
    for matching in enumerate_pairings(diagram):
        total = total + evaluate_pairing(diagram, matching)
    return total


def expected_norm_polynomial(q: int, p: int, *, allow_large: bool = False) -> NPolynomial:
    """Exact ``<x^(p) . x^(p)>`` over the Gaussian ensemble for a unit start vector."""
    if p < 1:
        raise InputError("p must be at least 1")
    return _sum_over_matchings(build_hourglass(q, p, p), allow_large)


def expected_norm_squared_polynomial(q: int, p: int, *, allow_large: bool = False) -> NPolynomial:
    """Exact ``<(x^(p) . x^(p))^2>``: matchings over two disjoint hourglasses."""
    if p < 1:
        raise InputError("p must be at least 1")
    one = build_hourglass(q, p, p)
    return _sum_over_matchings(disjoint_union(one, one), allow_large)


def variance_polynomial(q: int, p: int, *, allow_large: bool = False) -> NPolynomial:
    mean = expected_norm_polynomial(q, p, allow_large=allow_large)
    return expected_norm_squared_polynomial(q, p, allow_large=allow_large) - mean * mean


# ---------------------------------------------------------------------------
# dominance


def is_dominant_pairing(diagram: HourglassDiagram, matching: Sequence[tuple[int, int]]) -> bool:
    """Level ``r`` pairs with level ``-r``, and children of a pair pair among themselves."""
    if not diagram.balanced or diagram.n_hourglasses != 1 or diagram.p_top == 0:
        raise InputError("dominance rules apply to a single balanced (p,p)-hourglass")
    matching = _check_matching(diagram, matching)
    partner = {}
    for a, b in matching:
        partner[a], partner[b] = b, a
    for a, b in matching:
        if diagram.levels[a] != -diagram.levels[b]:
            return False
        pa, pb = diagram.parents[a], diagram.parents[b]
        if pa >= 0 and partner[pa] != pb:
            return False
    return True


@dataclass(frozen=True)
class DominanceReport:
    """Three ways of counting the leading-order contributions.

    ``rule_matchings`` counts matchings obeying the level rules,
    ``rule_wirings`` the slot wirings those matchings admit that keep every
    line nested (root slot to root slot, children to paired children),
    ``maximal_configurations`` the (matching, wiring) pairs found by brute
    force to reach the face bound ``V``.
    """

    q: int
    p: int
    n_matchings: int
    rule_matchings: int
    rule_wirings: int
    maximal_configurations: int
    maximal_matchings: int
    maximal_outside_rules: int
    predicted_count: int
    leading: tuple[int, Fraction]
    predicted_leading: tuple[int, Fraction]
    dominant: list[Matching] = field(default_factory=list, repr=False)

    @property
    def consistent(self) -> bool:
        return (
            self.maximal_outside_rules == 0
            and self.maximal_configurations == self.predicted_count == self.rule_wirings
            and self.leading == self.predicted_leading
        )


def _nested_wirings(diagram: HourglassDiagram, matching: Matching) -> int:
    """Wirings of a rule-obeying matching that pass every line straight through."""
    q = diagram.q
    total = 1
    for a, _ in matching:
        if abs(diagram.levels[a]) == diagram.p_top:
            total *= math.factorial(q)  # leaf pair: star legs wire freely
    return total


def dominance_report(q: int, p: int, *, allow_large: bool = False) -> DominanceReport:
    diagram = build_hourglass(q, p, p)
    _guard(diagram, count_pairings(diagram.n_vertices), allow_large)
    V = diagram.n_vertices // 2
    total = NPolynomial()
    n_match = rule_m = rule_w = max_conf = max_m = outside = 0
    dominant = []
    for matching in enumerate_pairings(diagram):
        n_match += 1
        counts = loop_counts(diagram, matching)
        total = total + _poly_from_histogram(counts, q, V)
        rules = is_dominant_pairing(diagram, matching)
        if rules:
            rule_m += 1
            rule_w += _nested_wirings(diagram, matching)
            dominant.append(matching)
        hits = int((counts == V).sum())
        if hits:
            max_conf += hits
            max_m += 1
            if not rules:
                outside += hits
    predicted_power = q_bracket(p, q)
    return DominanceReport(
        q=q,
        p=p,
        n_matchings=n_match,
        rule_matchings=rule_m,
        rule_wirings=rule_w,
        maximal_configurations=max_conf,
        maximal_matchings=max_m,
        maximal_outside_rules=outside,
        predicted_count=math.factorial(q) ** predicted_power,
        leading=leading_term(total),
        predicted_leading=(predicted_power, Fraction(1, q + 1) ** predicted_power),
        dominant=dominant,
    )


def dominant_count(q: int, p: int, *, allow_large: bool = False) -> int:
    """Number of (matching, wiring) configurations that reach ``V`` faces."""
    return dominance_report(q, p, allow_large=allow_large).maximal_configurations


# ---------------------------------------------------------------------------
# census over everything


def census_summary(q: int, p: int, *, allow_large: bool = False) -> dict:
    """Walk every wiring of every matching and tally the bound checks."""
    diagram = build_hourglass(q, p, p)
    _guard(diagram, count_pairings(diagram.n_vertices), allow_large)
    L = diagram.n_stars // 2
    V = diagram.n_vertices // 2
    rows = []
    totals = dict(assignments=0, face_bound_violations=0, edge_count_violations=0,
                  chain_count_violations=0, saturating=0, saturating_without_f1=0)
    for mi, matching in enumerate(enumerate_pairings(diagram)):
        max_loops = 0
        sat = 0
        for assignment in assignments(q, V):
            c = census_of_assignment(diagram, matching, assignment)
            totals["assignments"] += 1
            totals["face_bound_violations"] += c.loop_count > V
            totals["edge_count_violations"] += c.edge_total() != diagram.n_edges
            totals["chain_count_violations"] += c.n_chains != L
            if c.saturates_face_bound:
                sat += 1
                totals["saturating_without_f1"] += c.faces_by_perimeter.get(1, 0) < 1
            max_loops = max(max_loops, c.loop_count)
        totals["saturating"] += sat
        rows.append({
            "matching": [list(pair) for pair in matching],
            "max_loops": max_loops,
            "saturating_assignments": sat,
            "dominant_rules": is_dominant_pairing(diagram, matching),
        })
    return {"q": q, "p": p, "V": V, "E": diagram.n_edges, "L": L, "matchings": rows, **totals}

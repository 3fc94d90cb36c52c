"""Informative families of candidate prediction sets and their weights.

A label set is a strictly increasing tuple of 1-based class indices.  Two
family shapes are supported: cardinality-based families (all subsets of the
non-excluded classes whose size lies in a range), kept implicit, and explicit
lists of sets.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Iterator, Mapping

from .errors import EmptyFamily, InvalidFamilySpec, InvalidWeight, NotInFamily

LabelSet = tuple  # tuple[int, ...], strictly increasing, 1-based

# families larger than this are never materialized
MAX_ENUMERATE = 1 << 16


def label_set(members: Iterable[int], K: int | None = None) -> tuple:
    """Validate and canonicalize a collection of class indices."""
    out = tuple(sorted(int(k) for k in members))
    if not out:
        raise InvalidFamilySpec("label sets must be nonempty")
    if len(set(out)) != len(out):
        raise InvalidFamilySpec(f"duplicate class in {list(members)}")
    if out[0] < 1 or (K is not None and out[-1] > K):
        raise InvalidFamilySpec(f"class index out of range in {list(out)}")
    return out


@dataclass(frozen=True)
class Certificate:
    """Outcome of the static nestedness check."""

    guaranteed: bool
    note: str = ""

    def __bool__(self) -> bool:
        return self.guaranteed


@dataclass(frozen=True)
class InformativeFamily:
    """Finite collection of informative sets with a positive weight function.

    Parameters
    ----------
    K : int
        Number of classes.
    kind : {"cardinality", "explicit"}
    excluded : frozenset of int
        Classes that may not appear (cardinality families only).
    min_card, max_card : int
        Allowed set sizes (cardinality families only).
    sets : tuple of LabelSet
        Sorted, deduplicated members (explicit families only).
    table : mapping or None
        Explicit weights for some sets; other members get ``1/|C|``.
    """

    K: int
    kind: str
    excluded: frozenset = frozenset()
    min_card: int = 1
    max_card: int = 1
    sets: tuple = ()
    table: Mapping | None = field(default=None, compare=False)

    # -- structure --------------------------------------------------------
    @property
    def allowed_classes(self) -> tuple:
        return tuple(k for k in range(1, self.K + 1) if k not in self.excluded)

    @property
    def sizes(self) -> tuple:
        """Allowed cardinalities (cardinality families only)."""
        top = min(self.max_card, len(self.allowed_classes))
        return tuple(range(self.min_card, top + 1))

    @property
    def inverse_cardinality(self) -> bool:
        return not self.table

    def size(self) -> int:
        if self.kind == "explicit":
            return len(self.sets)
        n = len(self.allowed_classes)
        return sum(math.comb(n, j) for j in self.sizes)

    def members(self) -> Iterator[tuple]:
        """Iterate over all member sets in lexicographic order."""
        if self.kind == "explicit":
            yield from self.sets
            return
        if self.size() > MAX_ENUMERATE:
            raise InvalidFamilySpec("family too large to enumerate")
        pool = self.allowed_classes
        out = [c for j in self.sizes for c in combinations(pool, j)]
        yield from sorted(out)

    def __contains__(self, C) -> bool:
        C = tuple(C)
        if self.kind == "explicit":
            return C in self._set_index
        if not C or any(k in self.excluded or not 1 <= k <= self.K for k in C):
            return False
        if list(C) != sorted(set(C)):
            return False
        return self.min_card <= len(C) <= self.max_card

    @property
    def _set_index(self) -> dict:
        # cached lookup for explicit families
        cache = self.__dict__.get("_index_cache")
        if cache is None:
            cache = {c: i for i, c in enumerate(self.sets)}
            object.__setattr__(self, "_index_cache", cache)
        return cache

    def weight(self, C) -> float:
        """Weight without the membership check."""
        if self.table:
            w = self.table.get(tuple(C))
            if w is not None:
                return w
        return 1.0 / len(C)

    def to_json(self) -> dict:
        if self.kind == "explicit":
            out = {"kind": "explicit", "sets": [list(c) for c in self.sets]}
        else:
            out = {
                "kind": "cardinality",
                "excluded": sorted(self.excluded),
                "min_card": self.min_card,
                "max_card": self.max_card,
            }
        if self.table:
            out["weights"] = {json.dumps(list(c)): w for c, w in self.table.items()}
        return out


def _check_table(table, K) -> dict | None:
    if not table:
        return None
    out = {}
    for key, w in table.items():
        C = label_set(json.loads(key) if isinstance(key, str) else key, K)
        w = float(w)
        if not (w > 0 and math.isfinite(w)):
            raise InvalidWeight(f"weight for {list(C)} must be positive and finite, got {w}")
        out[C] = w
    return out


def cardinality_family(K, excluded=(), min_card=1, max_card=None, weights=None):
    """Build a cardinality-based family.

    Examples
    --------
    >>> fam = cardinality_family(3, min_card=1, max_card=2)
    >>> fam.size()
    6
    """
    if K < 2:
        raise InvalidFamilySpec("K must be at least 2")
    excluded = frozenset(int(k) for k in excluded)
    if any(not 1 <= k <= K for k in excluded):
        raise InvalidFamilySpec("excluded class out of range")
    if len(excluded) >= K:
        raise InvalidFamilySpec("all classes excluded")
    max_card = K if max_card is None else int(max_card)
    min_card = int(min_card)
    if not 1 <= min_card <= max_card <= K:
        raise InvalidFamilySpec(f"need 1 <= min_card <= max_card <= K, got {min_card}, {max_card}")
    fam = InformativeFamily(
        K=K, kind="cardinality", excluded=excluded, min_card=min_card,
        max_card=max_card, table=_check_table(weights, K),
    )
    if not fam.sizes:
        raise EmptyFamily("no set satisfies the cardinality bounds")
    if fam.table and any(C not in fam for C in fam.table):
        raise InvalidWeight("weight table lists a set outside the family")
    return fam


def explicit_family(K, sets, weights=None):
    """Build a family from an explicit list of sets (deduplicated, sorted)."""
    if K < 2:
        raise InvalidFamilySpec("K must be at least 2")
    members = tuple(sorted({label_set(c, K) for c in sets}))
    if not members:
        raise EmptyFamily("explicit family has no sets")
    fam = InformativeFamily(K=K, kind="explicit", sets=members, table=_check_table(weights, K))
    if fam.table and any(C not in fam for C in fam.table):
        raise InvalidWeight("weight table lists a set outside the family")
    return fam


def singleton_family(K) -> InformativeFamily:
    return explicit_family(K, [(k,) for k in range(1, K + 1)])


def build_family(spec, K: int) -> InformativeFamily:
    """Build a family from a JSON-like mapping or a shorthand string.

    Shorthands are ``"nontrivial"`` (sizes 1..K-1), ``"exclude=k"`` (no class
    ``k``, sizes 1..K-1) and ``"singletons"``.
    """
    if isinstance(spec, InformativeFamily):
        return spec
    if isinstance(spec, str):
        s = spec.strip()
        if s == "nontrivial":
            return cardinality_family(K, (), 1, K - 1)
        if s.startswith("exclude="):
            try:
                k = int(s.split("=", 1)[1])
            except ValueError as exc:
                raise InvalidFamilySpec(f"bad shorthand {spec!r}") from exc
            return cardinality_family(K, (k,), 1, K - 1)
        if s == "singletons":
            return singleton_family(K)
        raise InvalidFamilySpec(f"unknown family shorthand {spec!r}")
    kind = spec.get("kind")
    if kind == "cardinality":
        return cardinality_family(
            K, spec.get("excluded", ()), spec.get("min_card", 1),
            spec.get("max_card", K), spec.get("weights"),
        )
    if kind == "explicit":
        if "sets" not in spec:
            raise InvalidFamilySpec("explicit family needs 'sets'")
        return explicit_family(K, spec["sets"], spec.get("weights"))
    raise InvalidFamilySpec(f"unknown family kind {kind!r}")


def weight_of(family: InformativeFamily, C) -> float:
    """Return ``w(C)``; raises NotInFamily for non-members."""
    C = tuple(C)
    if C not in family:
        raise NotInFamily(f"{list(C)} is not in the family")
    return family.weight(C)


def nestedness_certificate(family: InformativeFamily) -> Certificate:
    """Static sufficient check for nested selected sets.

    Cardinality-based families whose weight depends on the size only have
    top-j sets as the only envelope candidates, so the selected sets are nested
    for every row.  Anything else must be checked row by row.
    """
    if family.kind == "cardinality" and family.inverse_cardinality:
        return Certificate(True, "cardinality-based family with w = 1/|C|")
    return Certificate(False, "nestedness must be verified per row (policy.verify_nestedness)")

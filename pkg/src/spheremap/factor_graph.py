"""Discrete factor graphs with log-potential tables.

Holds the data model shared by the whole package: variables with state
counts and unary log-potential vectors, factors with joint log-potential
tables, the UAI MARKOV text format, and the overcomplete encoding in which
a labeling becomes one-hot score vectors linked by 0/1 marginalization maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

# Table entries of 0 would give log-potential -inf; clamp so all downstream
# arithmetic stays finite and the factor subproblems stay bounded.
LOG_TABLE_FLOOR = math.log(1e-10)

Labeling = Sequence[int]


class UaiParseError(ValueError):
    """Raised when a UAI MARKOV token stream violates the format."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ConsistencyMap:
    """Marginalization map between one factor and one of its variables.

    ``states[t]`` is the state the variable takes in factor configuration
    ``t``.  Viewed as a 0/1 matrix (row = variable state, column = factor
    configuration) every column has exactly one 1, so the map is total, and
    each row holds ``len(states) / num_states`` ones.
    """

    states: np.ndarray  # int64, length = number of factor configurations
    num_states: int

    def marginalize(self, mu_factor: np.ndarray) -> np.ndarray:
        """Apply the map: sum factor scores onto the variable's states."""
        return np.bincount(self.states, weights=mu_factor, minlength=self.num_states)

    def lift(self, vec: np.ndarray) -> np.ndarray:
        """Apply the transpose: spread a per-state vector over configurations."""
        return vec[self.states]


def _consistency_states(scope_cards: Sequence[int], pos: int) -> np.ndarray:
    """State of scope variable ``pos`` in every configuration (last index fastest)."""
    stride = 1
    for c in scope_cards[pos + 1 :]:
        stride *= c
    total = 1
    for c in scope_cards:
        total *= c
    return (np.arange(total, dtype=np.int64) // stride) % scope_cards[pos]


@dataclass(frozen=True)
class FactorSpec:
    """One factor: an ordered variable scope and its log-potential table.

    The table is indexed with the *last* scope variable varying fastest
    (see :func:`factor_config_index`).
    """

    scope: tuple[int, ...]
    logpot_table: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "scope", tuple(int(v) for v in self.scope))
        object.__setattr__(self, "logpot_table", _readonly(np.asarray(self.logpot_table)))
        if len(self.scope) == 0:
            raise ValueError("factor scope must not be empty")
        if len(set(self.scope)) != len(self.scope):
            raise ValueError(f"factor scope {self.scope} has duplicate variables")
        if not np.all(np.isfinite(self.logpot_table)):
            raise ValueError("factor table has non-finite entries")


@dataclass(frozen=True)
class FactorGraph:
    """Immutable factor graph over discrete variables.

    ``cardinalities[i]`` is the number of states of variable ``i``,
    ``unary_logpot[i]`` its log-potential vector (zeros when the model gives
    none), and ``factors`` the non-unary factors.  Instances are safe to
    share across concurrent workers.
    """

    cardinalities: tuple[int, ...]
    unary_logpot: tuple[np.ndarray, ...]
    factors: tuple[FactorSpec, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "cardinalities", tuple(int(c) for c in self.cardinalities))
        object.__setattr__(
            self, "unary_logpot", tuple(_readonly(np.asarray(v)) for v in self.unary_logpot)
        )
        object.__setattr__(self, "factors", tuple(self.factors))
        n = len(self.cardinalities)
        if any(c < 1 for c in self.cardinalities):
            raise ValueError("every variable needs at least one state")
        if len(self.unary_logpot) != n:
            raise ValueError("need one unary log-potential vector per variable")
        for i, vec in enumerate(self.unary_logpot):
            if vec.shape != (self.cardinalities[i],):
                raise ValueError(f"unary vector of variable {i} has wrong length")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"unary vector of variable {i} has non-finite entries")
        for k, fac in enumerate(self.factors):
            if any(not 0 <= v < n for v in fac.scope):
                raise ValueError(f"factor {k} scope {fac.scope} out of range")
            size = 1
            for v in fac.scope:
                size *= self.cardinalities[v]
            if fac.logpot_table.shape != (size,):
                raise ValueError(
                    f"factor {k} table has {fac.logpot_table.size} entries, expected {size}"
                )

    @property
    def num_variables(self) -> int:
        return len(self.cardinalities)

    @cached_property
    def consistency_maps(self) -> tuple[tuple[ConsistencyMap, ...], ...]:
        """Per factor, per scope position, the marginalization map."""
        maps = []
        for fac in self.factors:
            cards = [self.cardinalities[v] for v in fac.scope]
            maps.append(
                tuple(
                    ConsistencyMap(_consistency_states(cards, p), cards[p])
                    for p in range(len(cards))
                )
            )
        return tuple(maps)

    @cached_property
    def variable_neighbors(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """For each variable, the ``(factor_index, scope_position)`` pairs touching it."""
        nbrs: list[list[tuple[int, int]]] = [[] for _ in range(self.num_variables)]
        for a, fac in enumerate(self.factors):
            for p, v in enumerate(fac.scope):
                nbrs[v].append((a, p))
        return tuple(tuple(lst) for lst in nbrs)


@dataclass
class PrimalState:
    """Overcomplete marginal vectors plus the sphere copy of the variable block.

    ``mu_vars[i]`` scores the states of variable ``i``, ``mu_factors[a]`` the
    configurations of factor ``a``, and ``upsilon[i]`` is the extra copy of
    ``mu_vars[i]`` whose concatenation is constrained to the sphere.
    """

    mu_vars: list[np.ndarray]
    mu_factors: list[np.ndarray]
    upsilon: list[np.ndarray]

    def copy(self) -> "PrimalState":
        return PrimalState(
            [v.copy() for v in self.mu_vars],
            [v.copy() for v in self.mu_factors],
            [v.copy() for v in self.upsilon],
        )


def factor_config_index(scope_states: Sequence[int], scope_cards: Sequence[int]) -> int:
    """Mixed-radix configuration index with the last variable varying fastest."""
    if len(scope_states) != len(scope_cards):
        raise ValueError("state and cardinality lists differ in length")
    t = 0
    for s, c in zip(scope_states, scope_cards):
        s = int(s)
        if not 0 <= s < c:
            raise ValueError(f"state {s} out of range for cardinality {c}")
        t = t * c + s
    return t


def factor_config_states(index: int, scope_cards: Sequence[int]) -> tuple[int, ...]:
    """Inverse of :func:`factor_config_index`."""
    total = 1
    for c in scope_cards:
        total *= c
    if not 0 <= index < total:
        raise ValueError(f"configuration index {index} out of range [0, {total})")
    out = []
    for c in reversed(scope_cards):
        out.append(index % c)
        index //= c
    return tuple(reversed(out))


def _check_labeling(graph: FactorGraph, labeling: Labeling) -> list[int]:
    states = [int(s) for s in labeling]
    if len(states) != graph.num_variables:
        raise ValueError(
            f"labeling has {len(states)} entries, graph has {graph.num_variables} variables"
        )
    for i, s in enumerate(states):
        if not 0 <= s < graph.cardinalities[i]:
            raise ValueError(f"state {s} of variable {i} out of range")
    return states


def evaluate_logpot(graph: FactorGraph, labeling: Labeling) -> float:
    """Total log-potential of a labeling: unary terms plus factor terms."""
    states = _check_labeling(graph, labeling)
    total = 0.0
    for i, s in enumerate(states):
        total += float(graph.unary_logpot[i][s])
    for fac in graph.factors:
        cards = [graph.cardinalities[v] for v in fac.scope]
        t = factor_config_index([states[v] for v in fac.scope], cards)
        total += float(fac.logpot_table[t])
    return total


def encode_labeling(graph: FactorGraph, labeling: Labeling) -> PrimalState:
    """One-hot overcomplete encoding of an integer labeling.

    The result lies on every constraint set at once: each factor vector on
    the probability simplex, each marginalization map consistent, and the
    concatenated variable block exactly on the sphere.
    """
    states = _check_labeling(graph, labeling)
    mu_vars = []
    for i, s in enumerate(states):
        v = np.zeros(graph.cardinalities[i])
        v[s] = 1.0
        mu_vars.append(v)
    mu_factors = []
    for fac in graph.factors:
        cards = [graph.cardinalities[v] for v in fac.scope]
        t = factor_config_index([states[v] for v in fac.scope], cards)
        v = np.zeros(fac.logpot_table.size)
        v[t] = 1.0
        mu_factors.append(v)
    return PrimalState(mu_vars, mu_factors, [v.copy() for v in mu_vars])


# ---------------------------------------------------------------------------
# UAI MARKOV text format
# ---------------------------------------------------------------------------


def _tokens(text: str) -> Iterator[tuple[int, str]]:
    for pos, tok in enumerate(text.split(), start=1):
        yield pos, tok


class _TokenReader:
    def __init__(self, text: str):
        self._it = _tokens(text)
        self.last_pos = 0

    def next(self, what: str) -> tuple[int, str]:
        try:
            pos, tok = next(self._it)
        except StopIteration:
            raise UaiParseError(
                f"unexpected end of input after token {self.last_pos}: expected {what}"
            ) from None
        self.last_pos = pos
        return pos, tok

    def next_int(self, what: str) -> int:
        pos, tok = self.next(what)
        try:
            return int(tok)
        except ValueError:
            raise UaiParseError(f"token {pos}: expected integer {what}, got {tok!r}") from None

    def next_float(self, what: str) -> tuple[int, float]:
        pos, tok = self.next(what)
        try:
            return pos, float(tok)
        except ValueError:
            raise UaiParseError(f"token {pos}: expected number {what}, got {tok!r}") from None

    def expect_end(self) -> None:
        try:
            pos, tok = next(self._it)
        except StopIteration:
            return
        raise UaiParseError(f"token {pos}: trailing content {tok!r} after final factor table")


def parse_uai(
    text: str,
    *,
    tables_are_log: bool = False,
    clamp_floor: float = LOG_TABLE_FLOOR,
) -> FactorGraph:
    """Parse UAI MARKOV text into a :class:`FactorGraph`.

    Table entries are raw non-negative function values and become
    log-potentials ``max(ln v, clamp_floor)``; with ``tables_are_log`` they
    are taken verbatim (and must be finite).  Factor tables are ordered with
    the last scope variable varying fastest.  Scope-1 factors are folded
    into the unary vectors (summed when a variable has several); variables
    not covered by any factor keep a zero unary vector.
    """
    rd = _TokenReader(text)
    pos, preamble = rd.next("the MARKOV preamble")
    if preamble != "MARKOV":
        raise UaiParseError(f"token {pos}: expected MARKOV preamble, got {preamble!r}")
    num_vars = rd.next_int("the variable count")
    if num_vars < 0:
        raise UaiParseError(f"token {rd.last_pos}: negative variable count {num_vars}")
    cards = []
    for i in range(num_vars):
        c = rd.next_int(f"cardinality of variable {i}")
        if c < 1:
            raise UaiParseError(f"token {rd.last_pos}: cardinality {c} of variable {i} is < 1")
        cards.append(c)
    num_factors = rd.next_int("the factor count")
    if num_factors < 0:
        raise UaiParseError(f"token {rd.last_pos}: negative factor count {num_factors}")

    scopes: list[list[int]] = []
    for k in range(num_factors):
        size = rd.next_int(f"scope size of factor {k}")
        if size < 1:
            raise UaiParseError(f"token {rd.last_pos}: factor {k} scope size {size} is < 1")
        scope = []
        for _ in range(size):
            v = rd.next_int(f"scope entry of factor {k}")
            if not 0 <= v < num_vars:
                raise UaiParseError(
                    f"token {rd.last_pos}: variable index {v} of factor {k} out of range"
                )
            if v in scope:
                raise UaiParseError(
                    f"token {rd.last_pos}: duplicate variable {v} in scope of factor {k}"
                )
            scope.append(v)
        scopes.append(scope)

    unary = [np.zeros(c) for c in cards]
    factors = []
    for k, scope in enumerate(scopes):
        expected = 1
        for v in scope:
            expected *= cards[v]
        size = rd.next_int(f"table size of factor {k}")
        if size != expected:
            raise UaiParseError(
                f"token {rd.last_pos}: factor {k} table size {size}, expected {expected}"
            )
        table = np.empty(size)
        for t in range(size):
            pos, val = rd.next_float(f"table entry of factor {k}")
            if not math.isfinite(val):
                raise UaiParseError(f"token {pos}: non-finite table entry of factor {k}")
            if tables_are_log:
                table[t] = val
            else:
                if val < 0:
                    raise UaiParseError(f"token {pos}: negative table entry of factor {k}")
                table[t] = clamp_floor if val == 0.0 else max(math.log(val), clamp_floor)
        if len(scope) == 1:
            unary[scope[0]] = unary[scope[0]] + table
        else:
            factors.append(FactorSpec(tuple(scope), table))
    rd.expect_end()
    return FactorGraph(tuple(cards), tuple(unary), tuple(factors))


def serialize_uai(graph: FactorGraph) -> str:
    """Emit UAI MARKOV text whose re-parse reproduces the graph.

    Unary vectors are re-emitted as scope-1 factors, table values as
    ``exp(logpot)`` (so log-potential magnitudes must stay within the
    float64 exp range).  Round-tripping preserves labeling log-potentials
    to well under 1e-9.
    """

    def fmt(x: float) -> str:
        return format(x, ".17g")

    lines = ["MARKOV", str(graph.num_variables)]
    lines.append(" ".join(str(c) for c in graph.cardinalities))
    lines.append(str(graph.num_variables + len(graph.factors)))
    for i in range(graph.num_variables):
        lines.append(f"1 {i}")
    for fac in graph.factors:
        lines.append(f"{len(fac.scope)} " + " ".join(str(v) for v in fac.scope))
    for i in range(graph.num_variables):
        vec = graph.unary_logpot[i]
        lines.append("")
        lines.append(str(vec.size))
        lines.append(" ".join(fmt(math.exp(x)) for x in vec))
    for fac in graph.factors:
        lines.append("")
        lines.append(str(fac.logpot_table.size))
        lines.append(" ".join(fmt(math.exp(x)) for x in fac.logpot_table))
    return "\n".join(lines) + "\n"

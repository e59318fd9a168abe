"""Ground first-order facts and conjunctive clauses over them.

Constants are lowercase-initial symbols and variables uppercase-initial
(Prolog convention).  A clause is a conjunction of possibly negated
literals implying a consequent atom; negated literals are read as
negation-as-failure against a closed fact base.  Antecedent
satisfiability is the one feature test everything else is built on:
tree-stump splits, preference-rule firing and the context-induction
filter all call into :func:`satisfies` / :func:`covers`.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping

__all__ = [
    "Term",
    "Atom",
    "Fact",
    "FactBase",
    "Literal",
    "Clause",
    "PredicateSchema",
    "ClauseSyntaxError",
    "ArityError",
    "GroundingLimitError",
    "parse_term",
    "parse_atom",
    "parse_fact",
    "parse_clause",
    "satisfies",
    "enumerate_groundings",
    "unify_atoms",
    "covers",
    "load_fact_file",
    "load_clause_file",
    "dump_facts",
]

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")

DEFAULT_GROUNDING_CAP = 10**6


class ClauseSyntaxError(ValueError):
    """Malformed clause/fact/atom text; carries the offending position."""

    def __init__(self, message: str, text: str, pos: int):
        self.text = text
        self.pos = pos
        super().__init__(f"{message} at position {pos} in {text!r}")


class ArityError(ValueError):
    """A predicate was used with an arity conflicting with its first use."""


class GroundingLimitError(RuntimeError):
    """Grounding enumeration would exceed the configured cap."""


@dataclass(frozen=True)
class Term:
    """A constant or variable symbol; case of the first character decides."""

    name: str

    def __post_init__(self):
        if not self.name or not _NAME_RE.fullmatch(self.name):
            raise ValueError(f"bad term name {self.name!r}")

    @property
    def is_variable(self) -> bool:
        return self.name[0].isupper()

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Atom:
    predicate: str
    args: tuple[Term, ...] = ()

    def __post_init__(self):
        if not self.predicate or not _NAME_RE.fullmatch(self.predicate):
            raise ValueError(f"bad predicate name {self.predicate!r}")
        if self.predicate[0].isupper():
            raise ValueError(f"predicate must be lowercase-initial: {self.predicate!r}")

    @property
    def arity(self) -> int:
        return len(self.args)

    def variables(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for t in self.args:
            if t.is_variable:
                seen.setdefault(t.name, None)
        return tuple(seen)

    def is_ground(self) -> bool:
        return all(not t.is_variable for t in self.args)

    def substitute(self, binding: Mapping[str, Term]) -> "Atom":
        if not binding:
            return self
        return Atom(self.predicate, tuple(binding.get(t.name, t) if t.is_variable else t for t in self.args))

    def canonical_key(self) -> tuple:
        """Structure key invariant under variable renaming."""
        names: dict[str, int] = {}
        tags = []
        for t in self.args:
            if t.is_variable:
                tags.append(("v", names.setdefault(t.name, len(names))))
            else:
                tags.append(("c", t.name))
        return (self.predicate, tuple(tags))

    def __str__(self) -> str:
        if not self.args:
            return self.predicate
        return f"{self.predicate}({','.join(t.name for t in self.args)})"


@dataclass(frozen=True)
class Fact:
    """A ground atom."""

    atom: Atom

    def __post_init__(self):
        if not self.atom.is_ground():
            raise ValueError(f"fact contains variables: {self.atom}")

    def __str__(self) -> str:
        return f"{self.atom}."


@dataclass(frozen=True)
class FactBase:
    """An immutable set of ground facts observed at one step."""

    facts: frozenset[Fact]
    step: int = 1

    def __post_init__(self):
        if self.step < 1:
            raise ValueError(f"step must be >= 1, got {self.step}")

    @classmethod
    def of(cls, facts: Iterable[Fact | Atom], step: int = 1) -> "FactBase":
        items = frozenset(f if isinstance(f, Fact) else Fact(f) for f in facts)
        return cls(items, step)

    # Lookup indexes; cached_property writes straight into __dict__, which is
    # fine on a frozen dataclass.
    @cached_property
    def _ground(self) -> frozenset[tuple]:
        return frozenset((f.atom.predicate, tuple(t.name for t in f.atom.args)) for f in self.facts)

    @cached_property
    def _by_pred(self) -> dict[str, tuple[tuple[str, ...], ...]]:
        idx: dict[str, list[tuple[str, ...]]] = {}
        for f in sorted(self.facts, key=str):
            idx.setdefault(f.atom.predicate, []).append(tuple(t.name for t in f.atom.args))
        return {p: tuple(rows) for p, rows in idx.items()}

    @cached_property
    def _by_pred_arg0(self) -> dict[tuple[str, str], tuple[tuple[str, ...], ...]]:
        idx: dict[tuple[str, str], list[tuple[str, ...]]] = {}
        for p, rows in self._by_pred.items():
            for row in rows:
                if row:
                    idx.setdefault((p, row[0]), []).append(row)
        return {k: tuple(rows) for k, rows in idx.items()}

    @cached_property
    def constants(self) -> tuple[str, ...]:
        seen = {t.name for f in self.facts for t in f.atom.args}
        return tuple(sorted(seen))

    def holds(self, atom: Atom) -> bool:
        """Ground-atom membership."""
        return (atom.predicate, tuple(t.name for t in atom.args)) in self._ground

    def __len__(self) -> int:
        return len(self.facts)

    def __iter__(self):
        return iter(self.facts)


@dataclass(frozen=True)
class Literal:
    atom: Atom
    negated: bool = False

    def substitute(self, binding: Mapping[str, Term]) -> "Literal":
        return Literal(self.atom.substitute(binding), self.negated)

    def __str__(self) -> str:
        return ("!" if self.negated else "") + str(self.atom)


@dataclass(frozen=True)
class Clause:
    """Conjunctive antecedent implying a consequent atom.

    Consequent variables that occur in no positive antecedent literal are
    free query variables: they stay unbound during matching and are
    expected to be supplied by the caller (e.g. bound against an arm atom).
    """

    antecedent: tuple[Literal, ...]
    consequent: Atom

    def antecedent_variables(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for lit in self.antecedent:
            for v in lit.atom.variables():
                seen.setdefault(v, None)
        return tuple(seen)

    @property
    def free_variables(self) -> tuple[str, ...]:
        positive = {v for lit in self.antecedent if not lit.negated for v in lit.atom.variables()}
        return tuple(v for v in self.consequent.variables() if v not in positive)

    def substitute(self, binding: Mapping[str, Term]) -> "Clause":
        return Clause(
            tuple(lit.substitute(binding) for lit in self.antecedent),
            self.consequent.substitute(binding),
        )

    def canonical_key(self) -> tuple:
        """Key invariant under variable renaming and antecedent reordering."""
        names: dict[str, int] = {}

        def tag(term: Term):
            if term.is_variable:
                return ("v", names.setdefault(term.name, len(names)))
            return ("c", term.name)

        cons = (self.consequent.predicate, tuple(tag(t) for t in self.consequent.args))
        # Coarse ordering first (independent of fresh-variable names), then
        # assign canonical numbers in that order.
        def coarse(lit: Literal):
            return (
                lit.atom.predicate,
                lit.negated,
                tuple(("c", t.name) if not t.is_variable else ("v", names.get(t.name, -1)) for t in lit.atom.args),
            )

        lits = sorted(self.antecedent, key=coarse)
        body = tuple((lit.atom.predicate, lit.negated, tuple(tag(t) for t in lit.atom.args)) for lit in lits)
        return (cons, body)

    def alpha_equal(self, other: "Clause") -> bool:
        return self.canonical_key() == other.canonical_key()

    def __str__(self) -> str:
        body = ", ".join(str(lit) for lit in self.antecedent)
        return f"{body} => {self.consequent}" if body else f"=> {self.consequent}"


class PredicateSchema:
    """Tracks predicate arities within one experiment; first use wins."""

    def __init__(self):
        self._arity: dict[str, int] = {}

    def check(self, predicate: str, arity: int) -> None:
        known = self._arity.setdefault(predicate, arity)
        if known != arity:
            raise ArityError(
                f"predicate {predicate!r} used with arity {arity}, previously declared with arity {known}"
            )

    def arity_of(self, predicate: str) -> int | None:
        return self._arity.get(predicate)


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------


class _Cursor:
    __slots__ = ("text", "pos")

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def eof(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.text)

    def match(self, token: str) -> bool:
        self.skip_ws()
        if self.text.startswith(token, self.pos):
            self.pos += len(token)
            return True
        return False

    def expect(self, token: str) -> None:
        if not self.match(token):
            raise ClauseSyntaxError(f"expected {token!r}", self.text, self.pos)

    def name(self, what: str = "name") -> str:
        self.skip_ws()
        m = _NAME_RE.match(self.text, self.pos)
        if not m:
            raise ClauseSyntaxError(f"expected {what}", self.text, self.pos)
        self.pos = m.end()
        return m.group()

    def peek_is_name(self) -> bool:
        self.skip_ws()
        return _NAME_RE.match(self.text, self.pos) is not None


def _parse_atom(cur: _Cursor, schema: PredicateSchema | None) -> Atom:
    cur.skip_ws()
    start = cur.pos
    pred = cur.name("predicate")
    if pred[0].isupper():
        raise ClauseSyntaxError("predicate must be lowercase-initial", cur.text, start)
    args: list[Term] = []
    if cur.match("("):
        if not cur.match(")"):
            while True:
                args.append(Term(cur.name("term")))
                if cur.match(")"):
                    break
                cur.expect(",")
    atom = Atom(pred, tuple(args))
    if schema is not None:
        schema.check(pred, atom.arity)
    return atom


def _parse_literal(cur: _Cursor, schema: PredicateSchema | None) -> Literal:
    negated = cur.match("!")
    return Literal(_parse_atom(cur, schema), negated)


def parse_term(text: str) -> Term:
    cur = _Cursor(text)
    t = Term(cur.name("term"))
    if not cur.eof():
        raise ClauseSyntaxError("unexpected trailing input", text, cur.pos)
    return t


def parse_atom(text: str, schema: PredicateSchema | None = None) -> Atom:
    cur = _Cursor(text)
    atom = _parse_atom(cur, schema)
    if not cur.eof():
        raise ClauseSyntaxError("unexpected trailing input", text, cur.pos)
    return atom


def parse_fact(text: str, schema: PredicateSchema | None = None) -> Fact:
    cur = _Cursor(text)
    atom = _parse_atom(cur, schema)
    cur.expect(".")
    if not cur.eof():
        raise ClauseSyntaxError("unexpected trailing input", text, cur.pos)
    return Fact(atom)


def parse_clause(text: str, schema: PredicateSchema | None = None) -> Clause:
    """Parse ``lit (, lit)* => atom``; ``!`` prefixes negation.

    An empty antecedent is written ``=> atom``.
    """
    cur = _Cursor(text)
    literals: list[Literal] = []
    cur.skip_ws()
    if not cur.text.startswith("=>", cur.pos):
        literals.append(_parse_literal(cur, schema))
        while cur.match(","):
            literals.append(_parse_literal(cur, schema))
    cur.expect("=>")
    consequent = _parse_atom(cur, schema)
    if not cur.eof():
        raise ClauseSyntaxError("unexpected trailing input", text, cur.pos)
    return Clause(tuple(literals), consequent)


# --------------------------------------------------------------------------
# Matching
# --------------------------------------------------------------------------


def _check_binding(binding: Mapping[str, str] | None) -> dict[str, str]:
    if not binding:
        return {}
    out = {}
    for var, value in binding.items():
        if not var[0].isupper():
            raise ValueError(f"binding key {var!r} is not a variable")
        if value[0].isupper():
            raise ValueError(f"binding value {value!r} is not a constant")
        out[var] = value
    return out


def _match_literal(lit_args: tuple[Term, ...], fact_args: tuple[str, ...], binding: dict[str, str]) -> list[str] | None:
    """Try to unify literal args against one fact row; returns newly bound vars."""
    added: list[str] = []
    for t, c in zip(lit_args, fact_args):
        if t.is_variable:
            bound = binding.get(t.name)
            if bound is None:
                binding[t.name] = c
                added.append(t.name)
            elif bound != c:
                for v in added:
                    del binding[v]
                return None
        elif t.name != c:
            for v in added:
                del binding[v]
            return None
    return added


def _negatives_hold(negatives: list[Literal], fb: FactBase, binding: dict[str, str]) -> bool:
    """All negated literals absent, enumerating any still-unbound variables."""
    free: dict[str, None] = {}
    for lit in negatives:
        for v in lit.atom.variables():
            if v not in binding:
                free.setdefault(v, None)
    order = tuple(free)
    if not order:
        return all(not _ground_in(lit.atom, fb, binding) for lit in negatives)
    for combo in itertools.product(fb.constants, repeat=len(order)):
        trial = dict(binding)
        trial.update(zip(order, combo))
        if all(not _ground_in(lit.atom, fb, trial) for lit in negatives):
            return True
    return False


def _ground_in(atom: Atom, fb: FactBase, binding: dict[str, str]) -> bool:
    key = tuple(binding[t.name] if t.is_variable else t.name for t in atom.args)
    return (atom.predicate, key) in fb._ground


def satisfies(clause: Clause, fb: FactBase, binding: Mapping[str, str] | None = None) -> bool:
    """True iff some grounding of the antecedent extends ``binding`` such that
    every positive literal is in ``fb`` and no negated literal is (negation
    as failure).  Backtracking search with first-argument indexing.
    """
    b = _check_binding(binding)
    positives = [lit for lit in clause.antecedent if not lit.negated]
    negatives = [lit for lit in clause.antecedent if lit.negated]

    def solve(i: int) -> bool:
        if i == len(positives):
            return _negatives_hold(negatives, fb, b)
        lit = positives[i]
        args = lit.atom.args
        first = args[0] if args else None
        if first is not None and (not first.is_variable or first.name in b):
            key = b[first.name] if first.is_variable else first.name
            rows = fb._by_pred_arg0.get((lit.atom.predicate, key), ())
        else:
            rows = fb._by_pred.get(lit.atom.predicate, ())
        for row in rows:
            if len(row) != len(args):
                continue
            added = _match_literal(args, row, b)
            if added is None:
                continue
            if solve(i + 1):
                return True
            for v in added:
                del b[v]
        return False

    return solve(0)


def enumerate_groundings(
    clause: Clause,
    fb: FactBase,
    binding: Mapping[str, str] | None = None,
    cap: int = DEFAULT_GROUNDING_CAP,
) -> list[dict[str, str]]:
    """Exhaustive satisfying groundings of all antecedent variables.

    Deliberately brute force (cartesian product over the fact base's
    constants) so it can serve as an independent oracle for
    :func:`satisfies`.  Raises :class:`GroundingLimitError` when the
    product would exceed ``cap``.
    """
    base = _check_binding(binding)
    free = [v for v in clause.antecedent_variables() if v not in base]
    n_combos = len(fb.constants) ** len(free) if free else 1
    if n_combos > cap:
        raise GroundingLimitError(f"{n_combos} candidate groundings exceed cap {cap}")
    out: list[dict[str, str]] = []
    for combo in itertools.product(fb.constants, repeat=len(free)):
        trial = dict(base)
        trial.update(zip(free, combo))
        ok = True
        for lit in clause.antecedent:
            present = _ground_in(lit.atom, fb, trial)
            if present == lit.negated:
                ok = False
                break
        if ok:
            out.append(trial)
    return out


def unify_atoms(left: Atom, right: Atom) -> dict[str, Term] | None:
    """Most general unifier over flat atoms, or None.

    The returned map sends variable names (from either side) to terms;
    chains are already resolved.
    """
    if left.predicate != right.predicate or left.arity != right.arity:
        return None
    subst: dict[str, Term] = {}

    def walk(t: Term) -> Term:
        while t.is_variable and t.name in subst:
            t = subst[t.name]
        return t

    for a, b in zip(left.args, right.args):
        a, b = walk(a), walk(b)
        if a == b:
            continue
        if a.is_variable:
            subst[a.name] = b
        elif b.is_variable:
            subst[b.name] = a
        else:
            return None
    return {v: walk(t) for v, t in subst.items()}


def covers(clause: Clause, fb: FactBase, goal: Atom) -> bool:
    """Does the clause fire for ``goal``?  Unifies the consequent with the
    goal atom, specializes the antecedent, then tests satisfiability with
    remaining variables existential."""
    theta = unify_atoms(clause.consequent, goal)
    if theta is None:
        return False
    specialized = clause.substitute(theta)
    return satisfies(specialized, fb)


# --------------------------------------------------------------------------
# File formats
# --------------------------------------------------------------------------


def _content_lines(path: str) -> Iterable[tuple[int, str]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("%", 1)[0].strip()
            if line:
                yield lineno, line


def load_fact_file(path: str, schema: PredicateSchema | None = None, step: int = 1) -> FactBase:
    """One fact per line, ``predicate(c1,c2).``; ``%`` starts a comment."""
    facts = []
    for lineno, line in _content_lines(path):
        try:
            facts.append(parse_fact(line, schema))
        except ValueError as err:
            raise ValueError(f"{path}:{lineno}: {err}") from err
    return FactBase.of(facts, step=step)


def load_clause_file(path: str, schema: PredicateSchema | None = None) -> tuple[Clause, ...]:
    clauses = []
    for lineno, line in _content_lines(path):
        try:
            clauses.append(parse_clause(line, schema))
        except ValueError as err:
            raise ValueError(f"{path}:{lineno}: {err}") from err
    return tuple(clauses)


def dump_facts(fb: FactBase, fh) -> None:
    for f in sorted(fb.facts, key=str):
        fh.write(f"{f}\n")

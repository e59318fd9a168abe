"""Preference knowledge and its gradient contribution.

A knowledge source holds preference rules: a context condition, an arm
atom and a binary prefer flag.  Under the Laplace prior each source that
fires contributes a pure sign (+1 prefer / -1 dis-prefer) to the
log-policy gradient; multiple sources add up to (#prefer - #dis-prefer).
Under the Normal prior a firing source contributes (+/-alpha - sigma),
where alpha >= 1 controls how fast the infusion acts.  A reliability
schedule makes a source lie (flip its sign) with probability 1-p inside
a step window, which is how noisy experts are simulated.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import cached_property

from .logic import (
    Atom,
    Clause,
    FactBase,
    Literal,
    PredicateSchema,
    _Cursor,
    _parse_atom,
    _parse_literal,
    covers,
)

__all__ = [
    "PreferenceRule",
    "ReliabilitySchedule",
    "KnowledgeSource",
    "laplace_signal",
    "normal_signal",
    "signal_for_arm",
    "make_noisy",
    "parse_knowledge",
    "load_knowledge_file",
]

LAPLACE = "laplace"
NORMAL = "normal"


@dataclass(frozen=True)
class PreferenceRule:
    """(condition over context, arm atom, prefer in {0,1})."""

    condition: tuple[Literal, ...]
    arm_atom: Atom
    prefer: int

    def __post_init__(self):
        if self.prefer not in (0, 1):
            raise ValueError(f"prefer must be 0 or 1, got {self.prefer}")

    @cached_property
    def _clause(self) -> Clause:
        return Clause(self.condition, self.arm_atom)

    def matches(self, fb: FactBase, arm_atom: Atom) -> bool:
        return covers(self._clause, fb, arm_atom)

    @property
    def sign(self) -> int:
        return 1 if self.prefer else -1

    def __str__(self) -> str:
        body = ", ".join(str(lit) for lit in self.condition)
        return f"{body} -> prefer({self.arm_atom}) = {self.prefer}"


@dataclass(frozen=True)
class ReliabilitySchedule:
    """Step windows mapped to the probability of reporting truthfully.

    Steps outside every window are fully reliable (p = 1).
    """

    windows: tuple[tuple[int, int, float], ...] = ()

    def __post_init__(self):
        for first, last, p in self.windows:
            if first < 1 or last < first:
                raise ValueError(f"invalid step range {first}..{last}")
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"invalid reliability {p}")

    def truth_probability(self, step: int) -> float:
        for first, last, p in self.windows:
            if first <= step <= last:
                return p
        return 1.0


@dataclass(frozen=True)
class KnowledgeSource:
    rules: tuple[PreferenceRule, ...]
    prior_kind: str = LAPLACE
    alpha: float = 1.0
    reliability: ReliabilitySchedule = ReliabilitySchedule()
    name: str = ""

    def __post_init__(self):
        if self.prior_kind not in (LAPLACE, NORMAL):
            raise ValueError(f"unknown prior kind {self.prior_kind!r}")
        if self.prior_kind == NORMAL and self.alpha < 1.0:
            raise ValueError(f"alpha must be >= 1 for the normal prior, got {self.alpha}")

    def opinion(self, fb: FactBase, arm_atom: Atom) -> int:
        """Net sign of the rules firing for this arm: majority wins, 0 on a
        tie or when nothing fires."""
        balance = sum(r.sign for r in self.rules if r.matches(fb, arm_atom))
        return (balance > 0) - (balance < 0)


def _reported_sign(source: KnowledgeSource, fb: FactBase, arm_atom: Atom, rng) -> int:
    sign = source.opinion(fb, arm_atom)
    if sign == 0:
        return 0
    p = source.reliability.truth_probability(fb.step)
    if p < 1.0 and rng.random() >= p:
        sign = -sign
    return sign


def laplace_signal(sources, fb: FactBase, arm, rng) -> int:
    """Sum of reported signs over Laplace sources: (#prefer - #dis-prefer)
    after each source independently flips with probability 1-p."""
    arm_atom = arm.atom if hasattr(arm, "atom") else arm
    total = 0
    for source in sources:
        if source.prior_kind != LAPLACE:
            raise ValueError("laplace_signal requires laplace sources")
        total += _reported_sign(source, fb, arm_atom, rng)
    return total


def normal_signal(source: KnowledgeSource, fb: FactBase, arm, current_sigma: float) -> float:
    """(+/-alpha - sigma) when a rule fires, 0 otherwise."""
    if source.prior_kind != NORMAL:
        raise ValueError("normal_signal requires a normal source")
    arm_atom = arm.atom if hasattr(arm, "atom") else arm
    sign = source.opinion(fb, arm_atom)
    if sign == 0:
        return 0.0
    return (source.alpha if sign > 0 else -source.alpha) - current_sigma


def signal_for_arm(sources, fb: FactBase, arm, current_sigma: float, rng) -> float:
    """Total knowledge contribution for one arm, mixing prior kinds."""
    arm_atom = arm.atom if hasattr(arm, "atom") else arm
    total = 0.0
    for source in sources:
        if source.prior_kind == LAPLACE:
            total += _reported_sign(source, fb, arm_atom, rng)
        else:
            sign = source.opinion(fb, arm_atom)
            if sign:
                total += (source.alpha if sign > 0 else -source.alpha) - current_sigma
    return total


def make_noisy(source: KnowledgeSource, p: float, steps) -> KnowledgeSource:
    """Return a copy reporting truthfully with probability ``p`` inside
    ``steps`` (an inclusive (first, last) pair or a range) and perfectly
    elsewhere."""
    if isinstance(steps, range):
        first, last = steps.start, steps.stop - 1
    else:
        first, last = steps
    return dataclasses.replace(
        source, reliability=ReliabilitySchedule(((first, last, p),))
    )


# --------------------------------------------------------------------------
# Knowledge file format: one rule per line
#   condition-clause -> prefer(arm_atom) = 0|1
# plus an optional header line:  noise p=<p> steps=<a>..<b>
# --------------------------------------------------------------------------


def _parse_rule(line: str, schema: PredicateSchema | None) -> PreferenceRule:
    cur = _Cursor(line)
    condition: list[Literal] = []
    cur.skip_ws()
    if not cur.text.startswith("->", cur.pos):
        condition.append(_parse_literal(cur, schema))
        while cur.match(","):
            condition.append(_parse_literal(cur, schema))
    cur.expect("->")
    keyword = cur.name("keyword")
    if keyword != "prefer":
        raise ValueError(f"expected 'prefer', got {keyword!r}")
    cur.expect("(")
    arm_atom = _parse_atom(cur, schema)
    cur.expect(")")
    cur.expect("=")
    flag = cur.name("0 or 1")
    if flag not in ("0", "1"):
        raise ValueError(f"prefer flag must be 0 or 1, got {flag!r}")
    if not cur.eof():
        raise ValueError(f"unexpected trailing input in rule: {line!r}")
    return PreferenceRule(tuple(condition), arm_atom, int(flag))


def _parse_noise_header(line: str) -> ReliabilitySchedule:
    # noise p=0.8 steps=1..50
    parts = line.split()
    p = None
    steps = None
    for part in parts[1:]:
        key, _, value = part.partition("=")
        if key == "p":
            p = float(value)
        elif key == "steps":
            first, _, last = value.partition("..")
            steps = (int(first), int(last))
        else:
            raise ValueError(f"unknown noise header field {key!r}")
    if p is None or steps is None:
        raise ValueError(f"noise header needs p= and steps=: {line!r}")
    return ReliabilitySchedule(((steps[0], steps[1], p),))


def parse_knowledge(text: str, schema: PredicateSchema | None = None, name: str = "") -> KnowledgeSource:
    rules: list[PreferenceRule] = []
    reliability = ReliabilitySchedule()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("%", 1)[0].strip()
        if not line:
            continue
        try:
            if line.startswith("noise"):
                reliability = _parse_noise_header(line)
            else:
                rules.append(_parse_rule(line, schema))
        except ValueError as err:
            raise ValueError(f"line {lineno}: {err}") from err
    return KnowledgeSource(tuple(rules), LAPLACE, reliability=reliability, name=name)


def load_knowledge_file(path: str, schema: PredicateSchema | None = None) -> KnowledgeSource:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        return parse_knowledge(text, schema, name=str(path))
    except ValueError as err:
        raise ValueError(f"{path}: {err}") from err

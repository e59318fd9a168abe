"""Per-arm additive policies built from relational regression tree stumps.

The score of an arm is psi0 plus eta times the sum of stump outputs; the
arm-choice probability is the sigmoid of that score.  A stump is a short
chain of clause tests: the first satisfied test yields its leaf value,
otherwise the final default leaf.  Fitting greedily picks, node by node,
the candidate clause whose induced partition has the least total squared
error, with leaf values set to branch means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, Sequence

from .logic import Atom, Clause, FactBase, PredicateSchema, covers, parse_atom, parse_clause

__all__ = [
    "ArmId",
    "TreeStump",
    "GradientExample",
    "PolicyEnsemble",
    "UnknownArmError",
    "fit_stump",
    "sigmoid",
    "dump_ensemble",
    "load_ensemble",
]

ENSEMBLE_FORMAT = "kipg-ensemble v1"

# A tester decides whether a clause fires for an arm on a fact base; the
# engine swaps in a memoizing one.
Tester = Callable[[Clause, "ArmId", FactBase], bool]


def _default_tester(clause: Clause, arm: "ArmId", fb: FactBase) -> bool:
    return covers(clause, fb, arm.atom)


class UnknownArmError(KeyError):
    """An arm was used that is not registered in the ensemble."""


@dataclass(frozen=True)
class ArmId:
    """A bandit arm: dense 1-based index plus a display atom.

    The atom may contain variables (e.g. ``listens(A,s3)`` leaves the
    user slot open); clause consequents are unified against it when a
    clause test is evaluated for this arm.
    """

    index: int
    atom: Atom

    def __str__(self) -> str:
        return f"{self.index}:{self.atom}"


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass(frozen=True)
class TreeStump:
    """Chain-shaped regression tree over clause tests.

    ``tests[i]`` satisfied returns ``values[i]``; when no test fires the
    ``default`` leaf is returned.  Depth is ``len(tests)``; a plain stump
    has one test, a zero-test stump is a single constant leaf.
    """

    tests: tuple[Clause, ...]
    values: tuple[float, ...]
    default: float

    def __post_init__(self):
        if len(self.tests) != len(self.values):
            raise ValueError("one leaf value per test required")
        for v in (*self.values, self.default):
            if not math.isfinite(v):
                raise ValueError(f"non-finite leaf value {v!r}")

    @property
    def depth(self) -> int:
        return max(1, len(self.tests))

    def evaluate(self, fb: FactBase, arm: ArmId, tester: Tester = _default_tester) -> float:
        for clause, value in zip(self.tests, self.values):
            if tester(clause, arm, fb):
                return value
        return self.default


@dataclass(frozen=True)
class GradientExample:
    """One regression target for the stump fit: the functional-gradient
    value observed for ``arm`` on fact base ``fb``."""

    fb: FactBase
    arm: ArmId
    target: float

    def __post_init__(self):
        if not math.isfinite(self.target):
            raise ValueError(f"non-finite gradient target {self.target!r}")


@dataclass(frozen=True)
class PolicyEnsemble:
    """Value-semantic per-arm boosted model; updates return a new ensemble."""

    arms: tuple[ArmId, ...]
    eta: float
    psi0: Mapping[ArmId, float]
    stumps: Mapping[ArmId, tuple[TreeStump, ...]]

    @classmethod
    def create(cls, arms: Iterable[ArmId], eta: float = 1.0, psi0: float = 0.0) -> "PolicyEnsemble":
        arms = tuple(arms)
        if eta <= 0:
            raise ValueError(f"eta must be positive, got {eta}")
        return cls(arms, eta, {a: psi0 for a in arms}, {a: () for a in arms})

    def _require(self, arm: ArmId) -> None:
        if arm not in self.psi0:
            raise UnknownArmError(arm)

    def psi_value(self, arm: ArmId, fb: FactBase, tester: Tester = _default_tester) -> float:
        self._require(arm)
        total = self.psi0[arm]
        for stump in self.stumps[arm]:
            total += self.eta * stump.evaluate(fb, arm, tester)
        return total

    def pi_value(self, arm: ArmId, fb: FactBase, tester: Tester = _default_tester) -> float:
        return sigmoid(self.psi_value(arm, fb, tester))

    def with_stump(self, arm: ArmId, stump: TreeStump, cap: int | None = None) -> "PolicyEnsemble":
        """Append a stump for one arm; beyond ``cap`` the oldest stump for
        that arm is replaced, keeping the ensemble memory-bounded."""
        self._require(arm)
        chain = self.stumps[arm] + (stump,)
        if cap is not None and len(chain) > cap:
            chain = chain[len(chain) - cap:]
        stumps = dict(self.stumps)
        stumps[arm] = chain
        return replace(self, stumps=stumps)

    def n_stumps(self, arm: ArmId) -> int:
        self._require(arm)
        return len(self.stumps[arm])


def _sse(targets: Sequence[float]) -> float:
    mean = sum(targets) / len(targets)
    return sum((t - mean) ** 2 for t in targets)


def _mean(targets: Sequence[float]) -> float:
    return sum(targets) / len(targets)


def fit_stump(
    examples: Sequence[GradientExample],
    candidate_tests: Sequence[Clause],
    max_depth: int = 1,
    tester: Tester = _default_tester,
) -> TreeStump:
    """Fit a chain stump to gradient targets by greedy least squares.

    At each node the candidate minimizing the partition's total squared
    error is chosen (first candidate wins ties); the satisfied branch
    becomes a leaf with the branch-mean value and the chain recurses on
    the remaining examples.  With ``max_depth=1`` this is the exact
    argmin over single-test stumps.  If no candidate discriminates, a
    single-leaf stump holding the global mean is returned.
    """
    if not examples:
        raise ValueError("examples must be non-empty")
    if not candidate_tests:
        raise ValueError("candidate_tests must be non-empty")
    if max_depth < 1:
        raise ValueError(f"max_depth must be >= 1, got {max_depth}")

    features = [
        tuple(tester(clause, ex.arm, ex.fb) for clause in candidate_tests)
        for ex in examples
    ]
    targets = [ex.target for ex in examples]

    def build(idxs: list[int], depth: int) -> tuple[tuple[Clause, ...], tuple[float, ...], float]:
        sub_targets = [targets[i] for i in idxs]
        base = _sse(sub_targets)
        best = None
        for j, clause in enumerate(candidate_tests):
            true_i = [i for i in idxs if features[i][j]]
            if not true_i or len(true_i) == len(idxs):
                continue
            false_i = [i for i in idxs if not features[i][j]]
            total = _sse([targets[i] for i in true_i]) + _sse([targets[i] for i in false_i])
            if total < base - 1e-12 and (best is None or total < best[0]):
                best = (total, j, true_i, false_i)
        if best is None:
            return (), (), _mean(sub_targets)
        _, j, true_i, false_i = best
        value = _mean([targets[i] for i in true_i])
        if depth == 1:
            return (candidate_tests[j],), (value,), _mean([targets[i] for i in false_i])
        tail_tests, tail_values, default = build(false_i, depth - 1)
        return (candidate_tests[j], *tail_tests), (value, *tail_values), default

    tests, values, default = build(list(range(len(examples))), max_depth)
    return TreeStump(tests, values, default)


# --------------------------------------------------------------------------
# Serialization: versioned flat text, one line per stump
#   arm<TAB>eta<TAB>clause<TAB>left<TAB>right
# --------------------------------------------------------------------------


def dump_ensemble(ens: PolicyEnsemble, fh) -> None:
    """Write the versioned flat-text form.  Only depth-1 (and constant)
    stumps have a line format; deeper chains are not serializable."""
    fh.write(f"# {ENSEMBLE_FORMAT}\n")
    for arm in ens.arms:
        fh.write(f"# arm\t{arm.index}\t{arm.atom}\t{ens.psi0[arm]!r}\n")
    for arm in ens.arms:
        for stump in ens.stumps[arm]:
            if len(stump.tests) > 1:
                raise ValueError("only depth-1 stumps have a text form")
            if stump.tests:
                clause, left = str(stump.tests[0]), stump.values[0]
            else:
                clause, left = "-", stump.default
            fh.write(f"{arm.index}\t{ens.eta!r}\t{clause}\t{left!r}\t{stump.default!r}\n")


def load_ensemble(fh, schema: PredicateSchema | None = None) -> PolicyEnsemble:
    lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0].strip() != f"# {ENSEMBLE_FORMAT}":
        raise ValueError(f"not a {ENSEMBLE_FORMAT} file")
    arms: dict[int, ArmId] = {}
    psi0: dict[ArmId, float] = {}
    stumps: dict[ArmId, list[TreeStump]] = {}
    eta: float | None = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("# arm\t"):
            _, idx, atom_text, psi = line.split("\t")
            arm = ArmId(int(idx), parse_atom(atom_text, schema))
            arms[arm.index] = arm
            psi0[arm] = float(psi)
            stumps[arm] = []
            continue
        if line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ValueError(f"line {lineno}: expected 5 tab-separated fields")
        idx, eta_text, clause_text, left, right = parts
        arm = arms.get(int(idx))
        if arm is None:
            raise ValueError(f"line {lineno}: stump for undeclared arm {idx}")
        line_eta = float(eta_text)
        if eta is None:
            eta = line_eta
        elif eta != line_eta:
            raise ValueError(f"line {lineno}: inconsistent eta {line_eta} vs {eta}")
        if clause_text == "-":
            stump = TreeStump((), (), float(right))
        else:
            stump = TreeStump((parse_clause(clause_text, schema),), (float(left),), float(right))
        stumps[arm].append(stump)
    ordered = tuple(arms[i] for i in sorted(arms))
    return PolicyEnsemble(
        ordered,
        1.0 if eta is None else eta,
        {a: psi0[a] for a in ordered},
        {a: tuple(stumps[a]) for a in ordered},
    )

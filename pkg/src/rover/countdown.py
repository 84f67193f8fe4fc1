"""Small countdown arithmetic puzzles and their compilation to tree MDPs.

An expression is either an ``int`` (one of the input numbers) or a tuple
``(op, left, right)`` with ``op`` in ``+ - * /``. Arithmetic is exact over
``Fraction``. The canonical form sorts the operands of ``+`` and ``*``
recursively so that trivial reorderings count as one solution.
"""

from __future__ import annotations

import ast
import re
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from rover.tree import TreeMdp, build_from_sequences

Expr = Union[int, tuple]
OPS = ("+", "-", "*", "/")
COMMUTATIVE = {"+", "*"}
MAX_NUMS = 4
TOKEN_SEP = ","


class ExpressionError(ValueError):
    """Malformed expression, or one that does not use each number exactly once."""


@dataclass(frozen=True)
class CountdownInstance:
    nums: tuple[int, ...]
    target: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "nums", tuple(int(x) for x in self.nums))
        if not 2 <= len(self.nums) <= MAX_NUMS:
            raise ValueError(f"need 2..{MAX_NUMS} numbers, got {len(self.nums)}")
        if any(x < 1 for x in self.nums):
            raise ValueError("numbers must be positive")

    def __str__(self) -> str:
        return f"nums=[{','.join(map(str, self.nums))}] target={self.target}"


# -- evaluation and rendering ----------------------------------------------


def evaluate(expr: Expr, strict_integer: bool = False) -> Fraction | None:
    """Exact value, or None on division by zero (or a non-integer
    intermediate when ``strict_integer``)."""
    if isinstance(expr, int):
        return Fraction(expr)
    op, left, right = expr
    a = evaluate(left, strict_integer)
    b = evaluate(right, strict_integer)
    if a is None or b is None:
        return None
    if op == "+":
        v = a + b
    elif op == "-":
        v = a - b
    elif op == "*":
        v = a * b
    else:
        if b == 0:
            return None
        v = a / b
    if strict_integer and v.denominator != 1:
        return None
    return v


def numbers_used(expr: Expr) -> list[int]:
    if isinstance(expr, int):
        return [expr]
    return numbers_used(expr[1]) + numbers_used(expr[2])


def to_prefix(expr: Expr) -> tuple[str, ...]:
    if isinstance(expr, int):
        return (str(expr),)
    op, left, right = expr
    return (op,) + to_prefix(left) + to_prefix(right)


def from_prefix(tokens: Iterable[str]) -> Expr:
    it = iter(tokens)

    def parse() -> Expr:
        try:
            tok = next(it)
        except StopIteration:
            raise ExpressionError("prefix expression ended early") from None
        if tok in OPS:
            return (tok, parse(), parse())
        if not tok.isdigit():
            raise ExpressionError(f"bad token {tok!r}")
        return int(tok)

    expr = parse()
    if next(it, None) is not None:
        raise ExpressionError("trailing tokens after prefix expression")
    return expr


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def to_infix(expr: Expr) -> str:
    if isinstance(expr, int):
        return str(expr)
    op, left, right = expr
    ls, rs = to_infix(left), to_infix(right)
    if not isinstance(left, int) and _PREC[left[0]] < _PREC[op]:
        ls = f"({ls})"
    # Bracket a right operand of equal precedence even under + and *, so that
    # parsing the text back gives the same tree.
    if not isinstance(right, int) and _PREC[right[0]] <= _PREC[op]:
        rs = f"({rs})"
    return f"{ls}{op}{rs}"


def canonical(expr: Expr) -> Expr:
    if isinstance(expr, int):
        return expr
    op, left, right = expr
    left, right = canonical(left), canonical(right)
    if op in COMMUTATIVE and _key(right) < _key(left):
        left, right = right, left
    return (op, left, right)


def _key(expr: Expr) -> str:
    return " ".join(to_prefix(expr))


# -- parsing ---------------------------------------------------------------

_AST_OPS = {ast.Add: "+", ast.Sub: "-", ast.Mult: "*", ast.Div: "/"}
_UNICODE = str.maketrans({"−": "-", "×": "*", "÷": "/", "x": "*"})


def parse_expression(text: str) -> Expr:
    src = text.translate(_UNICODE).strip()
    if "=" in src:
        src = src.split("=", 1)[0]
    if not re.fullmatch(r"[0-9+\-*/() \t]+", src):
        raise ExpressionError(f"unexpected characters in {text!r}")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as e:
        raise ExpressionError(f"cannot parse {text!r}: {e.msg}") from None

    def conv(node) -> Expr:
        if isinstance(node, ast.BinOp) and type(node.op) in _AST_OPS:
            return (_AST_OPS[type(node.op)], conv(node.left), conv(node.right))
        if isinstance(node, ast.Constant) and type(node.value) is int:
            return node.value
        raise ExpressionError(f"unsupported construct in {text!r}")

    return conv(tree.body)


def verify_expression(
    inst: CountdownInstance, expr: str | Expr, strict_integer: bool = False
) -> bool:
    """True iff ``expr`` uses every number once and hits the target exactly.

    Raises ExpressionError for malformed input or wrong number usage; a
    division by zero simply fails.
    """
    e = parse_expression(expr) if isinstance(expr, str) else expr
    if Counter(numbers_used(e)) != Counter(inst.nums):
        raise ExpressionError(
            f"expression uses {sorted(numbers_used(e))}, instance has {sorted(inst.nums)}"
        )
    v = evaluate(e, strict_integer)
    return v is not None and v == inst.target


# -- enumeration -----------------------------------------------------------


def all_expressions(nums: Iterable[int], canonical_forms: bool = True) -> set[Expr]:
    """Every expression using each number exactly once.

    Builds expressions bottom-up by repeatedly combining two pending
    sub-expressions with an operator, over all ordered pairs.
    """
    nums = tuple(nums)
    if len(nums) > MAX_NUMS:
        raise ValueError(f"at most {MAX_NUMS} numbers are supported")
    norm = canonical if canonical_forms else (lambda e: e)
    out: set[Expr] = set()
    seen: set[tuple] = set()

    def rec(pending: tuple[Expr, ...]) -> None:
        key = tuple(sorted(pending, key=_key))
        if key in seen:
            return
        seen.add(key)
        if len(pending) == 1:
            out.add(norm(pending[0]))
            return
        for i in range(len(pending)):
            for j in range(len(pending)):
                if i == j:
                    continue
                rest = tuple(p for k, p in enumerate(pending) if k not in (i, j))
                for op in OPS:
                    if op in COMMUTATIVE and canonical_forms and j < i:
                        continue
                    rec(rest + (norm((op, pending[i], pending[j])),))

    rec(tuple(nums))
    return out


def enumerate_solutions(
    inst: CountdownInstance, canonical_forms: bool = True, strict_integer: bool = False
) -> set[Expr]:
    """All (canonical) expressions that evaluate exactly to the target."""
    return {
        e
        for e in all_expressions(inst.nums, canonical_forms)
        if evaluate(e, strict_integer) == inst.target
    }


# -- tree compilation ------------------------------------------------------


def countdown_to_tree(
    inst: CountdownInstance, max_leaves: int = 50_000, strict_integer: bool = False
) -> TreeMdp:
    """Token-level MDP: actions are prefix-notation tokens, leaves are the
    distinct canonical expressions, and a leaf pays 1 iff it solves ``inst``."""
    exprs = sorted(all_expressions(inst.nums), key=to_prefix)
    if len(exprs) > max_leaves:
        raise ValueError(f"instance has {len(exprs)} expressions, cap is {max_leaves}")
    seqs = [to_prefix(e) for e in exprs]
    rewarded = [to_prefix(e) for e in exprs if evaluate(e, strict_integer) == inst.target]
    return build_from_sequences(seqs, rewarded, sep=TOKEN_SEP)


def decode_leaf(leaf_id: str) -> Expr:
    return from_prefix(leaf_id.split(TOKEN_SEP))


# -- instance generation and files -----------------------------------------


@dataclass(frozen=True)
class CountdownParams:
    n_nums: int = 3
    low: int = 1
    high: int = 20
    solvable: bool = True
    target_low: int = 1
    target_high: int = 100


def _random_expression(nums: list[int], rng: np.random.Generator) -> Expr:
    pending: list[Expr] = list(nums)
    while len(pending) > 1:
        i, j = rng.choice(len(pending), size=2, replace=False)
        op = OPS[int(rng.integers(len(OPS)))]
        e = (op, pending[i], pending[j])
        pending = [p for k, p in enumerate(pending) if k not in (i, j)] + [e]
    return pending[0]


def generate_instance(params: CountdownParams, seed: int) -> CountdownInstance:
    """Seeded instance. With ``solvable`` the target is the value of a random
    expression (retrying until it is a positive integer)."""
    if not 2 <= params.n_nums <= MAX_NUMS or params.low < 1 or params.high < params.low:
        raise ValueError(f"invalid countdown params {params}")
    rng = np.random.default_rng(seed)
    while True:
        nums = [int(x) for x in rng.integers(params.low, params.high + 1, size=params.n_nums)]
        if not params.solvable:
            target = int(rng.integers(params.target_low, params.target_high + 1))
            return CountdownInstance(tuple(nums), target)
        for _ in range(32):
            v = evaluate(_random_expression(nums, rng))
            if v is not None and v.denominator == 1 and v > 0:
                return CountdownInstance(tuple(nums), int(v))


_LINE = re.compile(r"^\s*nums=\[([0-9,\s]*)\]\s+target=(-?\d+)\s*$")


def parse_instance(line: str) -> CountdownInstance:
    m = _LINE.match(line)
    if not m:
        raise ValueError(f"bad instance line {line!r}")
    nums = tuple(int(x) for x in m.group(1).split(",") if x.strip())
    return CountdownInstance(nums, int(m.group(2)))


def save_instances(instances: Iterable[CountdownInstance], path: str | Path) -> None:
    Path(path).write_text("".join(f"{inst}\n" for inst in instances))


def load_instances(path: str | Path) -> list[CountdownInstance]:
    return [parse_instance(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]


def save_solutions(solutions: Iterable[Expr], path: str | Path) -> None:
    lines = sorted(to_infix(e) for e in solutions)
    Path(path).write_text("".join(f"{s}\n" for s in lines))

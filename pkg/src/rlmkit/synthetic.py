"""Seeded toy programs with exactly computable cost metrics.

The language has integer literals, variables, ``+ - *``, parentheses and
sequential assignments, one statement per line; the last line is usually
a bare expression.  No loops or calls, so every program terminates and
its cost metrics are exact.

Two metric families:
  - static: ``op_count``, the number of operator nodes in the parse tree
    (an analytically cheap proxy, like a FLOP count);
  - dynamic: ``step_count`` and ``peak_stack`` from a reference
    interpreter (one step per operand load or operator application,
    stores are free; stack depth tracked across evaluation).
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Union

from rlmkit.data import Metric, RegressionExample


class ToyProgramError(ValueError):
    pass


class UndefinedVariableError(ToyProgramError):
    pass


# ---------------------------------------------------------------- AST


@dataclass(frozen=True)
class Lit:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str  # "+", "-" or "*"
    left: "Expr"
    right: "Expr"


Expr = Union[Lit, Var, BinOp]


@dataclass(frozen=True)
class Assign:
    name: str
    expr: Expr


Stmt = Union[Assign, Expr]


@dataclass(frozen=True)
class ToyProgram:
    source: str
    seed: int | None = None  # generator seed when known


# ------------------------------------------------------------- parser

_TOKEN_RE = re.compile(r"\s*(\d+|[A-Za-z_][A-Za-z_0-9]*|[+\-*()=])")


def _tokenize(line: str, lineno: int) -> list[str]:
    tokens = []
    pos = 0
    while pos < len(line):
        m = _TOKEN_RE.match(line, pos)
        if m is None:
            rest = line[pos:].strip()
            if not rest:
                break
            raise ToyProgramError(
                f"line {lineno}: unexpected character {rest[0]!r}"
            )
        tokens.append(m.group(1))
        pos = m.end()
    return tokens


class _Parser:
    """Recursive descent over one statement's token list."""

    def __init__(self, tokens: list[str], lineno: int):
        self.tokens = tokens
        self.pos = 0
        self.lineno = lineno

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> str:
        tok = self.peek()
        if tok is None:
            raise ToyProgramError(f"line {self.lineno}: unexpected end of line")
        self.pos += 1
        return tok

    def parse_statement(self) -> Stmt:
        if (
            len(self.tokens) >= 2
            and self.tokens[1] == "="
            and re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", self.tokens[0])
        ):
            name = self.take()
            self.take()  # "="
            expr = self.parse_expr()
            self.expect_end()
            return Assign(name=name, expr=expr)
        expr = self.parse_expr()
        self.expect_end()
        return expr

    def expect_end(self):
        if self.peek() is not None:
            raise ToyProgramError(
                f"line {self.lineno}: trailing tokens starting at {self.peek()!r}"
            )

    def parse_expr(self) -> Expr:
        node = self.parse_term()
        while self.peek() in ("+", "-"):
            op = self.take()
            node = BinOp(op=op, left=node, right=self.parse_term())
        return node

    def parse_term(self) -> Expr:
        node = self.parse_factor()
        while self.peek() == "*":
            self.take()
            node = BinOp(op="*", left=node, right=self.parse_factor())
        return node

    def parse_factor(self) -> Expr:
        tok = self.take()
        if tok == "(":
            node = self.parse_expr()
            if self.take() != ")":
                raise ToyProgramError(f"line {self.lineno}: missing ')'")
            return node
        if tok.isdigit():
            return Lit(value=int(tok))
        if re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", tok):
            return Var(name=tok)
        raise ToyProgramError(f"line {self.lineno}: unexpected token {tok!r}")


def parse_program(program: ToyProgram | str) -> list[Stmt]:
    source = program.source if isinstance(program, ToyProgram) else program
    stmts: list[Stmt] = []
    for lineno, line in enumerate(source.splitlines(), start=1):
        tokens = _tokenize(line, lineno)
        if not tokens:
            continue
        stmts.append(_Parser(tokens, lineno).parse_statement())
    if not stmts:
        raise ToyProgramError("empty program")
    return stmts


# ------------------------------------------------------------ metrics


def static_op_count(program: ToyProgram | str) -> int:
    """Number of arithmetic operator nodes across all statements."""

    def count(node: Expr) -> int:
        if isinstance(node, BinOp):
            return 1 + count(node.left) + count(node.right)
        return 0

    total = 0
    for stmt in parse_program(program):
        total += count(stmt.expr if isinstance(stmt, Assign) else stmt)
    return total


def run_program(
    program: ToyProgram | str, env: dict[str, int]
) -> tuple[int, int, int]:
    """Reference interpreter.

    Evaluates statements in order, leftmost-innermost within each
    expression.  Each literal or variable load is one step, each
    operator application is one step, stores are free.  Returns
    (last value, step_count, peak_stack).  Raises
    UndefinedVariableError when a name is read before it has a value.
    """
    env = dict(env)
    steps = 0
    peak = 0
    depth = 0
    last = 0

    def push(value: int) -> int:
        nonlocal depth, peak, steps
        depth += 1
        peak = max(peak, depth)
        steps += 1
        return value

    def pop2_apply(op: str, a: int, b: int) -> int:
        nonlocal depth, steps
        depth -= 1  # two pops, one push
        steps += 1
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        return a * b

    def eval_expr(node: Expr) -> int:
        if isinstance(node, Lit):
            return push(node.value)
        if isinstance(node, Var):
            if node.name not in env:
                raise UndefinedVariableError(
                    f"undefined variable {node.name!r}"
                )
            return push(env[node.name])
        a = eval_expr(node.left)
        b = eval_expr(node.right)
        return pop2_apply(node.op, a, b)

    for stmt in parse_program(program):
        if isinstance(stmt, Assign):
            env[stmt.name] = eval_expr(stmt.expr)
        else:
            last = eval_expr(stmt)
        depth = 0  # operand stack drains between statements
    return last, steps, peak


def free_variables(program: ToyProgram | str) -> list[str]:
    """Names read before any assignment, in first-read order.

    Within an assignment the right-hand side is scanned before the
    target is considered assigned.
    """
    assigned: set[str] = set()
    seen: set[str] = set()
    order: list[str] = []

    def scan(node: Expr):
        if isinstance(node, Var):
            if node.name not in assigned and node.name not in seen:
                seen.add(node.name)
                order.append(node.name)
        elif isinstance(node, BinOp):
            scan(node.left)
            scan(node.right)

    for stmt in parse_program(program):
        if isinstance(stmt, Assign):
            scan(stmt.expr)
            assigned.add(stmt.name)
        else:
            scan(stmt)
    return order


def exec_metrics(
    program: ToyProgram | str, env_seed: int = 0
) -> tuple[int, int]:
    """(step_count, peak_stack) with free variables seeded from env_seed."""
    rng = random.Random(env_seed)
    env = {name: rng.randint(1, 9) for name in free_variables(program)}
    _, steps, peak = run_program(program, env)
    return steps, peak


# ---------------------------------------------------------- generator


@dataclass(frozen=True)
class SizeParams:
    min_ops: int = 1
    max_ops: int = 12
    num_vars: int = 3

    def __post_init__(self):
        if not 1 <= self.min_ops <= self.max_ops:
            raise ValueError("need 1 <= min_ops <= max_ops")
        if self.num_vars < 1:
            raise ValueError("num_vars must be >= 1")


def gen_program(
    rng: random.Random | int, size_params: SizeParams | None = None
) -> ToyProgram:
    """Random well-formed program with a uniform total operator count.

    Draws total ops uniformly from [min_ops, max_ops], spreads them over
    up to three assignments plus a final expression, and renders with
    parentheses wherever precedence requires them (plus occasional
    redundant ones).
    """
    seed = rng if isinstance(rng, int) else None
    if isinstance(rng, int):
        rng = random.Random(rng)
    sp = size_params or SizeParams()

    total_ops = rng.randint(sp.min_ops, sp.max_ops)
    n_assign = rng.randint(0, min(3, total_ops))
    # Every assignment gets at least one op; leftovers spread uniformly.
    op_budget = [1] * n_assign + [0]
    for _ in range(total_ops - n_assign):
        op_budget[rng.randrange(n_assign + 1)] += 1

    inputs = [f"x{i}" for i in range(sp.num_vars)]
    temps: list[str] = []

    def leaf() -> Expr:
        if rng.random() < 0.6:
            return Var(name=rng.choice(inputs + temps))
        return Lit(value=rng.randint(0, 9))

    def build(ops: int) -> Expr:
        if ops == 0:
            return leaf()
        left_ops = rng.randint(0, ops - 1)
        return BinOp(
            op=rng.choice("+-*"),
            left=build(left_ops),
            right=build(ops - 1 - left_ops),
        )

    def render(node: Expr, parent_op: str | None, side: str) -> str:
        if isinstance(node, Lit):
            return str(node.value)
        if isinstance(node, Var):
            return node.name
        text = " ".join(
            [
                render(node.left, node.op, "left"),
                node.op,
                render(node.right, node.op, "right"),
            ]
        )
        needed = _needs_parens(node.op, parent_op, side)
        if needed or (parent_op is not None and rng.random() < 0.15):
            return f"({text})"
        return text

    lines = []
    for i in range(n_assign):
        name = f"t{i}"
        lines.append(f"{name} = {render(build(op_budget[i]), None, 'root')}")
        temps.append(name)
    lines.append(render(build(op_budget[n_assign]), None, "root"))
    return ToyProgram(source="\n".join(lines), seed=seed)


def _needs_parens(child_op: str, parent_op: str | None, side: str) -> bool:
    if parent_op is None:
        return False
    if parent_op == "*":
        return child_op in ("+", "-")
    if parent_op == "-" and side == "right":
        return child_op in ("+", "-")
    return False


# ----------------------------------------------------- record builder

METRIC_MODES = ("cheap", "exec", "both")


def program_example(
    program: ToyProgram,
    metrics_mode: str,
    task_id: str | None = None,
    group_id: str | None = None,
    env_seed: int = 0,
) -> RegressionExample:
    """Wrap a program and its metrics as a dataset record."""
    if metrics_mode not in METRIC_MODES:
        raise ValueError(f"metrics_mode must be one of {METRIC_MODES}")
    metrics: list[Metric] = []
    if metrics_mode in ("cheap", "both"):
        metrics.append(Metric("op_count", float(static_op_count(program))))
    if metrics_mode in ("exec", "both"):
        steps, peak = exec_metrics(program, env_seed=env_seed)
        metrics.append(Metric("step_count", float(steps)))
        metrics.append(Metric("peak_stack", float(peak)))
    return RegressionExample(
        task_id=task_id or f"toy_{metrics_mode}",
        input_text=program.source,
        metrics=tuple(metrics),
        group_id=group_id,
    )


def generate_examples(
    n: int,
    seed: int,
    metrics_mode: str = "both",
    size_params: SizeParams | None = None,
    group_size: int | None = None,
    task_id: str | None = None,
) -> list[RegressionExample]:
    """n seeded programs as records; optional consecutive grouping."""
    rng = random.Random(seed)
    out = []
    for i in range(n):
        program = gen_program(rng, size_params)
        group = None if group_size is None else f"g{i // group_size}"
        out.append(
            program_example(
                program, metrics_mode, task_id=task_id, group_id=group
            )
        )
    return out

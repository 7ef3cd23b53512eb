"""Quality Constraint language: parser, printer and runtime monitor.

Grammar (whitespace-insensitive)::

    qc       := expr [('along' | 'within') DURATION]
    expr     := term CMP term
    term     := IDENT | NUMBER | 'true' | 'false' | 'eval' '(' csl ')'
    csl      := 'P' ('=?' | CMP NUMBER) '[' 'F' '<=' NUMBER STRING ']'
    DURATION := NUMBER ('m' | 'h')
    CMP      := '=' | '!=' | '<' | '<=' | '>' | '>='

Example::

    eval(P=? [ F<=30 "violState" ]) <= 0.05 within 30m
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Union

from .ctmc import COMPARATORS, Ctmc, ReachabilityQuery, check_prob_bound, transient_reach_prob


class QcSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.message = message
        self.line = line
        self.column = column


class QcEvalError(RuntimeError):
    """Raised when a constraint cannot be evaluated (missing KPI, type mismatch)."""


# --- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class CslFormula:
    """``P=? [F<=T goal]`` (``comparator`` None) or ``P~p [F<=T goal]``."""

    time_bound: float
    goal_label: str
    comparator: str | None = None
    threshold: float | None = None

    def __post_init__(self) -> None:
        if not self.time_bound > 0:
            raise ValueError(f"time bound must be positive, got {self.time_bound}")
        if self.comparator is not None and not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"probability bound must lie in [0, 1], got {self.threshold}")

    def to_query(self) -> ReachabilityQuery:
        return ReachabilityQuery(self.goal_label, self.time_bound, self.comparator,
                                 self.threshold)


@dataclass(frozen=True)
class KpiRef:
    name: str


@dataclass(frozen=True)
class Const:
    value: Union[float, bool]


@dataclass(frozen=True)
class Eval:
    formula: CslFormula


Term = Union[KpiRef, Const, Eval]


@dataclass(frozen=True)
class Compare:
    lhs: Term
    op: str
    rhs: Term


@dataclass(frozen=True)
class Along:
    body: Compare
    duration: float


@dataclass(frozen=True)
class Within:
    body: Compare
    duration: float


QcAst = Union[Compare, Along, Within]


# --- printing --------------------------------------------------------------


def format_number(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def _format_term(term: Term) -> str:
    if isinstance(term, KpiRef):
        return term.name
    if isinstance(term, Const):
        if isinstance(term.value, bool):
            return "true" if term.value else "false"
        return format_number(term.value)
    return f"eval({format_csl(term.formula)})"


def format_csl(f: CslFormula) -> str:
    prob = "=?" if f.comparator is None else f"{f.comparator}{format_number(f.threshold)}"
    return f'P{prob} [ F<={format_number(f.time_bound)} "{f.goal_label}" ]'


def format_qc(ast: QcAst) -> str:
    if isinstance(ast, (Along, Within)):
        keyword = "along" if isinstance(ast, Along) else "within"
        return f"{format_qc(ast.body)} {keyword} {format_number(ast.duration)}m"
    return f"{_format_term(ast.lhs)} {ast.op} {_format_term(ast.rhs)}"


# --- lexing / parsing ------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
  | (?P<string>"[^"\n]*")
  | (?P<op><=|>=|!=|==|=\?|[=<>]|≤|≥|≠)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<punct>[()\[\]])
    """,
    re.VERBOSE,
)

_OP_ALIASES = {"==": "=", "≤": "<=", "≥": ">=", "≠": "!="}
_KEYWORDS = {"eval", "true", "false", "along", "within"}


@dataclass
class _Token:
    kind: str
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise QcSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "ws":
            for i, ch in enumerate(m.group(), start=pos):
                if ch == "\n":
                    line, line_start = line + 1, i + 1
        else:
            tok_text = m.group()
            if kind == "op":
                tok_text = _OP_ALIASES.get(tok_text, tok_text)
            tokens.append(_Token(kind, tok_text, line, pos - line_start + 1))
        pos = m.end()
    tokens.append(_Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def error(self, message: str) -> QcSyntaxError:
        return QcSyntaxError(message, self.tok.line, self.tok.column)

    def advance(self) -> _Token:
        tok = self.tok
        self.i += 1
        return tok

    def expect(self, kind: str, text: str | None = None) -> _Token:
        tok = self.tok
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text or kind
            got = tok.text or "end of input"
            raise self.error(f"expected {want!r}, got {got!r}")
        return self.advance()

    def number(self) -> float:
        tok = self.tok
        value = float(self.expect("number").text)
        if not math.isfinite(value):
            raise QcSyntaxError(f"number out of range: {tok.text}", tok.line, tok.column)
        return value

    def comparator(self) -> str:
        tok = self.tok
        if tok.kind != "op" or tok.text not in COMPARATORS:
            raise self.error(f"unknown comparator {tok.text or 'end of input'!r}")
        return self.advance().text

    def qc(self) -> QcAst:
        body = Compare(self.term(), self.comparator(), self.term())
        if self.tok.kind == "ident" and self.tok.text in ("along", "within"):
            keyword = self.advance().text
            duration = self.duration()
            body = Along(body, duration) if keyword == "along" else Within(body, duration)
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.text!r} after constraint")
        return body

    def duration(self) -> float:
        value = self.number()
        unit = self.tok
        if unit.kind != "ident" or unit.text not in ("m", "h"):
            raise self.error("malformed duration: expected unit 'm' or 'h'")
        self.advance()
        minutes = value * 60.0 if unit.text == "h" else value
        if not minutes > 0 or not math.isfinite(minutes):
            raise self.error(f"malformed duration: must be positive, got {value}")
        return minutes

    def term(self) -> Term:
        tok = self.tok
        if tok.kind == "number":
            return Const(self.number())
        if tok.kind == "ident":
            if tok.text in ("true", "false"):
                self.advance()
                return Const(tok.text == "true")
            if tok.text == "eval":
                self.advance()
                self.expect("punct", "(")
                formula = self.csl()
                self.expect("punct", ")")
                return Eval(formula)
            if tok.text in _KEYWORDS:
                raise self.error(f"unexpected keyword {tok.text!r}")
            return KpiRef(self.advance().text)
        raise self.error(f"expected a term, got {tok.text or 'end of input'!r}")

    def csl(self) -> CslFormula:
        self.expect("ident", "P")
        if self.tok.kind == "op" and self.tok.text == "=?":
            self.advance()
            comparator, threshold = None, None
        else:
            comparator = self.comparator()
            threshold = self.number()
            if not 0.0 <= threshold <= 1.0:
                raise self.error(f"probability bound {threshold} outside [0, 1]")
        self.expect("punct", "[")
        self.expect("ident", "F")
        self.expect("op", "<=")
        bound = self.number()
        if not bound > 0:
            raise self.error(f"time bound must be positive, got {bound}")
        label = self.expect("string").text[1:-1]
        self.expect("punct", "]")
        return CslFormula(bound, label, comparator, threshold)


def parse_qc(text: str) -> QcAst:
    """Parse one Quality Constraint."""
    return _Parser(text).qc()


def parse_qc_file(text: str) -> list[tuple[str, QcAst]]:
    """Parse a QC file: one constraint per line, ``#`` comments, optional ``id:`` prefix."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        qc_id, offset = f"qc{lineno}", 0
        m = re.match(r"\s*([A-Za-z_][A-Za-z0-9_\-]*)\s*:", line)
        if m:
            qc_id, offset = m.group(1), m.end()
        try:
            out.append((qc_id, parse_qc(line[offset:])))
        except QcSyntaxError as exc:
            raise QcSyntaxError(exc.message, lineno, exc.column + offset) from None
    return out


# --- evaluation ------------------------------------------------------------


def eval_csl(formula: CslFormula, ctmc: Ctmc) -> float | bool:
    """Probability for ``P=?`` formulas, truth value for bounded ones."""
    query = formula.to_query()
    if query.is_bounded:
        return check_prob_bound(ctmc, query)
    return transient_reach_prob(ctmc, query)


class CtmcChecker:
    """Resolves ``eval`` terms against one model snapshot, memoising results."""

    def __init__(self, ctmc: Ctmc):
        self.ctmc = ctmc
        self._cache: dict[CslFormula, float | bool] = {}

    def __call__(self, formula: CslFormula) -> float | bool:
        if formula not in self._cache:
            self._cache[formula] = eval_csl(formula, self.ctmc)
        return self._cache[formula]


Checker = Callable[[CslFormula], Union[float, bool]]


def _resolve(term: Term, kpis: Mapping[str, float], checker: Checker | None,
             evidence: dict[str, float | bool]) -> float | bool:
    if isinstance(term, Const):
        return term.value
    if isinstance(term, KpiRef):
        if term.name not in kpis:
            raise QcEvalError(f"missing KPI value {term.name!r}")
        return kpis[term.name]
    if checker is None:
        raise QcEvalError("eval() term needs a model checker")
    value = checker(term.formula)
    evidence[format_csl(term.formula)] = value
    return value


def evaluate_compare(cmp: Compare, kpis: Mapping[str, float], checker: Checker | None,
                     evidence: dict[str, float | bool] | None = None) -> bool:
    evidence = {} if evidence is None else evidence
    lhs = _resolve(cmp.lhs, kpis, checker, evidence)
    rhs = _resolve(cmp.rhs, kpis, checker, evidence)
    if isinstance(lhs, bool) != isinstance(rhs, bool):
        raise QcEvalError(f"cannot compare {lhs!r} with {rhs!r}")
    if isinstance(lhs, bool) and cmp.op not in ("=", "!="):
        raise QcEvalError(f"operator {cmp.op} is not defined on booleans")
    return bool(COMPARATORS[cmp.op](lhs, rhs))


# --- monitoring ------------------------------------------------------------


class Status(enum.Enum):
    SATISFIED = "Satisfied"
    VIOLATED = "Violated"
    PENDING = "Pending"
    ERROR = "Error"


@dataclass(frozen=True)
class QcVerdict:
    status: Status
    timestamp: float
    evidence: Mapping[str, float | bool] = field(default_factory=dict)
    alert: bool = False
    diagnostic: str = ""


@dataclass
class _Window:
    anchor: float
    seen_true: bool = False
    seen_false: bool = False


class QcMonitor:
    """Runtime monitor for one constraint.

    Every evaluation instant opens a window ``[t, t + T)``. A window is decided
    early when its outcome is forced (a false instant for ``along``, a true one
    for ``within``) and otherwise when it closes. With a known ``period`` a
    window closes at the last instant that can still fall inside it;
    without one it closes when an instant at or past its end arrives.

    A ``Violated`` verdict carries ``alert=True`` only for the first violation
    of an episode; the episode ends at the next ``Satisfied`` verdict.
    """

    def __init__(self, ast: QcAst, period: float | None = None):
        self.ast = ast
        self.period = period
        self.open: list[_Window] = []
        self.closed: list[tuple[float, Status]] = []
        self.last_timestamp: float | None = None
        self.in_episode = False

    @property
    def body(self) -> Compare:
        return self.ast if isinstance(self.ast, Compare) else self.ast.body

    def step(self, timestamp: float, kpis: Mapping[str, float],
             checker: Checker | None = None) -> QcVerdict:
        if self.last_timestamp is not None and timestamp <= self.last_timestamp:
            raise ValueError(f"timestamps must strictly increase: {timestamp}")
        self.last_timestamp = timestamp
        evidence: dict[str, float | bool] = {}
        try:
            value = evaluate_compare(self.body, kpis, checker, evidence)
        except Exception as exc:  # checker failures become Error verdicts
            return QcVerdict(Status.ERROR, timestamp, evidence, diagnostic=str(exc))

        if isinstance(self.ast, Compare):
            status = Status.SATISFIED if value else Status.VIOLATED
        else:
            status = self._step_window(timestamp, value)
        alert = status is Status.VIOLATED and not self.in_episode
        if status is Status.VIOLATED:
            self.in_episode = True
        elif status is Status.SATISFIED:
            self.in_episode = False
        return QcVerdict(status, timestamp, evidence, alert)

    def _step_window(self, t: float, value: bool) -> Status:
        is_along = isinstance(self.ast, Along)
        duration = self.ast.duration
        decided: list[Status] = []
        still_open = []

        # windows that ended before this instant (no period known)
        for w in self.open:
            if t >= w.anchor + duration:
                decided.append(self._close(w, is_along))
            else:
                still_open.append(w)
        still_open.append(_Window(t))
        self.open = []

        for w in still_open:
            w.seen_true |= value
            w.seen_false |= not value
            if is_along and w.seen_false:
                decided.append(self._finish(w, Status.VIOLATED))
            elif not is_along and w.seen_true:
                decided.append(self._finish(w, Status.SATISFIED))
            elif self.period is not None and t + self.period >= w.anchor + duration:
                decided.append(self._close(w, is_along))
            else:
                self.open.append(w)

        if Status.VIOLATED in decided:
            return Status.VIOLATED
        if Status.SATISFIED in decided:
            return Status.SATISFIED
        return Status.PENDING

    def _close(self, w: _Window, is_along: bool) -> Status:
        if is_along:
            status = Status.VIOLATED if w.seen_false else Status.SATISFIED
        else:
            status = Status.SATISFIED if w.seen_true else Status.VIOLATED
        return self._finish(w, status)

    def _finish(self, w: _Window, status: Status) -> Status:
        self.closed.append((w.anchor, status))
        return status


def eval_step(monitor: QcMonitor, timestamp: float, kpi_values: Mapping[str, float],
              checker: Checker | Ctmc | None = None) -> QcVerdict:
    """Advance ``monitor`` by one evaluation instant."""
    if isinstance(checker, Ctmc):
        checker = CtmcChecker(checker)
    return monitor.step(timestamp, kpi_values, checker)

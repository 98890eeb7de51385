"""Lexer, parser and validator for the FOL constraint language.

Grammar (lowest to highest precedence)::

    formula   := iff
    iff       := implies ('iff' implies)*
    implies   := or ('implies' implies)?          # right-associative
    or        := and ('or' and)*
    and       := unary ('and' unary)*
    unary     := 'not' unary | quant | '(' formula ')' | atom
    quant     := ('forall' | 'exists') IDENT ('in' IDENT)? ':' formula
    atom      := term '=' term | IDENT '(' term (',' term)* ')'
    term      := IDENT | IDENT '(' term (',' term)* ')'

A quantifier body extends as far right as possible.  ``=>``, ``<=>``, ``&``,
``|``, ``~`` and ``=`` are accepted as operator spellings, as are the usual
Unicode connectives.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Iterator, List, Optional, Tuple, Union

KEYWORDS = {"forall", "exists", "not", "and", "or", "implies", "iff", "in"}

_OPERATORS = [
    ("<=>", "iff"), ("=>", "implies"), ("&", "and"), ("|", "or"), ("~", "not"),
    ("=", "equals"), ("(", "lparen"), (")", "rparen"), (",", "comma"), (":", "colon"),
    ("\u21d4", "iff"), ("\u2194", "iff"), ("\u21d2", "implies"), ("\u2192", "implies"),
    ("\u2227", "and"), ("\u2228", "or"), ("\u00ac", "not"),
    ("\u2200", "forall"), ("\u2203", "exists"),
]
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


# ---------------------------------------------------------------------------
# errors


class FolError(Exception):
    """Base class; every error carries the source position it refers to."""

    def __init__(self, message: str, position: Optional["Position"] = None):
        where = f" at {position}" if position is not None else ""
        super().__init__(message + where)
        self.position = position


class IllegalCharacter(FolError):
    def __init__(self, char, position):
        super().__init__(f"illegal character {char!r}", position)
        self.char = char


class UnterminatedIdentifier(FolError):
    def __init__(self, position):
        super().__init__("unterminated quoted identifier", position)


class UnexpectedToken(FolError):
    def __init__(self, expected, got, position):
        super().__init__(f"expected {expected}, got {got}", position)
        self.expected = expected
        self.got = got


class DanglingQuantifier(FolError):
    def __init__(self, position):
        super().__init__("quantifier without a body", position)


class UnboundVariable(FolError):
    def __init__(self, name, position=None):
        super().__init__(f"unbound variable {name!r}", position)
        self.name = name


class ShadowedVariable(FolError):
    def __init__(self, name, position=None):
        super().__init__(f"variable {name!r} is already bound by an enclosing quantifier", position)
        self.name = name


class UnknownSymbol(FolError):
    def __init__(self, name, position=None):
        super().__init__(f"unknown symbol {name!r}", position)
        self.name = name


class ArityMismatch(FolError):
    def __init__(self, symbol, expected, got, position=None):
        super().__init__(f"{symbol} expects {expected} argument(s), got {got}", position)
        self.symbol, self.expected, self.got = symbol, expected, got


class DomainMismatch(FolError):
    def __init__(self, detail, position=None):
        super().__init__(f"domain mismatch: {detail}", position)


# ---------------------------------------------------------------------------
# tokens


@dataclass(frozen=True, order=True)
class Position:
    offset: int
    line: int
    column: int

    def __str__(self):
        return f"{self.line}:{self.column}"


@dataclass(frozen=True)
class Token:
    kind: str
    lexeme: str
    position: Position

    def __repr__(self):
        if self.kind == "identifier":
            return f"ident({self.lexeme})"
        return self.kind


def tokenize(source: str) -> List[Token]:
    tokens: List[Token] = []
    i, line, col = 0, 1, 1
    n = len(source)
    while i < n:
        ch = source[i]
        pos = Position(i, line, col)
        if ch == "\n":
            i, line, col = i + 1, line + 1, 1
            continue
        if ch.isspace():
            i, col = i + 1, col + 1
            continue
        if ch == "`":
            end = source.find("`", i + 1)
            if end < 0 or "\n" in source[i + 1:end]:
                raise UnterminatedIdentifier(pos)
            lexeme = source[i:end + 1]
            tokens.append(Token("identifier", lexeme, pos))
            col += len(lexeme)
            i = end + 1
            continue
        m = _IDENT.match(source, i)
        if m:
            word = m.group()
            kind = word if word in KEYWORDS else "identifier"
            tokens.append(Token(kind, word, pos))
            i, col = m.end(), col + len(word)
            continue
        for spelling, kind in _OPERATORS:
            if source.startswith(spelling, i):
                tokens.append(Token(kind, spelling, pos))
                i, col = i + len(spelling), col + len(spelling)
                break
        else:
            raise IllegalCharacter(ch, pos)
    return tokens


def ident_name(lexeme: str) -> str:
    return lexeme[1:-1] if lexeme.startswith("`") else lexeme


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Var:
    name: str
    pos: Optional[Position] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class FunctionApp:
    symbol: str
    args: Tuple["Term", ...]
    pos: Optional[Position] = field(default=None, compare=False, repr=False)


Term = Union[Var, FunctionApp]


@dataclass(frozen=True)
class PredicateAtom:
    symbol: str
    args: Tuple[Term, ...]
    pos: Optional[Position] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class EqualityAtom:
    left: Term
    right: Term
    pos: Optional[Position] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Connective:
    op: str
    children: Tuple["Formula", ...]
    pos: Optional[Position] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        want = 1 if self.op == "not" else 2
        if len(self.children) != want:
            raise ValueError(f"{self.op} takes {want} operand(s)")


@dataclass(frozen=True)
class Quantified:
    kind: str
    variable: str
    domain: Optional[str]
    body: "Formula"
    pos: Optional[Position] = field(default=None, compare=False, repr=False)


Formula = Union[Quantified, Connective, PredicateAtom, EqualityAtom]


def term_vars(t: Term) -> Iterator[str]:
    if isinstance(t, Var):
        yield t.name
    else:
        for a in t.args:
            yield from term_vars(a)


def atom_vars(atom) -> List[str]:
    terms = atom.args if isinstance(atom, PredicateAtom) else (atom.left, atom.right)
    seen: List[str] = []
    for t in terms:
        for v in term_vars(t):
            if v not in seen:
                seen.append(v)
    return seen


# ---------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, tokens: List[Token]):
        self.toks = tokens
        self.i = 0

    def peek(self) -> Optional[Token]:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def _end_pos(self):
        if not self.toks:
            return Position(0, 1, 1)
        last = self.toks[-1].position
        n = len(self.toks[-1].lexeme)
        return Position(last.offset + n, last.line, last.column + n)

    def expect(self, kind: str) -> Token:
        tok = self.peek()
        if tok is None or tok.kind != kind:
            self.fail(kind)
        self.i += 1
        return tok

    def fail(self, expected):
        tok = self.peek()
        got = "end of input" if tok is None else repr(tok)
        raise UnexpectedToken(expected, got, tok.position if tok else self._end_pos())

    def accept(self, kind: str) -> Optional[Token]:
        tok = self.peek()
        if tok is not None and tok.kind == kind:
            self.i += 1
            return tok
        return None

    def parse(self) -> Formula:
        f = self.formula()
        if self.peek() is not None:
            self.fail("end of input")
        return f

    def formula(self):
        left = self.implies()
        while (tok := self.accept("iff")) is not None:
            left = Connective("iff", (left, self.implies()), tok.position)
        return left

    def implies(self):
        left = self.disj()
        tok = self.accept("implies")
        if tok is not None:
            return Connective("implies", (left, self.implies()), tok.position)
        return left

    def disj(self):
        left = self.conj()
        while (tok := self.accept("or")) is not None:
            left = Connective("or", (left, self.conj()), tok.position)
        return left

    def conj(self):
        left = self.unary()
        while (tok := self.accept("and")) is not None:
            left = Connective("and", (left, self.unary()), tok.position)
        return left

    def unary(self):
        tok = self.peek()
        if tok is None:
            self.fail("formula")
        if tok.kind == "not":
            self.i += 1
            return Connective("not", (self.unary(),), tok.position)
        if tok.kind in ("forall", "exists"):
            return self.quantifier()
        if tok.kind == "lparen":
            self.i += 1
            f = self.formula()
            self.expect("rparen")
            return f
        return self.atom()

    def quantifier(self):
        q = self.peek()
        self.i += 1
        var = self.expect("identifier")
        domain = None
        if self.accept("in") is not None:
            domain = ident_name(self.expect("identifier").lexeme)
        self.expect("colon")
        if self.peek() is None:
            raise DanglingQuantifier(q.position)
        body = self.formula()
        return Quantified(q.kind, ident_name(var.lexeme), domain, body, q.position)

    def term(self) -> Term:
        name = self.expect("identifier")
        if self.accept("lparen") is None:
            return Var(ident_name(name.lexeme), name.position)
        args = [self.term()]
        while self.accept("comma") is not None:
            args.append(self.term())
        self.expect("rparen")
        return FunctionApp(ident_name(name.lexeme), tuple(args), name.position)

    def atom(self):
        tok = self.peek()
        if tok.kind != "identifier":
            self.fail("formula")
        t = self.term()
        eq = self.accept("equals")
        if eq is not None:
            return EqualityAtom(t, self.term(), eq.position)
        if isinstance(t, Var):
            self.fail("'(' or '='")
        return PredicateAtom(t.symbol, t.args, t.pos)


def parse_formula(tokens: List[Token]) -> Formula:
    return _Parser(tokens).parse()


def parse(source: str) -> Formula:
    return parse_formula(tokenize(source))


# ---------------------------------------------------------------------------
# pretty printing

_PREC = {"iff": 1, "implies": 2, "or": 3, "and": 4, "not": 5}
_SPELL = {"iff": "iff", "implies": "implies", "or": "or", "and": "and"}


def format_term(t: Term) -> str:
    if isinstance(t, Var):
        return t.name
    return f"{t.symbol}({', '.join(format_term(a) for a in t.args)})"


def pretty(f: Formula, full_parens: bool = False) -> str:
    """Render ``f`` so that parsing the result gives back an identical AST."""
    if full_parens:
        return _pretty_full(f)
    return _pretty(f, 0)


def _pretty_full(f: Formula) -> str:
    if isinstance(f, Quantified):
        dom = f" in {f.domain}" if f.domain else ""
        return f"({f.kind} {f.variable}{dom}: {_pretty_full(f.body)})"
    if isinstance(f, Connective):
        if f.op == "not":
            return f"(not {_pretty_full(f.children[0])})"
        a, b = f.children
        return f"({_pretty_full(a)} {f.op} {_pretty_full(b)})"
    return _atom_str(f)


def _atom_str(f) -> str:
    if isinstance(f, EqualityAtom):
        return f"{format_term(f.left)} = {format_term(f.right)}"
    return f"{f.symbol}({', '.join(format_term(a) for a in f.args)})"


def _pretty(f: Formula, ctx: int) -> str:
    # ctx: minimum precedence the surrounding position binds without parens
    if isinstance(f, Quantified):
        dom = f" in {f.domain}" if f.domain else ""
        s = f"{f.kind} {f.variable}{dom}: {_pretty(f.body, 0)}"
        return f"({s})" if ctx > 0 else s
    if isinstance(f, Connective):
        p = _PREC[f.op]
        if f.op == "not":
            return f"not {_pretty(f.children[0], p)}"
        a, b = f.children
        if f.op == "implies":
            # right-assoc: left operand must bind tighter
            s = f"{_pretty(a, p + 1)} implies {_pretty(b, p)}"
        else:
            s = f"{_pretty(a, p)} {f.op} {_pretty(b, p + 1)}"
        return f"({s})" if p < ctx else s
    return _atom_str(f)


# ---------------------------------------------------------------------------
# signatures and validation


@dataclass(frozen=True)
class DomainSig:
    shape: Tuple[int, ...]
    kind: str = "vector"  # vector | image

    @property
    def size(self) -> int:
        n = 1
        for s in self.shape:
            n *= s
        return n


@dataclass(frozen=True)
class PredicateSig:
    arity: int
    kind: str = "learnable"  # learnable | given
    domains: Optional[Tuple[Optional[str], ...]] = None


@dataclass(frozen=True)
class FunctionSig:
    domains: Tuple[Optional[str], ...]
    codomain: Optional[str] = None

    @property
    def arity(self) -> int:
        return len(self.domains)


@dataclass
class Signature:
    predicates: Dict[str, PredicateSig] = field(default_factory=dict)
    functions: Dict[str, FunctionSig] = field(default_factory=dict)
    domains: Dict[str, DomainSig] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.predicates.items():
            if p.arity < 1:
                raise ValueError(f"predicate {name} must have arity >= 1")
        for name, fn in self.functions.items():
            if fn.arity < 1:
                raise ValueError(f"function {name} must have arity >= 1")
        for name, d in self.domains.items():
            if not d.shape or any(s <= 0 for s in d.shape):
                raise ValueError(f"domain {name} needs a positive shape")


class _Validator:
    def __init__(self, sig: Signature):
        self.sig = sig
        self.var_domains: Dict[int, Optional[str]] = {}

    def check(self, f: Formula) -> Formula:
        # pass 1: structure, scoping, arity; infer domains
        self._walk(f, {})
        # pass 2: rebuild with annotated domains and check term domains
        return self._annotate(f, {})

    def _walk(self, f, scope: Dict[str, int]):
        if isinstance(f, Quantified):
            if f.variable in scope:
                raise ShadowedVariable(f.variable, f.pos)
            if f.domain is not None and f.domain not in self.sig.domains:
                raise UnknownSymbol(f.domain, f.pos)
            key = id(f)
            self.var_domains[key] = f.domain
            self._walk(f.body, {**scope, f.variable: key})
            if self.var_domains[key] is None:
                if len(self.sig.domains) == 1:
                    self.var_domains[key] = next(iter(self.sig.domains))
                else:
                    raise DomainMismatch(f"cannot infer a domain for {f.variable!r}", f.pos)
        elif isinstance(f, Connective):
            for c in f.children:
                self._walk(c, scope)
        elif isinstance(f, PredicateAtom):
            psig = self.sig.predicates.get(f.symbol)
            if psig is None:
                raise UnknownSymbol(f.symbol, f.pos)
            if psig.arity != len(f.args):
                raise ArityMismatch(f.symbol, psig.arity, len(f.args), f.pos)
            doms = psig.domains or (None,) * psig.arity
            for a, d in zip(f.args, doms):
                if psig.kind == "given" and not isinstance(a, Var):
                    raise DomainMismatch(f"given predicate {f.symbol} applied to a computed term", f.pos)
                self._term(a, scope, d)
        else:
            self._term(f.left, scope, None)
            self._term(f.right, scope, None)

    def _term(self, t: Term, scope, expected: Optional[str]):
        if isinstance(t, Var):
            if t.name not in scope:
                raise UnboundVariable(t.name, t.pos)
            key = scope[t.name]
            if self.var_domains.get(key) is None and expected is not None:
                self.var_domains[key] = expected
            return
        fsig = self.sig.functions.get(t.symbol)
        if fsig is None:
            raise UnknownSymbol(t.symbol, t.pos)
        if fsig.arity != len(t.args):
            raise ArityMismatch(t.symbol, fsig.arity, len(t.args), t.pos)
        for a, d in zip(t.args, fsig.domains):
            self._term(a, scope, d)

    def _annotate(self, f, scope: Dict[str, str]):
        if isinstance(f, Quantified):
            dom = self.var_domains[id(f)]
            return replace(f, domain=dom, body=self._annotate(f.body, {**scope, f.variable: dom}))
        if isinstance(f, Connective):
            return replace(f, children=tuple(self._annotate(c, scope) for c in f.children))
        if isinstance(f, PredicateAtom):
            psig = self.sig.predicates[f.symbol]
            for a, d in zip(f.args, psig.domains or (None,) * psig.arity):
                got = self.term_domain(a, scope)
                if d is not None and got is not None and got != d:
                    raise DomainMismatch(f"{format_term(a)} is in {got}, {f.symbol} expects {d}", a.pos or f.pos)
            return f
        left = self.term_domain(f.left, scope)
        right = self.term_domain(f.right, scope)
        if left is not None and right is not None:
            ls, rs = self.sig.domains[left].shape, self.sig.domains[right].shape
            if left != right and ls != rs:
                raise DomainMismatch(f"cannot equate {left} with {right}", f.pos)
        return f

    def term_domain(self, t: Term, scope) -> Optional[str]:
        if isinstance(t, Var):
            return scope[t.name]
        fsig = self.sig.functions[t.symbol]
        for a, d in zip(t.args, fsig.domains):
            got = self.term_domain(a, scope)
            if d is not None and got is not None and got != d:
                raise DomainMismatch(f"{format_term(a)} is in {got}, {t.symbol} expects {d}", a.pos or t.pos)
        return fsig.codomain


def validate(ast: Formula, sig: Signature) -> Formula:
    """Check closedness, arity and domains; return the AST with every quantifier domain filled in."""
    return _Validator(sig).check(ast)


def infer_signature(formulas: Iterable[Formula], default_domain: str = "Object") -> Signature:
    """Loose signature read off the formulas themselves: every predicate learnable,
    arities from first use, domains from ``in`` annotations (else one default domain)."""
    preds: Dict[str, int] = {}
    funcs: Dict[str, int] = {}
    domains = set()

    def note(table, sym, n, pos):
        if table.setdefault(sym, n) != n:
            raise ArityMismatch(sym, table[sym], n, pos)

    def term(t):
        if isinstance(t, FunctionApp):
            note(funcs, t.symbol, len(t.args), t.pos)
            for a in t.args:
                term(a)

    def walk(f):
        if isinstance(f, Quantified):
            if f.domain:
                domains.add(f.domain)
            walk(f.body)
        elif isinstance(f, Connective):
            for ch in f.children:
                walk(ch)
        elif isinstance(f, PredicateAtom):
            note(preds, f.symbol, len(f.args), f.pos)
            for a in f.args:
                term(a)
        else:
            term(f.left)
            term(f.right)

    for f in formulas:
        walk(f)
    if not domains:
        domains.add(default_domain)
    codomain = next(iter(domains)) if len(domains) == 1 else None
    return Signature(
        predicates={k: PredicateSig(n) for k, n in preds.items()},
        functions={k: FunctionSig((None,) * n, codomain) for k, n in funcs.items()},
        domains={d: DomainSig((1,)) for d in sorted(domains)},
    )


def term_domain(t: Term, var_domains: Dict[str, str], sig: Signature) -> Optional[str]:
    if isinstance(t, Var):
        return var_domains.get(t.name)
    return sig.functions[t.symbol].codomain


# ---------------------------------------------------------------------------
# constraint files

_PREFIX = re.compile(r"^\s*(weight|group|name)\s*=\s*([^\s:\]]+)\s*:")


@dataclass
class ConstraintSpec:
    formula: Formula
    source: str
    line: int = 0
    weight: float = 1.0
    group: str = "main"
    name: Optional[str] = None
    options: Dict[str, str] = field(default_factory=dict)

    @property
    def tnorm(self) -> Optional[str]:
        return self.options.get("tnorm")


class ConstraintFileError(FolError):
    pass


def _apply_option(spec_kw: dict, key: str, value: str, lineno: int):
    key = key.strip().lower()
    value = value.strip()
    if key == "weight":
        try:
            spec_kw["weight"] = float(value)
        except ValueError:
            raise ConstraintFileError(f"line {lineno}: bad weight {value!r}") from None
    elif key in ("group", "name"):
        spec_kw[key] = value
    else:
        spec_kw.setdefault("options", {})[key] = value


def parse_constraint_line(line: str, lineno: int = 0) -> Optional[ConstraintSpec]:
    text = line.split("#", 1)[0].strip()
    if not text:
        return None
    kw: dict = {}
    while True:
        if text.startswith("["):
            end = text.find("]")
            if end < 0:
                raise ConstraintFileError(f"line {lineno}: unterminated option block")
            for item in filter(None, (s.strip() for s in text[1:end].split(","))):
                if "=" not in item:
                    raise ConstraintFileError(f"line {lineno}: option {item!r} needs key=value")
                k, v = item.split("=", 1)
                _apply_option(kw, k, v, lineno)
            text = text[end + 1:].strip()
            continue
        m = _PREFIX.match(text)
        if m:
            _apply_option(kw, m.group(1), m.group(2), lineno)
            text = text[m.end():].strip()
            continue
        break
    if kw.get("weight", 1.0) < 0:
        raise ConstraintFileError(f"line {lineno}: negative weight")
    formula = parse(text)
    return ConstraintSpec(formula=formula, source=text, line=lineno, **kw)


def parse_constraints(text: str) -> List[ConstraintSpec]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        spec = parse_constraint_line(line, lineno)
        if spec is not None:
            if spec.name is None:
                spec.name = f"c{len(out)}"
            out.append(spec)
    return out


def load_constraints(path) -> List[ConstraintSpec]:
    with open(path, encoding="utf-8") as fh:
        return parse_constraints(fh.read())


def format_constraint(spec: ConstraintSpec) -> str:
    opts = dict(spec.options)
    opts["group"] = spec.group
    if spec.weight != 1.0:
        opts["weight"] = repr(spec.weight)
    tag = ", ".join(f"{k}={v}" for k, v in opts.items())
    return f"[{tag}] {pretty(spec.formula)}"

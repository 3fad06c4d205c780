"""ダイナミクスとコストを記述するスカラー算術式

構文解析・評価・記号微分・簡約を提供する。木は不変で、スレッド間で共有してよい。
"""
import math
import re
from dataclasses import dataclass
from functools import singledispatch
from typing import Callable, Iterable, List, Mapping, Optional, Sequence, Set

from utils.errors import (
    DomainError,
    ExprSyntaxError,
    MissingBindingError,
    UnknownFunctionError,
    UnknownVariableError,
)

FUNCTIONS = ("sin", "cos", "exp", "sqrt", "tanh", "abs")

_FUNCTION_IMPL = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "sqrt": math.sqrt,
    "tanh": math.tanh,
    "abs": abs,
}


class ExprAst:
    """式木ノードの基底クラス"""
    precedence = 5

    def __str__(self):
        return unparse(self)


@dataclass(frozen=True)
class Const(ExprAst):
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class Var(ExprAst):
    name: str


@dataclass(frozen=True)
class Add(ExprAst):
    left: ExprAst
    right: ExprAst
    precedence = 1
    symbol = "+"


@dataclass(frozen=True)
class Sub(ExprAst):
    left: ExprAst
    right: ExprAst
    precedence = 1
    symbol = "-"


@dataclass(frozen=True)
class Mul(ExprAst):
    left: ExprAst
    right: ExprAst
    precedence = 2
    symbol = "*"


@dataclass(frozen=True)
class Div(ExprAst):
    left: ExprAst
    right: ExprAst
    precedence = 2
    symbol = "/"


@dataclass(frozen=True)
class Neg(ExprAst):
    operand: ExprAst
    precedence = 3


@dataclass(frozen=True)
class Pow(ExprAst):
    base: ExprAst
    exponent: int
    precedence = 4

    def __post_init__(self):
        if not isinstance(self.exponent, int) or self.exponent < 0:
            raise ValueError(f"指数は0以上の整数である必要があります: {self.exponent}")


@dataclass(frozen=True)
class Func(ExprAst):
    name: str
    operand: ExprAst


BINARY_TYPES = (Add, Sub, Mul, Div)
_BINARY_BY_SYMBOL = {"+": Add, "-": Sub, "*": Mul, "/": Div}

ZERO = Const(0.0)
ONE = Const(1.0)


# ---------------------------------------------------------------------------
# 字句解析・構文解析

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),])"
    r")"
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> List[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        match = _TOKEN_RE.match(text, pos)
        if not match or match.end() == pos:
            offset = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(f"不正な文字 {text[offset]!r}", _byte_offset(text, offset), text)
        kind = match.lastgroup
        start = match.start(kind)
        tokens.append(_Token(kind, match.group(kind), start))
        pos = match.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


class _Parser:
    """再帰下降パーサ（優先順位: ^ > 単項マイナス > * / > + -）"""

    def __init__(self, text: str, allowed_vars: Set[str]):
        self.text = text
        self.allowed_vars = allowed_vars
        self.tokens = _tokenize(text)
        self.index = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.index]

    def _advance(self) -> _Token:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def _error(self, message: str, token: Optional[_Token] = None):
        token = token or self.current
        return ExprSyntaxError(message, _byte_offset(self.text, token.offset), self.text)

    def _expect(self, text: str):
        if self.current.text != text:
            raise self._error(f"'{text}' が必要です")
        self._advance()

    def parse(self) -> ExprAst:
        node = self._expression()
        if self.current.kind != "end":
            raise self._error(f"予期しないトークン {self.current.text!r}")
        return node

    def _expression(self) -> ExprAst:
        node = self._term()
        while self.current.text in ("+", "-"):
            op = self._advance().text
            node = _BINARY_BY_SYMBOL[op](node, self._term())
        return node

    def _term(self) -> ExprAst:
        node = self._unary()
        while self.current.text in ("*", "/"):
            op = self._advance().text
            node = _BINARY_BY_SYMBOL[op](node, self._unary())
        return node

    def _unary(self) -> ExprAst:
        if self.current.text == "-":
            self._advance()
            # 負の定数リテラル（直後に ^ がない場合のみ）
            if self.current.kind == "number" and self.tokens[self.index + 1].text != "^":
                return Const(-float(self._advance().text))
            return Neg(self._unary())
        if self.current.text == "+":
            self._advance()
            return self._unary()
        return self._power()

    def _power(self) -> ExprAst:
        node = self._atom()
        if self.current.text == "^":
            self._advance()
            token = self.current
            if token.kind != "number" or not re.fullmatch(r"\d+", token.text):
                raise self._error("指数は0以上の整数リテラルである必要があります")
            self._advance()
            node = Pow(node, int(token.text))
            if self.current.text == "^":
                raise self._error("連続した ^ は括弧で明示してください")
        return node

    def _atom(self) -> ExprAst:
        token = self.current
        if token.kind == "number":
            self._advance()
            return Const(float(token.text))
        if token.kind == "name":
            self._advance()
            if self.current.text == "(":
                if token.text not in FUNCTIONS:
                    raise UnknownFunctionError(f"未知の関数: {token.text}")
                self._advance()
                arg = self._expression()
                self._expect(")")
                return Func(token.text, arg)
            if token.text not in self.allowed_vars:
                raise UnknownVariableError(f"未知の変数: {token.text}")
            return Var(token.text)
        if token.text == "(":
            self._advance()
            node = self._expression()
            self._expect(")")
            return node
        if token.kind == "end":
            raise self._error("式が途中で終わっています")
        raise self._error(f"予期しないトークン {token.text!r}")


def parse(text: str, allowed_vars: Iterable[str]) -> ExprAst:
    """文字列を式木に変換

    Args:
        text: 式の文字列
        allowed_vars: 使用を許可する変数名

    Returns:
        式木
    """
    if text is None or not str(text).strip():
        raise ExprSyntaxError("空の式です", 0, text or "")
    return _Parser(str(text), set(allowed_vars)).parse()


# ---------------------------------------------------------------------------
# 文字列化

def _format_const(value: float) -> str:
    text = repr(float(value))
    return f"({text})" if value < 0 or text.startswith("-") else text


def unparse(node: ExprAst) -> str:
    """式木を再パース可能な文字列に戻す"""
    if isinstance(node, Const):
        return _format_const(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Func):
        return f"{node.name}({unparse(node.operand)})"
    if isinstance(node, Neg):
        inner = unparse(node.operand)
        if isinstance(node.operand, Const) or node.operand.precedence < Neg.precedence:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, Pow):
        base = unparse(node.base)
        if node.base.precedence < 5:
            base = f"({base})"
        return f"{base}^{node.exponent}"
    if isinstance(node, BINARY_TYPES):
        left = unparse(node.left)
        right = unparse(node.right)
        if node.left.precedence < node.precedence:
            left = f"({left})"
        if node.right.precedence <= node.precedence:
            right = f"({right})"
        return f"{left} {node.symbol} {right}"
    raise TypeError(f"未知のノード: {node!r}")


def free_vars(node: ExprAst) -> Set[str]:
    """式に現れる変数名の集合"""
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Const):
        return set()
    if isinstance(node, (Neg, Func)):
        return free_vars(node.operand)
    if isinstance(node, Pow):
        return free_vars(node.base)
    return free_vars(node.left) | free_vars(node.right)


# ---------------------------------------------------------------------------
# 評価

def _checked(value: float) -> float:
    if not math.isfinite(value):
        raise DomainError(f"評価結果が有限ではありません: {value}")
    return value


@singledispatch
def _eval(node, env):
    raise TypeError(f"評価できないノード: {node!r}")


@_eval.register
def _(node: Const, env):
    return node.value


@_eval.register
def _(node: Var, env):
    try:
        return float(env[node.name])
    except KeyError:
        raise MissingBindingError(f"変数 {node.name} の値がありません") from None


@_eval.register
def _(node: Add, env):
    return _eval(node.left, env) + _eval(node.right, env)


@_eval.register
def _(node: Sub, env):
    return _eval(node.left, env) - _eval(node.right, env)


@_eval.register
def _(node: Mul, env):
    return _eval(node.left, env) * _eval(node.right, env)


@_eval.register
def _(node: Div, env):
    return _eval(node.left, env) / _eval(node.right, env)


@_eval.register
def _(node: Neg, env):
    return -_eval(node.operand, env)


@_eval.register
def _(node: Pow, env):
    return _eval(node.base, env) ** node.exponent


@_eval.register
def _(node: Func, env):
    return _FUNCTION_IMPL[node.name](_eval(node.operand, env))


def evaluate(node: ExprAst, env: Mapping[str, float]) -> float:
    """式を倍精度で評価（NaN/Inf は DomainError）"""
    try:
        return _checked(float(_eval(node, env)))
    except (ZeroDivisionError, ValueError, OverflowError) as e:
        raise DomainError(f"評価中の定義域エラー: {e}") from None


def compile_expr(node: ExprAst, var_order: Sequence[str]) -> Callable[[Sequence[float]], float]:
    """式木を位置引数ベースの関数に変換（積分ループ用）

    返される関数は値の並び（var_order 順）を受け取る。有限性の検査は呼び出し側で行う。
    """
    index = {name: i for i, name in enumerate(var_order)}

    def build(n):
        if isinstance(n, Const):
            c = n.value
            return lambda v: c
        if isinstance(n, Var):
            if n.name not in index:
                raise UnknownVariableError(f"未知の変数: {n.name}")
            i = index[n.name]
            return lambda v: v[i]
        if isinstance(n, Neg):
            f = build(n.operand)
            return lambda v: -f(v)
        if isinstance(n, Pow):
            f = build(n.base)
            p = n.exponent
            return lambda v: f(v) ** p
        if isinstance(n, Func):
            f = build(n.operand)
            g = _FUNCTION_IMPL[n.name]
            return lambda v: g(f(v))
        left, right = build(n.left), build(n.right)
        if isinstance(n, Add):
            return lambda v: left(v) + right(v)
        if isinstance(n, Sub):
            return lambda v: left(v) - right(v)
        if isinstance(n, Mul):
            return lambda v: left(v) * right(v)
        return lambda v: left(v) / right(v)

    return build(node)


# ---------------------------------------------------------------------------
# 記号微分

@singledispatch
def _diff(node, var):
    raise TypeError(f"微分できないノード: {node!r}")


@_diff.register
def _(node: Const, var):
    return ZERO


@_diff.register
def _(node: Var, var):
    return ONE if node.name == var else ZERO


@_diff.register
def _(node: Add, var):
    return Add(_diff(node.left, var), _diff(node.right, var))


@_diff.register
def _(node: Sub, var):
    return Sub(_diff(node.left, var), _diff(node.right, var))


@_diff.register
def _(node: Mul, var):
    return Add(Mul(_diff(node.left, var), node.right), Mul(node.left, _diff(node.right, var)))


@_diff.register
def _(node: Div, var):
    numerator = Sub(Mul(_diff(node.left, var), node.right), Mul(node.left, _diff(node.right, var)))
    return Div(numerator, Pow(node.right, 2))


@_diff.register
def _(node: Neg, var):
    return Neg(_diff(node.operand, var))


@_diff.register
def _(node: Pow, var):
    if node.exponent == 0:
        return ZERO
    # d/dx u^n = n u^(n-1) u'
    return Mul(Mul(Const(node.exponent), Pow(node.base, node.exponent - 1)), _diff(node.base, var))


@_diff.register
def _(node: Func, var):
    arg = node.operand
    inner = _diff(arg, var)
    if node.name == "sin":
        outer = Func("cos", arg)
    elif node.name == "cos":
        outer = Neg(Func("sin", arg))
    elif node.name == "exp":
        outer = Func("exp", arg)
    elif node.name == "sqrt":
        outer = Div(ONE, Mul(Const(2.0), Func("sqrt", arg)))
    elif node.name == "tanh":
        outer = Sub(ONE, Pow(Func("tanh", arg), 2))
    else:
        # abs は 0 で微分不可能（評価時に 0/0 の DomainError）
        outer = Div(arg, Func("abs", arg))
    return Mul(outer, inner)


def differentiate(node: ExprAst, var: str, allowed_vars: Optional[Iterable[str]] = None) -> ExprAst:
    """変数 var に関する偏導関数を記号的に求める"""
    if allowed_vars is not None and var not in set(allowed_vars):
        raise UnknownVariableError(f"未知の変数: {var}")
    return simplify(_diff(node, var))


# ---------------------------------------------------------------------------
# 簡約（定数畳み込みと 0/1 の恒等式除去のみ）

def _fold(node: ExprAst) -> Optional[Const]:
    try:
        value = evaluate(node, {})
    except Exception:
        return None
    return Const(value)


def _is(node: ExprAst, value: float) -> bool:
    return isinstance(node, Const) and node.value == value


def simplify(node: ExprAst) -> ExprAst:
    """定数畳み込みと 0/1 の除去を行う（評価値は変えない）"""
    if isinstance(node, (Const, Var)):
        return node

    if isinstance(node, Neg):
        operand = simplify(node.operand)
        if isinstance(operand, Const):
            return Const(-operand.value)
        if isinstance(operand, Neg):
            return operand.operand
        return Neg(operand)

    if isinstance(node, Func):
        operand = simplify(node.operand)
        result = Func(node.name, operand)
        if isinstance(operand, Const):
            return _fold(result) or result
        return result

    if isinstance(node, Pow):
        base = simplify(node.base)
        if node.exponent == 0:
            return ONE
        if node.exponent == 1:
            return base
        result = Pow(base, node.exponent)
        if isinstance(base, Const):
            return _fold(result) or result
        return result

    left = simplify(node.left)
    right = simplify(node.right)
    if isinstance(left, Const) and isinstance(right, Const):
        folded = _fold(type(node)(left, right))
        if folded is not None:
            return folded

    if isinstance(node, Add):
        if _is(left, 0.0):
            return right
        if _is(right, 0.0):
            return left
        return Add(left, right)
    if isinstance(node, Sub):
        if _is(right, 0.0):
            return left
        if _is(left, 0.0):
            return simplify(Neg(right))
        return Sub(left, right)
    if isinstance(node, Mul):
        if _is(left, 0.0) or _is(right, 0.0):
            return ZERO
        if _is(left, 1.0):
            return right
        if _is(right, 1.0):
            return left
        return Mul(left, right)
    # Div
    if _is(left, 0.0):
        return ZERO
    if _is(right, 1.0):
        return left
    return Div(left, right)

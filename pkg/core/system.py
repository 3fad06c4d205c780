"""固定時間最適制御問題（大域自明化された幾何制御構造）とベンチマークカタログ"""
import json
import logging
import math
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core import expr
from fibers import BaseFiber, UnconstrainedFiber, fiber_from_dict
from utils.constants import Catalog, TOL_FIBER
from utils.errors import (
    DomainError,
    ExtremalKitError,
    FiberViolationError,
    InputFormatError,
    ProblemValidationError,
    UnknownProblemError,
    UnknownVariableError,
)

logger = logging.getLogger(__name__)

_ARITH_ERRORS = (ZeroDivisionError, ValueError, OverflowError)


def state_names(d: int) -> List[str]:
    return [f"x{i + 1}" for i in range(d)]


def control_names(k: int) -> List[str]:
    return [f"u{a + 1}" for a in range(k)]


@dataclass(frozen=True, eq=False)
class ControlProblem:
    """固定時間最適制御問題 dx/dt = ρ(t,x,u), 走行コスト L"""
    state_dim: int
    control_dim: int
    horizon: Tuple[float, float]
    dynamics: Tuple[str, ...]
    cost: str
    fiber: BaseFiber
    x_a: Optional[Tuple[float, ...]] = None
    x_b: Optional[Tuple[float, ...]] = None
    name: str = "custom"

    @property
    def variables(self) -> List[str]:
        return ["t"] + state_names(self.state_dim) + control_names(self.control_dim)

    @property
    def a(self) -> float:
        return float(self.horizon[0])

    @property
    def b(self) -> float:
        return float(self.horizon[1])

    @cached_property
    def compiled(self) -> "CompiledProblem":
        diagnostics = validate(self)
        if diagnostics:
            raise ProblemValidationError(diagnostics)
        return CompiledProblem(self)

    def with_cost_scale(self, factor: float) -> "ControlProblem":
        """L を factor·L に置き換えた問題"""
        return ControlProblem(self.state_dim, self.control_dim, self.horizon, self.dynamics,
                              f"{factor!r} * ({self.cost})", self.fiber, self.x_a, self.x_b,
                              f"{self.name}*{factor:g}")

    def with_horizon(self, a: float, b: float) -> "ControlProblem":
        return ControlProblem(self.state_dim, self.control_dim, (float(a), float(b)), self.dynamics,
                              self.cost, self.fiber, self.x_a, self.x_b, self.name)

    def __repr__(self):
        return f"<ControlProblem(name={self.name}, d={self.state_dim}, k={self.control_dim})>"


class CompiledProblem:
    """式を位置引数関数に変換し、記号偏導関数をまとめて保持する"""

    def __init__(self, problem: ControlProblem):
        names = problem.variables
        self.problem = problem
        self.d = problem.state_dim
        self.k = problem.control_dim
        xs = state_names(self.d)
        us = control_names(self.k)
        self.rho_ast = [expr.parse(text, names) for text in problem.dynamics]
        self.cost_ast = expr.parse(problem.cost, names)

        def compile_all(nodes):
            return [expr.compile_expr(n, names) for n in nodes]

        self.rho = compile_all(self.rho_ast)
        self.L = expr.compile_expr(self.cost_ast, names)
        self.rho_x = [compile_all([expr.differentiate(r, x) for x in xs]) for r in self.rho_ast]
        self.rho_u = [compile_all([expr.differentiate(r, u) for u in us]) for r in self.rho_ast]
        self.L_x = compile_all([expr.differentiate(self.cost_ast, x) for x in xs])
        self.L_u = compile_all([expr.differentiate(self.cost_ast, u) for u in us])
        self.rho_t = compile_all([expr.differentiate(r, "t") for r in self.rho_ast])
        self.L_t = expr.compile_expr(expr.differentiate(self.cost_ast, "t"), names)

    @cached_property
    def second_u(self):
        """∂²ρ^i/∂u∂u と ∂²L/∂u∂u（ニュートン法用）"""
        names = self.problem.variables
        us = control_names(self.k)

        def hess(node):
            firsts = [expr.differentiate(node, u) for u in us]
            return [[expr.compile_expr(expr.differentiate(f, v), names) for v in us] for f in firsts]

        return [hess(r) for r in self.rho_ast], hess(self.cost_ast)

    @staticmethod
    def values(t: float, x: Sequence[float], u: Sequence[float]) -> List[float]:
        return [float(t), *[float(v) for v in x], *[float(v) for v in u]]

    @staticmethod
    def _call(funcs, vals):
        try:
            out = np.array([f(vals) for f in funcs], dtype=float)
        except _ARITH_ERRORS as e:
            raise DomainError(f"評価中の定義域エラー: {e}") from None
        if not np.all(np.isfinite(out)):
            raise DomainError("評価結果が有限ではありません")
        return out

    def velocity(self, vals) -> np.ndarray:
        return self._call(self.rho, vals)

    def cost_rate(self, vals) -> float:
        return float(self._call([self.L], vals)[0])

    def A(self, vals) -> np.ndarray:
        return np.array([self._call(row, vals) for row in self.rho_x]).reshape(self.d, self.d)

    def B(self, vals) -> np.ndarray:
        return np.array([self._call(row, vals) for row in self.rho_u]).reshape(self.d, self.k)

    def Lx(self, vals) -> np.ndarray:
        return self._call(self.L_x, vals)

    def Lu(self, vals) -> np.ndarray:
        return self._call(self.L_u, vals)

    def time_partials(self, vals) -> Tuple[np.ndarray, float]:
        return self._call(self.rho_t, vals), float(self._call([self.L_t], vals)[0])

    def hessians_u(self, vals) -> Tuple[np.ndarray, np.ndarray]:
        rho_uu, L_uu = self.second_u
        R = np.array([[self._call(row, vals) for row in block] for block in rho_uu]).reshape(self.d, self.k, self.k)
        H = np.array([self._call(row, vals) for row in L_uu]).reshape(self.k, self.k)
        return R, H


# ---------------------------------------------------------------------------
# 区分的制御と合成フロー

@dataclass(frozen=True, eq=False)
class PiecewiseControl:
    """区分的に滑らかな開ループ制御（各区間は t の式）"""
    breakpoints: Tuple[float, ...]
    pieces: Tuple[Tuple[str, ...], ...]

    @classmethod
    def constant(cls, problem: ControlProblem, u: Sequence[float]) -> "PiecewiseControl":
        return cls((problem.a, problem.b), (tuple(repr(float(v)) for v in u),))

    @classmethod
    def from_expressions(cls, problem: ControlProblem, exprs: Sequence[str]) -> "PiecewiseControl":
        return cls((problem.a, problem.b), (tuple(exprs),))

    @cached_property
    def _compiled(self) -> List[List[Callable]]:
        return [[expr.compile_expr(expr.parse(text, ["t"]), ["t"]) for text in piece]
                for piece in self.pieces]

    @property
    def piece_count(self) -> int:
        return len(self.pieces)

    def piece_index(self, t: float) -> int:
        """t を含む区間番号（区間は左開右閉、最初の区間は a を含む）"""
        bps = self.breakpoints
        for i in range(1, len(bps)):
            if t <= bps[i]:
                return i - 1
        return len(bps) - 2

    def piece_function(self, i: int) -> Callable[[float], np.ndarray]:
        funcs = self._compiled[i]

        def u_of_t(t: float) -> np.ndarray:
            vals = (float(t),)
            try:
                out = np.array([f(vals) for f in funcs], dtype=float)
            except _ARITH_ERRORS as e:
                raise DomainError(f"制御の評価エラー: {e}") from None
            if not np.all(np.isfinite(out)):
                raise DomainError("制御の評価結果が有限ではありません")
            return out

        return u_of_t

    def value(self, t: float) -> np.ndarray:
        return self.piece_function(self.piece_index(t))(t)

    def to_dict(self) -> Dict[str, Any]:
        return {'breakpoints': list(self.breakpoints), 'pieces': [list(p) for p in self.pieces]}


@dataclass(frozen=True)
class FlowLeg:
    """合成フローの1区間

    control_value（定数制御）か control（時刻→制御の関数）のどちらかを持つ。
    clock_start はこの区間で ρ を評価する時刻の起点（省略時は累積時間）。
    nodes を与えると、その時刻列でステップを刻む（基準軌道の再生用）。
    """
    duration: float
    control_value: Optional[Tuple[float, ...]] = None
    control: Optional[Callable[[float], np.ndarray]] = None
    clock_start: Optional[float] = None
    nodes: Optional[Tuple[float, ...]] = None

    def control_function(self) -> Callable[[float], np.ndarray]:
        if self.control is not None:
            return self.control
        value = np.asarray(self.control_value, dtype=float)
        return lambda t: value


@dataclass(frozen=True)
class CompositeFlowSchedule:
    """合成フローの区間列（区間 1 から順に実行）

    stretched=True は針状変分の実現用で、総時間が地平を超えてよい。
    """
    legs: Tuple[FlowLeg, ...]
    stretched: bool = False

    @property
    def total_duration(self) -> float:
        return float(sum(leg.duration for leg in self.legs))

    def diagnostics(self, problem: ControlProblem) -> List[str]:
        issues = []
        for i, leg in enumerate(self.legs):
            if leg.duration < 0:
                issues.append(f"negative leg duration at leg {i + 1}")
            if leg.control is None and leg.control_value is None:
                issues.append(f"leg {i + 1} has no control")
            if leg.control_value is not None and len(leg.control_value) != problem.control_dim:
                issues.append(f"control length mismatch at leg {i + 1}")
        span = problem.b - problem.a
        if not self.stretched and self.total_duration > span * (1.0 + 1e-12) + 1e-15:
            issues.append("schedule longer than horizon")
        return issues


# ---------------------------------------------------------------------------
# 検証

def _expression_diagnostics(text: Any, allowed: Sequence[str], where: str) -> List[str]:
    if not isinstance(text, str):
        return [f"expression {where} is not a string"]
    try:
        expr.parse(text, allowed)
    except UnknownVariableError as e:
        return [f"unknown variable in {where}: {e}"]
    except ExtremalKitError as e:
        return [f"invalid expression in {where}: {e}"]
    return []


def validate(problem: ControlProblem) -> List[str]:
    """問題の不変条件を検査し、違反の一覧を返す（空なら妥当）"""
    diagnostics = []
    if not isinstance(problem.state_dim, int) or problem.state_dim < 1:
        diagnostics.append("state_dim must be an integer >= 1")
    if not isinstance(problem.control_dim, int) or problem.control_dim < 1:
        diagnostics.append("control_dim must be an integer >= 1")
    if diagnostics:
        return diagnostics

    a, b = problem.horizon
    if not (math.isfinite(a) and math.isfinite(b)) or not b - a > 0:
        diagnostics.append("empty horizon: b - a must be > 0")

    if len(problem.dynamics) != problem.state_dim:
        diagnostics.append(f"dynamics length {len(problem.dynamics)} != state_dim {problem.state_dim}")
    allowed = problem.variables
    for i, text in enumerate(problem.dynamics):
        diagnostics += _expression_diagnostics(text, allowed, f"dynamics[{i + 1}]")
    diagnostics += _expression_diagnostics(problem.cost, allowed, "cost")

    diagnostics += problem.fiber.diagnostics()
    if problem.fiber.control_dim != problem.control_dim:
        diagnostics.append("fiber dimension does not match control_dim")

    for label, point in (("x_a", problem.x_a), ("x_b", problem.x_b)):
        if point is not None and len(point) != problem.state_dim:
            diagnostics.append(f"{label} length != state_dim")
    return diagnostics


def validate_control(control: PiecewiseControl, problem: ControlProblem) -> List[str]:
    """区分的制御の不変条件"""
    diagnostics = []
    bps = [float(v) for v in control.breakpoints]
    if len(bps) < 2:
        return ["control needs at least two breakpoints"]
    if any(bps[i + 1] <= bps[i] for i in range(len(bps) - 1)):
        diagnostics.append("breakpoints must be strictly increasing")
    if any(v < problem.a or v > problem.b for v in bps):
        diagnostics.append("breakpoint outside horizon")
    if bps[0] != problem.a or bps[-1] != problem.b:
        diagnostics.append("first/last breakpoint must equal the horizon ends")
    if len(control.pieces) != len(bps) - 1:
        diagnostics.append("piece count must be len(breakpoints) - 1")
    for i, piece in enumerate(control.pieces):
        if len(piece) != problem.control_dim:
            diagnostics.append(f"piece {i + 1} has {len(piece)} components, expected {problem.control_dim}")
        for a, text in enumerate(piece):
            diagnostics += _expression_diagnostics(text, ["t"], f"control piece {i + 1} component {a + 1}")
    return diagnostics


# ---------------------------------------------------------------------------
# 評価

def dynamics_at(problem: ControlProblem, t: float, x: Sequence[float], u: Sequence[float],
                fiber_tol: float = TOL_FIBER) -> Tuple[np.ndarray, float]:
    """速度 ρ(t,x,u) とコスト率 L(t,x,u)"""
    _check_fiber(problem, u, fiber_tol)
    compiled = problem.compiled
    vals = compiled.values(t, x, u)
    return compiled.velocity(vals), compiled.cost_rate(vals)


def jacobians_at(problem: ControlProblem, t: float, x: Sequence[float], u: Sequence[float],
                 fiber_tol: float = TOL_FIBER) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """記号偏導関数 (∂ρ/∂x, ∂ρ/∂u, ∂L/∂x, ∂L/∂u) の値"""
    _check_fiber(problem, u, fiber_tol)
    compiled = problem.compiled
    vals = compiled.values(t, x, u)
    return compiled.A(vals), compiled.B(vals), compiled.Lx(vals), compiled.Lu(vals)


def _check_fiber(problem: ControlProblem, u: Sequence[float], tol: float):
    if not problem.fiber.contains(np.asarray(u, dtype=float), tol):
        raise FiberViolationError(f"制御値 {list(np.asarray(u, dtype=float))} がファイバー外です")


# ---------------------------------------------------------------------------
# カタログ

def catalog_names() -> List[str]:
    return list(Catalog.ALL)


def catalog(name: str) -> ControlProblem:
    """ベンチマーク問題を返す"""
    if name == Catalog.LQR1D:
        return ControlProblem(1, 1, (0.0, 1.0), ("u1",), "0.5*u1^2",
                              UnconstrainedFiber(1), (0.0,), (1.0,), name)
    if name == Catalog.DOUBLE_INTEGRATOR:
        return ControlProblem(2, 1, (0.0, 1.0), ("x2", "u1"), "0.5*u1^2",
                              UnconstrainedFiber(1), None, None, name)
    if name == Catalog.HEISENBERG:
        return ControlProblem(3, 2, (0.0, 1.0), ("u1", "u2", "0.5*(x1*u2 - x2*u1)"),
                              "0.5*(u1^2 + u2^2)", UnconstrainedFiber(2), None, None, name)
    if name == Catalog.MARTINET:
        return ControlProblem(3, 2, (0.0, 1.0), ("u1", "u2", "0.5*x2^2*u1"),
                              "0.5*(u1^2 + u2^2)", UnconstrainedFiber(2), None, None, name)
    raise UnknownProblemError(f"未知のカタログ問題: {name}")


# ---------------------------------------------------------------------------
# JSON 入出力

def _read_json(source: Union[str, Dict[str, Any]]) -> Dict[str, Any]:
    if isinstance(source, dict):
        return source
    text = source
    if isinstance(source, str) and os.path.exists(source):
        with open(source, 'r', encoding='utf-8') as f:
            text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise InputFormatError(f"JSONフォーマットエラー: {e.msg}", len(text[:e.pos].encode('utf-8'))) from None
    if not isinstance(data, dict):
        raise InputFormatError("JSONのトップレベルはオブジェクトである必要があります")
    return data


def problem_from_dict(data: Dict[str, Any]) -> ControlProblem:
    try:
        d = data['state_dim']
        k = data['control_dim']
        horizon = tuple(float(v) for v in data.get('horizon', [0.0, 1.0]))
        dynamics = tuple(data['dynamics'])
        cost = data.get('cost', "0")
        x_a = tuple(float(v) for v in data['x_a']) if data.get('x_a') is not None else None
        x_b = tuple(float(v) for v in data['x_b']) if data.get('x_b') is not None else None
    except (KeyError, TypeError, ValueError) as e:
        raise InputFormatError(f"問題定義の形式エラー: {e}") from None
    if len(horizon) != 2:
        raise InputFormatError("horizon は [a, b] の形式である必要があります")
    fiber = fiber_from_dict(data.get('fiber'), k if isinstance(k, int) else 0)
    return ControlProblem(d, k, horizon, dynamics, cost, fiber, x_a, x_b, data.get('name', 'custom'))


def load_problem(source: Union[str, Dict[str, Any]]) -> ControlProblem:
    """問題ファイル（パス・JSON文字列・辞書）またはカタログ名から問題を読み込み、検証する"""
    if isinstance(source, str) and source in Catalog.ALL and not os.path.exists(source):
        return catalog(source)
    problem = problem_from_dict(_read_json(source))
    diagnostics = validate(problem)
    if diagnostics:
        raise ProblemValidationError(diagnostics)
    logger.info(f"問題を読み込みました: {problem}")
    return problem


def problem_to_dict(problem: ControlProblem) -> Dict[str, Any]:
    data = {
        'name': problem.name,
        'state_dim': problem.state_dim,
        'control_dim': problem.control_dim,
        'horizon': [problem.a, problem.b],
        'dynamics': list(problem.dynamics),
        'cost': problem.cost,
        'fiber': problem.fiber.to_dict(),
    }
    if problem.x_a is not None:
        data['x_a'] = list(problem.x_a)
    if problem.x_b is not None:
        data['x_b'] = list(problem.x_b)
    return data


def control_from_dict(data: Dict[str, Any], problem: ControlProblem) -> PiecewiseControl:
    if 'constant' in data:
        try:
            control = PiecewiseControl.constant(problem, data['constant'])
        except (TypeError, ValueError) as e:
            raise InputFormatError(f"制御定義の形式エラー: {e}") from None
    elif 'pieces' in data:
        bps = data.get('breakpoints', [problem.a, problem.b])
        try:
            control = PiecewiseControl(tuple(float(v) for v in bps),
                                       tuple(tuple(str(e) for e in piece) for piece in data['pieces']))
        except (TypeError, ValueError) as e:
            raise InputFormatError(f"制御定義の形式エラー: {e}") from None
    else:
        raise InputFormatError("制御定義には 'constant' か 'pieces' が必要です")
    diagnostics = validate_control(control, problem)
    if diagnostics:
        raise ProblemValidationError(diagnostics)
    return control


def load_control(source: Union[str, Dict[str, Any]], problem: ControlProblem) -> PiecewiseControl:
    """制御ファイル（パス・JSON文字列・辞書）を読み込み、検証する"""
    return control_from_dict(_read_json(source), problem)

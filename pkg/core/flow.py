"""軌道・合成フローの積分と、接ベクトル／余接ベクトルの輸送"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from core.system import CompositeFlowSchedule, ControlProblem, FlowLeg, PiecewiseControl, validate_control
from utils.config import config
from utils.errors import IntegrationError, OffGridError, ProblemValidationError, FiberViolationError
from utils.events import TrajectoryIntegrated, event_system

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlowStep:
    """RK4 の1ステップ（評価時刻の始点と終点、このステップで使う制御）"""
    clock0: float
    clock1: float
    control: Callable[[float], np.ndarray]

    @property
    def h(self) -> float:
        return self.clock1 - self.clock0


@dataclass(eq=False)
class Trajectory:
    """格子上の軌道 (t_j, x_j, u_j, J_j)

    t は経過時間（a 起点）、clock は ρ を評価した時刻。通常の積分では両者は一致する。
    u_j は左閉じ規約に従い、t_j で終わるステップの制御値を持つ。
    """
    problem: ControlProblem
    t: np.ndarray
    clock: np.ndarray
    x: np.ndarray
    u: np.ndarray
    J: np.ndarray
    breakpoints: Tuple[int, ...]
    steps: List[FlowStep]
    _plain: Optional[List[np.ndarray]] = field(default=None, repr=False)
    _extended: Optional[List[np.ndarray]] = field(default=None, repr=False)
    _suffix: Dict[bool, List[np.ndarray]] = field(default_factory=dict, repr=False)

    @property
    def node_count(self) -> int:
        return len(self.t)

    @property
    def endpoint(self) -> np.ndarray:
        return self.x[-1].copy()

    @property
    def final_cost(self) -> float:
        return float(self.J[-1])

    def index_of(self, t: float) -> int:
        """時刻 t の格子番号（格子点でなければ OffGridError）"""
        j = int(np.argmin(np.abs(self.t - t)))
        scale = 1e-9 * max(1.0, abs(float(t)), float(self.t[-1] - self.t[0]) / max(1, len(self.t) - 1))
        if abs(self.t[j] - t) > scale:
            raise OffGridError(f"時刻 {t} は格子点ではありません")
        return j

    def smooth_pieces(self) -> List[Tuple[int, int]]:
        """制御の不連続点で区切った格子番号の区間"""
        bounds = sorted(set([0, *self.breakpoints, len(self.t) - 1]))
        return [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1) if bounds[i + 1] > bounds[i]]

    def step_propagators(self, extended: bool = False) -> List[np.ndarray]:
        if extended:
            if self._extended is None:
                self._extended = [_step_propagator(self.problem, s, self.x[j], True)
                                  for j, s in enumerate(self.steps)]
            return self._extended
        if self._plain is None:
            self._plain = [_step_propagator(self.problem, s, self.x[j], False)
                           for j, s in enumerate(self.steps)]
        return self._plain

    def transport_to_end(self, j: int, extended: bool = False) -> np.ndarray:
        """格子番号 j から終端までの輸送行列（末尾からの累積積をキャッシュ）"""
        if extended not in self._suffix:
            props = self.step_propagators(extended)
            n = self.problem.state_dim + (1 if extended else 0)
            suffix = [np.eye(n)]
            for P in reversed(props):
                suffix.append(suffix[-1] @ P)
            suffix.reverse()
            self._suffix[extended] = suffix
        return self._suffix[extended][j]

    def __repr__(self):
        return f"<Trajectory(nodes={len(self.t)}, t=[{self.t[0]:g}, {self.t[-1]:g}])>"


@dataclass(frozen=True)
class TransportOperator:
    """t0 から t1 への輸送行列（extended なら最終行がコスト結合）"""
    t0: float
    t1: float
    matrix: np.ndarray
    extended: bool = False

    def apply(self, v: Sequence[float]) -> np.ndarray:
        return self.matrix @ np.asarray(v, dtype=float)


@dataclass(frozen=True)
class CovectorPath:
    """格子上の余接ベクトル列 η(t_j)、j = start..end"""
    t: np.ndarray
    eta: np.ndarray
    start: int
    end: int

    def at_index(self, j: int) -> np.ndarray:
        return self.eta[j - self.start]


# ---------------------------------------------------------------------------
# RK4

def _rk4_stages(problem: ControlProblem, step: FlowStep, x: np.ndarray, fiber_tol: float):
    """ステージごとの (時刻, 状態, 制御) と速度・コスト率"""
    compiled = problem.compiled
    fiber = problem.fiber
    h = step.h
    s0 = step.clock0

    def field_at(s, xs):
        u = np.asarray(step.control(s), dtype=float)
        if not fiber.contains(u, fiber_tol):
            raise FiberViolationError(f"時刻 {s:g} の制御値 {u.tolist()} がファイバー外です")
        vals = compiled.values(s, xs, u)
        return u, compiled.velocity(vals), compiled.cost_rate(vals)

    u1, k1, l1 = field_at(s0, x)
    x2 = x + 0.5 * h * k1
    u2, k2, l2 = field_at(s0 + 0.5 * h, x2)
    x3 = x + 0.5 * h * k2
    u3, k3, l3 = field_at(s0 + 0.5 * h, x3)
    x4 = x + h * k3
    u4, k4, l4 = field_at(step.clock1, x4)
    stages = [(s0, x, u1), (s0 + 0.5 * h, x2, u2), (s0 + 0.5 * h, x3, u3), (step.clock1, x4, u4)]
    return stages, (k1, k2, k3, k4), (l1, l2, l3, l4)


def _rk4_step(problem: ControlProblem, step: FlowStep, x: np.ndarray, fiber_tol: float):
    _, (k1, k2, k3, k4), (l1, l2, l3, l4) = _rk4_stages(problem, step, x, fiber_tol)
    h = step.h
    x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    dJ = (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
    return x_next, dJ


def _step_propagator(problem: ControlProblem, step: FlowStep, x: np.ndarray, extended: bool) -> np.ndarray:
    """状態と同じステージで変分方程式 Ṁ = A M を1ステップ進める線形写像"""
    compiled = problem.compiled
    d = problem.state_dim
    stages, _, _ = _rk4_stages(problem, step, x, math.inf)
    mats = []
    for s, xs, u in stages:
        vals = compiled.values(s, xs, u)
        A = compiled.A(vals)
        if extended:
            Abar = np.zeros((d + 1, d + 1))
            Abar[:d, :d] = A
            Abar[d, :d] = compiled.Lx(vals)
            A = Abar
        mats.append(A)
    h = step.h
    eye = np.eye(len(mats[0]))
    K1 = mats[0]
    K2 = mats[1] @ (eye + 0.5 * h * K1)
    K3 = mats[2] @ (eye + 0.5 * h * K2)
    K4 = mats[3] @ (eye + h * K3)
    P = eye + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
    if extended:
        P[:, d] = 0.0
        P[d, d] = 1.0
    return P


def _default_step(problem: ControlProblem, steps: Optional[int]) -> float:
    if steps is None:
        steps = config.get_integration_config()['steps']
    return (problem.b - problem.a) / int(steps)


def _leg_steps(leg: FlowLeg, clock_start: float, h: float) -> List[FlowStep]:
    control = leg.control_function()
    if leg.nodes is not None:
        nodes = leg.nodes
        return [FlowStep(float(nodes[m]), float(nodes[m + 1]), control)
                for m in range(len(nodes) - 1) if nodes[m + 1] > nodes[m]]
    if leg.duration <= 0.0:
        return []
    n = max(1, int(math.ceil(leg.duration / h - 1e-9)))
    nodes = np.linspace(clock_start, clock_start + leg.duration, n + 1)
    return [FlowStep(float(nodes[m]), float(nodes[m + 1]), control) for m in range(n)]


def run_legs(problem: ControlProblem, legs: Sequence[FlowLeg], x0: Sequence[float], h: float,
             fiber_tol: Optional[float] = None, clock_time: bool = False) -> Trajectory:
    """区間列を順に実行して軌道を作る（integrate と composite_flow の共通部分）

    clock_time=True なら軌道の時刻 t を評価時刻そのものにする（通常の積分）。
    """
    if fiber_tol is None:
        fiber_tol = config.get_tolerance_config()['fiber']
    x = np.asarray(x0, dtype=float).copy()
    if len(x) != problem.state_dim:
        raise ProblemValidationError([f"x0 length {len(x)} != state_dim {problem.state_dim}"])
    problem.compiled  # 検証を兼ねる

    elapsed = problem.a
    steps: List[FlowStep] = []
    offsets: List[float] = []
    breakpoints: List[int] = []
    for leg in legs:
        clock_start = leg.clock_start if leg.clock_start is not None else elapsed
        leg_steps = _leg_steps(leg, clock_start, h)
        first_clock = leg_steps[0].clock0 if leg_steps else clock_start
        steps.extend(leg_steps)
        offsets.extend([0.0 if clock_time else elapsed - first_clock] * len(leg_steps))
        elapsed += leg.duration
        breakpoints.append(len(steps))

    ts = [steps[0].clock0 if steps and clock_time else problem.a]
    clocks = [steps[0].clock0 if steps else problem.a]
    xs = [x]
    Js = [0.0]
    if steps:
        us = [np.asarray(steps[0].control(steps[0].clock0), dtype=float)]
    elif legs:
        us = [np.asarray(legs[0].control_function()(clocks[0]), dtype=float)]
    else:
        us = [np.zeros(problem.control_dim)]

    for step, offset in zip(steps, offsets):
        x_next, dJ = _rk4_step(problem, step, xs[-1], fiber_tol)
        if not np.all(np.isfinite(x_next)) or not math.isfinite(dJ):
            raise IntegrationError(f"時刻 {step.clock1:g} で状態が発散しました")
        xs.append(x_next)
        Js.append(Js[-1] + dJ)
        ts.append(step.clock1 + offset)
        clocks.append(step.clock1)
        us.append(np.asarray(step.control(step.clock1), dtype=float))

    last = len(steps)
    inner = tuple(sorted(set(i for i in breakpoints if 0 < i < last)))
    traj = Trajectory(problem, np.array(ts), np.array(clocks), np.array(xs),
                      np.array(us).reshape(len(xs), problem.control_dim), np.array(Js), inner, steps)
    event_system.emit(TrajectoryIntegrated(traj.node_count, tuple(traj.endpoint.tolist())))
    return traj


def control_legs(problem: ControlProblem, control: PiecewiseControl, h: float) -> List[FlowLeg]:
    """区分的制御を、区分点が格子点になるよう刻んだ区間列に変換"""
    legs = []
    bps = control.breakpoints
    for i in range(control.piece_count):
        lo, hi = float(bps[i]), float(bps[i + 1])
        n = max(1, int(math.ceil((hi - lo) / h - 1e-9)))
        nodes = tuple(float(v) for v in np.linspace(lo, hi, n + 1))
        legs.append(FlowLeg(hi - lo, control=control.piece_function(i), clock_start=lo, nodes=nodes))
    return legs


# ---------------------------------------------------------------------------
# 公開操作

def integrate(problem: ControlProblem, control: PiecewiseControl, x0: Sequence[float],
              steps: Optional[int] = None) -> Trajectory:
    """固定刻み RK4 による積分（J は第 d+1 成分として同時に積分）"""
    diagnostics = validate_control(control, problem)
    if diagnostics:
        raise ProblemValidationError(diagnostics)
    h = _default_step(problem, steps)
    traj = run_legs(problem, control_legs(problem, control, h), x0, h, clock_time=True)
    logger.debug(f"積分完了: {traj}, 終点={traj.endpoint.tolist()}, J={traj.final_cost:.6g}")
    return traj


def composite_flow(problem: ControlProblem, schedule: CompositeFlowSchedule, x0: Sequence[float],
                   steps: Optional[int] = None) -> Tuple[np.ndarray, Trajectory]:
    """区間 1 から順に合成フローを実行し、終点と軌道を返す"""
    diagnostics = schedule.diagnostics(problem)
    if diagnostics:
        raise ProblemValidationError(diagnostics)
    h = _default_step(problem, steps)
    traj = run_legs(problem, schedule.legs, x0, h)
    return traj.endpoint, traj


def _transport_matrix(traj: Trajectory, t0: float, t1: float, extended: bool) -> TransportOperator:
    if t1 < t0:
        raise OffGridError(f"輸送区間が逆向きです: {t0} > {t1}")
    j0, j1 = traj.index_of(t0), traj.index_of(t1)
    n = traj.problem.state_dim + (1 if extended else 0)
    M = np.eye(n)
    if j1 > j0:
        props = traj.step_propagators(extended)
        for j in range(j0, j1):
            M = props[j] @ M
    if not np.all(np.isfinite(M)):
        raise IntegrationError("輸送行列が有限ではありません")
    return TransportOperator(float(t0), float(t1), M, extended)


def transport(problem: ControlProblem, traj: Trajectory, t0: float, t1: float) -> TransportOperator:
    """変分方程式 Ṁ = A(t)M, M(t0) = I の解 M(t1)"""
    return _transport_matrix(traj, t0, t1, False)


def extended_transport(problem: ControlProblem, traj: Trajectory, t0: float, t1: float) -> TransportOperator:
    """コスト座標付き輸送 [[M, 0], [r, 1]]（ṙ = Lx·M）"""
    return _transport_matrix(traj, t0, t1, True)


def adjoint_transport(problem: ControlProblem, traj: Trajectory, eta_b: Sequence[float], lam: float,
                      t1: float, t0: float) -> CovectorPath:
    """随伴方程式 η̇ = −Aᵀη − λLx を t1 から t0 へ後退 RK4 で積分

    ステップ中点の状態は、両端の状態と速度から作る3次エルミート補間で与える。
    """
    compiled = problem.compiled
    j0, j1 = traj.index_of(t0), traj.index_of(t1)
    if j1 < j0:
        raise OffGridError(f"随伴輸送の区間が逆向きです: {t0} > {t1}")
    d = problem.state_dim
    eta = np.zeros((j1 - j0 + 1, d))
    eta[-1] = np.asarray(eta_b, dtype=float)
    lam = float(lam)

    for j in range(j1 - 1, j0 - 1, -1):
        step = traj.steps[j]
        h = step.h
        s0 = step.clock0
        u_start = step.control(s0)
        u_mid = step.control(s0 + 0.5 * h)
        u_end = step.control(step.clock1)
        x_start, x_end = traj.x[j], traj.x[j + 1]
        v_start = compiled.velocity(compiled.values(s0, x_start, u_start))
        v_end = compiled.velocity(compiled.values(step.clock1, x_end, u_end))
        spline = CubicHermiteSpline([0.0, h], np.vstack([x_start, x_end]), np.vstack([v_start, v_end]))
        x_mid = spline(0.5 * h)

        def coefficients(s, xs, u):
            vals = compiled.values(s, xs, u)
            return compiled.A(vals), compiled.Lx(vals)

        A_end, Lx_end = coefficients(step.clock1, x_end, u_end)
        A_mid, Lx_mid = coefficients(s0 + 0.5 * h, x_mid, u_mid)
        A_start, Lx_start = coefficients(s0, x_start, u_start)

        def g(A, Lx, e):
            return -A.T @ e - lam * Lx

        e1 = eta[j + 1 - j0]
        g1 = g(A_end, Lx_end, e1)
        g2 = g(A_mid, Lx_mid, e1 - 0.5 * h * g1)
        g3 = g(A_mid, Lx_mid, e1 - 0.5 * h * g2)
        g4 = g(A_start, Lx_start, e1 - h * g3)
        e0 = e1 - (h / 6.0) * (g1 + 2.0 * g2 + 2.0 * g3 + g4)
        if not np.all(np.isfinite(e0)):
            raise IntegrationError(f"随伴変数が時刻 {traj.t[j]:g} で発散しました")
        eta[j - j0] = e0

    return CovectorPath(traj.t[j0:j1 + 1].copy(), eta, j0, j1)


def fd_flow_oracle(problem: ControlProblem, control: PiecewiseControl, x0: Sequence[float],
                   epsilon: Optional[float] = None, steps: Optional[int] = None) -> np.ndarray:
    """終点写像 x0 ↦ x(b) の中心差分ヤコビ行列"""
    d = problem.state_dim
    if problem.b - problem.a == 0.0:
        return np.eye(d)
    if epsilon is None:
        epsilon = config.get_integration_config()['fd_epsilon']
    if epsilon <= 0:
        raise ProblemValidationError(["fd epsilon must be > 0"])
    x0 = np.asarray(x0, dtype=float)
    columns = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = epsilon
        plus = integrate(problem, control, x0 + e, steps).endpoint
        minus = integrate(problem, control, x0 - e, steps).endpoint
        columns.append((plus - minus) / (2.0 * epsilon))
    return np.column_stack(columns)

"""最大値原理: ハミルトニアン、乗数の検証と復元、極値の分類、正規ハミルトン系の積分"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from core import cone as cones
from core.flow import CovectorPath, FlowStep, Trajectory, adjoint_transport
from core.system import ControlProblem, dynamics_at
from core.variation import (
    SamplingConfig,
    extended_vertical_cone,
    full_extended_cone,
    sample_times,
)
from fibers import BoxFiber, UnconstrainedFiber
from utils.config import config
from utils.constants import DUAL_RAYS_MAX_DIM, MAXIMIZATION_SAMPLES, TOL_ABSOLUTE_FLOOR
from utils.errors import DegenerateConeError, DomainError, InputFormatError, IntegrationError
from utils.events import TrajectoryIntegrated, WitnessVerified, event_system

logger = logging.getLogger(__name__)

SAMPLING_NOTE = ("classification is sampling-relative: a 'not extremal' verdict is a certificate "
                 "(an interior point was found); an 'extremal' verdict is falsifiable by denser sampling")


@dataclass(frozen=True)
class Multiplier:
    """乗数 (η(t_j), λ)"""
    lam: float
    path: CovectorPath

    @property
    def eta(self) -> np.ndarray:
        return self.path.eta

    @property
    def eta_b(self) -> np.ndarray:
        return self.path.eta[-1].copy()


@dataclass
class MultiplierReport:
    """check_multiplier の結果"""
    adjoint_residual: float
    stationarity_residual: Optional[float]
    maximization_margin: float
    nonvanishing: bool
    search_region: str
    passed: bool
    failures: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'adjoint': self.adjoint_residual,
            'stationarity': self.stationarity_residual,
            'maximization': self.maximization_margin,
            'nonvanishing': self.nonvanishing,
            'search_region': self.search_region,
            'passed': self.passed,
            'failures': list(self.failures),
        }


@dataclass
class Witness:
    eta_b: np.ndarray
    lam: float
    report: MultiplierReport
    hamiltonian_drift: float

    def to_dict(self) -> Dict[str, Any]:
        residuals = self.report.to_dict()
        residuals['hamiltonian_drift'] = self.hamiltonian_drift
        return {'eta_b': self.eta_b.tolist(), 'lambda': self.lam, 'residuals': residuals}


@dataclass
class ExtremalReport:
    """極値分類のレポート"""
    is_extremal: bool
    is_normal: bool
    is_abnormal: bool
    is_strictly_abnormal: bool
    witnesses: List[Witness]
    diagnostics: Dict[str, Any]
    sampling: Dict[str, Any]

    def flags(self) -> Dict[str, bool]:
        return {
            'extremal': self.is_extremal,
            'normal': self.is_normal,
            'abnormal': self.is_abnormal,
            'strictly_abnormal': self.is_strictly_abnormal,
        }

    def summary(self) -> str:
        return ", ".join(f"{name}: {str(value).lower()}" for name, value in self.flags().items())

    def to_dict(self) -> Dict[str, Any]:
        return {
            'flags': self.flags(),
            'witnesses': [w.to_dict() for w in self.witnesses],
            'diagnostics': self.diagnostics,
            'sampling': self.sampling,
        }


def _tolerances(tol: Optional[Dict[str, float]]) -> Dict[str, float]:
    merged = dict(config.get_tolerance_config())
    if tol:
        merged.update({k: v for k, v in tol.items() if v is not None})
    return merged


# ---------------------------------------------------------------------------
# ハミルトニアン

def hamiltonian(problem: ControlProblem, t: float, x: Sequence[float], u: Sequence[float],
                eta: Sequence[float], lam: float) -> float:
    """h_λ = Σ η_i ρ^i + λ L"""
    velocity, cost_rate = dynamics_at(problem, t, x, u)
    value = float(np.dot(np.asarray(eta, dtype=float), velocity) + float(lam) * cost_rate)
    if not math.isfinite(value):
        raise DomainError("ハミルトニアンが有限ではありません")
    return value


def _h(compiled, s, x, u, eta, lam) -> float:
    vals = compiled.values(s, x, u)
    return float(eta @ compiled.velocity(vals) + lam * compiled.cost_rate(vals))


def _node_control(traj: Trajectory, j: int, piece_start: int) -> np.ndarray:
    """滑らかな区間の始点では、その区間側の制御値を使う"""
    if j == piece_start and j < len(traj.steps):
        step = traj.steps[j]
        return np.asarray(step.control(step.clock0), dtype=float)
    return traj.u[j]


def check_multiplier(problem: ControlProblem, traj: Trajectory, mult: Multiplier,
                     fiber_samples: Optional[int] = None, tol: Optional[Dict[str, float]] = None,
                     seed: Optional[int] = None, time_samples: Optional[int] = None) -> MultiplierReport:
    """乗数の3条件（随伴方程式・停留性・最大化）と非零性を検査する"""
    tols = _tolerances(tol)
    sampling = config.get_sampling_config()
    if fiber_samples is None:
        fiber_samples = sampling.get('maximization_samples', MAXIMIZATION_SAMPLES)
    if seed is None:
        seed = sampling['seed']
    if time_samples is None:
        time_samples = sampling['time_samples']

    compiled = problem.compiled
    lam = float(mult.lam)
    start, end = mult.path.start, mult.path.end
    fiber = problem.fiber

    # (i) 随伴方程式の残差（滑らかな区間ごとの離散微分）
    adjoint = 0.0
    for i0, i1 in traj.smooth_pieces():
        lo, hi = max(i0, start), min(i1, end)
        if hi - lo < 1:
            continue
        ts = traj.t[lo:hi + 1]
        etas = mult.eta[lo - start:hi - start + 1]
        deriv = np.gradient(etas, ts, axis=0, edge_order=2 if hi - lo >= 2 else 1)
        for m, j in enumerate(range(lo, hi + 1)):
            vals = compiled.values(traj.clock[j], traj.x[j], _node_control(traj, j, i0))
            residual = deriv[m] + compiled.A(vals).T @ etas[m] + lam * compiled.Lx(vals)
            adjoint = max(adjoint, float(np.max(np.abs(residual))))

    # (ii) 停留性 ∂h/∂u = Bᵀη + λLu（箱型では有効制約でない成分のみ）
    stationarity = None
    if isinstance(fiber, (UnconstrainedFiber, BoxFiber)):
        stationarity = 0.0
        for j in range(start, end + 1):
            u = traj.u[j]
            vals = compiled.values(traj.clock[j], traj.x[j], u)
            grad = compiled.B(vals).T @ mult.eta[j - start] + lam * compiled.Lu(vals)
            free = fiber.free_components(u, grad)
            if np.any(free):
                stationarity = max(stationarity, float(np.max(np.abs(grad[free]))))

    # (iii) 最大化条件 h(u′) − h(u(t)) ≤ tol·(1 + |h|)
    rng = np.random.default_rng(seed)
    margin = -math.inf
    nodes = sorted(set([start] + [j for j in sample_times(traj, time_samples, rng) if start <= j <= end]))
    for j in nodes:
        eta = mult.eta[j - start]
        h_ref = _h(compiled, traj.clock[j], traj.x[j], traj.u[j], eta, lam)
        for u_alt in fiber.search_points(rng, traj.u[j], fiber_samples):
            h_alt = _h(compiled, traj.clock[j], traj.x[j], u_alt, eta, lam)
            margin = max(margin, (h_alt - h_ref) / (1.0 + abs(h_ref)))
    margin = max(margin, 0.0)

    # (iv) (η(t), λ) ≠ (0, 0)
    floor = TOL_ABSOLUTE_FLOOR
    nonvanishing = abs(lam) > floor or bool(np.all(np.max(np.abs(mult.eta), axis=1) > floor))

    failures = []
    if adjoint > tols['adjoint']:
        failures.append("adjoint")
    if stationarity is not None and stationarity > tols['stationarity']:
        failures.append("stationarity")
    if margin > tols['maximization']:
        failures.append("maximization")
    if not nonvanishing:
        failures.append("nonvanishing")
    region = fiber.search_region(traj.u[start])
    report = MultiplierReport(adjoint, stationarity, margin, nonvanishing, region, not failures, failures)
    logger.debug(f"乗数検査: λ={lam:g}, 結果={report.to_dict()}")
    return report


def recover_multiplier(problem: ControlProblem, traj: Trajectory, eta_b: Sequence[float], lam: float) -> Multiplier:
    """終端の (η_b, λ) から随伴方程式を後退積分して乗数を復元"""
    eta_b = np.asarray(eta_b, dtype=float)
    if np.max(np.abs(eta_b), initial=0.0) <= TOL_ABSOLUTE_FLOOR and abs(lam) <= TOL_ABSOLUTE_FLOOR:
        raise InputFormatError("(η_b, λ) = (0, 0) からは乗数を復元できません")
    path = adjoint_transport(problem, traj, eta_b, lam, traj.t[-1], traj.t[0])
    return Multiplier(float(lam), path)


def _h_t(compiled, s, x, u, eta, lam) -> float:
    rho_t, L_t = compiled.time_partials(compiled.values(s, x, u))
    return float(eta @ rho_t + lam * L_t)


def hamiltonian_drift(problem: ControlProblem, traj: Trajectory, mult: Multiplier) -> float:
    """max_t |h(t) − h(a) − ∫ ∂h/∂t ds|（自律系では max_t |h(t) − h(a)|）"""
    compiled = problem.compiled
    nodes = range(mult.path.start, mult.path.end + 1)
    args = [(traj.clock[j], traj.x[j], traj.u[j], mult.eta[j - mult.path.start], mult.lam) for j in nodes]
    values = np.array([_h(compiled, *a) for a in args])
    rates = np.array([_h_t(compiled, *a) for a in args])
    explicit = cumulative_trapezoid(rates, traj.clock[nodes.start:nodes.stop], initial=0.0)
    return float(np.max(np.abs(values - values[0] - explicit)))


# ---------------------------------------------------------------------------
# 分類

def classify_cone(extended_cone: cones.Cone, tol: Optional[Dict[str, float]] = None) -> Dict[str, Any]:
    """コスト座標付き錐 C̄ ⊂ ℝ^{d+1}（最後の座標が J）だけから4つのフラグを決める"""
    tols = _tolerances(tol)
    n = extended_cone.ambient_dim
    d = n - 1
    minus_J = np.zeros(n)
    minus_J[-1] = -1.0

    interior = cones.in_interior(extended_cone, minus_J, tols['cone_lp'])
    in_closure = cones.contains(extended_cone, minus_J, tols['cone_lp'])
    best, _ = cones.dual_lp(extended_cone, minus_J, tols['cone_lp'])
    is_normal = best > tols['boundary']
    state_cone = extended_cone.project(range(d))
    is_abnormal = cones.separating_covector(state_cone, None, tols['cone_lp']) is not None
    is_extremal = not interior
    if (is_normal or is_abnormal) and not is_extremal:
        logger.warning("双対側の証拠と内点判定が食い違います: 極値として扱います")
        is_extremal = True
    is_strictly_abnormal = is_abnormal and not is_normal

    boundary = in_closure and not interior
    verdict = "boundary" if boundary else ("interior" if interior else "outside")
    near_tie = tols['boundary'] / 10.0 < abs(best) <= 10.0 * tols['boundary']
    if is_strictly_abnormal != boundary or near_tie:
        verdict = "boundary within tolerance"
    return {
        'is_extremal': is_extremal,
        'is_normal': is_normal,
        'is_abnormal': is_abnormal,
        'is_strictly_abnormal': is_strictly_abnormal,
        'minus_J_interior': interior,
        'minus_J_in_closure': in_closure,
        'max_minus_lambda': best,
        'boundary_verdict': verdict,
    }


def optimality_obstruction(problem: ControlProblem, traj: Trajectory, sampling: SamplingConfig,
                           tol: Optional[Dict[str, float]] = None) -> Dict[str, Any]:
    """時刻とコストを含む変分錐で −e_J が内点なら、コストを下げる変分がある（非最適の証明）"""
    tols = _tolerances(tol)
    full = full_extended_cone(problem, traj, sampling)
    minus_J = np.zeros(full.ambient_dim)
    minus_J[-1] = -1.0
    interior = cones.in_interior(full, minus_J, tols['cone_lp']) if full.count else False
    return {'full_cone_interior_minus_J': interior, 'full_cone_generators': full.count}


def classify_extremal(problem: ControlProblem, traj: Trajectory, sampling: Optional[SamplingConfig] = None,
                      tol: Optional[Dict[str, float]] = None) -> ExtremalReport:
    """サンプリングした拡張鉛直変分錐の双対から極値・正規・異常・真に異常を判定する"""
    tols = _tolerances(tol)
    if sampling is None:
        sampling = SamplingConfig.from_config()
    d = problem.state_dim
    if d + 1 > DUAL_RAYS_MAX_DIM:
        raise InputFormatError(f"状態次元 d={d} は分類できません (d+1 ≤ {DUAL_RAYS_MAX_DIM})")

    extended = extended_vertical_cone(problem, traj, sampling)
    if extended.count == 0:
        raise DegenerateConeError("サンプリングした錐が空です（ファイバーが退化しています）")
    flags = classify_cone(extended, tols)

    witnesses = []
    for ray in cones.dual_rays(extended, tols['cone_lp']):
        lam = float(ray[-1])
        if lam > tols['cone_lp']:
            continue
        # 丸め誤差で λ が僅かに正でも 0 とみなす
        lam = min(lam, 0.0)
        mult = recover_multiplier(problem, traj, ray[:d], lam)
        report = check_multiplier(problem, traj, mult, tol=tols, seed=sampling.seed,
                                  time_samples=sampling.time_samples)
        witness = Witness(np.asarray(ray[:d]), lam, report, hamiltonian_drift(problem, traj, mult))
        witnesses.append(witness)
        event_system.emit(WitnessVerified(lam, report.passed, tuple(report.failures)))

    diagnostics = {
        'cone_generators': extended.count,
        'cone_dimension': cones.dimension(extended),
        'max_stationarity_residual': max((w.report.stationarity_residual or 0.0 for w in witnesses), default=0.0),
        'max_adjoint_residual': max((w.report.adjoint_residual for w in witnesses), default=0.0),
        'max_maximization_violation': max((w.report.maximization_margin for w in witnesses), default=0.0),
        'max_hamiltonian_drift': max((w.hamiltonian_drift for w in witnesses), default=0.0),
        'minus_J_interior': flags['minus_J_interior'],
        'minus_J_in_closure': flags['minus_J_in_closure'],
        'boundary_verdict': flags['boundary_verdict'],
        'search_region': problem.fiber.search_region(traj.u[0]),
        'note': SAMPLING_NOTE,
    }
    diagnostics.update(optimality_obstruction(problem, traj, sampling, tols))

    report = ExtremalReport(flags['is_extremal'], flags['is_normal'], flags['is_abnormal'],
                            flags['is_strictly_abnormal'], witnesses, diagnostics, sampling.to_dict())
    logger.info(f"分類結果: {report.summary()}")
    return report


# ---------------------------------------------------------------------------
# 正規ハミルトン系

def _maximizer(problem: ControlProblem, s: float, x: np.ndarray, p: np.ndarray, lam: float,
               u0: np.ndarray) -> np.ndarray:
    compiled = problem.compiled

    def gradient(u):
        vals = compiled.values(s, x, u)
        return compiled.B(vals).T @ p + lam * compiled.Lu(vals)

    def hessian(u):
        R, H = compiled.hessians_u(compiled.values(s, x, u))
        return np.tensordot(p, R, axes=1) + lam * H

    def value(u):
        return _h(compiled, s, x, u, p, lam)

    return problem.fiber.maximize(gradient, hessian, u0, value)


def integrate_normal_hamiltonian(problem: ControlProblem, x0: Sequence[float], p0: Sequence[float], lam: float,
                                 steps: Optional[int] = None) -> Tuple[Trajectory, Multiplier]:
    """(x, p) の結合 RK4。各ステージで u* = argmax h をニュートン法（有限集合なら列挙）で求める"""
    if not lam < 0:
        raise InputFormatError("正規ハミルトン系には λ < 0 が必要です")
    compiled = problem.compiled
    d = problem.state_dim
    if steps is None:
        steps = config.get_integration_config()['steps']
    nodes = np.linspace(problem.a, problem.b, int(steps) + 1)
    x = np.asarray(x0, dtype=float)
    p = np.asarray(p0, dtype=float)
    if len(x) != d or len(p) != d:
        raise InputFormatError("x0 と p0 の長さは状態次元と一致する必要があります")
    lam = float(lam)

    def rhs(s, z, u_guess):
        xs, ps = z[:d], z[d:2 * d]
        u = _maximizer(problem, s, xs, ps, lam, u_guess)
        vals = compiled.values(s, xs, u)
        dx = compiled.velocity(vals)
        dp = -compiled.A(vals).T @ ps - lam * compiled.Lx(vals)
        return np.concatenate([dx, dp, [compiled.cost_rate(vals)]]), u

    u = _maximizer(problem, nodes[0], x, p, lam, problem.fiber.project(np.zeros(problem.control_dim)))
    zs = [np.concatenate([x, p, [0.0]])]
    us = [u]
    for j in range(len(nodes) - 1):
        s0, s1 = nodes[j], nodes[j + 1]
        h = s1 - s0
        z = zs[-1]
        k1, u1 = rhs(s0, z, us[-1])
        k2, u2 = rhs(s0 + 0.5 * h, z + 0.5 * h * k1, u1)
        k3, u3 = rhs(s0 + 0.5 * h, z + 0.5 * h * k2, u2)
        k4, u4 = rhs(s1, z + h * k3, u3)
        z_next = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(z_next)):
            raise IntegrationError(f"時刻 {s1:g} でハミルトン系が発散しました")
        zs.append(z_next)
        us.append(_maximizer(problem, s1, z_next[:d], z_next[d:2 * d], lam, u4))

    Z = np.array(zs)
    U = np.array(us).reshape(len(zs), problem.control_dim)
    # フィードバック制御の開ループ表現（ステップ内は節点値の線形補間）
    flow_steps = [FlowStep(float(nodes[j]), float(nodes[j + 1]), _linear_control(nodes[j], nodes[j + 1], U[j], U[j + 1]))
                  for j in range(len(nodes) - 1)]
    traj = Trajectory(problem, nodes.copy(), nodes.copy(), Z[:, :d].copy(), U, Z[:, 2 * d].copy(), (), flow_steps)
    path = CovectorPath(nodes.copy(), Z[:, d:2 * d].copy(), 0, len(nodes) - 1)
    event_system.emit(TrajectoryIntegrated(traj.node_count, tuple(traj.endpoint.tolist())))
    return traj, Multiplier(lam, path)


def _linear_control(s0: float, s1: float, u0: np.ndarray, u1: np.ndarray):
    def control(s: float) -> np.ndarray:
        w = (s - s0) / (s1 - s0)
        return (1.0 - w) * u0 + w * u1
    return control

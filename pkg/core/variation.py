"""針状変分の接ベクトル、変分錐・鉛直変分錐の構成、多重針状変分の実行"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core import cone as cones
from core.flow import Trajectory, composite_flow
from core.system import CompositeFlowSchedule, ControlProblem, FlowLeg
from utils.config import config
from utils.constants import NeedleKinds
from utils.errors import FiberViolationError, InputFormatError, OffGridError, StepTooLargeError
from utils.events import ConeBuilt, event_system

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NeedleSpec:
    """単一変分 (τ, Y, δ)：AltControl は u′ の区間を挿入、ReverseLeg は基準区間を縮める"""
    tau: float
    kind: str = NeedleKinds.ALT_CONTROL
    u_alt: Optional[Tuple[float, ...]] = None
    weight: float = 1.0

    @classmethod
    def alt(cls, tau: float, u_alt: Sequence[float], weight: float = 1.0) -> "NeedleSpec":
        return cls(float(tau), NeedleKinds.ALT_CONTROL, tuple(float(v) for v in u_alt), float(weight))

    @classmethod
    def reverse(cls, tau: float, weight: float = 1.0) -> "NeedleSpec":
        return cls(float(tau), NeedleKinds.REVERSE_LEG, None, float(weight))

    @property
    def is_reverse(self) -> bool:
        return self.kind == NeedleKinds.REVERSE_LEG

    def to_dict(self) -> Dict[str, Any]:
        data = {'tau': self.tau, 'kind': self.kind, 'weight': self.weight}
        if self.u_alt is not None:
            data['u_alt'] = list(self.u_alt)
        return data


@dataclass(frozen=True)
class SamplingConfig:
    """錐のサンプリング設定（レポートにそのまま載せる）"""
    time_samples: int
    fiber_samples: int
    seed: int
    gaussian_scales: Tuple[float, ...] = (0.5, 1.0, 2.0)
    fiber_derivatives: bool = True

    @classmethod
    def from_config(cls, **overrides) -> "SamplingConfig":
        sampling = config.get_sampling_config()
        values = {
            'time_samples': sampling['time_samples'],
            'fiber_samples': sampling['fiber_samples'],
            'seed': sampling['seed'],
            'gaussian_scales': tuple(sampling['gaussian_scales']),
            'fiber_derivatives': sampling['fiber_derivatives'],
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        if values['time_samples'] < 1 or values['fiber_samples'] < 1:
            raise InputFormatError("time_samples と fiber_samples は 1 以上が必要です")
        return cls(int(values['time_samples']), int(values['fiber_samples']), int(values['seed']),
                   tuple(float(s) for s in values['gaussian_scales']), bool(values['fiber_derivatives']))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'time_samples': self.time_samples,
            'fiber_samples': self.fiber_samples,
            'seed': self.seed,
            'gaussian_scales': list(self.gaussian_scales),
            'fiber_derivatives': self.fiber_derivatives,
        }


@dataclass
class NeedleSamples:
    """サンプリングした (格子番号, 代替制御値) と (格子番号, 接方向)"""
    alternatives: List[Tuple[int, np.ndarray]] = field(default_factory=list)
    directions: List[Tuple[int, np.ndarray]] = field(default_factory=list)
    times: List[int] = field(default_factory=list)


# ---------------------------------------------------------------------------
# 単一変分の接ベクトル

def _needle_node(traj: Trajectory, tau: float) -> int:
    j = traj.index_of(tau)
    if j == 0:
        raise OffGridError(f"針状変分の時刻 τ={tau} は (a, b] の内側である必要があります")
    return j


def _field(problem: ControlProblem, traj: Trajectory, j: int, u: np.ndarray) -> Tuple[np.ndarray, float]:
    compiled = problem.compiled
    vals = compiled.values(traj.clock[j], traj.x[j], u)
    return compiled.velocity(vals), compiled.cost_rate(vals)


def _checked_alt(problem: ControlProblem, u_alt: Sequence[float]) -> np.ndarray:
    u_alt = np.asarray(u_alt, dtype=float)
    tol = config.get_tolerance_config()['fiber']
    if not problem.fiber.contains(u_alt, tol):
        raise FiberViolationError(f"代替制御値 {u_alt.tolist()} がファイバー外です")
    return u_alt


def needle_vector(problem: ControlProblem, traj: Trajectory, spec: NeedleSpec) -> np.ndarray:
    """単一変分の終端での接ベクトル δ·Ψ(τ→b)Y"""
    j = _needle_node(traj, spec.tau)
    if spec.is_reverse:
        w = -_field(problem, traj, j, traj.u[j])[0]
    else:
        w = _field(problem, traj, j, _checked_alt(problem, spec.u_alt))[0]
    return spec.weight * (traj.transport_to_end(j) @ w)


def vertical_needle_vector(problem: ControlProblem, traj: Trajectory, tau: float,
                           u_alt: Sequence[float]) -> np.ndarray:
    """Ψ(τ→b)(ρ(u′) − ρ(u(τ)))"""
    j = _needle_node(traj, tau)
    return _vertical(problem, traj, j, _checked_alt(problem, u_alt), extended=False)


def extended_vertical_needle(problem: ControlProblem, traj: Trajectory, tau: float,
                             u_alt: Sequence[float]) -> np.ndarray:
    """Ψ̄(τ→b)(ρ(u′) − ρ(u(τ)), L(u′) − L(u(τ)))"""
    j = _needle_node(traj, tau)
    return _vertical(problem, traj, j, _checked_alt(problem, u_alt), extended=True)


def _vertical(problem: ControlProblem, traj: Trajectory, j: int, u_alt: np.ndarray, extended: bool) -> np.ndarray:
    v_alt, l_alt = _field(problem, traj, j, u_alt)
    v_ref, l_ref = _field(problem, traj, j, traj.u[j])
    if extended:
        w = np.append(v_alt - v_ref, l_alt - l_ref)
    else:
        w = v_alt - v_ref
    return traj.transport_to_end(j, extended) @ w


def _derivative_vector(problem: ControlProblem, traj: Trajectory, j: int, direction: np.ndarray,
                       extended: bool) -> np.ndarray:
    """u′ → u(τ) の極限方向 Ψ̄(τ→b)(∂ρ/∂u·e, ∂L/∂u·e)"""
    compiled = problem.compiled
    vals = compiled.values(traj.clock[j], traj.x[j], traj.u[j])
    w = compiled.B(vals) @ direction
    if extended:
        w = np.append(w, compiled.Lu(vals) @ direction)
    return traj.transport_to_end(j, extended) @ w


# ---------------------------------------------------------------------------
# サンプリング

def sample_times(traj: Trajectory, count: int, rng: np.random.Generator) -> List[int]:
    """(a, b] の格子点を count 個の層に分けて各層から1点ずつ選ぶ"""
    nodes = np.arange(1, traj.node_count)
    if len(nodes) == 0:
        return []
    if count >= len(nodes):
        return nodes.tolist()
    strata = np.array_split(nodes, count)
    return [int(rng.choice(stratum)) for stratum in strata]


def sample_needles(problem: ControlProblem, traj: Trajectory, sampling: SamplingConfig) -> NeedleSamples:
    """シード固定で時刻と代替制御値をサンプリングする"""
    rng = np.random.default_rng(sampling.seed)
    samples = NeedleSamples()
    fiber = problem.fiber
    for j in sample_times(traj, sampling.time_samples, rng):
        samples.times.append(j)
        center = traj.u[j]
        for u_alt in fiber.sample(rng, center, sampling.fiber_samples, list(sampling.gaussian_scales)):
            samples.alternatives.append((j, np.asarray(u_alt, dtype=float)))
        for direction in fiber.tangent_directions(center):
            samples.directions.append((j, np.asarray(direction, dtype=float)))
    return samples


def _emit_cone(name: str, cone: cones.Cone):
    logger.info(f"{name} を構成しました: 生成元 {cone.count} 本")
    event_system.emit(ConeBuilt(name, cone.count, cone.ambient_dim))


# ---------------------------------------------------------------------------
# 錐

def vertical_cone(problem: ControlProblem, traj: Trajectory, sampling: SamplingConfig,
                  derivatives: bool = False) -> cones.Cone:
    """鉛直変分錐（ℝ^d、固定時刻のファイバー内）"""
    samples = sample_needles(problem, traj, sampling)
    vectors = [_vertical(problem, traj, j, u, extended=False) for j, u in samples.alternatives]
    if derivatives:
        vectors += [_derivative_vector(problem, traj, j, e, extended=False) for j, e in samples.directions]
    cone = cones.Cone.from_vectors(vectors, problem.state_dim, "vertical_cone")
    _emit_cone("vertical_cone", cone)
    return cone


def extended_vertical_cone(problem: ControlProblem, traj: Trajectory, sampling: SamplingConfig) -> cones.Cone:
    """コスト座標付き鉛直変分錐（ℝ^{d+1}、最後の座標が J）

    fiber_derivatives が有効なら微分方向の生成元を先頭に置く。
    """
    samples = sample_needles(problem, traj, sampling)
    vectors = []
    if sampling.fiber_derivatives:
        vectors += [_derivative_vector(problem, traj, j, e, extended=True) for j, e in samples.directions]
    vectors += [_vertical(problem, traj, j, u, extended=True) for j, u in samples.alternatives]
    cone = cones.Cone.from_vectors(vectors, problem.state_dim + 1, "extended_vertical_cone")
    _emit_cone("extended_vertical_cone", cone)
    return cone


def variational_cone(problem: ControlProblem, traj: Trajectory, sampling: SamplingConfig) -> cones.Cone:
    """変分錐（ℝ^{1+d}、先頭が時刻成分）"""
    samples = sample_needles(problem, traj, sampling)
    vectors = []
    for j, u in samples.alternatives:
        v = traj.transport_to_end(j) @ _field(problem, traj, j, u)[0]
        vectors.append(np.concatenate([[1.0], v]))
    for j in samples.times:
        v = traj.transport_to_end(j) @ _field(problem, traj, j, traj.u[j])[0]
        vectors.append(np.concatenate([[-1.0], -v]))
    cone = cones.Cone.from_vectors(vectors, problem.state_dim + 1, "variational_cone")
    _emit_cone("variational_cone", cone)
    return cone


def full_extended_cone(problem: ControlProblem, traj: Trajectory, sampling: SamplingConfig) -> cones.Cone:
    """時刻成分とコスト座標を両方持つ変分錐（ℝ^{1+d+1}）"""
    samples = sample_needles(problem, traj, sampling)
    vectors = []

    def extended_field(j, u):
        v, l = _field(problem, traj, j, u)
        return traj.transport_to_end(j, True) @ np.append(v, l)

    for j, u in samples.alternatives:
        vectors.append(np.concatenate([[1.0], extended_field(j, u)]))
    for j in samples.times:
        vectors.append(np.concatenate([[-1.0], -extended_field(j, traj.u[j])]))
    if sampling.fiber_derivatives:
        for j, e in samples.directions:
            vectors.append(np.concatenate([[0.0], _derivative_vector(problem, traj, j, e, extended=True)]))
    cone = cones.Cone.from_vectors(vectors, problem.state_dim + 2, "full_extended_cone")
    _emit_cone("full_extended_cone", cone)
    return cone


def is_reachable_direction(cone: cones.Cone, v: Sequence[float], tol: Optional[float] = None) -> bool:
    """鉛直変分錐の内点方向なら、その方向へ短時間は固定時刻到達集合内にとどまれる"""
    return cones.in_interior(cone, v, tol)


# ---------------------------------------------------------------------------
# 多重針状変分

def _replay(traj: Trajectory, start: int, clock_end: float) -> List[FlowLeg]:
    """格子番号 start から評価時刻 clock_end まで基準のステップを再生する区間列"""
    legs = []
    for step in traj.steps[start:]:
        if step.clock0 >= clock_end:
            break
        clock1 = min(step.clock1, clock_end)
        legs.append(FlowLeg(clock1 - step.clock0, control=step.control, clock_start=step.clock0,
                            nodes=(step.clock0, clock1)))
    return legs


def _leg_start(traj: Trajectory, j: int) -> int:
    """格子番号 j を含む制御区間の始点（区間は左開右閉）"""
    starts = [b for b in traj.breakpoints if b < j]
    return max(starts) if starts else 0


def multi_needle_endpoint(problem: ControlProblem, x0: Sequence[float], traj: Trajectory,
                          needles: Sequence[NeedleSpec], epsilon: float) -> Tuple[np.ndarray, float]:
    """多重針状変分を合成フローとして実行し、終点と終端コストを返す

    各 τ で、ReverseLeg の分だけ手前で基準区間を打ち切り、AltControl 区間
    （長さ ε·δ）を順に挿入してから、基準を時刻 τ から再開する。
    """
    if epsilon < 0:
        raise StepTooLargeError("ε は 0 以上である必要があります")
    active = [n for n in needles if n.weight > 0.0]
    # 同じ τ では ReverseLeg が先
    active.sort(key=lambda n: (n.tau, 0 if n.is_reverse else 1))

    groups: Dict[int, List[NeedleSpec]] = {}
    for needle in active:
        groups.setdefault(_needle_node(traj, needle.tau), []).append(needle)

    legs: List[FlowLeg] = []
    cursor = 0
    cursor_clock = traj.clock[0]
    for j in sorted(groups):
        group = groups[j]
        tau_clock = traj.clock[j]
        shrink = epsilon * sum(n.weight for n in group if n.is_reverse)
        floor = max(cursor_clock, traj.clock[_leg_start(traj, j)])
        cut = tau_clock - shrink
        if cut < floor - 1e-15:
            raise StepTooLargeError(f"ε={epsilon} が大きすぎます: τ={traj.t[j]:g} の区間長が負になります")
        legs += _replay(traj, cursor, cut)
        for needle in group:
            if needle.is_reverse:
                continue
            u_alt = _checked_alt(problem, needle.u_alt)
            legs.append(FlowLeg(epsilon * needle.weight, control_value=tuple(u_alt), clock_start=tau_clock))
        cursor = j
        cursor_clock = tau_clock
    legs += _replay(traj, cursor, traj.clock[-1])

    schedule = CompositeFlowSchedule(tuple(legs), stretched=True)
    endpoint, realized = composite_flow(problem, schedule, x0, steps=max(1, len(traj.steps)))
    return endpoint, realized.final_cost


def random_needles(problem: ControlProblem, traj: Trajectory, rng: np.random.Generator, count: int,
                   scales: Sequence[float]) -> List[NeedleSpec]:
    """ランダムな固定時刻の多重変分（到達集合の経験的検査用）

    各時刻に同じ重みの ReverseLeg と AltControl を対で置くので総時間は変わらない。
    時刻は (a, b] を count 層に分けた各層の中央半分から選ぶ。
    """
    if count < 1:
        raise InputFormatError(f"針状変分の対の数は 1 以上が必要です ({count})")
    needles = []
    nodes = np.arange(1, traj.node_count)
    for stratum in np.array_split(nodes, min(count, len(nodes))):
        quarter = len(stratum) // 4
        j = int(rng.choice(stratum[quarter:len(stratum) - quarter]))
        weight = float(rng.uniform(0.5, 1.5))
        u_alt = problem.fiber.sample(rng, traj.u[j], 1, list(scales))[0]
        needles.append(NeedleSpec.reverse(traj.t[j], weight))
        needles.append(NeedleSpec.alt(traj.t[j], u_alt, weight))
    return needles

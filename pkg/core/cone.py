"""有限生成凸錐の計算（次元・所属判定・分離余接ベクトル・内点判定・双対錐の端線）"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space, orth, qr

from core.simplex import DenseSimplex
from utils.config import config
from utils.constants import DUAL_RAYS_MAX_DIM, TOL_ABSOLUTE_FLOOR, TOL_RANK
from utils.errors import DimensionLimitError, InputFormatError, LPError
from utils.events import Diagnostic, event_system

logger = logging.getLogger(__name__)

_solver = DenseSimplex()

# 制約生成で一度に加える制約数
DUAL_LP_BATCH = 64


@dataclass(frozen=True)
class Cone:
    """生成元 g_1..g_s ∈ ℝ^n の非負結合全体"""
    ambient_dim: int
    generators: np.ndarray

    @classmethod
    def from_vectors(cls, vectors: Sequence[Sequence[float]], ambient_dim: int, source: str = "") -> "Cone":
        """生成元の列から錐を作る（零ベクトルは診断を出して捨てる）"""
        rows = []
        dropped = 0
        for v in vectors:
            v = np.asarray(v, dtype=float)
            if v.shape != (ambient_dim,):
                raise InputFormatError(f"生成元の長さ {v.shape} が次元 {ambient_dim} と一致しません")
            if np.max(np.abs(v), initial=0.0) <= TOL_ABSOLUTE_FLOOR:
                dropped += 1
                continue
            rows.append(v)
        if dropped:
            logger.info(f"零生成元を {dropped} 個除外しました ({source or 'cone'})")
            event_system.emit(Diagnostic("zero generator dropped", dropped, source))
        generators = np.array(rows, dtype=float).reshape(len(rows), ambient_dim)
        return cls(int(ambient_dim), generators)

    @property
    def count(self) -> int:
        return len(self.generators)

    def scaled(self, factor: float) -> "Cone":
        return Cone(self.ambient_dim, self.generators * float(factor))

    def project(self, indices: Sequence[int]) -> "Cone":
        """座標の一部への射影（射影で零になる生成元は捨てる）"""
        return Cone.from_vectors(self.generators[:, list(indices)], len(indices), "projection")

    def to_list(self) -> List[List[float]]:
        return self.generators.tolist()

    def __repr__(self):
        return f"<Cone(n={self.ambient_dim}, generators={self.count})>"


def _unit_rows(G: np.ndarray) -> np.ndarray:
    if len(G) == 0:
        return G
    return G / np.linalg.norm(G, axis=1)[:, None]


def _lp_tol(tol: Optional[float]) -> float:
    if tol is None:
        tol = config.get_tolerance_config()['cone_lp']
    return max(float(tol), TOL_ABSOLUTE_FLOOR)


def _inf_normalize(v: np.ndarray) -> np.ndarray:
    return v / np.max(np.abs(v))


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v)))
    return v if v[k] > 0 else -v


def dimension(cone: Cone) -> int:
    """生成元が張る線形空間の次元（列ピボット付き QR）"""
    if cone.count == 0:
        return 0
    R, _ = qr(_unit_rows(cone.generators).T, mode='r', pivoting=True)
    diag = np.abs(np.diag(R))
    if len(diag) == 0 or diag[0] == 0.0:
        return 0
    return int(np.sum(diag > TOL_RANK * diag[0]))


def contains(cone: Cone, v: Sequence[float], tol: Optional[float] = None) -> bool:
    """∃λ ≥ 0, Σλ_i g_i = v か（第1段階の単体法で判定）"""
    v = np.asarray(v, dtype=float)
    if v.shape != (cone.ambient_dim,):
        raise InputFormatError(f"ベクトルの長さ {v.shape} が次元 {cone.ambient_dim} と一致しません")
    norm = float(np.linalg.norm(v))
    if norm <= TOL_ABSOLUTE_FLOOR:
        return True
    if cone.count == 0:
        return False
    tol = _lp_tol(tol)
    G = _unit_rows(cone.generators)
    result = _solver.solve(np.zeros(cone.count), G.T, ['='] * cone.ambient_dim, v / norm,
                           feasibility_tol=tol * (1.0 + norm) / norm)
    return result.status != 'infeasible'


def dual_lp(cone: Cone, objective: Sequence[float], tol: Optional[float] = None) -> Tuple[float, np.ndarray]:
    """C* ∩ {‖η‖_∞ ≤ 1} 上で ⟨η, objective⟩ を最大化

    生成元が多いときは違反の大きい制約から順に加える（制約生成）。

    Returns:
        (最大値, 最大化点 η)
    """
    tol = _lp_tol(tol)
    n = cone.ambient_dim
    objective = np.asarray(objective, dtype=float)
    G = _unit_rows(cone.generators)
    active = list(range(min(len(G), DUAL_LP_BATCH)))
    while True:
        rows = G[active]
        # η = y − 1, y ∈ [0, 2]^n
        A = np.vstack([rows, np.eye(n)])
        b = np.concatenate([rows @ np.ones(n), 2.0 * np.ones(n)])
        result = _solver.solve(objective, A, ['<='] * len(A), b)
        if not result.is_optimal:
            raise LPError(f"双対 LP が解けませんでした: {result.status}")
        eta = result.x - 1.0
        violation = G @ eta if len(G) else np.zeros(0)
        seen = set(active)
        violated = [int(i) for i in np.argsort(-violation) if violation[i] > tol and i not in seen]
        if not violated:
            return float(objective @ eta), eta
        active = sorted(active + violated[:DUAL_LP_BATCH])


def separating_covector(cone: Cone, v: Optional[Sequence[float]] = None,
                        tol: Optional[float] = None) -> Optional[np.ndarray]:
    """C を非正側に置き v を正側に置く η（v 省略時は C の真部分性の証拠）"""
    tol = _lp_tol(tol)
    n = cone.ambient_dim
    if v is not None:
        v = np.asarray(v, dtype=float)
        norm = float(np.linalg.norm(v))
        if norm <= TOL_ABSOLUTE_FLOOR:
            return None
        value, eta = dual_lp(cone, v / norm)
        if value <= tol:
            return None
        return _inf_normalize(eta)

    if dimension(cone) < n:
        if cone.count == 0:
            return np.eye(n)[0]
        basis = null_space(_unit_rows(cone.generators), rcond=TOL_RANK)
        return _canonical_sign(_inf_normalize(basis[:, 0]))
    value, eta = dual_lp(cone, -np.sum(_unit_rows(cone.generators), axis=0))
    if value <= tol:
        return None
    return _inf_normalize(eta)


def in_interior(cone: Cone, v: Sequence[float], tol: Optional[float] = None) -> bool:
    """v が錐の内点か（全次元かつ v ± δe_j がすべて錐に含まれる）"""
    v = np.asarray(v, dtype=float)
    n = cone.ambient_dim
    if dimension(cone) < n:
        return False
    g_max = float(np.max(np.linalg.norm(cone.generators, axis=1)))
    delta = 1e-6 * max(1.0, float(np.linalg.norm(v)), g_max)
    eye = np.eye(n)
    return all(contains(cone, v + s * delta * eye[j], tol) for j in range(n) for s in (1.0, -1.0))


def _double_description(A: np.ndarray, tol: float) -> List[np.ndarray]:
    """{z : A z ≤ 0}（A は行正規化・列フルランク）の端線を二重記述法で求める"""
    m, r = A.shape
    _, _, piv = qr(A.T, pivoting=True)
    basis_rows = [int(i) for i in piv[:r]]
    in_basis = set(basis_rows)
    inv = np.linalg.inv(A[basis_rows])
    full = 0
    for i in basis_rows:
        full |= 1 << i

    rays = []
    tight = []
    for i, row in enumerate(basis_rows):
        rays.append(_inf_normalize(-inv[:, i]))
        tight.append(full & ~(1 << row))

    for k in range(m):
        if k in in_basis:
            continue
        values = [float(A[k] @ z) for z in rays]
        pos = [i for i, val in enumerate(values) if val > tol]
        neg = [i for i, val in enumerate(values) if val < -tol]
        zero = [i for i, val in enumerate(values) if abs(val) <= tol]
        bit = 1 << k

        new_rays = [rays[i] for i in neg] + [rays[i] for i in zero]
        new_tight = [tight[i] for i in neg] + [tight[i] | bit for i in zero]
        for p in pos:
            for q in neg:
                common = tight[p] & tight[q]
                if bin(common).count("1") < r - 2:
                    continue
                # 隣接判定: 共通の等号集合を含む他の端線がない
                if any(w != p and w != q and (common & ~tight[w]) == 0 for w in range(len(rays))):
                    continue
                z = values[p] * rays[q] - values[q] * rays[p]
                new_rays.append(_inf_normalize(z))
                new_tight.append(common | bit)
        rays, tight = new_rays, new_tight
        if not rays:
            break
    return rays


def dual_rays(cone: Cone, tol: Optional[float] = None) -> List[np.ndarray]:
    """双対錐 C* = {η : ⟨η, g_i⟩ ≤ 0} の生成元（C* = {0} なら空リスト）

    線形部分空間は ± の両方向で返し、尖った部分は二重記述法で求める。
    各生成元は ‖η‖_∞ = 1 に正規化する。
    """
    n = cone.ambient_dim
    if n > DUAL_RAYS_MAX_DIM:
        raise DimensionLimitError(f"dual_rays は次元 {DUAL_RAYS_MAX_DIM} までです (n={n})")
    tol = _lp_tol(tol)
    if cone.count == 0:
        eye = np.eye(n)
        return [s * eye[j] for j in range(n) for s in (1.0, -1.0)]

    G = _unit_rows(cone.generators)
    rays = []
    lineality = null_space(G, rcond=TOL_RANK)
    for j in range(lineality.shape[1]):
        direction = _canonical_sign(_inf_normalize(lineality[:, j]))
        rays += [direction, -direction]

    Q = orth(G.T, rcond=TOL_RANK)
    if Q.shape[1] > 0:
        A = _unit_rows(G @ Q)
        for z in _double_description(A, tol):
            rays.append(_inf_normalize(Q @ z))
    logger.debug(f"双対錐の端線: {len(rays)} 本 (線形部分 {lineality.shape[1]} 次元)")
    return rays

from abc import ABC, abstractmethod
from typing import Any, Callable, Dict, List

import numpy as np

from utils.constants import NEWTON_MAX_ITER, NEWTON_TOL, TOL_FIBER
from utils.errors import IndefiniteHessianError, NewtonConvergenceError


class BaseFiber(ABC):
    """制御ファイバー（各点で許される制御値の集合）の基底クラス"""

    def __init__(self, name: str, control_dim: int):
        self.name = name
        self.control_dim = int(control_dim)

    @abstractmethod
    def contains(self, u: np.ndarray, tol: float = TOL_FIBER) -> bool:
        """制御値がファイバー内にあるか"""

    @abstractmethod
    def sample(self, rng: np.random.Generator, center: np.ndarray, count: int,
               scales: List[float]) -> np.ndarray:
        """針状変分用の代替制御値をサンプリング

        Args:
            rng: 乱数生成器
            center: 基準制御 u(τ)
            count: サンプル数
            scales: ガウス殻のスケール（無制約ファイバーのみ使用）

        Returns:
            (count, k) の配列
        """

    @abstractmethod
    def search_points(self, rng: np.random.Generator, center: np.ndarray, count: int) -> np.ndarray:
        """ハミルトニアン最大化を検査する点"""

    @abstractmethod
    def search_region(self, center: np.ndarray) -> str:
        """最大化検査の探索領域の説明"""

    @abstractmethod
    def tangent_directions(self, u: np.ndarray) -> List[np.ndarray]:
        """u における実現可能な接方向（微分生成元用）"""

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        """問題JSON用の辞書表現"""

    def diagnostics(self) -> List[str]:
        """ファイバー自身の不変条件違反"""
        return []

    def maximize(self, gradient: Callable[[np.ndarray], np.ndarray],
                 hessian: Callable[[np.ndarray], np.ndarray],
                 u0: np.ndarray, value: Callable[[np.ndarray], float] = None) -> np.ndarray:
        """ハミルトニアンを最大化する制御値をニュートン法で求める

        Args:
            gradient: ∂h/∂u
            hessian: ∂²h/∂u²
            u0: 初期値（前ステージの最大化点）
            value: h 自身（有限集合ファイバーで使用）

        Returns:
            最大化点 u*
        """
        u = np.array(u0, dtype=float)
        for _ in range(NEWTON_MAX_ITER):
            g = gradient(u)
            free = self.free_components(u, g)
            if not np.any(free):
                return u
            H = hessian(u)[np.ix_(free, free)]
            if np.any(np.linalg.eigvalsh(0.5 * (H + H.T)) >= 0.0):
                raise IndefiniteHessianError("∂²h/∂u² が負定値ではありません")
            step = np.zeros_like(u)
            step[free] = -np.linalg.solve(H, g[free])
            u_next = self.project(u + step)
            if np.max(np.abs(u_next - u)) <= NEWTON_TOL * (1.0 + np.max(np.abs(u))):
                return u_next
            u = u_next
        raise NewtonConvergenceError(f"ニュートン法が {NEWTON_MAX_ITER} 回で収束しませんでした")

    def project(self, u: np.ndarray) -> np.ndarray:
        """ファイバーへの射影（既定は恒等写像）"""
        return u

    def free_components(self, u: np.ndarray, g: np.ndarray) -> np.ndarray:
        return np.ones(self.control_dim, dtype=bool)

    def __repr__(self):
        return f"<{self.__class__.__name__}(k={self.control_dim})>"

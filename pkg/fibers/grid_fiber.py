from typing import Any, Callable, Dict, List

import numpy as np

from fibers.base_fiber import BaseFiber
from utils.constants import FiberTypes, TOL_FIBER


class GridFiber(BaseFiber):
    """有限集合ファイバー（明示的な制御ベクトルの列）"""

    def __init__(self, points):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        control_dim = self.points.shape[1] if self.points.size else 0
        super().__init__(FiberTypes.GRID, control_dim)

    def diagnostics(self) -> List[str]:
        if self.points.size == 0:
            return ["empty finite grid fiber"]
        return []

    def contains(self, u: np.ndarray, tol: float = TOL_FIBER) -> bool:
        u = np.asarray(u, dtype=float)
        if len(u) != self.control_dim:
            return False
        scale = 1.0 + np.max(np.abs(u))
        return bool(np.any(np.max(np.abs(self.points - u[None, :]), axis=1) <= tol * scale))

    def sample(self, rng: np.random.Generator, center: np.ndarray, count: int,
               scales: List[float]) -> np.ndarray:
        return self.points.copy()

    def search_points(self, rng: np.random.Generator, center: np.ndarray, count: int) -> np.ndarray:
        return self.points.copy()

    def search_region(self, center: np.ndarray) -> str:
        return f"all {len(self.points)} grid points"

    def tangent_directions(self, u: np.ndarray) -> List[np.ndarray]:
        return []

    def maximize(self, gradient: Callable, hessian: Callable, u0: np.ndarray,
                 value: Callable[[np.ndarray], float] = None) -> np.ndarray:
        # 列挙（同値なら先頭の点）
        values = [value(p) for p in self.points]
        return self.points[int(np.argmax(values))].copy()

    def to_dict(self) -> Dict[str, Any]:
        return {'type': self.name, 'points': self.points.tolist()}

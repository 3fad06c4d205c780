from typing import Any, Dict, List

import numpy as np

from fibers.base_fiber import BaseFiber
from utils.constants import FiberTypes, TOL_FIBER, UNCONSTRAINED_SEARCH_RADIUS


class UnconstrainedFiber(BaseFiber):
    """制約なしファイバー（u ∈ ℝ^k）"""

    def __init__(self, control_dim: int, search_radius: float = UNCONSTRAINED_SEARCH_RADIUS):
        super().__init__(FiberTypes.UNCONSTRAINED, control_dim)
        self.search_radius = float(search_radius)

    def contains(self, u: np.ndarray, tol: float = TOL_FIBER) -> bool:
        return len(u) == self.control_dim and bool(np.all(np.isfinite(u)))

    def sample(self, rng: np.random.Generator, center: np.ndarray, count: int,
               scales: List[float]) -> np.ndarray:
        # ガウス殻: サンプル i はスケール scales[i % len(scales)]
        noise = rng.standard_normal((count, self.control_dim))
        shell = np.array([scales[i % len(scales)] for i in range(count)])[:, None]
        return np.asarray(center, dtype=float)[None, :] + shell * noise

    def search_points(self, rng: np.random.Generator, center: np.ndarray, count: int) -> np.ndarray:
        r = self.search_radius
        return np.asarray(center, dtype=float)[None, :] + rng.uniform(-r, r, (count, self.control_dim))

    def search_region(self, center: np.ndarray) -> str:
        return f"box of half-width {self.search_radius:g} around u(t)"

    def tangent_directions(self, u: np.ndarray) -> List[np.ndarray]:
        eye = np.eye(self.control_dim)
        return [s * eye[a] for a in range(self.control_dim) for s in (1.0, -1.0)]

    def to_dict(self) -> Dict[str, Any]:
        return {'type': self.name}

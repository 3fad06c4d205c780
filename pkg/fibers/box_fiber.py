from typing import Any, Dict, List

import numpy as np
from scipy.stats import qmc

from fibers.base_fiber import BaseFiber
from utils.constants import FiberTypes, TOL_FIBER


class BoxFiber(BaseFiber):
    """箱型ファイバー（lo^a ≤ u^a ≤ hi^a）"""

    def __init__(self, lo, hi):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        super().__init__(FiberTypes.BOX, len(self.lo))

    def diagnostics(self) -> List[str]:
        issues = []
        if len(self.lo) != len(self.hi):
            issues.append("box bound length mismatch")
        elif np.any(self.lo >= self.hi):
            issues.append("degenerate fiber bound: lo must be < hi componentwise")
        return issues

    def contains(self, u: np.ndarray, tol: float = TOL_FIBER) -> bool:
        u = np.asarray(u, dtype=float)
        return (len(u) == self.control_dim
                and bool(np.all(u >= self.lo - tol)) and bool(np.all(u <= self.hi + tol)))

    def sample(self, rng: np.random.Generator, center: np.ndarray, count: int,
               scales: List[float]) -> np.ndarray:
        sampler = qmc.LatinHypercube(d=self.control_dim, seed=rng)
        return qmc.scale(sampler.random(count), self.lo, self.hi)

    def search_points(self, rng: np.random.Generator, center: np.ndarray, count: int) -> np.ndarray:
        corners = np.array([self.lo, self.hi])
        return np.vstack([rng.uniform(self.lo, self.hi, (count, self.control_dim)), corners])

    def search_region(self, center: np.ndarray) -> str:
        return "whole box fiber"

    def tangent_directions(self, u: np.ndarray) -> List[np.ndarray]:
        # 境界上では内向きの片側方向のみ
        eye = np.eye(self.control_dim)
        directions = []
        for a in range(self.control_dim):
            if u[a] < self.hi[a] - TOL_FIBER:
                directions.append(eye[a])
            if u[a] > self.lo[a] + TOL_FIBER:
                directions.append(-eye[a])
        return directions

    def project(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.lo, self.hi)

    def free_components(self, u: np.ndarray, g: np.ndarray) -> np.ndarray:
        at_lo = (u <= self.lo + TOL_FIBER) & (g < 0.0)
        at_hi = (u >= self.hi - TOL_FIBER) & (g > 0.0)
        return ~(at_lo | at_hi)

    def to_dict(self) -> Dict[str, Any]:
        return {'type': self.name, 'lo': self.lo.tolist(), 'hi': self.hi.tolist()}

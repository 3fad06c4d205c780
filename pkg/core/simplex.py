"""小規模な密行列 LP 用の二段階単体法（ブランドの規則）"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from utils.errors import LPError

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-10
MAX_ITERATIONS = 5000


@dataclass
class LPResult:
    """LP の解

    status: 'optimal' / 'infeasible' / 'unbounded'
    residual: 第1段階終了時の人工変数の総和（実行可能性の誤差）
    """
    status: str
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    residual: float = 0.0

    @property
    def is_optimal(self) -> bool:
        return self.status == 'optimal'


class DenseSimplex:
    """x ≥ 0 の下で cᵀx を最大化する二段階単体法

    制約は A x (<=, =, >=) b の形で与える。
    """

    def __init__(self, pivot_tol: float = PIVOT_TOL, max_iterations: int = MAX_ITERATIONS):
        self.pivot_tol = pivot_tol
        self.max_iterations = max_iterations

    @staticmethod
    def _pivot(T: np.ndarray, row: int, col: int):
        T[row, :] /= T[row, col]
        for r in range(T.shape[0]):
            if r != row and T[r, col] != 0.0:
                T[r, :] -= T[r, col] * T[row, :]

    def _enter(self, z_row: np.ndarray) -> int:
        # Bland: 負の被約費用を持つ最小添字
        for j, v in enumerate(z_row[:-1]):
            if v < -self.pivot_tol:
                return j
        return -1

    def _leave(self, T: np.ndarray, col: int, basis: List[int]) -> int:
        best = None
        for i in range(T.shape[0] - 1):
            a = T[i, col]
            if a > self.pivot_tol:
                key = (T[i, -1] / a, basis[i])
                if best is None or key < best[0]:
                    best = (key, i)
        return -1 if best is None else best[1]

    def _iterate(self, T: np.ndarray, basis: List[int]) -> str:
        for _ in range(self.max_iterations):
            j = self._enter(T[-1, :])
            if j == -1:
                return 'optimal'
            i = self._leave(T, j, basis)
            if i == -1:
                return 'unbounded'
            self._pivot(T, i, j)
            basis[i] = j
        raise LPError(f"単体法が {self.max_iterations} 回で終了しませんでした")

    def solve(self, c: Sequence[float], A: np.ndarray, signs: Sequence[str], b: Sequence[float],
              feasibility_tol: float = 1e-9) -> LPResult:
        """第1段階で実行可能基底を求め、第2段階で cᵀx を最大化する

        feasibility_tol: 人工変数の総和がこれを超えると実行不能とみなす
        """
        c = np.asarray(c, dtype=float)
        A = np.atleast_2d(np.asarray(A, dtype=float)).copy()
        b = np.asarray(b, dtype=float).copy()
        signs = list(signs)
        m, n = A.shape if A.size else (0, len(c))

        # b >= 0 にそろえる
        for i in range(m):
            if b[i] < 0:
                A[i, :] *= -1.0
                b[i] *= -1.0
                signs[i] = {'<=': '>=', '>=': '<=', '=': '='}[signs[i]]

        num_s = sum(1 for s in signs if s in ('<=', '>='))
        num_a = sum(1 for s in signs if s in ('=', '>='))
        sbase, abase = n, n + num_s
        total = n + num_s + num_a
        T = np.zeros((m + 1, total + 1))
        basis = []
        si = ai = 0
        for i in range(m):
            T[i, :n] = A[i, :]
            T[i, -1] = b[i]
            if signs[i] == '<=':
                T[i, sbase + si] = 1.0
                basis.append(sbase + si)
                si += 1
            elif signs[i] == '>=':
                T[i, sbase + si] = -1.0
                T[i, abase + ai] = 1.0
                basis.append(abase + ai)
                si += 1
                ai += 1
            else:
                T[i, abase + ai] = 1.0
                basis.append(abase + ai)
                ai += 1

        # 第1段階: max −Σa
        T[-1, abase:total] = 1.0
        for r, bc in enumerate(basis):
            if bc >= abase:
                T[-1, :] -= T[r, :]
        self._iterate(T, basis)
        residual = max(0.0, -T[-1, -1])
        if residual > feasibility_tol:
            logger.debug(f"LP 実行不能: 残差={residual:.3e}")
            return LPResult('infeasible', residual=residual)

        # 人工変数を基底から追い出す（追い出せない行は冗長）
        keep_rows = []
        for r in range(m):
            if basis[r] >= abase:
                for j in range(abase):
                    if abs(T[r, j]) > self.pivot_tol:
                        self._pivot(T, r, j)
                        basis[r] = j
                        break
            if basis[r] < abase:
                keep_rows.append(r)
        T2 = np.vstack([T[keep_rows, :abase], np.zeros((1, abase))])
        T2 = np.hstack([T2, np.concatenate([T[keep_rows, -1], [0.0]])[:, None]])
        basis2 = [basis[r] for r in keep_rows]

        # 第2段階
        cost = np.zeros(abase)
        cost[:n] = c
        T2[-1, :abase] = -cost
        for r, bc in enumerate(basis2):
            if cost[bc] != 0.0:
                T2[-1, :] += cost[bc] * T2[r, :]
        status = self._iterate(T2, basis2)
        if status != 'optimal':
            return LPResult(status, residual=residual)

        x_all = np.zeros(abase)
        for r, bc in enumerate(basis2):
            x_all[bc] = T2[r, -1]
        x = np.maximum(x_all[:n], 0.0)
        return LPResult('optimal', x, float(T2[-1, -1]), residual)

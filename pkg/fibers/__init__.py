from typing import Any, Dict

import numpy as np

from fibers.base_fiber import BaseFiber
from fibers.box_fiber import BoxFiber
from fibers.grid_fiber import GridFiber
from fibers.unconstrained_fiber import UnconstrainedFiber
from utils.constants import FiberTypes
from utils.errors import InputFormatError


def _bound(value: Any, control_dim: int, key: str) -> np.ndarray:
    """箱の境界。スカラーは全成分に同じ値を使う"""
    try:
        bound = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as e:
        raise InputFormatError(f"box ファイバーの {key} が数値ではありません: {e}") from None
    if bound.ndim == 0:
        return np.full(max(control_dim, 1), float(bound))
    if bound.ndim != 1:
        raise InputFormatError(f"box ファイバーの {key} は数値の配列である必要があります")
    return bound


def fiber_from_dict(data: Dict[str, Any], control_dim: int) -> BaseFiber:
    """問題JSONの "fiber" 項目からファイバーを生成"""
    if data is None:
        return UnconstrainedFiber(control_dim)
    fiber_type = data.get('type', FiberTypes.UNCONSTRAINED)
    if fiber_type == FiberTypes.UNCONSTRAINED:
        return UnconstrainedFiber(control_dim)
    if fiber_type == FiberTypes.BOX:
        if 'lo' not in data or 'hi' not in data:
            raise InputFormatError("box ファイバーには lo と hi が必要です")
        return BoxFiber(_bound(data['lo'], control_dim, 'lo'), _bound(data['hi'], control_dim, 'hi'))
    if fiber_type == FiberTypes.GRID:
        return GridFiber(data.get('points', []))
    raise InputFormatError(f"未知のファイバー種別: {fiber_type}")

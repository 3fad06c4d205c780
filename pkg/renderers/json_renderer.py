import json
import logging
import math
import os
from typing import Any

import numpy as np

from utils.config import config

logger = logging.getLogger(__name__)


class JsonRenderer:
    """決定的な JSON（キー順固定・浮動小数点は有効桁数固定）を出力するレンダラー"""

    def __init__(self, indent: int = 2):
        self.output_config = config.get_output_config()
        self.digits = int(self.output_config['digits'])
        self.indent = indent

    def _number(self, value: float) -> str:
        if not math.isfinite(value):
            return "null"
        return format(value, f".{self.digits}g")

    def _encode(self, value: Any, level: int) -> str:
        pad = " " * (self.indent * (level + 1))
        end = " " * (self.indent * level)
        if isinstance(value, np.ndarray):
            value = value.tolist()
        if isinstance(value, (bool, np.bool_)):
            return "true" if value else "false"
        if value is None:
            return "null"
        if isinstance(value, (int, np.integer)):
            return str(int(value))
        if isinstance(value, (float, np.floating)):
            return self._number(float(value))
        if isinstance(value, str):
            return json.dumps(value, ensure_ascii=False)
        if isinstance(value, dict):
            if not value:
                return "{}"
            items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {self._encode(value[k], level + 1)}"
                     for k in sorted(value, key=str)]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(value, (list, tuple)):
            if not value:
                return "[]"
            items = [f"{pad}{self._encode(v, level + 1)}" for v in value]
            return "[\n" + ",\n".join(items) + "\n" + end + "]"
        raise TypeError(f"JSONに変換できない型です: {type(value).__name__}")

    def render(self, data: Any) -> str:
        return self._encode(data, 0) + "\n"

    def write(self, path: str, data: Any):
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(self.render(data))
        logger.info(f"JSONを書き出しました: {path}")

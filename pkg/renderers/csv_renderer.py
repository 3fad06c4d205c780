import csv
import io
import logging
import os
from typing import Iterable, Sequence

from utils.config import config

logger = logging.getLogger(__name__)


class CsvRenderer:
    """軌道や終点群を CSV 文字列に変換するレンダラー"""

    def __init__(self):
        self.output_config = config.get_output_config()
        self.digits = int(self.output_config['digits'])

    def format_number(self, value: float) -> str:
        return format(float(value), f".{self.digits}g")

    def render_rows(self, header: Sequence[str], rows: Iterable[Sequence]) -> str:
        """ヘッダー付きの表を描画（数値は有効桁数をそろえる）"""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else self.format_number(v) for v in row])
        return buffer.getvalue()

    def render_trajectory(self, traj) -> str:
        """ヘッダー t,x1..xd,u1..uk,J、格子点ごとに1行"""
        d = traj.x.shape[1]
        k = traj.u.shape[1]
        header = ["t"] + [f"x{i + 1}" for i in range(d)] + [f"u{a + 1}" for a in range(k)] + ["J"]
        rows = ([traj.t[j], *traj.x[j], *traj.u[j], traj.J[j]] for j in range(traj.node_count))
        return self.render_rows(header, rows)

    def render_matrix(self, matrix) -> str:
        header = [f"c{i + 1}" for i in range(len(matrix[0]))] if len(matrix) else []
        return self.render_rows(header, matrix)

    def write(self, path: str, text: str):
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        logger.info(f"CSVを書き出しました: {path}")


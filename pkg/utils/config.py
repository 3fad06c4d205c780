import logging
import os
from typing import Any, Dict, Optional

import yaml

from utils.constants import *

logger = logging.getLogger(__name__)


class Config:
    def __init__(self, config_path: Optional[str] = None):
        self.config_path = config_path or os.environ.get(ENV_CONFIG, "config.yaml")
        self._config = {}
        self.load_config()

    def load_config(self):
        """設定ファイルを読み込み"""
        try:
            if os.path.exists(self.config_path):
                with open(self.config_path, 'r', encoding='utf-8') as f:
                    self._config = yaml.safe_load(f) or {}
            else:
                logger.warning(f"設定ファイル {self.config_path} が見つかりません。デフォルト値を使用します。")
                self._config = {}
        except Exception as e:
            logger.error(f"設定ファイルの読み込みエラー: {e}")
            self._config = {}

    def get(self, key_path: str, default: Any = None) -> Any:
        """階層的なキーで設定値を取得"""
        keys = key_path.split('.')
        value = self._config

        try:
            for key in keys:
                value = value[key]
            return value
        except (KeyError, TypeError):
            return default

    def get_integration_config(self) -> Dict[str, Any]:
        """積分設定を取得"""
        return {
            'steps': int(self.get('integration.steps', INTEGRATION_STEPS)),
            'fd_epsilon': float(self.get('integration.fd_epsilon', FD_EPSILON))
        }

    def get_sampling_config(self) -> Dict[str, Any]:
        """サンプリング設定を取得"""
        seed = self.get('sampling.seed', None)
        if seed is None:
            seed = os.environ.get(ENV_SEED, DEFAULT_SEED)
        return {
            'time_samples': int(self.get('sampling.time_samples', TIME_SAMPLES)),
            'fiber_samples': int(self.get('sampling.fiber_samples', FIBER_SAMPLES)),
            'seed': int(seed),
            'gaussian_scales': [float(s) for s in self.get('sampling.gaussian_scales', GAUSSIAN_SCALES)],
            'fiber_derivatives': bool(self.get('sampling.fiber_derivatives', FIBER_DERIVATIVES)),
            'maximization_samples': int(self.get('sampling.maximization_samples', MAXIMIZATION_SAMPLES))
        }

    def get_tolerance_config(self) -> Dict[str, float]:
        """許容誤差設定を取得"""
        return {
            'stationarity': float(self.get('tolerances.stationarity', TOL_STATIONARITY)),
            'maximization': float(self.get('tolerances.maximization', TOL_MAXIMIZATION)),
            'cone_lp': float(self.get('tolerances.cone_lp', TOL_CONE_LP)),
            'adjoint': float(self.get('tolerances.adjoint', TOL_ADJOINT)),
            'fiber': float(self.get('tolerances.fiber', TOL_FIBER)),
            'boundary': float(self.get('tolerances.boundary', TOL_BOUNDARY))
        }

    def get_output_config(self) -> Dict[str, Any]:
        """出力設定を取得"""
        return {
            'directory': os.path.expanduser(self.get('output.directory', OUTPUT_DIR)),
            'digits': int(self.get('output.digits', OUTPUT_DIGITS))
        }

    def get_reach_config(self) -> Dict[str, Any]:
        """reach コマンドの設定を取得"""
        return {
            'samples': int(self.get('reach.samples', REACH_SAMPLES)),
            'eps': float(self.get('reach.eps', REACH_EPS)),
            'needle_pairs': int(self.get('reach.needle_pairs', REACH_NEEDLE_PAIRS))
        }

    def get_logging_config(self) -> Dict[str, Any]:
        """ログ設定を取得"""
        return {
            'level': str(self.get('logging.level', LOG_LEVEL)).upper(),
            'format': self.get('logging.format', LOG_FORMAT)
        }

# グローバル設定インスタンス
config = Config()

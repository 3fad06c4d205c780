import os

# 積分設定（デフォルト値）
INTEGRATION_STEPS = 1000
FD_EPSILON = 1e-5

# サンプリング設定
TIME_SAMPLES = 64
FIBER_SAMPLES = 64
DEFAULT_SEED = 20240601
GAUSSIAN_SCALES = [0.5, 1.0, 2.0]
FIBER_DERIVATIVES = True
MAXIMIZATION_SAMPLES = 256
UNCONSTRAINED_SEARCH_RADIUS = 5.0

# reach（多重変分の終点群）
REACH_SAMPLES = 16
REACH_EPS = 1e-2
REACH_NEEDLE_PAIRS = 3

# 許容誤差
TOL_STATIONARITY = 1e-5
TOL_MAXIMIZATION = 1e-6
TOL_CONE_LP = 1e-9
TOL_ADJOINT = 1e-6
TOL_FIBER = 1e-12
TOL_BOUNDARY = 1e-7
TOL_RANK = 1e-10
TOL_ABSOLUTE_FLOOR = 1e-12

# 錐計算の上限
DUAL_RAYS_MAX_DIM = 8

# ニュートン法
NEWTON_MAX_ITER = 50
NEWTON_TOL = 1e-12

# 出力設定
OUTPUT_DIR = os.path.expanduser("./out")
OUTPUT_DIGITS = 17

# ログ設定
LOG_LEVEL = "WARNING"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# 環境変数
ENV_CONFIG = "EXTREMALKIT_CONFIG"
ENV_SEED = "EXTREMALKIT_SEED"

# カタログ名
class Catalog:
    LQR1D = "lqr1d"
    DOUBLE_INTEGRATOR = "double_integrator"
    HEISENBERG = "heisenberg"
    MARTINET = "martinet"

    ALL = [LQR1D, DOUBLE_INTEGRATOR, HEISENBERG, MARTINET]

# ファイバー種別
class FiberTypes:
    UNCONSTRAINED = "unconstrained"
    BOX = "box"
    GRID = "grid"

# 終了コード
class ExitCodes:
    SUCCESS = 0
    VALIDATION = 2
    NUMERICAL = 3

# 針状変分の種類
class NeedleKinds:
    ALT_CONTROL = "alt_control"
    REVERSE_LEG = "reverse_leg"

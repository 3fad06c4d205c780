from typing import List, Optional

from utils.constants import ExitCodes


class ExtremalKitError(Exception):
    """ツールキット共通の基底例外"""
    exit_code = ExitCodes.NUMERICAL
    kind = "error"


# --- 入力検証系（終了コード 2） ---

class ValidationError(ExtremalKitError):
    exit_code = ExitCodes.VALIDATION
    kind = "validation_error"


class ExprSyntaxError(ValidationError):
    """式の構文エラー（バイトオフセット付き）"""
    kind = "syntax_error"

    def __init__(self, message: str, offset: int, text: str = ""):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset
        self.text = text


class UnknownVariableError(ValidationError):
    kind = "unknown_variable"


class UnknownFunctionError(ValidationError):
    kind = "unknown_function"


class MissingBindingError(ValidationError):
    kind = "missing_binding"


class ProblemValidationError(ValidationError):
    """問題定義の不変条件違反"""
    kind = "invalid_problem"

    def __init__(self, diagnostics: List[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = list(diagnostics)


class UnknownProblemError(ValidationError):
    kind = "unknown_problem"


class InputFormatError(ValidationError):
    """JSON入力の形式エラー"""
    kind = "invalid_json"

    def __init__(self, message: str, offset: Optional[int] = None):
        super().__init__(message if offset is None else f"{message} (offset {offset})")
        self.offset = offset


class FiberViolationError(ValidationError):
    kind = "fiber_violation"


class OffGridError(ValidationError):
    kind = "off_grid"


class DimensionLimitError(ValidationError):
    kind = "dimension_limit"


# --- 数値計算系（終了コード 3） ---

class NumericalError(ExtremalKitError):
    exit_code = ExitCodes.NUMERICAL
    kind = "numerical_error"


class DomainError(NumericalError):
    """評価結果が有限でない（NaN/Inf）"""
    kind = "domain_error"


class IntegrationError(NumericalError):
    kind = "integration_error"


class StepTooLargeError(NumericalError):
    kind = "step_too_large"


class LPError(NumericalError):
    kind = "lp_error"


class DegenerateConeError(NumericalError):
    kind = "degenerate_cone"


class NewtonConvergenceError(NumericalError):
    kind = "newton_nonconvergence"


class IndefiniteHessianError(NumericalError):
    kind = "indefinite_hessian"

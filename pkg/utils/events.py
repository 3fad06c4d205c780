import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, ClassVar, Dict, List, Optional, Tuple

logger = logging.getLogger(__name__)


class EventType(Enum):
    """イベントタイプの定義"""
    TRAJECTORY_INTEGRATED = "trajectory_integrated"
    CONE_BUILT = "cone_built"
    WITNESS_VERIFIED = "witness_verified"
    DIAGNOSTIC = "diagnostic"
    COMMAND_COMPLETED = "command_completed"


@dataclass(frozen=True)
class TrajectoryIntegrated:
    type: ClassVar[EventType] = EventType.TRAJECTORY_INTEGRATED
    nodes: int
    endpoint: Tuple[float, ...]

    def describe(self) -> str:
        return f"格子点 {self.nodes}, 終点 {list(self.endpoint)}"


@dataclass(frozen=True)
class ConeBuilt:
    type: ClassVar[EventType] = EventType.CONE_BUILT
    cone: str
    generators: int
    dim: int

    def describe(self) -> str:
        return f"{self.cone}: 生成元 {self.generators} 本 (ℝ^{self.dim})"


@dataclass(frozen=True)
class WitnessVerified:
    """双対端線から復元した乗数の検査結果"""
    type: ClassVar[EventType] = EventType.WITNESS_VERIFIED
    lam: float
    passed: bool
    failures: Tuple[str, ...] = ()

    def describe(self) -> str:
        verdict = "合格" if self.passed else f"不合格 {list(self.failures)}"
        return f"λ={self.lam:g}: {verdict}"


@dataclass(frozen=True)
class Diagnostic:
    """計算を止めない入力の補正（零生成元の除外など）"""
    type: ClassVar[EventType] = EventType.DIAGNOSTIC
    message: str
    count: int = 1
    source: Optional[str] = None

    def describe(self) -> str:
        where = f" ({self.source})" if self.source else ""
        return f"{self.message} ×{self.count}{where}"


@dataclass(frozen=True)
class CommandCompleted:
    type: ClassVar[EventType] = EventType.COMMAND_COMPLETED
    command: str
    artifacts: Tuple[str, ...] = ()

    def describe(self) -> str:
        return f"{self.command} 完了" + (f": {', '.join(self.artifacts)}" if self.artifacts else "")


Payload = (TrajectoryIntegrated, ConeBuilt, WitnessVerified, Diagnostic, CommandCompleted)


@dataclass(frozen=True)
class Event:
    """イベントデータクラス"""
    type: EventType
    data: object


class EventSystem:
    """イベントシステム（Observer パターン）"""

    def __init__(self):
        self._listeners: Dict[EventType, List[Callable[[Event], None]]] = {}

    def subscribe(self, event_type: EventType, callback: Callable[[Event], None]):
        """イベントリスナーを登録"""
        listeners = self._listeners.setdefault(event_type, [])
        if callback not in listeners:
            listeners.append(callback)

    def subscribe_all(self, callback: Callable[[Event], None]):
        for event_type in EventType:
            self.subscribe(event_type, callback)

    def unsubscribe(self, event_type: EventType, callback: Callable[[Event], None]):
        """イベントリスナーを解除"""
        if callback in self._listeners.get(event_type, []):
            self._listeners[event_type].remove(callback)

    def emit(self, payload):
        """イベントを発行（種別はペイロードの型で決まる）"""
        if not isinstance(payload, Payload):
            raise TypeError(f"未知のイベントペイロード: {type(payload).__name__}")
        event = Event(payload.type, payload)
        for callback in list(self._listeners.get(payload.type, [])):
            try:
                callback(event)
            except Exception as e:
                logger.error(f"イベントリスナーでエラーが発生しました: {e}")


# グローバルイベントシステム
event_system = EventSystem()

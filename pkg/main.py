#!/usr/bin/env python3

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional

# パッケージのルートディレクトリをPythonパスに追加
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from core.command_interface import CONE_KINDS, CommandInterface
from renderers.json_renderer import JsonRenderer
from utils.config import config
from utils.events import Event, event_system

TOLERANCE_NAMES = ('stationarity', 'maximization', 'cone_lp', 'adjoint', 'fiber', 'boundary')


class ExtremalKitApp:
    """極値解析ツールキットのメインクラス"""

    def __init__(self, verbose: bool = False):
        self.setup_logging(verbose)
        self.command_interface = CommandInterface()
        self.json_renderer = JsonRenderer()
        if verbose:
            self.setup_event_listeners()

    def setup_logging(self, verbose: bool):
        """ログ設定を適用"""
        logging_config = config.get_logging_config()
        level = logging.DEBUG if verbose else getattr(logging, logging_config['level'], logging.WARNING)
        logging.basicConfig(level=level, format=logging_config['format'], stream=sys.stderr)

    def setup_event_listeners(self):
        """進捗表示用のイベントリスナーを設定"""
        event_system.subscribe_all(self.on_progress)

    def on_progress(self, event: Event):
        print(f"[{event.type.value}] {event.data.describe()}", file=sys.stderr)

    def run(self, command_data: Dict[str, Any], as_json: bool = False) -> int:
        """コマンドを実行して終了コードを返す"""
        response = self.command_interface.execute(command_data)
        if 'error' in response:
            print(f"エラー ({response['error']}): {response['message']}", file=sys.stderr)
            for line in response.get('diagnostics', []):
                print(f"  - {line}", file=sys.stderr)
            return response['exit_code']

        if as_json:
            sys.stdout.write(self.json_renderer.render(response['data']))
        else:
            sys.stdout.write(response['text'])
        for path in response.get('artifacts', []):
            print(f"書き出し: {path}", file=sys.stderr)
        return response['exit_code']


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--json', action='store_true', help='JSONで出力')
    common.add_argument('--verbose', action='store_true', help='進捗とデバッグログを表示')

    analysis = argparse.ArgumentParser(add_help=False)
    analysis.add_argument('--problem', help='問題ファイル（JSON）またはカタログ名')
    analysis.add_argument('--control', help='制御ファイル（JSON）またはJSON文字列')
    analysis.add_argument('--x0', help='初期状態（例: "0,0,0"）')
    analysis.add_argument('--steps', type=int, help='区間あたりのRK4ステップ数')
    analysis.add_argument('--seed', type=int, help='乱数シード（省略時は EXTREMALKIT_SEED）')
    analysis.add_argument('--time-samples', type=int, help='針状変分の時刻サンプル数')
    analysis.add_argument('--fiber-samples', type=int, help='各時刻の制御値サンプル数')
    analysis.add_argument('--eps', type=float, help='多重変分の幅 ε')
    analysis.add_argument('--out', help='成果物の出力ディレクトリ')
    for name in TOLERANCE_NAMES:
        analysis.add_argument(f"--tol-{name.replace('_', '-')}", type=float, dest=f"tol_{name}",
                              help=f'{name} の許容誤差')

    parser = argparse.ArgumentParser(description='固定時間最適制御の極値解析ツールキット')
    subparsers = parser.add_subparsers(dest='command', required=True)

    catalog = subparsers.add_parser('catalog', parents=[common], help='カタログ問題の一覧')
    catalog.add_argument('name', nargs='?', help='表示する問題名')

    subparsers.add_parser('simulate', parents=[common, analysis], help='軌道の積分（CSV）')

    transport = subparsers.add_parser('transport', parents=[common, analysis], help='輸送行列')
    transport.add_argument('--t0', type=float, help='始点時刻（省略時は a）')
    transport.add_argument('--t1', type=float, help='終点時刻（省略時は b）')
    transport.add_argument('--extended', action='store_true', help='コスト座標付きの輸送')

    cone = subparsers.add_parser('cone', parents=[common, analysis], help='変分錐と双対錐の端線')
    cone.add_argument('--kind', choices=CONE_KINDS, default='extended', help='錐の種類')

    subparsers.add_parser('classify', parents=[common, analysis], help='極値・正規・異常の判定')

    check = subparsers.add_parser('check-multiplier', parents=[common, analysis], help='乗数の検査')
    check.add_argument('--eta', required=True, help='終端の余接ベクトル η_b')
    check.add_argument('--lam', type=float, default=-1.0, help='コスト乗数 λ ≤ 0')

    extremal = subparsers.add_parser('extremal', parents=[common, analysis], help='正規ハミルトン系の積分')
    extremal.add_argument('--p0', required=True, help='初期余状態 p(a)')
    extremal.add_argument('--lam', type=float, default=-1.0, help='コスト乗数 λ < 0')

    reach = subparsers.add_parser('reach', parents=[common, analysis], help='多重変分の終点群と錐の整合性')
    reach.add_argument('--samples', type=int, help='ランダムな変分の組数（省略時は設定ファイル）')

    return parser


def command_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """argparse の結果をコマンド辞書に変換"""
    command_data = {key: value for key, value in vars(args).items()
                    if not key.startswith('tol_') and key not in ('json', 'verbose')}
    command_data['tolerances'] = {name: getattr(args, f"tol_{name}", None) for name in TOLERANCE_NAMES}
    return command_data


def main(argv: Optional[List[str]] = None) -> int:
    """メイン関数"""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        app = ExtremalKitApp(verbose=args.verbose)
        return app.run(command_from_args(args), as_json=args.json)
    except KeyboardInterrupt:
        print("\nキーボード割り込みで終了しました", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())

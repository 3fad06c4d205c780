import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from core import cone as cones
from core.flow import extended_transport, integrate, transport
from core.pmp import (check_multiplier, classify_extremal, hamiltonian_drift, integrate_normal_hamiltonian,
                      recover_multiplier)
from core.system import (ControlProblem, catalog, catalog_names, load_control, load_problem, problem_to_dict,
                         state_names)
from core.variation import (SamplingConfig, extended_vertical_cone, full_extended_cone, is_reachable_direction,
                            multi_needle_endpoint, random_needles, variational_cone, vertical_cone)
from renderers.csv_renderer import CsvRenderer
from renderers.json_renderer import JsonRenderer
from utils.config import config
from utils.constants import DUAL_RAYS_MAX_DIM, ExitCodes
from utils.errors import ExtremalKitError, InputFormatError
from utils.events import CommandCompleted, event_system

MIN_STEPS = 10

CONE_KINDS = ('vertical', 'extended', 'variational', 'full')


@dataclass(frozen=True)
class RunConfig:
    """1回のコマンド実行の設定（ステップ数・サンプル数・シード・許容誤差・出力先）"""
    steps: int
    time_samples: Optional[int]
    fiber_samples: Optional[int]
    seed: int
    tolerances: Dict[str, float] = field(default_factory=dict)
    out: Optional[str] = None

    @classmethod
    def from_command(cls, command_data: Dict[str, Any]) -> "RunConfig":
        integration = config.get_integration_config()
        steps = command_data.get('steps')
        steps = integration['steps'] if steps is None else steps
        seed = command_data.get('seed')
        if seed is None:
            seed = config.get_sampling_config()['seed']
        tolerances = dict(config.get_tolerance_config())
        tolerances.update({k: v for k, v in (command_data.get('tolerances') or {}).items() if v is not None})

        if int(steps) < MIN_STEPS:
            raise InputFormatError(f"ステップ数は {MIN_STEPS} 以上が必要です (steps={steps})")
        if not 0 <= int(seed) < 2 ** 64:
            raise InputFormatError(f"シードは 64 ビットの非負整数である必要があります (seed={seed})")
        for name, value in tolerances.items():
            if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
                raise InputFormatError(f"許容誤差 {name} は正の数である必要があります ({value})")
        for name in ('time_samples', 'fiber_samples'):
            value = command_data.get(name)
            if value is not None and int(value) < 1:
                raise InputFormatError(f"{name} は 1 以上が必要です ({value})")

        return cls(int(steps), command_data.get('time_samples'), command_data.get('fiber_samples'),
                   int(seed), tolerances, command_data.get('out'))

    def sampling(self) -> SamplingConfig:
        return SamplingConfig.from_config(time_samples=self.time_samples, fiber_samples=self.fiber_samples,
                                          seed=self.seed)


def parse_vector(value: Any, name: str) -> Optional[np.ndarray]:
    """"[1, 2]" や "1,2" 形式の数値列をベクトルに変換"""
    if value is None:
        return None
    if isinstance(value, (list, tuple, np.ndarray)):
        items = list(value)
    else:
        text = str(value).strip()
        try:
            items = json.loads(text) if text.startswith('[') else [v for v in text.split(',') if v.strip()]
        except json.JSONDecodeError as e:
            raise InputFormatError(f"{name} の形式エラー: {e.msg}", e.pos) from None
    try:
        return np.array([float(v) for v in items], dtype=float)
    except (TypeError, ValueError):
        raise InputFormatError(f"{name} は数値の列である必要があります: {value}") from None


class CommandInterface:
    """サブコマンドを解析処理に振り分けるディスパッチャー"""

    def __init__(self):
        self.output_config = config.get_output_config()
        self.csv_renderer = CsvRenderer()
        self.json_renderer = JsonRenderer()

        # コマンドハンドラー
        self.command_handlers: Dict[str, Callable] = {}
        self.setup_default_handlers()

        # ログ設定
        self.logger = logging.getLogger(__name__)

    def setup_default_handlers(self):
        """デフォルトのコマンドハンドラーを設定"""
        self.command_handlers = {
            'catalog': self._handle_catalog,
            'simulate': self._handle_simulate,
            'transport': self._handle_transport,
            'cone': self._handle_cone,
            'classify': self._handle_classify,
            'check-multiplier': self._handle_check_multiplier,
            'extremal': self._handle_extremal,
            'reach': self._handle_reach,
        }

    def add_command_handler(self, command_name: str, handler: Callable):
        """カスタムコマンドハンドラーを追加"""
        self.command_handlers[command_name] = handler
        self.logger.info(f"コマンドハンドラーを追加しました: {command_name}")

    def execute(self, command_data: Dict[str, Any]) -> Dict[str, Any]:
        """コマンドを実行してレスポンス辞書を返す（例外は送出しない）"""
        return self._process_command(command_data)

    def _process_command(self, command_data: Dict[str, Any]) -> Dict[str, Any]:
        """コマンドを処理"""
        if 'command' not in command_data:
            return {
                'error': 'missing_command',
                'message': 'コマンドが指定されていません',
                'exit_code': ExitCodes.VALIDATION,
            }

        command_name = command_data['command']

        # ハンドラー検索
        if command_name not in self.command_handlers:
            return {
                'error': 'unknown_command',
                'message': f'未知のコマンド: {command_name}',
                'exit_code': ExitCodes.VALIDATION,
            }

        # ハンドラー実行
        try:
            handler = self.command_handlers[command_name]
            result = handler(command_data)
        except ExtremalKitError as e:
            self.logger.error(f"コマンドエラー ({command_name}): {e}")
            response = {'error': e.kind, 'message': str(e), 'exit_code': e.exit_code}
            if getattr(e, 'diagnostics', None):
                response['diagnostics'] = list(e.diagnostics)
            if getattr(e, 'offset', None) is not None:
                response['offset'] = e.offset
            return response
        except Exception as e:
            self.logger.exception(f"ハンドラーエラー ({command_name})")
            return {
                'error': 'handler_error',
                'message': f'ハンドラーエラー: {str(e)}',
                'exit_code': ExitCodes.NUMERICAL,
            }

        result.setdefault('exit_code', ExitCodes.SUCCESS)
        event_system.emit(CommandCompleted(command_name, tuple(result.get('artifacts', []))))
        return result

    # ------------------------------------------------------------------
    # 共通処理

    def _load_inputs(self, command_data: Dict[str, Any], need_control: bool = True):
        source = command_data.get('problem')
        if source is None:
            raise InputFormatError("--problem が指定されていません")
        problem = load_problem(source)
        control = None
        if need_control:
            if command_data.get('control') is None:
                raise InputFormatError("--control が指定されていません")
            control = load_control(command_data['control'], problem)
        x0 = self._initial_state(problem, command_data.get('x0'))
        return problem, control, x0

    @staticmethod
    def _initial_state(problem: ControlProblem, value: Any) -> np.ndarray:
        x0 = parse_vector(value, 'x0')
        if x0 is None:
            x0 = np.array(problem.x_a if problem.x_a is not None else [0.0] * problem.state_dim)
        if len(x0) != problem.state_dim:
            raise InputFormatError(f"x0 の長さ {len(x0)} が状態次元 {problem.state_dim} と一致しません")
        return x0

    def _write(self, run: RunConfig, filename: str, content: Any) -> List[str]:
        if not run.out:
            return []
        path = os.path.join(run.out, filename)
        if isinstance(content, str):
            self.csv_renderer.write(path, content)
        else:
            self.json_renderer.write(path, content)
        return [path]

    # ------------------------------------------------------------------
    # ハンドラー

    def _handle_catalog(self, command_data: Dict[str, Any]) -> Dict[str, Any]:
        """カタログ問題の一覧"""
        name = command_data.get('name')
        names = [name] if name else catalog_names()
        problems = [problem_to_dict(catalog(n)) for n in names]
        lines = [f"{p['name']}\td={p['state_dim']}\tk={p['control_dim']}\t"
                 f"horizon=[{p['horizon'][0]:g}, {p['horizon'][1]:g}]" for p in problems]
        return {
            'success': True,
            'message': f'{len(problems)} 件のカタログ問題',
            'data': {'problems': problems},
            'text': "\n".join(lines) + "\n",
        }

    def _handle_simulate(self, command_data: Dict[str, Any]) -> Dict[str, Any]:
        """制御を与えて軌道を積分し CSV を返す"""
        run = RunConfig.from_command(command_data)
        problem, control, x0 = self._load_inputs(command_data)
        traj = integrate(problem, control, x0, steps=run.steps)
        text = self.csv_renderer.render_trajectory(traj)
        data = {
            'problem': problem.name,
            'nodes': traj.node_count,
            'endpoint': traj.endpoint,
            'final_cost': traj.final_cost,
        }
        return {
            'success': True,
            'message': f'軌道を積分しました: 終点 {traj.endpoint.tolist()}, J={traj.final_cost:g}',
            'data': data,
            'text': text,
            'artifacts': self._write(run, 'trajectory.csv', text),
        }

    def _handle_transport(self, command_data: Dict[str, Any]) -> Dict[str, Any]:
        """2時刻間の輸送行列（--extended でコスト座標付き）"""
        run = RunConfig.from_command(command_data)
        problem, control, x0 = self._load_inputs(command_data)
        traj = integrate(problem, control, x0, steps=run.steps)
        t0 = float(command_data['t0']) if command_data.get('t0') is not None else problem.a
        t1 = float(command_data['t1']) if command_data.get('t1') is not None else problem.b
        extended = bool(command_data.get('extended'))
        operator = (extended_transport if extended else transport)(problem, traj, t0, t1)
        text = self.csv_renderer.render_matrix(operator.matrix)
        data = {'t0': t0, 't1': t1, 'extended': extended, 'matrix': operator.matrix}
        return {
            'success': True,
            'message': f'輸送行列 {t0:g} → {t1:g} ({operator.matrix.shape[0]}次元)',
            'data': data,
            'text': text,
            'artifacts': self._write(run, 'transport.csv', text),
        }

    def _handle_cone(self, command_data: Dict[str, Any]) -> Dict[str, Any]:
        """サンプリングした変分錐の次元と双対錐の端線"""
        run = RunConfig.from_command(command_data)
        problem, control, x0 = self._load_inputs(command_data)
        kind = command_data.get('kind') or 'extended'
        if kind not in CONE_KINDS:
            raise InputFormatError(f"未知の錐の種類: {kind} ({', '.join(CONE_KINDS)})")
        traj = integrate(problem, control, x0, steps=run.steps)
        sampling = run.sampling()
        builder = {
            'vertical': vertical_cone,
            'extended': extended_vertical_cone,
            'variational': variational_cone,
            'full': full_extended_cone,
        }[kind]
        cone = builder(problem, traj, sampling)
        tol = run.tolerances['cone_lp']
        rays = cones.dual_rays(cone, tol) if cone.ambient_dim <= DUAL_RAYS_MAX_DIM else None
        data = {
            'kind': kind,
            'ambient_dim': cone.ambient_dim,
            'generators': cone.count,
            'dimension': cones.dimension(cone),
            'dual_rays': rays,
            'sampling': sampling.to_dict(),
        }
        lines = [f"kind: {kind}", f"generators: {cone.count}", f"dimension: {data['dimension']}"]
        if rays is not None:
            lines += ["dual_ray: " + ", ".join(self.csv_renderer.format_number(v) for v in ray) for ray in rays]
        artifacts = self._write(run, 'cone.json', data)
        if cone.count:
            header = [f"g{i + 1}" for i in range(cone.ambient_dim)]
            artifacts += self._write(run, 'generators.csv',
                                     self.csv_renderer.render_rows(header, cone.generators))
        return {
            'success': True,
            'message': f'{kind} 錐: 生成元 {cone.count} 本, 次元 {data["dimension"]}',
            'data': data,
            'text': "\n".join(lines) + "\n",
            'artifacts': artifacts,
        }

    def _handle_classify(self, command_data: Dict[str, Any]) -> Dict[str, Any]:
        """極値・正規・異常・真に異常の判定レポート"""
        run = RunConfig.from_command(command_data)
        problem, control, x0 = self._load_inputs(command_data)
        traj = integrate(problem, control, x0, steps=run.steps)
        report = classify_extremal(problem, traj, run.sampling(), run.tolerances)
        data = report.to_dict()
        summary = report.summary()
        return {
            'success': True,
            'message': summary,
            'data': data,
            'text': summary + "\n",
            'artifacts': self._write(run, 'report.json', data),
        }

    def _handle_check_multiplier(self, command_data: Dict[str, Any]) -> Dict[str, Any]:
        """与えた (η_b, λ) から乗数を復元して検査"""
        run = RunConfig.from_command(command_data)
        problem, control, x0 = self._load_inputs(command_data)
        eta_b = parse_vector(command_data.get('eta'), 'eta')
        if eta_b is None or len(eta_b) != problem.state_dim:
            raise InputFormatError(f"--eta には長さ {problem.state_dim} のベクトルが必要です")
        lam = float(command_data['lam']) if command_data.get('lam') is not None else -1.0
        if lam > 0:
            raise InputFormatError(f"λ は 0 以下である必要があります (λ={lam})")
        traj = integrate(problem, control, x0, steps=run.steps)
        mult = recover_multiplier(problem, traj, eta_b, lam)
        report = check_multiplier(problem, traj, mult, fiber_samples=run.fiber_samples,
                                  tol=run.tolerances, seed=run.seed, time_samples=run.time_samples)
        data = {
            'eta_a': mult.eta[0],
            'eta_b': eta_b,
            'lambda': lam,
            'hamiltonian_drift': hamiltonian_drift(problem, traj, mult),
            'residuals': report.to_dict(),
        }
        summary = f"passed: {str(report.passed).lower()}"
        if report.failures:
            summary += f" (failures: {', '.join(report.failures)})"
        return {
            'success': True,
            'message': summary,
            'data': data,
            'text': summary + "\n",
            'artifacts': self._write(run, 'multiplier.json', data),
        }

    def _handle_extremal(self, command_data: Dict[str, Any]) -> Dict[str, Any]:
        """正規ハミルトン系を積分して極値軌道を返す"""
        run = RunConfig.from_command(command_data)
        problem, _, x0 = self._load_inputs(command_data, need_control=False)
        p0 = parse_vector(command_data.get('p0'), 'p0')
        if p0 is None:
            raise InputFormatError("--p0 が指定されていません")
        lam = float(command_data['lam']) if command_data.get('lam') is not None else -1.0
        traj, mult = integrate_normal_hamiltonian(problem, x0, p0, lam, steps=run.steps)
        text = self.csv_renderer.render_trajectory(traj)
        data = {
            'endpoint': traj.endpoint,
            'final_cost': traj.final_cost,
            'p_b': mult.eta_b,
            'lambda': lam,
            'hamiltonian_drift': hamiltonian_drift(problem, traj, mult),
        }
        artifacts = self._write(run, 'extremal.csv', text) + self._write(run, 'extremal.json', data)
        return {
            'success': True,
            'message': f'極値軌道: 終点 {traj.endpoint.tolist()}, J={traj.final_cost:g}',
            'data': data,
            'text': text,
            'artifacts': artifacts,
        }

    def _handle_reach(self, command_data: Dict[str, Any]) -> Dict[str, Any]:
        """ランダムな多重針状変分の終点群と、鉛直錐の双対端線との整合性"""
        run = RunConfig.from_command(command_data)
        problem, control, x0 = self._load_inputs(command_data)
        samples = command_data.get('samples')
        reach = config.get_reach_config()
        samples = reach['samples'] if samples is None else int(samples)
        if samples < 1:
            raise InputFormatError(f"samples は 1 以上が必要です ({samples})")
        eps = command_data.get('eps')
        eps = reach['eps'] if eps is None else float(eps)

        traj = integrate(problem, control, x0, steps=run.steps)
        sampling = run.sampling()
        cone = vertical_cone(problem, traj, sampling)
        rays = cones.dual_rays(cone, run.tolerances['cone_lp'])
        rng = np.random.default_rng(sampling.seed)
        reference = traj.endpoint

        rows = []
        pairings = []
        pairings_half = []
        reachable_count = 0
        for s in range(samples):
            needles = random_needles(problem, traj, rng, reach['needle_pairs'], sampling.gaussian_scales)
            endpoint, cost = multi_needle_endpoint(problem, x0, traj, needles, eps)
            endpoint_half, _ = multi_needle_endpoint(problem, x0, traj, needles, 0.5 * eps)
            delta = endpoint - reference
            pairing = max((float(ray @ delta) for ray in rays), default=0.0)
            pairing_half = max((float(ray @ (endpoint_half - reference)) for ray in rays), default=0.0)
            reachable = eps > 0 and is_reachable_direction(cone, delta / eps, run.tolerances['cone_lp'])
            reachable_count += int(reachable)
            pairings.append(pairing)
            pairings_half.append(pairing_half)
            rows.append([s, *endpoint, cost, *delta, pairing, "true" if reachable else "false"])

        d = problem.state_dim
        header = (["sample"] + state_names(d) + ["J"] + [f"d{name}" for name in state_names(d)]
                  + ["pairing", "reachable"])
        text = self.csv_renderer.render_rows(header, rows)
        worst = max(pairings)
        worst_half = max(pairings_half)
        data = {
            'samples': samples,
            'eps': eps,
            'reference_endpoint': reference,
            'dual_rays': rays,
            'max_pairing_over_eps': worst / eps if eps > 0 else 0.0,
            'fitted_C': worst / eps ** 2 if eps > 0 else 0.0,
            'richardson_ratio': worst / worst_half if worst_half > 0 else None,
            'reachable_fraction': reachable_count / samples,
            'sampling': sampling.to_dict(),
        }
        return {
            'success': True,
            'message': (f'{samples} 組の多重変分: max⟨η,Δ⟩/ε={data["max_pairing_over_eps"]:.3e}, '
                        f'到達方向 {reachable_count}/{samples}'),
            'data': data,
            'text': text,
            'artifacts': self._write(run, 'endpoints.csv', text) + self._write(run, 'reach.json', data),
        }

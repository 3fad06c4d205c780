import contextlib
import csv
import io
import json
import os
import tempfile
import unittest

import numpy as np
import numpy.testing as npt

import main
from core.command_interface import CommandInterface, RunConfig, parse_vector
from utils.config import config
from utils.errors import InputFormatError

UNIT = '{"constant": [1.0]}'
MARTINET_LINE = '{"constant": [1.0, 0.0]}'
FAST = ['--steps', '100', '--time-samples', '8', '--fiber-samples', '8', '--seed', '7']


def run_main(argv):
    """main() を実行して (終了コード, 標準出力, 標準エラー) を返す"""
    stdout, stderr = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
        code = main.main(argv)
    return code, stdout.getvalue(), stderr.getvalue()


class TestCatalogCommand(unittest.TestCase):

    def test_lists_four_problems(self):
        code, out, _ = run_main(['catalog'])
        self.assertEqual(code, 0)
        lines = out.strip().split("\n")
        self.assertEqual(len(lines), 4)
        self.assertTrue(lines[0].startswith("lqr1d\td=1\tk=1"))

    def test_json_output(self):
        code, out, _ = run_main(['catalog', 'martinet', '--json'])
        self.assertEqual(code, 0)
        problems = json.loads(out)['problems']
        self.assertEqual(len(problems), 1)
        self.assertEqual(problems[0]['state_dim'], 3)

    def test_unknown_name(self):
        code, _, err = run_main(['catalog', 'bogus'])
        self.assertEqual(code, 2)
        self.assertIn("unknown_problem", err)


class TestInputErrors(unittest.TestCase):

    def setUp(self):
        self.interface = CommandInterface()

    def test_malformed_problem_json(self):
        response = self.interface.execute({'command': 'simulate', 'problem': '{"state_dim": 1,, }',
                                           'control': UNIT})
        self.assertEqual(response['exit_code'], 2)
        self.assertEqual(response['error'], 'invalid_json')
        self.assertEqual(response['offset'], 16)

    def test_malformed_problem_from_command_line(self):
        code, _, _ = run_main(['simulate', '--problem', '{"state_dim": 1,, }', '--control', UNIT])
        self.assertEqual(code, 2)

    def test_invalid_problem_lists_diagnostics(self):
        problem = ('{"state_dim": 1, "control_dim": 1, "horizon": [0, 1], '
                   '"dynamics": ["u2"], "cost": "0"}')
        response = self.interface.execute({'command': 'simulate', 'problem': problem, 'control': UNIT})
        self.assertEqual(response['exit_code'], 2)
        self.assertTrue(response['diagnostics'])

    def test_non_numeric_endpoint(self):
        problem = ('{"state_dim": 1, "control_dim": 1, "horizon": [0, 1], '
                   '"dynamics": ["u1"], "cost": "0.5*u1^2", "x_a": ["abc"]}')
        response = self.interface.execute({'command': 'simulate', 'problem': problem, 'control': UNIT})
        self.assertEqual(response['error'], 'invalid_json')
        self.assertEqual(response['exit_code'], 2)

    def test_non_numeric_constant_control(self):
        response = self.interface.execute({'command': 'simulate', 'problem': 'lqr1d',
                                           'control': '{"constant": ["abc"]}'})
        self.assertEqual(response['exit_code'], 2)
        code, _, _ = run_main(['simulate', '--problem', 'lqr1d', '--control', '{"constant": ["abc"]}'])
        self.assertEqual(code, 2)

    def test_scalar_box_bounds_accepted(self):
        problem = ('{"state_dim": 1, "control_dim": 1, "horizon": [0, 1], "dynamics": ["u1"], '
                   '"cost": "0.5*u1^2", "fiber": {"type": "box", "lo": -1, "hi": 1}}')
        response = self.interface.execute({'command': 'simulate', 'problem': problem, 'control': UNIT,
                                           'steps': 100})
        self.assertEqual(response['exit_code'], 0)

    def test_missing_and_unknown_command(self):
        self.assertEqual(self.interface.execute({})['error'], 'missing_command')
        response = self.interface.execute({'command': 'optimize'})
        self.assertEqual(response['error'], 'unknown_command')
        self.assertEqual(response['exit_code'], 2)

    def test_too_few_steps(self):
        code, _, _ = run_main(['simulate', '--problem', 'lqr1d', '--control', UNIT, '--steps', '5'])
        self.assertEqual(code, 2)

    def test_negative_tolerance(self):
        code, _, _ = run_main(['classify', '--problem', 'lqr1d', '--control', UNIT, '--tol-cone-lp', '-1'])
        self.assertEqual(code, 2)

    def test_missing_control(self):
        response = self.interface.execute({'command': 'simulate', 'problem': 'lqr1d'})
        self.assertEqual(response['exit_code'], 2)

    def test_positive_lambda_rejected(self):
        code, _, _ = run_main(['check-multiplier', '--problem', 'lqr1d', '--control', UNIT,
                               '--eta', '1', '--lam', '1'] + FAST)
        self.assertEqual(code, 2)

    def test_custom_handler(self):
        self.interface.add_command_handler('ping', lambda data: {'success': True, 'data': {}, 'text': "pong\n"})
        response = self.interface.execute({'command': 'ping'})
        self.assertEqual(response['exit_code'], 0)
        self.assertEqual(response['text'], "pong\n")


class TestHelpers(unittest.TestCase):

    def test_parse_vector(self):
        npt.assert_array_equal(parse_vector("1,2.5", 'x0'), [1.0, 2.5])
        npt.assert_array_equal(parse_vector("[0, -1]", 'x0'), [0.0, -1.0])
        self.assertIsNone(parse_vector(None, 'x0'))
        with self.assertRaises(InputFormatError):
            parse_vector("1,a", 'x0')

    def test_run_config_defaults(self):
        run = RunConfig.from_command({'seed': 5})
        self.assertEqual(run.seed, 5)
        self.assertEqual(run.sampling().seed, 5)
        self.assertIn('cone_lp', run.tolerances)

    def test_run_config_rejects_huge_seed(self):
        with self.assertRaises(InputFormatError):
            RunConfig.from_command({'seed': 2 ** 64})


class TestAnalysisCommands(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_simulate_writes_trajectory(self):
        out = os.path.join(self.tmp.name, 'sim')
        code, _, _ = run_main(['simulate', '--problem', 'lqr1d', '--control', UNIT, '--out', out] + FAST)
        self.assertEqual(code, 0)
        with open(os.path.join(out, 'trajectory.csv'), encoding='utf-8') as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], ['t', 'x1', 'u1', 'J'])
        self.assertEqual(len(rows), 102)
        t, x1, u1, J = (float(v) for v in rows[-1])
        self.assertAlmostEqual(t, 1.0, places=12)
        self.assertAlmostEqual(x1, 1.0, places=12)
        self.assertAlmostEqual(J, 0.5, places=12)

    def test_transport_extended(self):
        code, out, _ = run_main(['transport', '--problem', 'lqr1d', '--control', UNIT, '--extended', '--json']
                                + FAST)
        self.assertEqual(code, 0)
        npt.assert_allclose(json.loads(out)['matrix'], np.eye(2), atol=1e-14)

    def test_cone_dimension(self):
        code, out, _ = run_main(['cone', '--problem', 'martinet', '--control', MARTINET_LINE,
                                 '--kind', 'vertical', '--json'] + FAST)
        self.assertEqual(code, 0)
        data = json.loads(out)
        self.assertEqual(data['ambient_dim'], 3)
        self.assertEqual(data['dimension'], 2)

    def test_classify_martinet_summary(self):
        code, out, _ = run_main(['classify', '--problem', 'martinet', '--control', MARTINET_LINE] + FAST)
        self.assertEqual(code, 0)
        self.assertIn("abnormal: true, strictly_abnormal: false", out)

    def test_classify_is_byte_identical(self):
        contents = []
        for name in ('first', 'second'):
            out = os.path.join(self.tmp.name, name)
            code, _, _ = run_main(['classify', '--problem', 'lqr1d', '--control', UNIT, '--out', out] + FAST)
            self.assertEqual(code, 0)
            with open(os.path.join(out, 'report.json'), 'rb') as f:
                contents.append(f.read())
        self.assertEqual(contents[0], contents[1])

    def test_check_multiplier(self):
        code, out, _ = run_main(['check-multiplier', '--problem', 'lqr1d', '--control', UNIT, '--eta', '1']
                                + FAST)
        self.assertEqual(code, 0)
        self.assertEqual(out.strip(), "passed: true")

    def test_check_multiplier_failure_is_reported(self):
        code, out, _ = run_main(['check-multiplier', '--problem', 'lqr1d', '--control', UNIT, '--eta', '2']
                                + FAST)
        self.assertEqual(code, 0)
        self.assertIn("stationarity", out)

    def test_extremal(self):
        code, out, _ = run_main(['extremal', '--problem', 'lqr1d', '--p0', '1', '--json'] + FAST)
        self.assertEqual(code, 0)
        data = json.loads(out)
        self.assertAlmostEqual(data['endpoint'][0], 1.0, delta=1e-8)
        self.assertAlmostEqual(data['final_cost'], 0.5, delta=1e-8)

    def test_reach_with_zero_epsilon(self):
        out = os.path.join(self.tmp.name, 'reach')
        code, _, _ = run_main(['reach', '--problem', 'heisenberg', '--control', '{"constant": [1.0, 0.0]}',
                               '--eps', '0', '--samples', '4', '--out', out] + FAST)
        self.assertEqual(code, 0)
        with open(os.path.join(out, 'reach.json'), encoding='utf-8') as f:
            data = json.load(f)
        self.assertEqual(data['max_pairing_over_eps'], 0)
        self.assertEqual(data['reachable_fraction'], 0)
        with open(os.path.join(out, 'endpoints.csv'), encoding='utf-8') as f:
            rows = list(csv.reader(f))
        self.assertEqual(len(rows), 5)
        self.assertEqual(rows[0][-2:], ['pairing', 'reachable'])

    def test_reach_lqr(self):
        code, out, _ = run_main(['reach', '--problem', 'lqr1d', '--control', UNIT, '--samples', '3', '--json']
                                + FAST)
        self.assertEqual(code, 0)
        data = json.loads(out)
        self.assertEqual(data['samples'], 3)
        # 線形な1次元系では鉛直錐が全空間なので双対端線はない
        self.assertEqual(data['dual_rays'], [])

    def test_reach_samples_default_from_config(self):
        code, out, _ = run_main(['reach', '--problem', 'lqr1d', '--control', UNIT, '--json'] + FAST)
        self.assertEqual(code, 0)
        self.assertEqual(json.loads(out)['samples'], config.get_reach_config()['samples'])


if __name__ == '__main__':
    unittest.main()

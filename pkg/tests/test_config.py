import os
import tempfile
import unittest

from utils.config import Config
from utils.constants import REACH_EPS, REACH_NEEDLE_PAIRS, REACH_SAMPLES, TOL_CONE_LP


class TestConfig(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def write(self, text):
        path = os.path.join(self.tmp.name, 'config.yaml')
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text)
        return path

    def test_missing_file_uses_defaults(self):
        cfg = Config(os.path.join(self.tmp.name, 'absent.yaml'))
        self.assertEqual(cfg.get_reach_config(),
                         {'samples': REACH_SAMPLES, 'eps': REACH_EPS, 'needle_pairs': REACH_NEEDLE_PAIRS})
        self.assertEqual(cfg.get_tolerance_config()['cone_lp'], TOL_CONE_LP)

    def test_file_overrides_defaults(self):
        cfg = Config(self.write("reach:\n  samples: 5\ntolerances:\n  cone_lp: 1.0e-8\n"))
        self.assertEqual(cfg.get_reach_config()['samples'], 5)
        self.assertEqual(cfg.get_reach_config()['needle_pairs'], REACH_NEEDLE_PAIRS)
        self.assertEqual(cfg.get_tolerance_config()['cone_lp'], 1e-8)

    def test_nested_get(self):
        cfg = Config(self.write("sampling:\n  seed: 11\n"))
        self.assertEqual(cfg.get('sampling.seed'), 11)
        self.assertIsNone(cfg.get('sampling.missing'))
        self.assertEqual(cfg.get('sampling.seed.deeper', 'x'), 'x')


if __name__ == '__main__':
    unittest.main()

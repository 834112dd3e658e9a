import tempfile
from pathlib import Path

import yaml
from django.test import SimpleTestCase

from stability.config import ExperimentConfig, dump_config, load_config
from stability.exceptions import ConfigValidationError

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


class ExperimentConfigTests(SimpleTestCase):

    def test_defaults_survive_a_round_trip(self):
        cfg = ExperimentConfig.defaults()
        again = ExperimentConfig.from_dict(cfg.to_dict())
        self.assertEqual(again.to_dict(), cfg.to_dict())
        self.assertEqual(again.config_hash(), cfg.config_hash())

    def test_dump_parses_back(self):
        cfg = ExperimentConfig.defaults()
        self.assertEqual(yaml.safe_load(dump_config(cfg)), cfg.to_dict())

    def test_hash_follows_content(self):
        a = ExperimentConfig.from_dict({"grid": {"n": 400}})
        b = ExperimentConfig.from_dict({"grid": {"n": 400}})
        c = ExperimentConfig.from_dict({"grid": {"n": 401}})
        self.assertEqual(a.config_hash(), b.config_hash())
        self.assertNotEqual(a.config_hash(), c.config_hash())
        self.assertEqual(len(a.config_hash()), 64)

    def test_every_bad_key_is_reported(self):
        data = {
            "grid": {"n": 4, "bogus": 1},
            "eigen": {"n": 1025},
            "evolve": {"window": [0.8, 0.2]},
            "shear": {"family": "sinusoid"},
            "colour": "blue",
            "seed": -1,
        }
        with self.assertRaises(ConfigValidationError) as ctx:
            ExperimentConfig.from_dict(data)
        self.assertEqual(ctx.exception.keys, sorted([
            "grid.n", "grid.bogus", "eigen.n", "evolve.window", "shear.family", "colour", "seed",
        ]))
        self.assertEqual(ctx.exception.exit_code, 2)
        self.assertIn("grid.bogus (unknown key)", str(ctx.exception))

    def test_wrong_types(self):
        with self.assertRaises(ConfigValidationError) as ctx:
            ExperimentConfig.from_dict({"grid": {"stretch": "yes", "z_max": True}, "mode": {"ks": [8, 0]}})
        self.assertEqual(ctx.exception.keys, ["grid.stretch", "grid.z_max", "mode.ks"])

    def test_family_parameters_are_checked(self):
        with self.assertRaises(ConfigValidationError) as ctx:
            ExperimentConfig.from_dict({"shear": {"family": "erf", "params": {"z0": 3.0}}})
        self.assertEqual(ctx.exception.keys, ["shear.params.z0"])

    def test_resolved_params_overlay_defaults(self):
        cfg = ExperimentConfig.from_dict({"shear": {"family": "structured", "params": {"c": 2.0}}})
        params = cfg.shear.resolved_params()
        self.assertEqual(params["c"], 2.0)
        self.assertEqual(params["base"], "tanh")


class LoadConfigTests(SimpleTestCase):

    def test_shipped_configs_are_valid(self):
        paths = sorted(CONFIG_DIR.glob("*.yml"))
        self.assertTrue(paths)
        for path in paths:
            with self.subTest(config=path.name):
                load_config(path)

    def test_invalid_yaml(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "broken.yml"
            path.write_text("grid: [unclosed\n", encoding="utf-8")
            with self.assertRaises(ConfigValidationError) as ctx:
                load_config(path)
            self.assertEqual(ctx.exception.keys, ["<file>"])

    def test_missing_file(self):
        with self.assertRaises(ConfigValidationError):
            load_config("/nonexistent/experiment.yml")

    def test_empty_file_gives_defaults(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "empty.yml"
            path.write_text("", encoding="utf-8")
            self.assertEqual(load_config(path).grid.n, 600)

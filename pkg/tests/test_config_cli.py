#!/usr/bin/env python3
"""
Tests for configuration loading and the command-line interface.
"""

import contextlib
import io
import json
import sys
import tempfile
import unittest
from pathlib import Path
from unittest import mock

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from mupsim.cli import EXIT_CONFIG, build_parser, main
from mupsim.config import PipelineConfig, apply_environment, apply_overrides, config_from_dict, load_config
from mupsim.errors import ConfigError


class TestConfig(unittest.TestCase):
    """Tests for the configuration tree."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_defaults(self):
        """Without a file the built-in defaults apply."""
        config = load_config()
        self.assertEqual(config.seed, 7)
        self.assertEqual(config.policy.vat_rate, 0.2)
        self.assertEqual(config.policy.mup_rate, 0.5)

    def test_load_file(self):
        """Sections are read into their dataclasses."""
        path = self.dir / "config.json"
        path.write_text(json.dumps({"seed": 3, "policy": {"replications": 5}}), encoding="utf-8")
        config = load_config(path)
        self.assertEqual(config.seed, 3)
        self.assertEqual(config.policy.replications, 5)

    def test_unknown_keys(self):
        """Unknown keys are rejected at every level."""
        with self.assertRaises(ConfigError):
            config_from_dict({"sead": 3})
        with self.assertRaises(ConfigError):
            config_from_dict({"policy": {"replication": 5}})

    def test_invalid_values(self):
        """Section validation raises configuration errors."""
        with self.assertRaises(ConfigError):
            config_from_dict({"policy": {"scenarios": ["carbon-tax"]}})
        with self.assertRaises(ConfigError):
            config_from_dict({"solver": {"damping": 0.0}})

    def test_missing_and_malformed_files(self):
        """Unreadable configuration files are configuration errors."""
        with self.assertRaises(ConfigError):
            load_config(self.dir / "absent.json")
        broken = self.dir / "broken.json"
        broken.write_text("{seed: 3", encoding="utf-8")
        with self.assertRaises(ConfigError):
            load_config(broken)

    def test_environment_overrides(self):
        """MUPSIM_ variables override the file values."""
        config = apply_environment(PipelineConfig(), {"MUPSIM_SEED": "11", "MUPSIM_VAT_RATE": "0.1"})
        self.assertEqual(config.seed, 11)
        self.assertEqual(config.policy.vat_rate, 0.1)
        with self.assertRaises(ConfigError):
            apply_environment(PipelineConfig(), {"MUPSIM_REPLICATIONS": "many"})

    def test_overrides(self):
        """Dotted keys reach into sections; unknown keys fail."""
        config = apply_overrides(PipelineConfig(), {"policy.replications": 2, "trace": True})
        self.assertEqual(config.policy.replications, 2)
        self.assertTrue(config.trace)
        with self.assertRaises(ConfigError):
            apply_overrides(PipelineConfig(), {"policy.rate": 2})

    def test_digest(self):
        """The digest is stable and follows the effective configuration."""
        self.assertEqual(PipelineConfig().digest(), PipelineConfig().digest())
        self.assertNotEqual(PipelineConfig().digest(), PipelineConfig(seed=8).digest())


class TestCli(unittest.TestCase):
    """Tests for argument parsing and exit codes."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def run_main(self, argv):
        stderr = io.StringIO()
        with mock.patch.dict("os.environ", {}, clear=True), contextlib.redirect_stderr(stderr):
            code = main(argv)
        return code, stderr.getvalue()

    def test_parser_flags(self):
        """Repeated scenarios accumulate."""
        args = build_parser().parse_args(["simulate", "--scenario", "mup", "--scenario", "low-uniform",
                                          "--seed", "3", "--trace"])
        self.assertEqual(args.command, "simulate")
        self.assertEqual(args.scenario, ["mup", "low-uniform"])
        self.assertEqual(args.seed, 3)
        self.assertTrue(args.trace)

    def test_unknown_command(self):
        """Unknown stages are rejected by the parser."""
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit):
                build_parser().parse_args(["fit"])

    def test_missing_artifact_exit_code(self):
        """Running a stage before its inputs exist exits with the configuration code."""
        code, stderr = self.run_main(["report", "--out", str(self.dir / "out")])
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn("Error:", stderr)
        self.assertIn("mupsim simulate", stderr)

    def test_missing_config_exit_code(self):
        """A missing configuration file exits with the configuration code."""
        code, stderr = self.run_main(["simulate", "--config", str(self.dir / "absent.json")])
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn("not found", stderr)


if __name__ == '__main__':
    unittest.main()

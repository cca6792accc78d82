"""Tests for main application module."""

import json
import os
import shutil
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from shadowprice import parallel
from shadowprice.config import Config
from shadowprice.errors import ConfigValidationError
from shadowprice.main import ShadowPriceApp, main

EXPERIMENT = """
[experiment]
kind = simulate

[model]
type = custom-constant-vol
sigma = 0.1 0; 0 0.1

[grid]
T = 1.0
N = 8

[monte_carlo]
paths = 3
seed = 2
"""

ENV_VARS = [
    "LOG_LEVEL", "LOG_FILE", "SHADOWPRICE_LOG_JSON", "SHADOWPRICE_THREADS",
    "SHADOWPRICE_CHUNK_SIZE", "SHADOWPRICE_SEED", "SHADOWPRICE_OUTPUT_DIR",
]


class MainTestCase(unittest.TestCase):
    """Base class isolating environment variables and the scratch directory."""

    def setUp(self):
        """Set up test environment."""
        self.original_env = {var: os.environ.get(var) for var in ENV_VARS}
        for var in ENV_VARS:
            os.environ.pop(var, None)

        self.temp_dir = Path(tempfile.mkdtemp())
        os.environ["LOG_FILE"] = str(self.temp_dir / "test.log")
        os.environ["SHADOWPRICE_OUTPUT_DIR"] = str(self.temp_dir / "results")
        self.experiment = self.temp_dir / "experiment.ini"
        self.experiment.write_text(EXPERIMENT, encoding="utf-8")

    def tearDown(self):
        """Clean up test environment."""
        for var, value in self.original_env.items():
            if value is not None:
                os.environ[var] = value
            else:
                os.environ.pop(var, None)
        shutil.rmtree(self.temp_dir, ignore_errors=True)
        parallel.configure(1, 256)


class TestShadowPriceApp(MainTestCase):
    """Test cases for ShadowPriceApp class."""

    def test_initialization_success(self):
        """Test successful initialization with valid configuration."""
        os.environ["SHADOWPRICE_THREADS"] = "2"
        app = ShadowPriceApp()

        self.assertIsNotNone(app.config)
        self.assertIsNotNone(app.logger)
        self.assertEqual(app.config.threads, 2)

    def test_initialization_with_custom_config(self):
        """Test initialization with custom configuration."""
        config = Config()
        app = ShadowPriceApp(config=config)

        self.assertIs(app.config, config)

    def test_initialization_rejects_bad_environment(self):
        """Test initialization failure with a malformed variable."""
        os.environ["SHADOWPRICE_CHUNK_SIZE"] = "many"

        with self.assertRaises(ConfigValidationError) as context:
            ShadowPriceApp()

        self.assertIn("SHADOWPRICE_CHUNK_SIZE", str(context.exception))

    @patch("builtins.print")
    def test_run_file_uses_default_output_dir(self, mock_print):
        """Test that run_file writes into SHADOWPRICE_OUTPUT_DIR when --out is absent."""
        code = ShadowPriceApp().run_file(str(self.experiment))

        self.assertEqual(code, 0)
        self.assertTrue((self.temp_dir / "results" / "summary.json").exists())
        document = json.loads(mock_print.call_args_list[-1][0][0])
        self.assertEqual(document["status"], "ok")


class TestMainFunction(MainTestCase):
    """Test cases for main function."""

    @patch("builtins.print")
    def test_validate_command(self, mock_print):
        """Test that validate prints a report and exits with 0 for a valid file."""
        code = main(["validate", "--config", str(self.experiment)])

        self.assertEqual(code, 0)
        report = json.loads(mock_print.call_args_list[-1][0][0])
        self.assertEqual(report, {"valid": True, "violations": []})

    @patch("builtins.print")
    def test_validate_command_reports_violations(self, mock_print):
        """Test that validate lists every violation and exits with 2."""
        self.experiment.write_text(EXPERIMENT.replace("sigma = 0.1 0; 0 0.1", "sigma = 0.1 0; 0 0.1\ndelta = 0.6"), encoding="utf-8")

        code = main(["validate", "--config", str(self.experiment)])

        self.assertEqual(code, 2)
        report = json.loads(mock_print.call_args_list[-1][0][0])
        self.assertFalse(report["valid"])
        self.assertTrue(any("O(δ) empty" in v for v in report["violations"]))

    @patch("builtins.print")
    def test_run_command(self, mock_print):
        """Test that run writes artifacts to --out with the seed override."""
        out = self.temp_dir / "out"

        code = main(["run", "--config", str(self.experiment), "--seed", "9", "--out", str(out)])

        self.assertEqual(code, 0)
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        self.assertEqual(summary["seed"], 9)
        self.assertTrue((out / "results.csv").exists())

    @patch("builtins.print")
    def test_run_missing_file(self, mock_print):
        """Test that an unreadable experiment file exits with 2."""
        code = main(["run", "--config", str(self.temp_dir / "missing.ini")])

        self.assertEqual(code, 2)
        document = json.loads(mock_print.call_args_list[-1][0][0])
        self.assertEqual(document["code"], "CONFIG_VALIDATION")


if __name__ == "__main__":
    unittest.main()

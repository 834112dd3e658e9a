import hashlib
import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from stability.exceptions import ParameterError, SchemaError
from stability.reporting import (
    ArtifactWriter, _figure, compare_reports, dumps, jsonable, load_report, report_document, validate_stage,
)
from stability.schema import REPORT_KEYS, RESULT_KEYS, STAGE_KEYS


class JsonTests(SimpleTestCase):

    def test_jsonable(self):
        data = jsonable({"z": np.float64(1.5), "c": 1 + 2j, "a": np.arange(2), "b": np.bool_(True)})
        self.assertEqual(data, {"z": 1.5, "c": {"re": 1.0, "im": 2.0}, "a": [0, 1], "b": True})

    def test_dumps_sorts_keys(self):
        self.assertEqual(dumps({"b": 1, "a": 2}), '{\n  "a": 2,\n  "b": 1\n}\n')

    def test_report_document_keys(self):
        doc = report_document("abc", {}, [], {}, {})
        self.assertEqual(tuple(sorted(doc)), tuple(sorted(REPORT_KEYS)))

    def test_stage_results_follow_the_schema(self):
        for name, keys in STAGE_KEYS.items():
            result = {key: None for key in RESULT_KEYS + keys}
            result["status"] = "ok"
            validate_stage(name, result)
        ok = {key: None for key in RESULT_KEYS + STAGE_KEYS["sweep"]}
        ok["status"] = "ok"
        del ok["flag"]
        with self.assertRaises(SchemaError) as ctx:
            report_document("abc", {"sweep": ok}, [], {}, {})
        self.assertEqual(ctx.exception.details["missing"], ["flag"])

    def test_skipped_stage_needs_only_common_keys(self):
        skipped = {"stage": "mode", "status": "skipped", "error": None, "reason": "n/a",
                   "resolution": None, "artifacts": []}
        doc = report_document("abc", {"mode": skipped}, [], {}, {})
        self.assertEqual(doc["stages"]["mode"]["status"], "skipped")
        del skipped["artifacts"]
        with self.assertRaises(SchemaError):
            validate_stage("mode", skipped)


class ArtifactWriterTests(SimpleTestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.out = Path(self._tmp.name)
        self.writer = ArtifactWriter(self.out)

    def tearDown(self):
        self._tmp.cleanup()

    def test_csv_uses_schema_header_and_exact_floats(self):
        rel = self.writer.write_csv("lin/norm.csv", "evolve-linear", [(0.1, 1 / 3, -2.0)])
        lines = (self.out / rel).read_text(encoding="utf-8").splitlines()
        self.assertEqual(lines[0], "t,norm,slope")
        self.assertEqual(lines[1], f"0.1,{1 / 3!r},-2.0")

    def test_csv_rejects_short_rows(self):
        with self.assertRaises(ParameterError):
            self.writer.write_csv("bad.csv", "eigen", [(1.0, 2.0)])

    def test_manifest_records_hashes(self):
        rel = self.writer.write_json("a.json", {"x": 1})
        digest = hashlib.sha256((self.out / rel).read_bytes()).hexdigest()
        self.assertEqual(self.writer.manifest_listing(), [{"path": "a.json", "sha256": digest}])

    def test_svg_is_byte_stable(self):
        def draw(name):
            fig, ax = _figure("title", "x", "y")
            ax.plot([0, 1, 2], [1, 0, 1])
            return (self.out / self.writer.write_svg(name, fig)).read_bytes()

        self.assertEqual(draw("one.svg"), draw("two.svg"))

    def test_svg_can_be_disabled(self):
        writer = ArtifactWriter(self.out / "quiet", svg=False)
        fig, _ = _figure("t", "x", "y")
        self.assertIsNone(writer.write_svg("x.svg", fig))
        self.assertEqual(writer.manifest, {})


class CompareTests(SimpleTestCase):

    def _report(self, stages):
        return report_document("h", stages, [], {}, {})

    def test_identical_reports(self):
        report = self._report({"eigen": {"tau": {"re": 1.0, "im": -0.5}, "roots": [{"re": 1.0, "im": -0.5}]}})
        rows = compare_reports(report, json.loads(json.dumps(report)))
        self.assertEqual([r["key"] for r in rows],
                         ["eigen.roots[0].im", "eigen.roots[0].re", "eigen.tau.im", "eigen.tau.re"])
        self.assertTrue(all(r["abs"] == 0.0 and r["rel"] == 0.0 for r in rows))

    def test_relative_difference(self):
        a = self._report({"sweep": {"fit": {"p": 0.5}}})
        b = self._report({"sweep": {"fit": {"p": 0.4}}})
        (row,) = compare_reports(a, b)
        self.assertAlmostEqual(row["abs"], 0.1)
        self.assertAlmostEqual(row["rel"], 0.2)

    def test_stage_sets_must_match(self):
        with self.assertRaises(ParameterError):
            compare_reports(self._report({"eigen": {}}), self._report({"sweep": {}}))

    def test_load_report_from_directory(self):
        with tempfile.TemporaryDirectory() as tmp:
            Path(tmp, "report.json").write_text(dumps(self._report({})), encoding="utf-8")
            self.assertEqual(load_report(tmp)["config_hash"], "h")
            with self.assertRaises(ParameterError):
                load_report(Path(tmp) / "missing.json")

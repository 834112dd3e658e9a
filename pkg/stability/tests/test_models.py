from datetime import timedelta

from django.test import TestCase
from django.utils import timezone

from stability.models import RunReport, StageLog, generate_run_id


class RunReportTests(TestCase):

    def test_run_ids(self):
        run_id = generate_run_id()
        self.assertTrue(run_id.startswith("RUN-"))
        self.assertEqual(len(run_id), 12)
        self.assertNotEqual(run_id, generate_run_id())

    def test_defaults(self):
        row = RunReport.objects.create(config_hash="a" * 64, stage="eigen", out_dir="runs/x")
        self.assertEqual(row.exit_code, 0)
        self.assertEqual(row.manifest, [])
        self.assertIsNone(row.finished)
        self.assertEqual(str(row), f"{row.run_id} (eigen, exit 0)")

    def test_latest_first(self):
        now = timezone.now()
        first = RunReport.objects.create(config_hash="a", stage="eigen", out_dir="a", started=now - timedelta(minutes=1))
        second = RunReport.objects.create(config_hash="b", stage="sweep", out_dir="b", started=now)
        self.assertEqual(list(RunReport.objects.all()), [second, first])


class StageLogTests(TestCase):

    def test_chronological_order(self):
        StageLog.objects.create(run_id="RUN-1", stage="eigen", status="STARTED")
        StageLog.objects.create(run_id="RUN-1", stage="eigen", status="COMPLETED")
        self.assertEqual(list(StageLog.objects.values_list("status", flat=True)), ["STARTED", "COMPLETED"])

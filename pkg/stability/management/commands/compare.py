import json

from django.core.management.base import BaseCommand, CommandError

from stability.exceptions import LabError
from stability.reporting import compare_reports, load_report


class Command(BaseCommand):
    help = "Side-by-side numeric diff of two run reports."

    def add_arguments(self, parser):
        parser.add_argument('report_a', help="report.json or the run directory holding it")
        parser.add_argument('report_b')
        parser.add_argument('--json', action='store_true', help="Print the rows as JSON")

    def handle(self, *args, **options):
        try:
            rows = compare_reports(load_report(options['report_a']), load_report(options['report_b']))
        except LabError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code) from exc

        if options['json']:
            self.stdout.write(json.dumps(rows, sort_keys=True, indent=2))
            return
        width = max([len(r['key']) for r in rows] + [3])
        self.stdout.write(f"{'key':<{width}} | {'a':>14} | {'b':>14} | {'abs diff':>10} | {'rel diff':>10}")
        for r in rows:
            self.stdout.write(f"{r['key']:<{width}} | {r['a']:>14.8g} | {r['b']:>14.8g} | {r['abs']:>10.3e} | {r['rel']:>10.3e}")
        changed = sum(r['abs'] > 0 for r in rows)
        self.stdout.write(self.style.SUCCESS(f"{len(rows)} values compared, {changed} differ."))

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from stability.config import ExperimentConfig, dump_config, load_config
from stability.exceptions import AcceptanceError, LabError
from stability.schema import FULL_STAGE, STAGES
from stability.Stability_Engine import LabMaster


class Command(BaseCommand):
    help = "Run one stage of the stability laboratory (or the full pipeline) and write its artifacts."

    def add_arguments(self, parser):
        parser.add_argument('--config', help="YAML experiment file; defaults are used when omitted")
        parser.add_argument('--stage', choices=STAGES + (FULL_STAGE,), default=FULL_STAGE)
        parser.add_argument('--out', help="Output directory (overrides output.dir)")
        parser.add_argument('--check', action='store_true', help="Evaluate the acceptance criteria; exit 4 on failure")
        parser.add_argument('--workers', type=int, help=f"Worker processes (default {settings.LAB_WORKERS})")
        parser.add_argument('--dump-defaults', action='store_true', help="Print the full default configuration")

    def handle(self, *args, **options):
        if options['dump_defaults']:
            self.stdout.write(dump_config(ExperimentConfig.defaults()))
            return

        try:
            cfg = load_config(options['config']) if options['config'] else ExperimentConfig.defaults()
            report, exit_code = LabMaster().run(
                cfg, options['stage'], out_dir=options['out'], check=options['check'], workers=options['workers'],
            )
        except LabError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code) from exc

        for name, result in report['stages'].items():
            if result['status'] == 'failed':
                self.stdout.write(self.style.ERROR(f"{name}: failed [{result['error']['code']}] {result['error']['message']}"))
            elif result['status'] == 'skipped':
                self.stdout.write(self.style.WARNING(f"{name}: skipped ({result['reason']})"))
            else:
                self.stdout.write(self.style.SUCCESS(f"{name}: ok"))
        for name, outcome in report['checks'].items():
            for failure in outcome['failures']:
                self.stdout.write(self.style.ERROR(f"check {failure}"))

        if exit_code == AcceptanceError.exit_code:
            failures = [f for outcome in report['checks'].values() for f in outcome['failures']]
            raise CommandError(str(AcceptanceError(failures)), returncode=exit_code)
        if exit_code:
            raise CommandError(f"{sum(r['status'] == 'failed' for r in report['stages'].values())} stage(s) failed",
                               returncode=exit_code)
        self.stdout.write(self.style.SUCCESS(f"Report written with {len(report['manifest'])} artifacts."))

from django.core.management.base import BaseCommand, CommandError

from harness.reports import REPORT_FORMATS, ReportError, read_report, render_report

from ._common import existing_file


class Command(BaseCommand):
    help = "Print a saved attack report as JSON, CSV or text."

    def add_arguments(self, parser):
        parser.add_argument("--in", dest="in_path", required=True, help="JSON report written by `attack`.")
        parser.add_argument("--format", choices=REPORT_FORMATS, default="text")

    def handle(self, *args, **options):
        path = existing_file(options["in_path"], "report")
        try:
            report = read_report(path)
        except ReportError as exc:
            raise CommandError(str(exc))
        self.stdout.write(render_report(report, options["format"]), ending="")

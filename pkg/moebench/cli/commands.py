"""
Shared plumbing of the workbench management commands: config options,
error mapping and the table / JSON / CSV emitters.
"""

import csv
import io
import json
from logging import getLogger
from pathlib import Path
from typing import Any, Iterable, Optional
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from returns.result import Result, Success, Failure
from workbench.shared.exceptions import Error, ResourceError
from .config import RunConfig, load_config, parse_config


CSV_SCHEMA_LINE = "# moebench csv schema {version}"

logger = getLogger("cli")


def human(value: float) -> str:
    """ Six significant digits, exponent without '+', e.g. 3.49237e24. """
    return f"{value:.6g}".replace("e+", "e")


class WorkbenchCommand(BaseCommand):
    """
    Base for commands that read a run config and print a human table or a
    machine-readable form (--json / --csv), optionally into --output.
    """

    requires_system_checks = []
    default_config: Optional[str] = None

    def add_arguments(self, parser):
        parser.add_argument("--config", help="Run config file (JSON) or bundled preset name.")
        parser.add_argument("--preset", help="Bundled preset name, e.g. hunyuan-large or toy.")
        form = parser.add_mutually_exclusive_group()
        form.add_argument("--json", action="store_true", help="Emit JSON with a schema_version field.")
        form.add_argument("--csv", action="store_true", help="Emit CSV behind a versioned header line.")
        parser.add_argument("--output", help="Write the output to this file instead of stdout.")

    def fail(self, error: Error):
        raise CommandError(str(error), returncode=error.exit_code)

    def unwrap(self, result: Result) -> Any:
        match result:

            case Success(value):
                return value

            case Failure(error):
                self.fail(error)

    def run_config(self, options) -> RunConfig:
        source = options.get("config") or options.get("preset") or self.default_config
        if source is None:
            return self.unwrap(parse_config("{}", source="<defaults>"))
        return self.unwrap(load_config(source))

    def emit(
        self,
        options,
        payload: dict,
        header: Iterable[str] = (),
        rows: Iterable[Iterable[Any]] = (),
        table: Iterable[str] = (),
    ):
        version = settings.WORKBENCH_OUTPUT_SCHEMA_VERSION

        if options.get("json"):
            text = json.dumps({"schema_version": version, "command": self.command_name, **payload}, indent=2, sort_keys=True) + "\n"
        elif options.get("csv"):
            buffer = io.StringIO()
            buffer.write(CSV_SCHEMA_LINE.format(version=version) + "\n")
            writer = csv.writer(buffer, lineterminator="\n")
            writer.writerow(header)
            writer.writerows([[repr(float(v)) if isinstance(v, float) else v for v in row] for row in rows])
            text = buffer.getvalue()
        else:
            text = "\n".join(table) + "\n"

        if options.get("output"):
            path = Path(options["output"])
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(text, encoding="utf-8")
            except OSError as e:
                self.fail(ResourceError("cli.output_unwritable", f"cannot write {path}: {e.strerror}"))
            logger.debug("wrote %s", path)
        else:
            self.stdout.write(text, ending="")

    @property
    def command_name(self) -> str:
        return self.__module__.rsplit(".", 1)[-1]

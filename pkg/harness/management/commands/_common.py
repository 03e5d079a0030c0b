from pathlib import Path

from django.core.management.base import CommandError


def existing_file(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise CommandError(f"{what} not found: {path}", returncode=2)
    return path

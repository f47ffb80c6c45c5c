import re
from pathlib import Path
from typing import Dict


def parse_config_text(content: str) -> Dict[str, str]:
    """
    Parse flat `key = value` run configuration.

    Blank lines and lines starting with '#' are skipped. Keys may use
    hyphens or underscores (`t-final` and `t_final` are the same key) and
    are returned in underscore form. Values are returned unparsed.

    Args:
        content: Raw file content

    Returns:
        Mapping of normalized keys to raw string values

    Raises:
        ValueError: If a line is not of the form key = value
    """
    settings: Dict[str, str] = {}
    for lineno, raw in enumerate(content.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue

        match = re.match(r'^([A-Za-z][A-Za-z0-9_-]*)\s*=\s*(.*?)\s*$', line)
        if not match or not match.group(2):
            raise ValueError(f"Malformed config line {lineno}: {raw!r}")

        key = match.group(1).replace('-', '_').lower()
        settings[key] = match.group(2)

    return settings


def load_config_file(path: Path) -> Dict[str, str]:
    with Path(path).open('r', encoding='utf-8') as f:
        return parse_config_text(f.read())

from typing import Union, Iterable, Tuple, List, Sequence
import json
from pathlib import Path

from matplotlib.colors import to_rgb

RGB = Tuple[int, int, int]
Number = Union[int, float]


class ThermoVQAError(Exception):
    """
    Base class of all errors raised by thermovqa.
    """


class ConfigurationError(ThermoVQAError):
    def __init__(self, what: str, reason: str):
        super().__init__()
        self.what = what
        self.reason = reason

    def __str__(self):
        return f"Invalid configuration of {self.what}: {self.reason}"


def to_rgb8(value: Union[str, Iterable]) -> RGB:
    """
    Converts a color description to a triple of 8-bit integers.

    Parameters
    ----------
    value : str | Iterable
        Color name known to matplotlib ("orange"), hex string ("#FFA500"),
        tuple of floats in [0, 1] or tuple of integers in [0, 255]

    Returns
    -------
    RGB
        Color as (R, G, B) integers

    Raises
    ------
    ConfigurationError
        If the color cannot be interpreted
    """
    if isinstance(value, str):
        try:
            floats = to_rgb(value)
        except ValueError:
            raise ConfigurationError('color', f"unknown color {value!r}")
        return tuple(int(round(255 * v)) for v in floats)
    values = list(value)
    if len(values) < 3:
        raise ConfigurationError('color', f"{values} has less than 3 channels")
    if all(isinstance(v, float) for v in values[:3]) and \
            all(0. <= v <= 1. for v in values[:3]):
        return tuple(int(round(255 * v)) for v in values[:3])
    return tuple(int(v) for v in values[:3])


def format_number(value: Number) -> str:
    """
    Formats a number without a trailing ".0" (25.0 -> "25", 45.5 -> "45.5").
    """
    return f"{float(value):g}"


def read_jsonl(path: Path) -> List[dict]:
    """
    Reads a JSON-lines file, skipping empty lines.

    Parameters
    ----------
    path : Path
        File to read

    Returns
    -------
    List[dict]
        Parsed entries
    """
    entries = []
    with open(path, 'r') as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    return entries


def write_jsonl(path: Path, entries: Sequence[dict]):
    """
    Writes entries as JSON lines, one object per line.
    """
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as fh:
        for entry in entries:
            fh.write(json.dumps(entry, sort_keys=True) + '\n')


def parse_int_list(text: str) -> List[int]:
    """
    Parses comma separated integers ("1, 2,5" -> [1, 2, 5]).
    """
    try:
        return [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise ConfigurationError('integer list', f"cannot parse {text!r}")

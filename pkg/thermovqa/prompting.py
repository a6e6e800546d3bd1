"""
Prompt templates describing the colormap, the normality conditions and
the query
"""

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import List, Sequence, Optional

from thermovqa.thermal_core import (
    ColormapSpec, DEFAULT_ANCHOR_NAMES, DEFAULT_T_MIN, DEFAULT_T_MAX
)
from thermovqa.utils import ConfigurationError, Number, format_number

PROMPT_IDS = (1, 2, 3, 4, 5)
DEFAULT_THRESHOLD = 50.


class UnknownPromptError(ConfigurationError):
    def __init__(self, prompt_id):
        super().__init__('prompt', f"unknown prompt {prompt_id!r}")
        self.prompt_id = prompt_id

    def __str__(self):
        return (f"Unknown prompt {self.prompt_id!r}, available prompts: "
                f"{', '.join(str(i) for i in PROMPT_IDS)}")


@dataclass(frozen=True)
class PromptParams:
    colormap_names: Sequence[str] = DEFAULT_ANCHOR_NAMES
    t_min: Number = DEFAULT_T_MIN
    t_max: Number = DEFAULT_T_MAX
    threshold: Number = DEFAULT_THRESHOLD

    @classmethod
    def from_colormap(cls, cmap: ColormapSpec,
                      threshold: Number = DEFAULT_THRESHOLD
                      ) -> 'PromptParams':
        return cls(tuple(cmap.anchor_names), cmap.t_min, cmap.t_max,
                   threshold)

    def substitutions(self) -> dict:
        names = list(self.colormap_names)
        return {
            'colormap_names': ', '.join(f'"{n}"' for n in names),
            'colormap_names_trailing_comma': ' '.join(
                f'"{n},"' for n in names[:-1]) + f' "{names[-1]}"',
            'colormap_first': names[0],
            'colormap_last': names[-1],
            't_min': format_number(self.t_min),
            't_max': format_number(self.t_max),
            'threshold': format_number(self.threshold),
        }


@dataclass(frozen=True)
class PromptTemplate:
    id: int
    body: str

    def render(self, params: Optional[PromptParams] = None) -> str:
        text = self.body.format_map((params or PromptParams()).substitutions())
        return '\n'.join(line.rstrip() for line in text.strip().splitlines())


@lru_cache(maxsize=None)
def load_template(prompt_id: int) -> PromptTemplate:
    """
    Reads a template shipped in `thermovqa/prompts`.

    Raises
    ------
    UnknownPromptError
        If there is no template with the given id
    """
    try:
        prompt_id = int(prompt_id)
    except (TypeError, ValueError):
        raise UnknownPromptError(prompt_id)
    if prompt_id not in PROMPT_IDS:
        raise UnknownPromptError(prompt_id)
    resource = resources.files('thermovqa') / 'prompts'
    body = (resource / f'prompt_{prompt_id}.txt').read_text(encoding='utf-8')
    return PromptTemplate(prompt_id, body)


def list_templates() -> List[PromptTemplate]:
    return [load_template(i) for i in PROMPT_IDS]


def render(prompt_id: int, params: Optional[PromptParams] = None) -> str:
    """
    Renders a prompt.

    Parameters
    ----------
    prompt_id : int
        Prompt number, 1 to 5
    params : Optional[PromptParams]
        Colormap names, temperature range and threshold, the defaults
        describe the battery test set

    Returns
    -------
    str
        Prompt text, lines separated with a single newline
    """
    return load_template(prompt_id).render(params)

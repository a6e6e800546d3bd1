import pytest

from thermovqa.prompting import (
    PROMPT_IDS, PromptParams, UnknownPromptError, list_templates, render
)
from thermovqa.thermal_core import ColormapSpec
from thermovqa.utils import ConfigurationError

DEFAULT_NAMES = '"black", "blue", "cyan", "yellow", "orange", "red", "white"'


def test_first_prompt():
    text = render(1)
    assert text.startswith('This is a thermal image of a battery.')
    assert f'[{DEFAULT_NAMES}] with temperature range from 25 to 60.' in text
    assert '2. Temperature less than 50' in text
    assert text.endswith('Is the attached image a normal battery? '
                         'a) Yes b) No')


def test_first_prompt_threshold():
    text = render(1, PromptParams(threshold=45))
    assert '2. Temperature less than 45' in text
    assert 'less than 50' not in text


@pytest.mark.parametrize('prompt_id', [2, 3, 4, 5])
def test_options_on_separate_lines(prompt_id):
    assert render(prompt_id).endswith('\na) Yes\nb) No')


@pytest.mark.parametrize('prompt_id', PROMPT_IDS)
def test_all_placeholders_replaced(prompt_id):
    text = render(prompt_id)
    assert '{' not in text and '}' not in text
    assert 'black' in text and 'white' in text
    assert all(line == line.rstrip() for line in text.splitlines())


def test_colormap_name_styles():
    assert '"black," "blue," "cyan," "yellow," "orange," "red," "white"' in \
        render(4)
    assert 'The colormap ranges from "black" to "white"' in render(5)
    assert 'from 25°C to 60°C' in render(3)


def test_custom_parameters():
    cmap = ColormapSpec.from_names(
        ('navy', 'blue', 'green', 'yellow', 'orange', 'red', 'white'),
        20., 70.)
    params = PromptParams.from_colormap(cmap, threshold=45.5)
    text = render(2, params)
    assert '"navy", "blue", "green"' in text
    assert 'temperature range of 20 to 70°C' in text
    assert 'below 45.5°C' in text


def test_templates():
    assert [t.id for t in list_templates()] == list(PROMPT_IDS)


@pytest.mark.parametrize('prompt_id', [0, 6, 'x', None])
def test_unknown_prompt(prompt_id):
    with pytest.raises(UnknownPromptError) as error:
        render(prompt_id)
    assert isinstance(error.value, ConfigurationError)

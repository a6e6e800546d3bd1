"""
Uniform query interface over hosted VQA services and the offline oracle
and replay backends.
"""

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Union
import base64
import hashlib
import logging
import os
import threading
import time

import backoff
import openai
import requests

from thermovqa.oracle_detector import OracleParams, classify_image
from thermovqa.thermal_core import ColormapSpec, ThermalImage, default_colormap
from thermovqa.answer_parser import Verdict
from thermovqa.utils import ThermoVQAError, ConfigurationError, read_jsonl

LOGGER = logging.getLogger(__name__)

NORMAL_ANSWER = 'a) Yes'
ANOMALY_ANSWER = 'b) No'
CHAT_TRIALS = 5
DEFAULT_TRIALS = 3


class BackendKind(str, Enum):
    HTTP_CHAT = 'http_chat'
    HTTP_PREDICTION = 'http_prediction'
    ORACLE = 'oracle'
    REPLAY = 'replay'

    @property
    def is_http(self) -> bool:
        return self in (BackendKind.HTTP_CHAT, BackendKind.HTTP_PREDICTION)


class BackendConfigError(ConfigurationError):
    def __init__(self, backend_id: str, reason: str):
        super().__init__(f"backend {backend_id!r}", reason)
        self.backend_id = backend_id


class TransientBackendError(ThermoVQAError):
    """
    Failure worth retrying: timeouts, rate limits, server errors.
    """
    def __init__(self, backend_id: str, reason: str):
        super().__init__()
        self.backend_id = backend_id
        self.reason = reason

    def __str__(self):
        return f"{self.backend_id}: {self.reason}"


class TransportError(ThermoVQAError):
    def __init__(self, backend_id: str, attempts: int, reason: str):
        super().__init__()
        self.backend_id = backend_id
        self.attempts = attempts
        self.reason = reason

    def __str__(self):
        return (f"{self.backend_id}: giving up after {self.attempts} "
                f"attempts, last error: {self.reason}")


class ReplayMissError(ThermoVQAError):
    def __init__(self, backend_id: str, key: Tuple):
        super().__init__()
        self.backend_id = backend_id
        self.key = key

    def __str__(self):
        source, prompt_id, image_id, trial = self.key
        return (f"{self.backend_id}: no transcript entry for backend "
                f"{source!r}, prompt {prompt_id}, image {image_id!r}, "
                f"trial {trial}")


@dataclass(frozen=True)
class BackendConfig:
    """
    Description of one VQA backend.

    Attributes
    ----------
    id : str
        Name the backend is referred to in plans and logs
    kind : BackendKind
        Protocol of the backend
    endpoint : Optional[str]
        Base URL (http_chat) or prediction URL template (http_prediction),
        `{model}` is replaced with `model_name`
    model_name : Optional[str]
        Model requested from the service
    auth_env_var : Optional[str]
        Name of the environment variable holding the API key
    sampling_temperature : Optional[float]
        Sampling temperature in [0, 2], not sent when unset
    timeout : float
        Seconds allowed for one request, or for one prediction to finish
    max_retries : int
        Retries of transient failures
    requests_per_minute : Optional[int]
        Cap of issued requests in any 60 s window
    max_in_flight : int
        Cap of concurrent queries
    prompt_field : str
        Input key of the prompt (http_prediction)
    image_field : str
        Input key of the image (http_prediction)
    supports_temperature : bool
        False if the endpoint schema has no temperature input
    model_version : Optional[str]
        Model version sent with predictions
    poll_interval : float
        Seconds between prediction status polls
    backoff_factor : float
        Base delay of the exponential retry backoff
    transcript_path : Optional[Path]
        Transcript file (replay)
    source_id : Optional[str]
        Backend id looked up in the transcript, defaults to `id` (replay)
    trials : Optional[int]
        Default number of trials per (image, prompt)
    """
    id: str
    kind: BackendKind
    endpoint: Optional[str] = None
    model_name: Optional[str] = None
    auth_env_var: Optional[str] = None
    sampling_temperature: Optional[float] = None
    timeout: float = 60.
    max_retries: int = 5
    requests_per_minute: Optional[int] = None
    max_in_flight: int = 4
    prompt_field: str = 'prompt'
    image_field: str = 'image'
    supports_temperature: bool = True
    model_version: Optional[str] = None
    poll_interval: float = 1.
    backoff_factor: float = 1.
    transcript_path: Optional[Path] = None
    source_id: Optional[str] = None
    trials: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'kind', BackendKind(self.kind))
        if self.kind.is_http:
            if not self.endpoint:
                raise BackendConfigError(self.id, "endpoint is required")
            if not self.auth_env_var:
                raise BackendConfigError(self.id, "auth_env is required")
        if self.kind is BackendKind.REPLAY and self.transcript_path is None:
            raise BackendConfigError(self.id, "transcript is required")
        if self.sampling_temperature is not None and \
                not 0. <= self.sampling_temperature <= 2.:
            raise BackendConfigError(
                self.id, f"temperature {self.sampling_temperature} is not "
                f"in [0, 2]")
        if self.max_retries < 0:
            raise BackendConfigError(self.id, "max_retries is negative")
        if self.max_in_flight < 1:
            raise BackendConfigError(self.id, "max_in_flight has to be >= 1")
        if self.requests_per_minute is not None and \
                self.requests_per_minute < 1:
            raise BackendConfigError(
                self.id, "requests_per_minute has to be >= 1")
        if self.trials is not None and self.trials < 1:
            raise BackendConfigError(self.id, "trials has to be >= 1")

    @property
    def default_trials(self) -> int:
        if self.trials is not None:
            return self.trials
        if self.kind is BackendKind.HTTP_CHAT:
            return CHAT_TRIALS
        return DEFAULT_TRIALS

    @property
    def url(self) -> str:
        return self.endpoint.format(model=self.model_name)

    def api_key(self) -> str:
        """
        Reads the API key from the environment.

        Raises
        ------
        BackendConfigError
            If the variable is not set
        """
        key = os.environ.get(self.auth_env_var or '')
        if not key:
            raise BackendConfigError(
                self.id, f"environment variable {self.auth_env_var} is not "
                f"set")
        return key


PRESETS: Dict[str, BackendConfig] = {
    'chatgpt-4o': BackendConfig(
        id='chatgpt-4o',
        kind=BackendKind.HTTP_CHAT,
        endpoint='https://api.openai.com/v1',
        model_name='gpt-4o',
        auth_env_var='OPENAI_API_KEY',
        requests_per_minute=60,
        trials=CHAT_TRIALS,
    ),
    'llava-13b': BackendConfig(
        id='llava-13b',
        kind=BackendKind.HTTP_PREDICTION,
        endpoint='https://api.replicate.com/v1/models/{model}/predictions',
        model_name='yorickvp/llava-13b',
        auth_env_var='REPLICATE_API_TOKEN',
        sampling_temperature=0.1,
        timeout=300.,
        requests_per_minute=60,
        trials=DEFAULT_TRIALS,
    ),
    'blip-2': BackendConfig(
        id='blip-2',
        kind=BackendKind.HTTP_PREDICTION,
        endpoint='https://api.replicate.com/v1/models/{model}/predictions',
        model_name='andreasjansson/blip-2',
        auth_env_var='REPLICATE_API_TOKEN',
        timeout=300.,
        requests_per_minute=60,
        prompt_field='question',
        supports_temperature=False,
        trials=DEFAULT_TRIALS,
    ),
    'oracle': BackendConfig(
        id='oracle',
        kind=BackendKind.ORACLE,
        max_in_flight=8,
        trials=DEFAULT_TRIALS,
    ),
}


@dataclass(frozen=True)
class ImageInput:
    """
    PNG image sent to a backend exactly as stored.
    """
    image_id: str
    png: bytes = field(repr=False)

    @classmethod
    def from_path(cls, image_id: str,
                  path: Union[str, Path]) -> 'ImageInput':
        return cls(image_id, Path(path).read_bytes())

    def data_uri(self) -> str:
        encoded = base64.b64encode(self.png).decode('ascii')
        return f"data:image/png;base64,{encoded}"


@dataclass(frozen=True)
class RawResponse:
    text: str
    latency: float
    attempt_count: int
    backend_id: str


class RateLimiter:
    """
    Sliding-window limiter, at most `limit` acquisitions in any `window`
    seconds. Thread-safe.
    """
    def __init__(
            self,
            limit: Optional[int],
            window: float = 60.,
            clock: Callable[[], float] = time.monotonic,
            sleep: Callable[[float], None] = time.sleep):
        self.limit = limit
        self.window = window
        self._clock = clock
        self._sleep = sleep
        self._issued = deque()
        self._lock = threading.Lock()

    def acquire(self):
        if self.limit is None:
            return
        while True:
            with self._lock:
                now = self._clock()
                while self._issued and now - self._issued[0] >= self.window:
                    self._issued.popleft()
                if len(self._issued) < self.limit:
                    self._issued.append(now)
                    return
                wait = self.window - (now - self._issued[0])
            LOGGER.debug(f"Rate limit reached, waiting {wait:.2f}s")
            self._sleep(wait)


class Backend:
    """
    Base class of backends; `query` is safe to call from many threads,
    at most `max_in_flight` calls run at once.
    """
    def __init__(self, config: BackendConfig):
        self.config = config
        self._in_flight = threading.BoundedSemaphore(config.max_in_flight)

    def query(self, prompt_text: str, image: ImageInput,
              prompt_id: Optional[int] = None,
              trial_index: int = 0) -> RawResponse:
        with self._in_flight:
            start = time.monotonic()
            text, attempts = self._answer(
                prompt_text, image, prompt_id, trial_index)
            return RawResponse(text, time.monotonic() - start, attempts,
                               self.config.id)

    def _answer(self, prompt_text: str, image: ImageInput,
                prompt_id: Optional[int],
                trial_index: int) -> Tuple[str, int]:
        raise NotImplementedError


class HttpBackend(Backend):
    """
    Common retry and rate-limit handling of hosted backends.
    """
    def __init__(self, config: BackendConfig,
                 rate_limiter: Optional[RateLimiter] = None):
        super().__init__(config)
        self.rate_limiter = rate_limiter or RateLimiter(
            config.requests_per_minute)
        if config.sampling_temperature is not None and \
                not config.supports_temperature:
            LOGGER.warning(
                f"{config.id}: endpoint has no temperature input, ignoring "
                f"sampling temperature {config.sampling_temperature}")

    @property
    def temperature(self) -> Optional[float]:
        if self.config.supports_temperature:
            return self.config.sampling_temperature
        return None

    def _on_backoff(self, details: dict):
        LOGGER.warning(
            f"{self.config.id}: attempt {details['tries']} failed "
            f"({details.get('exception')}), retrying in "
            f"{details['wait']:.1f}s")

    def _retrying(self, function: Callable) -> Callable:
        return backoff.on_exception(
            backoff.expo,
            TransientBackendError,
            max_tries=self.config.max_retries + 1,
            jitter=None,
            on_backoff=self._on_backoff,
            factor=self.config.backoff_factor,
            max_value=60,
        )(function)

    def _answer(self, prompt_text, image, prompt_id, trial_index):
        attempts = 0

        def attempt() -> str:
            nonlocal attempts
            attempts += 1
            return self._request(prompt_text, image)

        try:
            text = self._retrying(attempt)()
        except TransientBackendError as error:
            raise TransportError(self.config.id, attempts, error.reason)
        LOGGER.debug(f"{self.config.id}: {image.image_id} answered after "
                     f"{attempts} attempt(s)")
        return text, attempts

    def _request(self, prompt_text: str, image: ImageInput) -> str:
        raise NotImplementedError


class ChatBackend(HttpBackend):
    """
    OpenAI-compatible chat completions endpoint.
    """
    def __init__(self, config: BackendConfig, client=None,
                 rate_limiter: Optional[RateLimiter] = None):
        super().__init__(config, rate_limiter)
        self._client = client
        self._client_lock = threading.Lock()

    @property
    def client(self):
        with self._client_lock:
            if self._client is None:
                self._client = openai.OpenAI(
                    api_key=self.config.api_key(),
                    base_url=self.config.url,
                    timeout=self.config.timeout,
                    max_retries=0,
                )
            return self._client

    def request_body(self, prompt_text: str, image: ImageInput) -> dict:
        body = {
            'model': self.config.model_name,
            'messages': [{
                'role': 'user',
                'content': [
                    {'type': 'text', 'text': prompt_text},
                    {'type': 'image_url',
                     'image_url': {'url': image.data_uri()}},
                ],
            }],
        }
        if self.temperature is not None:
            body['temperature'] = self.temperature
        return body

    def _request(self, prompt_text, image):
        cid = self.config.id
        self.rate_limiter.acquire()
        try:
            completion = self.client.chat.completions.create(
                **self.request_body(prompt_text, image))
        except (openai.RateLimitError, openai.InternalServerError,
                openai.APIConnectionError) as error:
            raise TransientBackendError(cid, f"{type(error).__name__}: "
                                        f"{error}")
        except openai.APIStatusError as error:
            if error.status_code >= 500:
                raise TransientBackendError(cid, f"HTTP {error.status_code}")
            raise BackendConfigError(
                cid, f"request rejected with HTTP {error.status_code}")
        text = completion.choices[0].message.content if \
            completion.choices else None
        if not text or not text.strip():
            raise TransientBackendError(cid, "empty answer")
        return text


class PredictionBackend(HttpBackend):
    """
    Prediction-style endpoint: a POST creates a prediction, its status URL
    is polled until it finishes.
    """
    FINISHED = ('succeeded', 'failed', 'canceled')

    def __init__(self, config: BackendConfig,
                 session: Optional[requests.Session] = None,
                 rate_limiter: Optional[RateLimiter] = None,
                 sleep: Callable[[float], None] = time.sleep,
                 clock: Callable[[], float] = time.monotonic):
        super().__init__(config, rate_limiter)
        self.session = session or requests.Session()
        self._sleep = sleep
        self._clock = clock

    def request_body(self, prompt_text: str, image: ImageInput) -> dict:
        inputs = {
            self.config.prompt_field: prompt_text,
            self.config.image_field: image.data_uri(),
        }
        if self.temperature is not None:
            inputs['temperature'] = self.temperature
        body = {'input': inputs}
        if self.config.model_version:
            body['version'] = self.config.model_version
        return body

    def _headers(self) -> dict:
        return {
            'Authorization': f"Bearer {self.config.api_key()}",
            'Content-Type': 'application/json',
        }

    def _call(self, method: str, url: str, **kwargs) -> dict:
        cid = self.config.id
        self.rate_limiter.acquire()
        try:
            response = self.session.request(
                method, url, headers=self._headers(),
                timeout=self.config.timeout, **kwargs)
        except (requests.Timeout, requests.ConnectionError) as error:
            raise TransientBackendError(cid, f"{type(error).__name__}: "
                                        f"{error}")
        status = response.status_code
        if status == 429 or status >= 500:
            raise TransientBackendError(cid, f"HTTP {status}")
        if status >= 400:
            raise BackendConfigError(
                cid, f"request rejected with HTTP {status}: "
                f"{response.text[:200]}")
        return response.json()

    def _poll(self, url: str) -> dict:
        """
        Fetches the status of a running prediction, transient failures are
        retried on the same prediction.
        """
        tries = 0

        def get() -> dict:
            nonlocal tries
            tries += 1
            return self._call('GET', url)

        try:
            return self._retrying(get)()
        except TransientBackendError as error:
            raise TransportError(self.config.id, tries, error.reason)

    def _request(self, prompt_text, image):
        cid = self.config.id
        prediction = self._call(
            'POST', self.config.url,
            json=self.request_body(prompt_text, image))
        deadline = self._clock() + self.config.timeout
        while prediction.get('status') not in self.FINISHED:
            if self._clock() > deadline:
                raise TransientBackendError(
                    cid, f"prediction {prediction.get('id')} did not finish "
                    f"in {self.config.timeout}s")
            self._sleep(self.config.poll_interval)
            prediction = self._poll(prediction['urls']['get'])
        if prediction['status'] != 'succeeded':
            raise TransientBackendError(
                cid, f"prediction {prediction['status']}: "
                f"{prediction.get('error')}")
        output = prediction.get('output')
        if isinstance(output, list):
            output = ''.join(str(part) for part in output)
        if not output or not str(output).strip():
            raise TransientBackendError(cid, "empty answer")
        return str(output)


class OracleBackend(Backend):
    """
    Answers with the rule-based detector run on the decoded image.
    """
    def __init__(self, config: BackendConfig,
                 cmap: Optional[ColormapSpec] = None,
                 params: OracleParams = OracleParams()):
        super().__init__(config)
        self.cmap = cmap or default_colormap()
        self.params = params.validate_for(self.cmap)
        self._answers: Dict[str, str] = {}
        self._lock = threading.Lock()

    def _answer(self, prompt_text, image, prompt_id, trial_index):
        digest = hashlib.sha256(image.png).hexdigest()
        with self._lock:
            cached = self._answers.get(digest)
        if cached is None:
            report = classify_image(
                ThermalImage.from_png_bytes(image.png), self.cmap,
                self.params)
            cached = NORMAL_ANSWER if report.verdict is Verdict.NORMAL \
                else ANOMALY_ANSWER
            with self._lock:
                self._answers[digest] = cached
        return cached, 1


class ReplayBackend(Backend):
    """
    Returns answers recorded in a transcript file.
    """
    def __init__(self, config: BackendConfig):
        super().__init__(config)
        self.source_id = config.source_id or config.id
        self.transcript = load_transcript(config.transcript_path)
        LOGGER.info(f"{config.id}: loaded {len(self.transcript)} transcript "
                    f"entries from {config.transcript_path}")

    def _answer(self, prompt_text, image, prompt_id, trial_index):
        key = (self.source_id, int(prompt_id), image.image_id,
               int(trial_index))
        try:
            return self.transcript[key], 1
        except KeyError:
            raise ReplayMissError(self.config.id, key)


def load_transcript(path: Union[str, Path]) -> Dict[Tuple, str]:
    """
    Reads a replay transcript.

    Parameters
    ----------
    path : Union[str, Path]
        JSON-lines file of {backend_id, prompt_id, image_id, trial, text}

    Returns
    -------
    Dict[Tuple, str]
        Answers keyed by (backend_id, prompt_id, image_id, trial)
    """
    if not Path(path).is_file():
        raise ConfigurationError('replay transcript', f"{path} not found")
    transcript = {}
    for entry in read_jsonl(path):
        key = (entry['backend_id'], int(entry['prompt_id']),
               entry['image_id'], int(entry['trial']))
        transcript[key] = entry['text']
    return transcript


def create_backend(
        config: BackendConfig,
        cmap: Optional[ColormapSpec] = None,
        oracle_params: OracleParams = OracleParams()) -> Backend:
    """
    Instantiates the backend described by the config.
    """
    if config.kind is BackendKind.HTTP_CHAT:
        return ChatBackend(config)
    if config.kind is BackendKind.HTTP_PREDICTION:
        return PredictionBackend(config)
    if config.kind is BackendKind.ORACLE:
        return OracleBackend(config, cmap, oracle_params)
    return ReplayBackend(config)


_BACKENDS: Dict[Tuple, Backend] = {}
_BACKENDS_LOCK = threading.Lock()


def query(config: BackendConfig, prompt_text: str, image: ImageInput,
          prompt_id: Optional[int] = None,
          trial_index: int = 0,
          cmap: Optional[ColormapSpec] = None,
          oracle_params: OracleParams = OracleParams()) -> RawResponse:
    """
    Sends one prompt and image to a backend.

    Backends are created on first use and shared, so their rate limiter
    and in-flight cap hold across callers.

    Parameters
    ----------
    config : BackendConfig
        Backend to query
    prompt_text : str
        Rendered prompt
    image : ImageInput
        PNG image
    prompt_id : Optional[int]
        Prompt number, needed by the replay backend
    trial_index : int
        Trial number, needed by the replay backend
    cmap : Optional[ColormapSpec]
        Colormap the oracle backend decodes with
    oracle_params : OracleParams
        Thresholds of the oracle backend

    Returns
    -------
    RawResponse
        Answer text, latency and number of attempts

    Raises
    ------
    BackendConfigError
        On a missing key or a rejected request
    TransportError
        When retries are exhausted
    ReplayMissError
        When the transcript has no matching entry
    """
    with _BACKENDS_LOCK:
        key = (config, cmap, oracle_params)
        backend = _BACKENDS.get(key)
        if backend is None:
            backend = _BACKENDS[key] = create_backend(
                config, cmap, oracle_params)
    return backend.query(prompt_text, image, prompt_id, trial_index)

"""
Benchmark of zero-shot anomaly detection in battery thermal images with
visual question answering models
"""
from thermovqa.thermal_core import ColormapSpec, TemperatureField, ThermalImage  # noqa: F401, E501
from thermovqa.thermal_core import default_colormap, encode, decode  # noqa: F401
from thermovqa.synth import SceneClass, SceneSpec, generate_scene, generate_dataset  # noqa: F401, E501
from thermovqa.preprocess import detect_battery_region, crop_rotate  # noqa: F401
from thermovqa.oracle_detector import OracleParams, classify  # noqa: F401
from thermovqa.prompting import PromptParams, render  # noqa: F401
from thermovqa.vqa_backend import BackendConfig, query  # noqa: F401
from thermovqa.answer_parser import Verdict, parse_verdict, score_verdict  # noqa: F401, E501
from thermovqa.trial_runner import RunPlan, execute  # noqa: F401
from thermovqa.metrics_report import accuracy, auc, emit_report  # noqa: F401

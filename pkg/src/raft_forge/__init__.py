"""raft-forge: build retrieval-augmented fine-tuning datasets with
chain-of-thought targets, run prompting baselines, and score predictions
with bilingual EM/F1."""

__version__ = "0.1.0"

from .clients import EndpointConfig, HttpChatClient, MockChatClient, make_client
from .construct import ConstructionConfig, RaftExample, build_raft_dataset
from .corpus import DatasetHandle, Document, QARecord, load_dataset, validate_dataset
from .cotgen import CoTResponse, ResponseCache, build_cot_prompt, extract_final_answer, generate_cot, verify_citations
from .evalkit import MetricReport, aggregate, exact_match, f1, normalize_answer, score_predictions
from .runner import ExperimentConfig, build_inference_prompt, compute_gains, render_report, run_experiment

__all__ = [
    "CoTResponse",
    "ConstructionConfig",
    "DatasetHandle",
    "Document",
    "EndpointConfig",
    "ExperimentConfig",
    "HttpChatClient",
    "MetricReport",
    "MockChatClient",
    "QARecord",
    "RaftExample",
    "ResponseCache",
    "aggregate",
    "build_cot_prompt",
    "build_inference_prompt",
    "build_raft_dataset",
    "compute_gains",
    "exact_match",
    "extract_final_answer",
    "f1",
    "generate_cot",
    "load_dataset",
    "make_client",
    "normalize_answer",
    "render_report",
    "run_experiment",
    "score_predictions",
    "validate_dataset",
]

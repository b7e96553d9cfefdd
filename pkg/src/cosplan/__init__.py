"""Corrective sequential planning benchmarks with scene-graph simulation."""

from .backends import OracleBackend, RandomBackend, RemoteBackend, RemoteConfig
from .scene_graph import SceneGraph, from_state, similarity, update, validate_document
from .sgi import run_sgi, sgi_error_detection, sgi_step_completion
from .task_forge import ForgeConfig, TaskInstance, generate_dataset, generate_instance, read_dataset, write_dataset

__version__ = "0.1.0"

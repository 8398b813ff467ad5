"""Truncated least-squares rotation search, its semidefinite relaxation, and dual certificates."""
from .errors import DegenerateExtraction, InvalidArgument, RegimeMismatch, UnsupportedSize
from .rotmath import build_Q, quat_to_rot, rot_to_quat
from .synth import GenConfig, Instance, gen_instance
from .tls import tls_bruteforce, tls_by_classification, tls_objective

__all__ = [
    "DegenerateExtraction", "InvalidArgument", "RegimeMismatch", "UnsupportedSize",
    "build_Q", "quat_to_rot", "rot_to_quat", "GenConfig", "Instance", "gen_instance",
    "tls_bruteforce", "tls_by_classification", "tls_objective",
]

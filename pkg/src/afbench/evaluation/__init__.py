from .clients import (
    API_KEY_ENV,
    ClientConfigError,
    FaithfulOracle,
    HTTPChatClient,
    ParametricParrot,
    RetryPolicy,
    UniformRandom,
    make_mock,
)
from .prompt import ABSTAIN, extract_answer, render_prompt
from .runner import EvalRecord, run_eval
from .stats import StratumStats, emit_report, plot_rows, read_plotdata, stratify, wald_se

__all__ = [
    "ABSTAIN", "API_KEY_ENV", "ClientConfigError", "EvalRecord", "FaithfulOracle", "HTTPChatClient",
    "ParametricParrot", "RetryPolicy", "StratumStats", "UniformRandom", "emit_report", "extract_answer",
    "make_mock", "plot_rows", "read_plotdata", "render_prompt", "run_eval", "stratify", "wald_se",
]

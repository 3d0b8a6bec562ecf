"""Attack orchestration: configuration, training loop, collapse detection, reporting, CLI."""

from .attack import AttackResult, AttackRun, TrainingLog, run_attack, select_low_confidence
from .collapse import CollapseDetector, CollapseReport, detect_mode_collapse, distinct_token_ratio
from .config import SWEEP_LAMBDAS, AttackConfig, derive_seed
from .report import AttackReport, report

__all__ = [
    "AttackConfig", "AttackReport", "AttackResult", "AttackRun", "CollapseDetector", "CollapseReport",
    "SWEEP_LAMBDAS", "TrainingLog", "derive_seed", "detect_mode_collapse", "distinct_token_ratio",
    "report", "run_attack", "select_low_confidence",
]

"""Circuit specs, mean-ablation curves, C1-C3 conditions and mover classification."""

from .ablation import (
    DEFAULT_HEADS,
    AblationCurve,
    AblationStep,
    CircuitSpec,
    Conditions,
    evaluate_conditions,
    head_name,
    mean_table,
    necessity_curve,
    parse_head,
    scheme_report_csv,
    sufficiency_curve,
)
from .movers import (
    QUADRANTS,
    MoverClassification,
    classify_movers,
    movers_json,
    outlier_threshold,
    ppd,
    quadrant,
)

__all__ = [
    "DEFAULT_HEADS",
    "QUADRANTS",
    "AblationCurve",
    "AblationStep",
    "CircuitSpec",
    "Conditions",
    "MoverClassification",
    "classify_movers",
    "evaluate_conditions",
    "head_name",
    "mean_table",
    "movers_json",
    "necessity_curve",
    "outlier_threshold",
    "parse_head",
    "ppd",
    "quadrant",
    "scheme_report_csv",
    "sufficiency_curve",
]

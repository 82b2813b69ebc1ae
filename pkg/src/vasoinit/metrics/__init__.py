from .bootstrap import MetricCI, bootstrap_ci, bootstrap_many
from .calibration import CalibrationStats, calibration_stats, expected_calibration_error, reliability_bins
from .decision import NetBenefitCurve, default_grid, net_benefit
from .report import REPORT_FILES, evaluate, evaluate_scores, write_report
from .roc import MetricError, RocCurve, auroc, band_auc, roc_auroc
from .subgroups import LAST_MAP_BANDS, Subgroup, SubgroupRow, default_subgroups, subgroup_report
from .thresholds import (
    ThresholdRow,
    confusion_counts,
    confusion_metrics,
    ratios,
    threshold_at_sensitivity,
    threshold_table,
    youden_threshold,
)

__all__ = [
    "CalibrationStats",
    "LAST_MAP_BANDS",
    "MetricCI",
    "MetricError",
    "NetBenefitCurve",
    "REPORT_FILES",
    "RocCurve",
    "Subgroup",
    "SubgroupRow",
    "ThresholdRow",
    "auroc",
    "band_auc",
    "bootstrap_ci",
    "bootstrap_many",
    "calibration_stats",
    "confusion_counts",
    "confusion_metrics",
    "default_grid",
    "default_subgroups",
    "evaluate",
    "evaluate_scores",
    "expected_calibration_error",
    "net_benefit",
    "ratios",
    "reliability_bins",
    "roc_auroc",
    "subgroup_report",
    "threshold_at_sensitivity",
    "threshold_table",
    "write_report",
    "youden_threshold",
]

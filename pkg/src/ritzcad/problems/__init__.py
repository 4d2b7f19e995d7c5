"""Built-in benchmark problems."""

from .base import (
    EVAL_SKIP, Problem, boundary_report, error_metrics, evaluate_field, interface_report,
    interior_samples, solution_metrics, write_field_csv,
)
from .cylinder import (
    CylinderCase, build_cylinder, cylinder_analytic, cylinder_domain, cylinder_patches,
    interface_flux_check, line_scan, scan_jumps, write_line_scan,
)
from .imported import build_imported
from .pmsm import PmsmCase, build_pmsm, pmsm_domain, pmsm_patches, sector_area

__all__ = [
    "EVAL_SKIP", "Problem", "boundary_report", "error_metrics", "evaluate_field",
    "interface_report", "interior_samples", "solution_metrics", "write_field_csv",
    "CylinderCase", "build_cylinder", "cylinder_analytic", "cylinder_domain",
    "cylinder_patches", "interface_flux_check", "line_scan", "scan_jumps", "write_line_scan",
    "build_imported", "PmsmCase", "build_pmsm", "pmsm_domain", "pmsm_patches", "sector_area",
]

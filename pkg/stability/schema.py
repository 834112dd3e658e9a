"""
Frozen artifact schema. Downstream plotting and the test suite parse these
names; bump SCHEMA_VERSION whenever a column or key changes.
"""

SCHEMA_VERSION = "1.0"

STAGES = (
    "eigen",
    "mode",
    "residual",
    "evolve-linear",
    "sweep",
    "evolve-transformed",
    "evolve-nonlinear",
)
FULL_STAGE = "full"

CSV_COLUMNS = {
    "shear": ("t", "z", "u", "v"),
    "eigen": ("Z", "Re_W", "Im_W"),
    "mode": ("t", "z", "Re_U", "Im_U", "Re_V", "Im_V", "Re_W", "Im_W"),
    "residual": ("eps", "R1norm", "R2norm", "R1_1", "R1_2", "R1_3"),
    "evolve-linear": ("t", "norm", "slope"),
    "evolve-transformed": ("t", "norm", "slope"),
}

# keys every stage result carries
RESULT_KEYS = ("stage", "status", "resolution", "artifacts", "error")

STAGE_KEYS = {
    "eigen": ("tau", "roots", "partner", "jumps", "jump_tolerance", "companion", "convergence", "critical_point"),
    "mode": ("entries",),
    "residual": ("study",),
    "evolve-linear": ("k", "sigma", "r2", "frozen_sigma", "predicted"),
    "sweep": ("entries", "fit", "prediction", "flag"),
    "evolve-transformed": ("entries", "two_route_gap"),
    "evolve-nonlinear": ("runs", "ratios", "delta_ratios", "linear", "proportional_gap"),
}

REPORT_KEYS = ("schema_version", "config_hash", "stages", "manifest", "provenance", "checks")

REPORT_FILE = "report.json"

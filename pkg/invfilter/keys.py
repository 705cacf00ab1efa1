from pathlib import Path
from typing import Union

from invfilter.constants import (
    COMPARISON_CSV,
    COVARIANCE_CSV,
    ENVELOPE_CSV,
    ERRORS_CSV,
    GAINS_CSV,
    OBSERVATIONS_CSV,
    OPTIMUM_JSON,
    OPTIMUM_TXT,
    SCHEDULE_CSV,
    STATIONARY_CSV,
    SUMMARY_JSON,
    SURFACE_CSV,
    TRUTH_CSV,
)


class ExperimentKeys:
    """Output file locations of one experiment directory."""

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.errors_csv = self.out_dir / ERRORS_CSV
        self.envelope_csv = self.out_dir / ENVELOPE_CSV
        self.gains_csv = self.out_dir / GAINS_CSV
        self.covariance_csv = self.out_dir / COVARIANCE_CSV
        self.schedule_csv = self.out_dir / SCHEDULE_CSV
        self.comparison_csv = self.out_dir / COMPARISON_CSV
        self.surface_csv = self.out_dir / SURFACE_CSV
        self.optimum_txt = self.out_dir / OPTIMUM_TXT
        self.optimum_json = self.out_dir / OPTIMUM_JSON
        self.stationary_csv = self.out_dir / STATIONARY_CSV
        self.truth_csv = self.out_dir / TRUTH_CSV
        self.observations_csv = self.out_dir / OBSERVATIONS_CSV
        self.summary_json = self.out_dir / SUMMARY_JSON

    def ensure(self) -> "ExperimentKeys":
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self

import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from logging import Logger
from typing import Any, Dict, Optional

import numpy as np

from invfilter.constants import APPLICATION_PREFIX
from invfilter.models import Scenario
from invfilter.types import Array


@dataclass
class FilterRun:
    """Output of one filter over a batch of trajectories.

    ``estimates`` is ``(B, N+1, m, m)``; ``reported_std`` is the per-axis
    dispersion the filter claims for log(eta), ``(N+1, d)`` when it does not
    depend on the data and ``(B, N+1, d)`` otherwise.
    """

    name: str
    estimates: Array
    reported_std: Optional[Array] = None
    gains: Optional[Array] = None
    covariances: Optional[Array] = None
    wall_time: float = 0.0
    extras: Dict[str, Any] = field(default_factory=dict)

    def reported_std_for(self, batch: int) -> Optional[Array]:
        if self.reported_std is None:
            return None
        if self.reported_std.ndim == 2:
            return np.broadcast_to(self.reported_std, (batch,) + self.reported_std.shape)
        return self.reported_std


class FilterRunner(ABC):
    """Runs one filter family over a batch of observation sequences."""

    name: str = "filter"
    logger: Logger

    def __init__(self, debug: bool = False, logger: Optional[logging.Logger] = None):
        self.debug = debug
        self.logger = logger or logging.getLogger(f"{APPLICATION_PREFIX}.{self.name}")
        self.logger.setLevel(logging.DEBUG if debug else logging.INFO)

    def run(self, scenario: Scenario, observations: Array, estimate_init: Array) -> FilterRun:
        """Filter ``observations`` (B, N, p) starting from ``estimate_init`` (B, m, m)."""
        started = time.perf_counter()
        try:
            result = self._run(scenario, observations, estimate_init)
        except Exception as e:
            self.logger.error(f"Error running {self.name} on {scenario.name}: {e}", exc_info=e)
            raise

        result.wall_time = time.perf_counter() - started
        self.logger.info(
            f"{self.name} filtered {observations.shape[0]} trajectories of "
            f"{scenario.horizon} steps in {result.wall_time:.3f}s"
        )
        return result

    @abstractmethod
    def _run(self, scenario: Scenario, observations: Array, estimate_init: Array) -> FilterRun: ...

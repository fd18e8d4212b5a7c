"""
Shared command plumbing: failures are logged and remembered, never raised
"""
import logging
from typing import Optional

from ..config import HqdmConfig
from ..diffusion.schedule import NoiseSchedule, make_schedule

logger = logging.getLogger(__name__)


class Command:
    """A CLI subcommand; execute() returns True on success and keeps the failure in self.error"""
    title = "Command"

    def __init__(self, config: HqdmConfig):
        self.config = config
        self.error: Optional[BaseException] = None

    def execute(self, **options) -> bool:
        try:
            return self.run(**options) is not False
        except Exception as e:
            self.error = e
            logger.error(f"❌ {self.title} failed: {e}")
            return False

    def run(self, **options) -> Optional[bool]:
        raise NotImplementedError

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.config.timesteps, self.config.beta_start, self.config.beta_end)

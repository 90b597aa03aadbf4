"""Task registry."""

from .base import BatchedTask, GroupSpec, StepOutcome
from .navigate import NavigateTask
from .pacmen import PacmenTask
from .passage import PassageTask
from .soccer import SoccerTask
from .tag import TagTask

TASKS = {
    "soccer": SoccerTask,
    "pacmen": PacmenTask,
    "passage": PassageTask,
    "tag": TagTask,
    "navigate": NavigateTask,
}

__all__ = [
    "BatchedTask", "GroupSpec", "StepOutcome", "TASKS",
    "SoccerTask", "PacmenTask", "PassageTask", "TagTask", "NavigateTask",
]

"""Meta-learned knowledge-grounded dialogue generation."""

from .dialogue import (
    DialogueGoal,
    DialogueSample,
    KnowledgeGraph,
    KnowledgeTriplet,
    START_MARKER,
)
from .meta import MetaConfig, Task, TaskSampler
from .model import DialogueModel
from .params import ParamStore
from .tensor import Tape, Tensor

__all__ = [
    "DialogueGoal",
    "DialogueSample",
    "DialogueModel",
    "KnowledgeGraph",
    "KnowledgeTriplet",
    "MetaConfig",
    "ParamStore",
    "START_MARKER",
    "Tape",
    "Task",
    "TaskSampler",
    "Tensor",
]

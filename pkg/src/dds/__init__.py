"""Event-sourced, description-driven workflow kernel.

Every business object is an Item instantiated from descriptions that are
themselves Items. State changes only through workflow activity execution,
so the event log is the complete provenance of everything.
"""

from .canonical import canonical_json, digest
from .errors import DdsError
from .events import Event, EventStore, store_digest
from .execution import Engine, Job
from .model import ItemRef, ItemState, Property, state_digest

__version__ = "0.1.0"

__all__ = [
    "DdsError",
    "Engine",
    "Event",
    "EventStore",
    "ItemRef",
    "ItemState",
    "Job",
    "Property",
    "canonical_json",
    "digest",
    "state_digest",
    "store_digest",
    "__version__",
]

from .core import (
    DeliveryMode,
    DuplicateSubscription,
    FaultInjector,
    MessageEnvelope,
    Middleware,
    Publisher,
    Subscription,
    UnknownTopic,
    routes_for,
    wire,
)
from .executor import Executor, Strand, TimerService
from .queue import SubscriptionQueue
from .reliable import DeliveryFailed

__all__ = [
    "DeliveryFailed", "DeliveryMode", "DuplicateSubscription", "Executor", "FaultInjector",
    "MessageEnvelope", "Middleware", "Publisher", "Strand", "Subscription", "SubscriptionQueue",
    "TimerService", "UnknownTopic", "routes_for", "wire",
]

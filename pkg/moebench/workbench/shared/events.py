"""
Domain events raised by workbench aggregates (training steps, stored
checkpoints) and the brokers that deliver them to listeners.
"""
from uuid import uuid4
from collections import defaultdict
from logging import Logger, getLogger
from functools import cache
from typing import Callable, Iterable, Optional, Type, TypeVar
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from datetime import datetime
from django.conf import settings
from django.dispatch import Signal
from django.utils import timezone
from django.utils.module_loading import import_string
from django.core.exceptions import ImproperlyConfigured


@dataclass(frozen=True)
class DomainEvent:
    id: str = field(default_factory=lambda: str(uuid4()))
    occurred_at: datetime = field(default_factory=timezone.now)

    @property
    def name(self) -> str:
        return type(self).__name__


E = TypeVar("E", bound=DomainEvent)
Listener = Callable[..., None]


def event_listener(event_class: Type[DomainEvent]) -> Callable[[Listener], Listener]:
    """
    Registers the decorated function on the configured broker.

    Listeners receive ``listener(sender=<event class>, event=<event>)``.
    """
    def register(listener: Listener) -> Listener:
        DomainEventBroker.resolve().register_listener(event_class, listener)
        return listener
    return register


class DomainEventBroker(ABC):

    @staticmethod
    @cache
    def resolve(python_path: Optional[str] = None) -> "DomainEventBroker":
        python_path = python_path or getattr(settings, "DOMAIN_EVENTS_BROKER", None)
        if not python_path:
            raise ImproperlyConfigured("DOMAIN_EVENTS_BROKER is not set")
        broker_cls = import_string(python_path)
        if not issubclass(broker_cls, DomainEventBroker):
            raise ImproperlyConfigured(f"{python_path} is not a DomainEventBroker")
        return broker_cls()

    @abstractmethod
    def register_listener(self, event_class: Type[DomainEvent], listener: Listener):
        ...

    @abstractmethod
    def dispatch(self, events: Iterable[DomainEvent]):
        ...


class DjangoSignalDomainEventBroker(DomainEventBroker):
    """ One Django signal per event class; listener failures are logged, never raised. """

    def __init__(self, logger: Logger = getLogger("domain-events")):
        self._signals: dict[Type[DomainEvent], Signal] = defaultdict(Signal)
        self._logger = logger

    def register_listener(self, event_class: Type[DomainEvent], listener: Listener):
        self._signals[event_class].connect(listener, sender=event_class, weak=False)

    def dispatch(self, events: Iterable[DomainEvent]):
        for event in events:
            signal = self._signals.get(type(event))
            if signal is None:
                self._logger.debug("%s has no listeners", event.name)
                continue
            for listener, error in signal.send_robust(sender=type(event), event=event):
                if isinstance(error, Exception):
                    self._logger.error("Listener %s failed on %s: %s", getattr(listener, "__name__", listener), event.name, error)


class InMemoryDomainEventBroker(DomainEventBroker):
    """
    Keeps every dispatched event for inspection in tests. Listeners only run
    when ``call_listeners`` is set.
    """

    def __init__(self, logger: Logger = getLogger("domain-events"), call_listeners: bool = False):
        self._logger = logger
        self._listeners: dict[Type[DomainEvent], list[Listener]] = defaultdict(list)
        self._call_listeners = call_listeners
        self.dispatched: list[DomainEvent] = []

    def register_listener(self, event_class: Type[DomainEvent], listener: Listener):
        self._listeners[event_class].append(listener)

    def dispatch(self, events: Iterable[DomainEvent]):
        for event in events:
            self.dispatched.append(event)
            if not self._call_listeners:
                continue
            for listener in self._listeners.get(type(event), []):
                try:
                    listener(sender=type(event), event=event)
                except Exception as error:
                    self._logger.exception(error)

    def dispatched_of(self, event_class: Type[E]) -> list[E]:
        return [event for event in self.dispatched if isinstance(event, event_class)]

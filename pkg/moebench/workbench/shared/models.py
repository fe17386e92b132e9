from .events import DomainEvent


class AggregateRoot:
    """
    Base for workbench objects that record domain events until a use case
    or repository pulls and dispatches them.
    """

    def __init__(self):
        self._domain_events: list[DomainEvent] = []

    def record_event(self, event: DomainEvent):
        self._domain_events.append(event)

    def pull_events(self) -> list[DomainEvent]:
        events = list(self._domain_events)
        self._domain_events.clear()
        return events

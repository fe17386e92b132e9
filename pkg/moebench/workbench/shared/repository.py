from functools import cache
from abc import ABC, abstractmethod
from typing import Generic, TypeVar
from django.utils.module_loading import import_string
from returns.result import Result
from .exceptions import Error, NotFoundError
from .events import DomainEventBroker
from .models import AggregateRoot


TAggregate = TypeVar("TAggregate", bound=AggregateRoot)


class Repository(ABC, Generic[TAggregate]):

    def __init__(self, domain_events_broker: DomainEventBroker = None):
        self.domain_events_broker = domain_events_broker or DomainEventBroker.resolve()

    @staticmethod
    @cache
    def resolve(python_path: str) -> type["Repository"]:
        repo_cls = import_string(python_path)
        if not issubclass(repo_cls, Repository):
            raise RuntimeError(f"Class {repo_cls} is not an implementation of Repository")
        return repo_cls

    @abstractmethod
    def get_by_id(self, id: str) -> Result[TAggregate, NotFoundError | Error]: ...

    @abstractmethod
    def store(self, id: str, instance: TAggregate) -> Result[TAggregate, Error]: ...

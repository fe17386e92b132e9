import os
import tempfile
from pathlib import Path
from returns.result import Result, Success, Failure
from workbench.shared.events import DomainEventBroker
from workbench.shared.exceptions import Error, NotFoundError, ResourceError
from workbench.shared.repository import Repository
from .models import CheckpointStored
from .model import MicroModel
from .checkpoints import encode_checkpoint, decode_checkpoint


class CheckpointRepository(Repository[MicroModel]):
    """ Stores micro models under a checkpoint id. """

    def __init__(self, directory: str | Path = ".", domain_events_broker: DomainEventBroker = None):
        super().__init__(domain_events_broker)
        self.directory = Path(directory)


class FileCheckpointRepository(CheckpointRepository):
    """
    One `<id>.ckpt` file per checkpoint. Writes go to a temporary file in
    the same directory and are renamed into place.
    """

    suffix = ".ckpt"

    def path_for(self, id: str) -> Path:
        path = Path(id)
        if path.suffix != self.suffix:
            path = path.with_name(path.name + self.suffix)
        return path if path.is_absolute() else self.directory / path

    def get_by_id(self, id: str) -> Result[MicroModel, NotFoundError | Error]:
        path = self.path_for(id)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            return Failure(NotFoundError("micro_model.checkpoint_not_found", f"no checkpoint at {path}"))
        except OSError as e:
            return Failure(ResourceError("micro_model.checkpoint_unreadable", f"cannot read {path}: {e.strerror}"))
        return decode_checkpoint(data)

    def store(self, id: str, instance: MicroModel) -> Result[MicroModel, Error]:
        path = self.path_for(id)
        data = encode_checkpoint(instance)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with tempfile.NamedTemporaryFile(dir=path.parent, prefix=f".{path.name}.", delete=False) as handle:
                handle.write(data)
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(handle.name, path)
        except OSError as e:
            return Failure(ResourceError("micro_model.checkpoint_unwritable", f"cannot write {path}: {e.strerror}"))

        instance.record_event(CheckpointStored(checkpoint_id=str(path), step=instance.step, size_bytes=len(data)))
        self.domain_events_broker.dispatch(instance.pull_events())
        return Success(instance)


class InMemoryCheckpointRepository(CheckpointRepository):
    """
    Keeps encoded checkpoints in a dictionary.
    Useful for testing purposes.
    """

    def __init__(self, directory: str | Path = ".", domain_events_broker: DomainEventBroker = None):
        super().__init__(directory, domain_events_broker)
        self._checkpoints: dict[str, bytes] = {}

    def __contains__(self, id: str) -> bool:
        return id in self._checkpoints

    def get_by_id(self, id: str) -> Result[MicroModel, NotFoundError | Error]:
        if id not in self._checkpoints:
            return Failure(NotFoundError("micro_model.checkpoint_not_found", f"no checkpoint '{id}'"))
        return decode_checkpoint(self._checkpoints[id])

    def store(self, id: str, instance: MicroModel) -> Result[MicroModel, Error]:
        data = encode_checkpoint(instance)
        self._checkpoints[id] = data
        instance.record_event(CheckpointStored(checkpoint_id=id, step=instance.step, size_bytes=len(data)))
        self.domain_events_broker.dispatch(instance.pull_events())
        return Success(instance)

from django.conf import settings
from cli.commands import WorkbenchCommand
from workbench.shared.exceptions import InvalidInputError
from workbench.shared.repository import Repository
from workbench.micro_model.features import InferDemo


class Command(WorkbenchCommand):
    help = "Greedy decoding through the KV cache from a checkpoint, or from a fresh model of the config."

    default_config = "toy"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--checkpoint", help="Checkpoint id or path written by train-demo.")
        parser.add_argument("--prompt", default="1,2,3", help="Comma separated token ids.")
        parser.add_argument("--max-new-tokens", type=int, default=8)

    def handle(self, *args, **options):
        config = self.run_config(options)
        try:
            prompt = [int(token) for token in options["prompt"].split(",") if token.strip()]
        except ValueError:
            self.fail(InvalidInputError("cli.invalid_prompt", f"prompt must be comma separated integers, got '{options['prompt']}'"))

        checkpoint = options["checkpoint"] or config.output.checkpoint
        model_config = None if checkpoint else self.unwrap(config.require_model())
        repository = Repository.resolve(settings.CHECKPOINT_REPOSITORY)(directory=config.output.directory)

        result = self.unwrap(InferDemo(checkpoint_repository=repository).execute(
            prompt, options["max_new_tokens"], checkpoint_id=checkpoint, config=model_config,
        ))

        table = [
            f"prompt    {' '.join(map(str, prompt))}",
            f"generated {' '.join(map(str, result.generated))}",
            f"kv cache  {result.cache_bytes:,} bytes",
        ]
        self.emit(
            options,
            payload=result.to_dict(),
            header=("position", "token", "generated"),
            rows=[(i, token, int(i >= len(prompt))) for i, token in enumerate(result.tokens)],
            table=table,
        )

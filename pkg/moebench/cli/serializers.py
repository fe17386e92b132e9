import math
from collections.abc import Mapping
from rest_framework import serializers


def positive(value: float) -> float:
    if not value > 0 or not math.isfinite(value):
        raise serializers.ValidationError("Must be positive (> 0).")
    return value


def fraction(value: float) -> float:
    if not 0 <= value < 1:
        raise serializers.ValidationError("Must be within [0, 1).")
    return value


class StrictSerializer(serializers.Serializer):
    """
    Rejects keys the schema does not declare. Nested StrictSerializers make
    the check apply at every level.
    """

    def to_internal_value(self, data):
        if isinstance(data, Mapping):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ["Unknown key."] for key in unknown})
        return super().to_internal_value(data)


class ModelSectionSerializer(StrictSerializer):
    layers = serializers.IntegerField(min_value=1)
    heads = serializers.IntegerField(min_value=1)
    kv_groups = serializers.IntegerField(min_value=1)
    head_dim = serializers.IntegerField(min_value=2)
    hidden_size = serializers.IntegerField(min_value=1)
    ffn_hidden_size = serializers.IntegerField(min_value=1)
    vocab_size = serializers.IntegerField(min_value=2)
    share_period = serializers.IntegerField(min_value=1, default=2)
    aux_loss_coef = serializers.FloatField(min_value=0, default=0.01)
    dtype = serializers.ChoiceField(choices=["float64", "float32"], default="float64")

    def validate(self, attrs):
        if attrs["hidden_size"] != attrs["heads"] * attrs["head_dim"]:
            raise serializers.ValidationError({"hidden_size": ["Must equal heads * head_dim."]})
        return attrs


class RoutingSectionSerializer(StrictSerializer):
    num_shared_experts = serializers.IntegerField(min_value=0, default=1)
    num_specialized_experts = serializers.IntegerField(min_value=1, default=16)
    top_k = serializers.IntegerField(min_value=1, default=1)
    capacity_factor = serializers.FloatField(default=1.25, validators=[positive])
    recycle_enabled = serializers.BooleanField(default=True)


class RopeSectionSerializer(StrictSerializer):
    base = serializers.FloatField(default=10000.0)

    def validate_base(self, value):
        if not value > 1:
            raise serializers.ValidationError("Must be greater than 1.")
        return value


class LRSectionSerializer(StrictSerializer):
    eps_max = serializers.FloatField(default=3e-4, validators=[positive])
    batch_size = serializers.FloatField(default=64.0, validators=[positive])
    noise_batch_size = serializers.FloatField(default=1.0, validators=[positive])
    num_experts = serializers.IntegerField(min_value=1, default=16)
    warmup_fraction = serializers.FloatField(default=0.01, validators=[fraction])
    anneal_fraction = serializers.FloatField(default=0.05, validators=[positive])
    anneal_factor = serializers.FloatField(default=0.1, validators=[positive])


class ScalingSectionSerializer(StrictSerializer):
    b_over_bcrit = serializers.FloatField(required=False, allow_null=True, default=None)
    target_n = serializers.FloatField(required=False, allow_null=True, default=None)


class TrainSectionSerializer(StrictSerializer):
    steps = serializers.IntegerField(min_value=1, default=200)
    num_sequences = serializers.IntegerField(min_value=1, default=8)
    sequence_length = serializers.IntegerField(min_value=2, default=9)
    peak_lr = serializers.FloatField(allow_null=True, default=1e-2)
    data_seed = serializers.IntegerField(default=0)


class OutputSectionSerializer(StrictSerializer):
    directory = serializers.CharField(default=".")
    checkpoint = serializers.CharField(required=False, allow_null=True, default=None)


class RunConfigSerializer(StrictSerializer):
    """ Schema of a run config document. Every section but `model` may be omitted. """

    optional_sections = ("routing", "rope", "lr", "scaling", "train", "output")

    seed = serializers.IntegerField(default=0)
    model = ModelSectionSerializer(required=False)
    routing = RoutingSectionSerializer()
    rope = RopeSectionSerializer()
    lr = LRSectionSerializer()
    scaling = ScalingSectionSerializer()
    train = TrainSectionSerializer()
    output = OutputSectionSerializer()

    def to_internal_value(self, data):
        if isinstance(data, Mapping):
            data = {**{section: {} for section in self.optional_sections}, **data}
        return super().to_internal_value(data)


def flatten_errors(errors, prefix: str = "") -> list[tuple[str, str]]:
    """ DRF error tree as (dotted.key, message) pairs. """
    flat = []
    if isinstance(errors, Mapping):
        for key, value in errors.items():
            path = prefix if key == "non_field_errors" else (f"{prefix}.{key}" if prefix else str(key))
            flat += flatten_errors(value, path)
    elif isinstance(errors, list):
        for value in errors:
            flat += flatten_errors(value, prefix)
    else:
        flat.append((prefix, str(errors)))
    return flat

import hashlib
import math
from typing import Annotated, Any, Optional

import numpy as np
import pydantic

from .exceptions import (
    ContractViolation,
    DimensionMismatch,
    MissingLabels,
    NonFiniteFeatures,
    PrivacyDomainError,
)
from .format import pretty_print_budget, pretty_print_model
from .utils import dump_real, parse_real

# Rows of a normalized matrix may exceed the unit norm by this much.
NORM_TOLERANCE = 1e-9


standard_model_config = pydantic.ConfigDict(
    extra="forbid",
    use_enum_values=False,
)

array_model_config = pydantic.ConfigDict(
    extra="forbid",
    use_enum_values=False,
    arbitrary_types_allowed=True,
)


def _as_float_array(v: Any) -> np.ndarray:
    try:
        return np.array(v, dtype=np.float64)
    except (TypeError, ValueError) as err:
        raise DimensionMismatch("cannot read values as a real array: {0}".format(err))


def _as_int_array(v: Any) -> np.ndarray:
    arr = np.array(v)
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise DimensionMismatch("labels must be integers")
    return arr.astype(np.int64)


def _array_to_list(v: np.ndarray) -> list:
    return v.tolist()


FloatArray = Annotated[
    np.ndarray,
    pydantic.BeforeValidator(_as_float_array),
    pydantic.PlainSerializer(_array_to_list, when_used="json"),
]

IntArray = Annotated[
    np.ndarray,
    pydantic.BeforeValidator(_as_int_array),
    pydantic.PlainSerializer(_array_to_list, when_used="json"),
]

# A real that may be infinite; JSON carries infinity as the string "inf".
Real = Annotated[
    float,
    pydantic.BeforeValidator(parse_real),
    pydantic.PlainSerializer(dump_real, when_used="json"),
]


def _values_equal(a, b) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        if a is None or b is None:
            return a is b
        return np.array_equal(np.asarray(a), np.asarray(b))
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(_values_equal(x, y) for x, y in zip(a, b))
    return a == b


class ArrayRecord(pydantic.BaseModel):
    """Pydantic record holding numpy arrays; equality compares arrays elementwise."""

    model_config = array_model_config

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return all(
            _values_equal(getattr(self, k), getattr(other, k))
            for k in type(self).model_fields
        )

    __hash__ = None

    __repr__ = pretty_print_model


class FeatureMatrix(ArrayRecord):
    """n x d matrix of feature vectors (rows), with optional integer mode labels."""

    model_config = pydantic.ConfigDict(**array_model_config, frozen=True)

    data: FloatArray
    labels: Optional[IntArray] = None
    normalized: bool = False

    @pydantic.field_validator("data")
    def data_must_be_finite_matrix(cls, v: np.ndarray) -> np.ndarray:
        if v.ndim != 2:
            raise DimensionMismatch(
                "feature data must be a 2-d matrix, got shape {0}".format(v.shape)
            )
        bad_rows = np.flatnonzero(~np.isfinite(v).all(axis=1))
        if bad_rows.size:
            raise NonFiniteFeatures(int(bad_rows[0]))
        v.flags.writeable = False
        return v

    @pydantic.field_validator("labels")
    def labels_must_be_nonnegative(cls, v: Optional[np.ndarray]) -> Optional[np.ndarray]:
        if v is None:
            return v
        if v.ndim != 1:
            raise DimensionMismatch("labels must be a 1-d vector")
        if v.size and v.min() < 0:
            raise DimensionMismatch("labels must be non-negative")
        v.flags.writeable = False
        return v

    @pydantic.model_validator(mode="after")
    def check_shape_contract(self) -> "FeatureMatrix":
        if self.labels is not None and self.labels.shape[0] != self.data.shape[0]:
            raise DimensionMismatch(
                "got {0} labels for {1} rows".format(self.labels.shape[0], self.data.shape[0])
            )
        if self.normalized:
            norms = self.row_norms()
            if norms.size and norms.max() > 1.0 + NORM_TOLERANCE:
                row = int(np.argmax(norms))
                raise ContractViolation(
                    "row {0} has norm {1!r} but the matrix is flagged normalized".format(
                        row, float(norms[row])
                    )
                )
        return self

    @property
    def n(self) -> int:
        return int(self.data.shape[0])

    @property
    def d(self) -> int:
        return int(self.data.shape[1])

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    def row_norms(self) -> np.ndarray:
        return np.linalg.norm(self.data, axis=1)

    def within_unit_ball(self) -> bool:
        norms = self.row_norms()
        return bool(norms.size == 0 or norms.max() <= 1.0 + NORM_TOLERANCE)

    def take(self, idx) -> "FeatureMatrix":
        """Row subset (with labels), keeping the normalized flag."""
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureMatrix(
            data=self.data[idx],
            labels=None if self.labels is None else self.labels[idx],
            normalized=self.normalized,
        )

    def require_labels(self) -> np.ndarray:
        if self.labels is None:
            raise MissingLabels("feature matrix carries no labels")
        return self.labels

    def fingerprint(self) -> str:
        """SHA-256 of the data (and labels), identifying a public pool."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.data, dtype="<f8").tobytes())
        if self.labels is not None:
            h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()


class PrivacyBudget(pydantic.BaseModel):
    """(epsilon, delta) pair. An infinite epsilon is the non-private flag."""

    model_config = pydantic.ConfigDict(**standard_model_config, frozen=True)

    epsilon: Real
    delta: float = 1e-5

    @pydantic.field_validator("epsilon")
    def epsilon_must_be_positive(cls, v: float) -> float:
        if math.isnan(v) or v <= 0:
            raise PrivacyDomainError("epsilon must be positive or infinite, got {0!r}".format(v))
        return v

    @pydantic.field_validator("delta")
    def delta_must_be_probability(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise PrivacyDomainError("delta must lie in (0, 1), got {0!r}".format(v))
        return v

    @classmethod
    def non_private(cls, delta: float = 1e-5) -> "PrivacyBudget":
        return cls(epsilon=math.inf, delta=delta)

    @property
    def is_private(self) -> bool:
        return not math.isinf(self.epsilon)

    def split(self, parts: int = 2) -> "PrivacyBudget":
        """Even split for basic composition of `parts` mechanisms."""
        return PrivacyBudget(epsilon=self.epsilon / parts, delta=self.delta / parts)

    __repr__ = pretty_print_budget


class SeededRng(pydantic.BaseModel):
    """Counter-based generator keyed by (seed, stream).

    A handle must not be shared between threads; derive independent handles
    with `split`.
    """

    model_config = standard_model_config

    seed: int = pydantic.Field(ge=0, lt=2**64)
    stream: int = pydantic.Field(default=0, ge=0, lt=2**64)

    _generator: Optional[np.random.Generator] = pydantic.PrivateAttr(default=None)

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
            self._generator = np.random.Generator(np.random.Philox(seq))
        return self._generator

    def split(self, *keys: int) -> "SeededRng":
        """Independent child handle; the same keys always give the same child."""
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,) + tuple(keys))
        child = int(seq.generate_state(1, dtype=np.uint64)[0])
        return SeededRng(seed=self.seed, stream=child)


def ensure_rng(rng) -> SeededRng:
    if isinstance(rng, SeededRng):
        return rng
    if isinstance(rng, (int, np.integer)):
        return SeededRng(seed=int(rng))
    raise TypeError("expected a SeededRng or an integer seed, got {0}".format(type(rng)))

"""
Attack hyper-parameters.

Defaults come from Django settings; a key-value file (``KEY=VALUE`` env
style, or ``.ini`` with a ``[settings]`` section) can replace any of them,
and explicit overrides (CLI flags) win over both.
"""

import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

from decouple import Config, Csv, RepositoryEnv, RepositoryIni
from django.conf import settings

logger = logging.getLogger(__name__)

DEFAULT_SIMILARITY = "mean-embedding-cosine/v1"
DEFAULT_GRADIENT_SCALE = 2.0


class AttackConfigError(ValueError):
    pass


def _joined(values: Tuple[float, ...]) -> str:
    return ",".join(repr(v) for v in values)


@dataclass(frozen=True)
class AttackConfig:
    # base values; divided by the sentence length at use
    alpha_schedule: Tuple[float, ...] = (10.0, 8.0, 5.0, 2.0)
    lr_schedule: Tuple[float, ...] = (0.15, 0.3)
    max_iterations: int = 500
    # 0 leaves each schedule point bounded only by max_iterations
    iterations_per_point: int = 0
    similarity_threshold: float = 0.8
    # mean row norm the classifier gradient is rescaled to; alpha is compared against it
    gradient_scale: float = DEFAULT_GRADIENT_SCALE
    seed: int = 0
    similarity_function: str = DEFAULT_SIMILARITY

    def __post_init__(self):
        object.__setattr__(self, "alpha_schedule", tuple(float(a) for a in self.alpha_schedule))
        object.__setattr__(self, "lr_schedule", tuple(float(lr) for lr in self.lr_schedule))
        alphas = self.alpha_schedule
        if not alphas:
            raise AttackConfigError("alpha schedule cannot be empty")
        if any(a <= 0 for a in alphas):
            raise AttackConfigError(f"alpha values must be positive, got {alphas}")
        if any(later >= earlier for earlier, later in zip(alphas, alphas[1:])):
            raise AttackConfigError(f"alpha schedule must be strictly decreasing, got {alphas}")
        if not self.lr_schedule or any(lr <= 0 for lr in self.lr_schedule):
            raise AttackConfigError(f"learning rates must be positive, got {self.lr_schedule}")
        if self.max_iterations < 0 or self.iterations_per_point < 0:
            raise AttackConfigError("iteration budgets cannot be negative")
        if not 0.0 <= self.similarity_threshold <= 1.0:
            raise AttackConfigError(f"similarity threshold must lie in [0, 1], got {self.similarity_threshold}")
        if not self.gradient_scale > 0:
            raise AttackConfigError(f"gradient scale must be positive, got {self.gradient_scale}")

    @classmethod
    def from_settings(cls) -> "AttackConfig":
        return cls(
            alpha_schedule=settings.ATTACK_ALPHA_SET,
            lr_schedule=settings.ATTACK_LR_SET,
            max_iterations=settings.ATTACK_MAX_ITERS,
            iterations_per_point=settings.ATTACK_ITERS_PER_POINT,
            similarity_threshold=settings.ATTACK_SIM_THRESHOLD,
            gradient_scale=settings.ATTACK_GRADIENT_SCALE,
            seed=settings.ATTACK_SEED,
        )

    @classmethod
    def from_file(cls, path: Union[str, Path], base: Optional["AttackConfig"] = None) -> "AttackConfig":
        path = Path(path)
        if not path.is_file():
            raise AttackConfigError(f"attack config file not found: {path}")
        repository = RepositoryIni(str(path)) if path.suffix == ".ini" else RepositoryEnv(str(path))
        source = Config(repository)
        base = base or cls.from_settings()
        try:
            loaded = cls(
                alpha_schedule=source("ATTACK_ALPHA_SET", default=_joined(base.alpha_schedule), cast=Csv(float)),
                lr_schedule=source("ATTACK_LR_SET", default=_joined(base.lr_schedule), cast=Csv(float)),
                max_iterations=source("ATTACK_MAX_ITERS", default=base.max_iterations, cast=int),
                iterations_per_point=source("ATTACK_ITERS_PER_POINT", default=base.iterations_per_point, cast=int),
                similarity_threshold=source("ATTACK_SIM_THRESHOLD", default=base.similarity_threshold, cast=float),
                gradient_scale=source("ATTACK_GRADIENT_SCALE", default=base.gradient_scale, cast=float),
                seed=source("ATTACK_SEED", default=base.seed, cast=int),
                similarity_function=source("ATTACK_SIMILARITY", default=base.similarity_function),
            )
        except ValueError as exc:
            raise AttackConfigError(f"{path}: {exc}") from exc
        logger.debug("Loaded attack config from %s: %s", path, loaded)
        return loaded

    def with_overrides(self, **overrides) -> "AttackConfig":
        return replace(self, **{key: value for key, value in overrides.items() if value is not None})

    def to_dict(self) -> Dict[str, object]:
        data = asdict(self)
        data["alpha_schedule"] = list(self.alpha_schedule)
        data["lr_schedule"] = list(self.lr_schedule)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "AttackConfig":
        return cls(**data)

"""Hyperparameter bundle shared by the model, sampler, trainer and evaluator."""

from dataclasses import dataclass


@dataclass
class HyperParams:
    """Knobs of the translation model and its bilevel training loop.

    ``k`` is the number of initial interactions of a cold-start user; a
    task built for that user carries k-1 support pairs and one query
    pair.  ``task_lr`` is the fast-adaptation step size, ``meta_lr`` the
    outer step size. ``inner_steps=0`` disables fast adaptation entirely
    (the ablated "minus" mode).
    """

    dim: int = 64
    task_lr: float = 0.05
    meta_lr: float = 0.0025
    margin: float = 1.0
    k: int = 3
    inner_steps: int = 1
    meta_batch: int = 32
    negatives_per_pair: int = 1
    eval_negatives: int = 100
    seed: int = 0
    outer_opt: str = "sgd"  # "sgd" | "adam"
    second_order: bool = False  # reserved; only first-order meta-gradients exist

    def validate(self):
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if self.task_lr <= 0:
            raise ValueError(f"task_lr must be > 0, got {self.task_lr}")
        if self.meta_lr <= 0:
            raise ValueError(f"meta_lr must be > 0, got {self.meta_lr}")
        if self.margin <= 0:
            raise ValueError(f"margin must be > 0, got {self.margin}")
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.inner_steps < 0:
            raise ValueError(f"inner_steps must be >= 0, got {self.inner_steps}")
        if self.meta_batch < 1:
            raise ValueError(f"meta_batch must be >= 1, got {self.meta_batch}")
        if self.negatives_per_pair < 1:
            raise ValueError(
                f"negatives_per_pair must be >= 1, got {self.negatives_per_pair}")
        if self.eval_negatives < 1:
            raise ValueError(
                f"eval_negatives must be >= 1, got {self.eval_negatives}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if self.outer_opt not in ("sgd", "adam"):
            raise ValueError(f"outer_opt must be 'sgd' or 'adam', got {self.outer_opt!r}")
        return self

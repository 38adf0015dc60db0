"""Validation-set synthesis and hyperparameter grid search for ODIN and
Mahalanobis.

No real OOD data is touched: the validation OOD pool is synthesized from
noise and from corrupted in-distribution inputs, and grids are searched to
minimize FPR at the target TPR on that pool. Ties break toward smaller
epsilon, then smaller temperature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import MahalanobisModel, mahalanobis_score
from .core import Rng
from .errors import EmptyValidation, InvalidConfig, NonNegativityViolated, TooFewRows
from .harness import LinearModel
from .metrics import fpr_at_tpr
from .scoring import odin

ODIN_TEMPERATURES = (1.0, 10.0, 100.0, 1000.0)
ODIN_EPSILONS = tuple(np.linspace(0.0, 0.004, 21))
# literal published order; the tie-break sorts ascending internally
MAHALANOBIS_EPSILONS = (0.0, 0.0005, 0.0014, 0.001, 0.002, 0.005)

PART_NAMES = ("gaussian_noise", "uniform_noise", "pair_arith_mean",
              "pair_geom_mean", "block_permuted")
N_BLOCKS = 16


@dataclass(frozen=True)
class ValidationSet:
    """Five synthetic OOD pools sharing the in-distribution input width."""

    gaussian_noise: np.ndarray
    uniform_noise: np.ndarray
    pair_arith_mean: np.ndarray
    pair_geom_mean: np.ndarray
    block_permuted: np.ndarray
    seed: int
    n_per_part: int

    def parts(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PART_NAMES}

    def combined(self) -> np.ndarray:
        """Union of the five parts, equal counts per part, fixed order."""
        return np.vstack([getattr(self, name) for name in PART_NAMES])


def _distinct_pairs(gen: np.random.Generator, n_rows: int, n_pairs: int):
    first = gen.integers(0, n_rows, size=n_pairs)
    offset = gen.integers(1, n_rows, size=n_pairs)
    return first, (first + offset) % n_rows


def _permute_blocks(gen: np.random.Generator, rows: np.ndarray) -> np.ndarray:
    d = rows.shape[1]
    size = d // N_BLOCKS
    starts = [b * size for b in range(N_BLOCKS)]
    ends = starts[1:] + [d]  # last block absorbs the remainder
    out = np.empty_like(rows)
    for r in range(rows.shape[0]):
        order = gen.permutation(N_BLOCKS)
        pieces = [rows[r, starts[b]:ends[b]] for b in order]
        out[r] = np.concatenate(pieces)
    return out


def synth_validation(in_inputs: np.ndarray, n_per_part: int, rng: Rng) -> ValidationSet:
    """Build the five-part validation pool from in-distribution inputs.

    Parts: i.i.d. N(0,1) noise; i.i.d. U[-1,1] noise; coordinate-wise
    arithmetic and geometric means of uniformly sampled distinct row pairs;
    and rows with their 16 contiguous coordinate blocks shuffled (the last
    block absorbs any remainder).
    """
    inputs = np.asarray(in_inputs, dtype=np.float64)
    if inputs.ndim != 2:
        raise InvalidConfig("in_inputs must be 2-D")
    n, d = inputs.shape
    if n < 2:
        raise TooFewRows("pair corruption needs at least 2 rows")
    if d < N_BLOCKS:
        raise InvalidConfig(f"block permutation needs d >= {N_BLOCKS}, got {d}")
    if n_per_part < 1:
        raise InvalidConfig("n_per_part must be >= 1")
    if np.any(inputs < 0):
        raise NonNegativityViolated(
            "geometric-mean corruption requires nonnegative inputs"
        )

    gauss = rng.split("gaussian").generator().standard_normal((n_per_part, d))
    uniform = rng.split("uniform").generator().uniform(-1.0, 1.0, (n_per_part, d))

    gen_a = rng.split("arith").generator()
    i, j = _distinct_pairs(gen_a, n, n_per_part)
    arith = 0.5 * (inputs[i] + inputs[j])

    gen_g = rng.split("geom").generator()
    i, j = _distinct_pairs(gen_g, n, n_per_part)
    geom = np.sqrt(inputs[i] * inputs[j])

    gen_p = rng.split("permute").generator()
    picked = inputs[gen_p.integers(0, n, size=n_per_part)]
    permuted = _permute_blocks(gen_p, picked)

    return ValidationSet(
        gaussian_noise=gauss,
        uniform_noise=uniform,
        pair_arith_mean=arith,
        pair_geom_mean=geom,
        block_permuted=permuted,
        seed=rng.seed,
        n_per_part=n_per_part,
    )


@dataclass(frozen=True)
class TuneResult:
    """Grid-search outcome: winning parameters, their validation FPR, and
    the full trace for audit."""

    best_params: dict
    objective: float
    grid_trace: tuple

    def to_dict(self) -> dict:
        return {
            "best_params": dict(self.best_params),
            "objective": self.objective,
            "grid_trace": [
                {"params": dict(params), "fpr": fpr} for params, fpr in self.grid_trace
            ],
        }


def _check_validation(val: ValidationSet, in_val_inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(in_val_inputs, dtype=np.float64)
    if inputs.size == 0 or any(part.size == 0 for part in val.parts().values()):
        raise EmptyValidation("validation inputs and all parts must be non-empty")
    return inputs


def tune_odin(model: LinearModel, val: ValidationSet, in_val_inputs: np.ndarray,
              tpr_target: float = 0.95) -> TuneResult:
    """Search temperature x epsilon (4 x 21 points) minimizing validation
    FPR at the target TPR."""
    inputs = _check_validation(val, in_val_inputs)
    ood_inputs = val.combined()
    trace = []
    for temperature in ODIN_TEMPERATURES:
        for epsilon in ODIN_EPSILONS:
            in_scores = odin(model, inputs, temperature, epsilon)
            ood_scores = odin(model, ood_inputs, temperature, epsilon)
            fpr = fpr_at_tpr(in_scores, ood_scores, tpr_target)
            trace.append(({"temperature": temperature, "epsilon": float(epsilon)}, fpr))
    best = min(trace, key=lambda item: (item[1], item[0]["epsilon"], item[0]["temperature"]))
    return TuneResult(best_params=best[0], objective=best[1], grid_trace=tuple(trace))


def tune_mahalanobis(fitted: MahalanobisModel, model: LinearModel,
                     val: ValidationSet, in_val_inputs: np.ndarray,
                     agg: str = "max", tpr_target: float = 0.95) -> TuneResult:
    """Search the six-point epsilon grid minimizing validation FPR at the
    target TPR. The trace keeps the published grid order; the tie-break is
    by ascending epsilon."""
    inputs = _check_validation(val, in_val_inputs)
    ood_inputs = val.combined()
    trace = []
    for epsilon in MAHALANOBIS_EPSILONS:
        in_scores = mahalanobis_score(fitted, inputs, agg=agg, epsilon=epsilon,
                                      input_model=model)
        ood_scores = mahalanobis_score(fitted, ood_inputs, agg=agg, epsilon=epsilon,
                                       input_model=model)
        fpr = fpr_at_tpr(in_scores, ood_scores, tpr_target)
        trace.append(({"epsilon": epsilon, "agg": agg}, fpr))
    best = min(trace, key=lambda item: (item[1], item[0]["epsilon"]))
    return TuneResult(best_params=best[0], objective=best[1], grid_trace=tuple(trace))

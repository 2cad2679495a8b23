"""Cross-validated selection of the SVM regularization and kernel width."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .._rng import substream
from ..metrics import DEFAULT_FRR_MAX, error_rates_at, threshold_for_frr
from ..types import ScoreDataset, ValidationError, validate_dataset
from .svm import DEFAULT_TOL, rbf_kernel, train_svm_rbf

C_GRID = (0.001, 0.01, 0.1, 1.0, 10.0, 100.0)
GAMMA_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
OBJECTIVES = ("far_at_frr2", "gfar_at_frr2")


def client_folds(dataset: ScoreDataset, folds: int, seed: int) -> list[np.ndarray]:
    """Assign whole clients to folds; returns one boolean validation mask per fold."""
    if folds < 2:
        raise ValidationError("need at least 2 folds")
    clients = np.array(sorted(set(dataset.client_ids.tolist())), dtype=object)
    if clients.size < folds:
        raise ValidationError(f"{clients.size} clients cannot fill {folds} folds")
    order = substream(seed, "folds").permutation(clients.size)
    fold_of = {clients[j]: pos % folds for pos, j in enumerate(order)}
    fid = np.array([fold_of[c] for c in dataset.client_ids])
    masks = [fid == f for f in range(folds)]
    for f, m in enumerate(masks):
        for part, name in ((m, "validation"), (~m, "training")):
            g = dataset.genuine[part]
            if not g.any() or g.all():
                raise ValidationError(f"fold {f}: {name} part is missing a class")
    return masks


def fold_objective(train: ScoreDataset, val: ScoreDataset, C: float, gamma: float,
                   frr_max: float, tol: float, kernel: np.ndarray | None = None) -> float:
    model = train_svm_rbf(train, C, gamma, tol, kernel=kernel)
    fused = model.decision(val.scores)
    t = threshold_for_frr(fused[val.genuine], frr_max)
    return error_rates_at(fused[val.genuine], fused[~val.genuine], t)[1]


def select_hyperparams(dataset: ScoreDataset, C_grid: Sequence[float] = C_GRID,
                       gamma_grid: Sequence[float] = GAMMA_GRID, folds: int = 5,
                       objective: str = "far_at_frr2",
                       resampler: Callable[[ScoreDataset], ScoreDataset] | None = None,
                       seed: int = 0, frr_max: float = DEFAULT_FRR_MAX, tol: float = DEFAULT_TOL,
                       return_table: bool = False):
    """Grid pair with the lowest mean validation acceptance rate at ``frr_max``.

    With ``objective="gfar_at_frr2"`` the data are first passed through
    ``resampler`` (the impostor-mixture resampling), so the validation
    acceptance rate estimates the GFAR of that mixture. Ties go to the
    smaller ``C``, then the smaller ``gamma``.
    """
    if objective not in OBJECTIVES:
        raise ValidationError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")
    if not C_grid or not gamma_grid:
        raise ValidationError("hyperparameter grids must be non-empty")
    validate_dataset(dataset)
    if objective == "gfar_at_frr2":
        if resampler is None:
            raise ValidationError("gfar objective needs an impostor resampler")
        dataset = resampler(dataset)
    masks = client_folds(dataset, folds, seed)
    table: dict[tuple[float, float], float] = {}
    sums = {(C, g): 0.0 for C in C_grid for g in gamma_grid}
    for m in masks:
        train, val = dataset.subset(~m), dataset.subset(m)
        for g in gamma_grid:
            K = rbf_kernel(train.scores, train.scores, g)
            for C in C_grid:
                sums[(C, g)] += fold_objective(train, val, C, g, frr_max, tol, kernel=K)
    for key, s in sums.items():
        table[key] = s / folds
    best = min(sorted(table), key=lambda key: table[key])
    if return_table:
        return best, table
    return best

"""Max-margin multi-negative losses over unit-norm embeddings.

For one tuple with anchor a, positive p, and negatives n_1..n_N, the
concept loss is

    sum_i max(0, margin - cos(a, p) + cos(a, n_i))

(``reduce="mean"`` averages over negatives instead). The joint objective
is the weighted sum of the per-concept batch means, one shared encoder
feeding all of them. Margins live on the cosine scale, so each must be
in [0, 2].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import torch

from .sampler import Concept

_UNIT_TOL = 1e-3


@dataclass(frozen=True)
class MarginConfig:
    margin_artist: float = 0.4
    margin_album: float = 0.25
    margin_track: float = 0.1

    def __post_init__(self) -> None:
        for name in ("margin_artist", "margin_album", "margin_track"):
            value = getattr(self, name)
            if not 0.0 <= value <= 2.0:
                raise ValueError(f"{name} must be in [0, 2], got {value}")

    def margin_for(self, concept: Concept | str) -> float:
        return getattr(self, f"margin_{Concept(concept).value}")


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x)


def _check_unit(t: torch.Tensor, name: str) -> None:
    norms = torch.linalg.vector_norm(t.detach(), dim=-1)
    worst = (norms - 1.0).abs().max().item()
    if worst > _UNIT_TOL:
        raise ValueError(f"{name} embeddings must be unit-norm (max |norm-1| = {worst:.2e})")


def similarity(a, b) -> torch.Tensor:
    """Cosine similarity of unit-norm embeddings (their dot product)."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_unit(a, "first")
    _check_unit(b, "second")
    return (a * b).sum(dim=-1)


def margin_loss(anchor, positive, negatives, margin: float, reduce: str = "sum") -> torch.Tensor:
    """Hinge penalty for one tuple; ``negatives`` is a sequence or an (N, d) tensor."""
    anchor, positive = _as_tensor(anchor), _as_tensor(positive)
    if isinstance(negatives, (list, tuple)):
        if len(negatives) == 0:
            raise ValueError("margin_loss needs at least one negative")
        negatives = torch.stack([_as_tensor(n) for n in negatives])
    else:
        negatives = _as_tensor(negatives)
    if negatives.ndim != 2 or negatives.shape[0] < 1:
        raise ValueError(f"negatives must be a non-empty (N, d) stack, got shape {tuple(negatives.shape)}")
    return batch_margin_loss(
        anchor.unsqueeze(0), positive.unsqueeze(0), negatives.unsqueeze(0), margin, reduce
    ).squeeze(0)


def batch_margin_loss(
    anchors: torch.Tensor,
    positives: torch.Tensor,
    negatives: torch.Tensor,
    margin: float,
    reduce: str = "sum",
) -> torch.Tensor:
    """Per-tuple losses for stacked tuples: (B, d), (B, d), (B, N, d) -> (B,)."""
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    if reduce not in ("sum", "mean"):
        raise ValueError(f"reduce must be 'sum' or 'mean', got {reduce!r}")
    for t, name in ((anchors, "anchor"), (positives, "positive"), (negatives, "negative")):
        _check_unit(t, name)
    pos_sim = (anchors * positives).sum(dim=-1)  # (B,)
    neg_sim = torch.einsum("bd,bnd->bn", anchors, negatives)  # (B, N)
    hinge = torch.clamp(margin - pos_sim.unsqueeze(1) + neg_sim, min=0.0)
    return hinge.sum(dim=1) if reduce == "sum" else hinge.mean(dim=1)


def joint_loss(
    batches: Mapping[Concept | str, tuple[torch.Tensor, torch.Tensor, torch.Tensor]],
    margins: MarginConfig = MarginConfig(),
    weights: Mapping[Concept | str, float] | None = None,
    reduce: str = "sum",
) -> torch.Tensor:
    """Weighted sum of per-concept batch means.

    ``batches`` maps a concept to its (anchors, positives, negatives)
    embedding stack. Missing concepts simply contribute no term, so a
    single-concept model is the one-entry case.
    """
    if not batches:
        raise ValueError("joint_loss needs at least one concept batch")
    weight_by_name = (
        {} if weights is None else {Concept(k).value: float(v) for k, v in weights.items()}
    )
    total: torch.Tensor | None = None
    for concept, (anchors, positives, negatives) in batches.items():
        concept = Concept(concept)
        weight = weight_by_name.get(concept.value, 1.0)
        per_tuple = batch_margin_loss(
            _as_tensor(anchors), _as_tensor(positives), _as_tensor(negatives),
            margins.margin_for(concept), reduce,
        )
        term = weight * per_tuple.mean()
        total = term if total is None else total + term
    assert total is not None
    return total

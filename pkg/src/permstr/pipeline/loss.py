"""Permutation language modelling loss."""

from __future__ import annotations

import numpy as np

from .. import model as M
from .. import numerics as nx
from ..permute import INTERIOR, apply_context_restrictions, mask_from_permutation, pad_mask, permutation_roles


def batch_masks(perms, roles, context_ids: np.ndarray, cfg) -> list[np.ndarray]:
    """One context-restricted ``(B, T+1, T+1)`` mask per permutation.

    Permutations span the longest label in the batch and are embedded in the
    model's full ``T+1`` grid.
    """
    size = cfg.max_len + 1
    out = []
    for z, role in zip(perms, roles):
        m = pad_mask(mask_from_permutation(z, role), size)
        out.append(apply_context_restrictions(np.broadcast_to(m, (len(context_ids), size, size)), context_ids, cfg.eos_id, cfg.pad_id))
    return out


def plm_loss(
    z: nx.Tensor,
    context_ids: np.ndarray,
    target_ids: np.ndarray,
    perms,
    params: M.ModelParams,
    cfg: M.ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
    roles=None,
) -> nx.Tensor:
    """Mean over permutations of the padding-masked cross-entropy.

    [E] targets are trained only under the left-to-right permutation and its
    reversal; for the other (interior) permutations they are treated as padding.
    """
    context_ids = np.asarray(context_ids)
    target_ids = np.asarray(target_ids)
    if context_ids.shape != target_ids.shape or context_ids.shape[1] != cfg.max_len + 1:
        raise nx.DimensionError(f"context {context_ids.shape} and target {target_ids.shape} batches disagree")
    roles = permutation_roles(len(perms)) if roles is None else roles
    interior_targets = np.where(target_ids == cfg.eos_id, cfg.pad_id, target_ids)
    total = None
    for mask, role in zip(batch_masks(perms, roles, context_ids, cfg), roles):
        logits = M.decoder_forward(z, context_ids, mask, params, cfg, train=train, rng=rng)
        tgt = interior_targets if role == INTERIOR else target_ids
        ce = nx.masked_cross_entropy(nx.reshape(logits, (-1, cfg.num_classes)), tgt.reshape(-1), cfg.pad_id)
        total = ce if total is None else nx.add(total, ce)
    return total if len(perms) == 1 else nx.scale(total, 1.0 / len(perms))

"""Shared plumbing for the protocol implementations."""

from __future__ import annotations

import numpy as np

from .._bits import pack_bool_rows, unpack_word_rows
from .. import kernel
from ..graphs import Graph, ParameterError
from ..selectors import SelectorFamily


def family_membership(graph: Graph, fam: SelectorFamily) -> np.ndarray:
    """(L, n) bool: block i activates node index j.

    Selector sets live over the ID space [1, n^c]; IDs not present in the
    graph simply never beep.
    """
    idx = graph.index_of
    member = np.zeros((len(fam.sets), graph.n), dtype=bool)
    for i, f in enumerate(fam.sets):
        for e in f:
            j = idx.get(e)
            if j is not None:
                member[i, j] = True
    return member


def noise_matrix(graph: Graph, beeps: np.ndarray) -> np.ndarray:
    """(n, R) bool of per-round neighbor-OR for a full action matrix."""
    if beeps.shape[1] == 0:
        return np.zeros_like(beeps)
    indptr, indices = graph.csr
    packed = pack_bool_rows(beeps)
    noise = kernel.or_neighbor_patterns(indptr, indices, packed)
    return unpack_word_rows(noise, beeps.shape[1])


def resolve_degree_bound(graph: Graph, delta_hat: int | None, default: int) -> int:
    if delta_hat is None:
        delta_hat = default
    if delta_hat < graph.delta:
        raise ParameterError(
            f"degree bound {delta_hat} below the true maximum degree {graph.delta}"
        )
    return delta_hat

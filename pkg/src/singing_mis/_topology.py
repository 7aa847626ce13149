"""Compiled adjacency for vectorized engines.

A run over ``C`` independent copies of one network keeps per-agent data in
``(C, n)`` arrays whose columns follow the sorted agent ids. Neighbourhood
reductions gather along the CSR ``indices`` and reduce per row segment.
"""

import numpy as np


class Topology:
    def __init__(self, net):
        self.ids = np.array(net.sorted_agents(), dtype=np.int64)
        self.n = self.ids.size
        self.pos = {int(a): i for i, a in enumerate(self.ids)}
        rows, cols = [], []
        for i, a in enumerate(self.ids.tolist()):
            nbrs = sorted(self.pos[b] for b in net.neighbors(a))
            rows.extend([i] * len(nbrs))
            cols.extend(nbrs)
        self.indices = np.array(cols, dtype=np.int64)
        self.deg = np.bincount(np.array(rows, dtype=np.int64), minlength=self.n)
        self.indptr = np.concatenate([[0], np.cumsum(self.deg)])
        self.rows = np.array(rows, dtype=np.int64)
        upper = self.rows < self.indices
        self.eu = self.rows[upper]
        self.ev = self.indices[upper]
        self._has = self.deg > 0
        self._starts = self.indptr[:-1][self._has]

    @property
    def num_edges(self):
        return self.eu.size

    def segmax(self, values):
        """Row-segment maximum of ``(C, nnz)`` values; 0 for isolated agents."""
        out = np.zeros(values.shape[:-1] + (self.n,), dtype=values.dtype)
        if self.indices.size:
            out[..., self._has] = np.maximum.reduceat(values, self._starts, axis=-1)
        return out

    def any_neighbor(self, mask):
        """``(C, n)`` bool: does some neighbour satisfy ``mask``."""
        return self.segmax(mask[..., self.indices].view(np.uint8)).astype(bool)

    def neighbor_max(self, values, mask):
        """Largest ``values`` over neighbours where ``mask`` holds (0 if none)."""
        return self.segmax(np.where(mask[..., self.indices], values[..., self.indices], 0))

"""Numpy reference implementation of the hot kernels.

Edge arrays use a CSR layout grouped by destination node: edge e with
indptr[i] <= e < indptr[i+1] carries a message from node src[e] into node i.

The gated layer exploits that scalar gating commutes with the linear map,
W(g*x) + b == g*(Wx) + b, so the projection is one matmul over nodes instead
of one per message.
"""

import numpy as np

ACT_NONE = 0
ACT_TANH = 1


def _segment_sums(values: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    """Sum consecutive row segments; empty segments sum to zero."""
    n = indptr.size - 1
    out_shape = (n,) + values.shape[1:]
    out = np.zeros(out_shape, dtype=np.float64)
    counts = np.diff(indptr)
    nz = counts > 0
    if values.shape[0] and nz.any():
        # reduceat over the non-empty starts: consecutive non-empty segments
        # are contiguous in `values`, so each reduceat slice is exactly one segment.
        out[nz] = np.add.reduceat(values, indptr[:-1][nz], axis=0)
    return out


def sparse_matvec(indptr, term_ids, weights, qdense):
    """Dot product of a dense query vector against every CSR row."""
    vals = weights * qdense[term_ids]
    return _segment_sums(vals, indptr)


def gated_mean_layer(indptr, src, gate_self, gate_edge, x, proj, bias, act):
    """One round of gated message passing with mean aggregation.

    Each node receives act(gate * proj(state) + bias) from itself
    (gate = gate_self) and from every in-edge (gate = gate_edge), averaged
    over the 1 + in_degree messages.
    """
    p = x @ proj.T
    self_msgs = gate_self[:, None] * p + bias
    edge_msgs = gate_edge[:, None] * p[src] + bias
    if act == ACT_TANH:
        self_msgs = np.tanh(self_msgs)
        edge_msgs = np.tanh(edge_msgs)
    sums = self_msgs + _segment_sums(edge_msgs, indptr)
    denom = 1.0 + np.diff(indptr)
    return sums / denom[:, None]

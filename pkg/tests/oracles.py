"""Independent reference implementations used to check the package.

Everything here is deliberately written the slow, literal way (dict/loop
based, one message at a time) and shares no code with the package paths it
verifies.
"""

import math
from collections import Counter

import numpy as np

from citeqa.corpus import make_chunk_id


# ---------------------------------------------------------------------------
# textbook BM25


def reference_bm25(query_tokens, chunk_token_lists, k1=1.2, b=0.75):
    """Okapi BM25 of the query against every chunk, term by term."""
    n_chunks = len(chunk_token_lists)
    avgdl = sum(len(toks) for toks in chunk_token_lists) / n_chunks
    df = Counter()
    for toks in chunk_token_lists:
        for term in set(toks):
            df[term] += 1
    scores = []
    for toks in chunk_token_lists:
        tf = Counter(toks)
        dl = len(toks)
        score = 0.0
        for term in set(query_tokens):
            if term not in df:
                continue
            idf = math.log(1.0 + (n_chunks - df[term] + 0.5) / (df[term] + 0.5))
            freq = tf.get(term, 0)
            denom = freq + k1 * (1.0 - b + b * dl / avgdl)
            score += idf * freq * (k1 + 1.0) / denom
        scores.append(score)
    return scores


# ---------------------------------------------------------------------------
# graph construction by direct enumeration of the linking rules


def brute_force_edges(corpus, chunks, pair_relevance, top_n):
    """Edge set built by enumerating all chunk pairs and applying the rules.

    pair_relevance(chunk_id_a, chunk_id_b) supplies the inter-document
    relevance. Returns a set of (src, dst, kind) plus a dict of weights.
    """
    by_doc = {}
    for chunk in chunks:
        by_doc.setdefault(chunk.doc_id, []).append(chunk)
    for doc_chunks in by_doc.values():
        doc_chunks.sort(key=lambda c: c.ordinal)

    triples = set()
    weights = {}

    for doc_id, doc_chunks in by_doc.items():
        for a in doc_chunks:
            for c in doc_chunks:
                if c.ordinal == a.ordinal + 1:
                    key = (a.chunk_id, c.chunk_id, "intra-adjacency")
                    triples.add(key)
                    weights[key] = 1.0

    docs = {d.doc_id: d for d in corpus.documents}
    for doc_id, doc_chunks in by_doc.items():
        doc = docs.get(doc_id)
        if doc is None:
            continue
        for referring_ord, referenced_ord in doc.crossrefs:
            key = (
                make_chunk_id(doc_id, referenced_ord),
                make_chunk_id(doc_id, referring_ord),
                "intra-crossref",
            )
            triples.add(key)
            weights[key] = 1.0
        for cited_id in set(doc.references):
            if cited_id == doc_id or cited_id not in by_doc:
                continue
            for citing_chunk in by_doc[doc_id]:
                ranked = sorted(
                    by_doc[cited_id],
                    key=lambda c: (-pair_relevance(citing_chunk.chunk_id, c.chunk_id), c.chunk_id),
                )
                for cited_chunk in ranked[:top_n]:
                    key = (cited_chunk.chunk_id, citing_chunk.chunk_id, "inter-doc")
                    triples.add(key)
                    weights[key] = pair_relevance(citing_chunk.chunk_id, cited_chunk.chunk_id)
    return triples, weights


# ---------------------------------------------------------------------------
# literal evaluation of the gated message-passing recurrence


def _act(vec, activation):
    return [math.tanh(v) for v in vec] if activation == "tanh" else list(vec)


def _affine(w, b, vec):
    return [sum(w[r][c] * vec[c] for c in range(len(vec))) + b[r] for r in range(len(w))]


def propagate_literal(params, n_nodes, edge_pairs, qgate, egate, h0):
    """Evaluate the recurrence one message at a time.

    edge_pairs[e] = (src, dst) node positions; egate[e] is the learned gate
    of that edge. Every quantity is handled as plain Python lists.
    """
    in_edges = {i: [] for i in range(n_nodes)}
    for e, (src, dst) in enumerate(edge_pairs):
        in_edges[dst].append((e, src))

    state = [list(map(float, row)) for row in np.asarray(h0)]
    for k in range(params.n_layers):
        layer = {name: np.asarray(arr).tolist() for name, arr in params.layer(k).items()}
        new_state = []
        for i in range(n_nodes):
            # messages from {i} ∪ in-neighbors, self gate = qgate (edge gate 1)
            gated = [[qgate[i] * v for v in state[i]]]
            for e, src in in_edges[i]:
                gated.append([qgate[src] * egate[e] * v for v in state[src]])
            if params.variant == "mean-linear":
                msgs = [_act(_affine(layer["W"], layer["b"], g), params.activation) for g in gated]
                width = len(msgs[0])
                new_state.append([sum(m[c] for m in msgs) / len(msgs) for c in range(width)])
            else:
                msgs = [_act(_affine(layer["Wm"], layer["bm"], g), params.activation) for g in gated]
                attender = _affine(layer["Wq"], layer["bq"], state[i])
                keys = [_affine(layer["Wk"], layer["bk"], m) for m in msgs]
                values = [_affine(layer["Wv"], layer["bv"], m) for m in msgs]
                width = len(msgs[0])
                heads = params.heads
                dh = width // heads
                mixed = [0.0] * width
                for a in range(heads):
                    lo = a * dh
                    logits = [
                        sum(attender[lo + c] * key[lo + c] for c in range(dh)) / math.sqrt(dh)
                        for key in keys
                    ]
                    peak = max(logits)
                    exps = [math.exp(v - peak) for v in logits]
                    total = sum(exps)
                    for j, value in enumerate(values):
                        wgt = exps[j] / total
                        for c in range(dh):
                            mixed[lo + c] += wgt * value[lo + c]
                new_state.append(_affine(layer["Wo"], layer["bo"], mixed))
        state = new_state
    return np.array(state)


# ---------------------------------------------------------------------------
# central finite differences


def finite_difference_grads(params, loss_fn, step=1e-5):
    """Central-difference gradient of loss_fn w.r.t. every parameter entry."""
    grads = {}
    for name, arr in params.arrays.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            hi = loss_fn(params)
            flat[i] = original - step
            lo = loss_fn(params)
            flat[i] = original
            gflat[i] = (hi - lo) / (2.0 * step)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for name in analytic:
        a = analytic[name].reshape(-1)
        f = numeric[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst

"""citeqa: question answering over citation corpora.

Documents are split into fixed-length chunks that form a typed, directed
context graph (in-document adjacency and cross-references, citation-induced
links across documents). Retrieval runs query-gated message passing over
that graph to rank chunks with fused lexical and semantic signals, and the
generation stage summarizes each retrieved chunk's context subgraph before
answering.
"""

__version__ = "0.1.0"

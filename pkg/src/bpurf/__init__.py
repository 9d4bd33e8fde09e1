"""Elastic urban-region embeddings from boundary prompts.

Pipeline: ingest entity/relation data into a heterogeneous spatial token
graph with an R-tree index, extract region token sets for arbitrary polygon
prompts, embed them with a multi-channel subgraph model trained
contrastively, and evaluate the embeddings on downstream regression tasks.
"""

__version__ = "0.1.0"

"""Course-forum QA pipeline.

Turns a Piazza-style forum export into cleaned QA datasets, builds hybrid
(BM25 + dense) retrieval over course documents, assembles chat prompts,
talks to pluggable chat/embedding providers, and scores answers with a
rubric-based evaluation harness.
"""

__version__ = "0.1.0"

"""HTTP probability server for code-classification models.

Serves the provider wire protocol consumed by the vulnerability-prompting
pipeline: POST /predict, POST /predict_batch, GET /health, GET /info.
"""

__version__ = "0.1.0"

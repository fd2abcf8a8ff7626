"""Self-supervised encoder pretraining and encoder-stealing attacks at desk scale."""
__version__ = "0.1.0"

"""Active symptom-inquiry and disease-diagnosis engine.

The package couples two models: a Product-of-Experts VAE that scores
candidate questions by expected information gain in latent space, and a
knowledge-guided self-attention classifier that turns (partially observed,
imputed) symptom vectors into a disease distribution.  Sessions alternate
inquiry and diagnosis until a statistical confidence rule or the question
budget stops them.
"""

__version__ = "0.1.0"

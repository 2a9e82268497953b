"""Evolutionary tournament optimization of LLM debate-strategy prompts.

The package evolves short natural-language debate strategies under one of two
fitness objectives: a competitive *persuasion* objective (win debates,
regardless of which side you argue) and a collaborative *truth* objective
(help a blind judge find the correct answer).  Fitness is measured with Elo
ratings fitted to tournament outcomes, and everything runs against either a
real chat-completion endpoint or a deterministic synthetic backend.
"""

__version__ = "0.1.0"

"""Desk-scale LLM-style speech-to-text translation: frontend, encoder, adaptor, decoder LM, dual LoRA."""

__version__ = "0.1.0"

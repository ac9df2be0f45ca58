"""Conversation-context walks and token-level graph attention over discussion trees."""

__version__ = "0.1.0"

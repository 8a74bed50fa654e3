"""Encrypted policy synthesis toolkit."""

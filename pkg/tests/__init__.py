"""Tests for factorlab."""

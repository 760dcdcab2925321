"""Tests for mdrbm-bench."""

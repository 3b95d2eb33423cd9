"""Tests for twoway-subsample."""

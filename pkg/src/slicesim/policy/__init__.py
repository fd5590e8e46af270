"""Admission policies and the policy-gradient trainer."""

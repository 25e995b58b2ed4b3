"""
Setup utilities for the liftwidth sample corpus
"""

"""
Services package for the built-in tasks and client-side training
"""

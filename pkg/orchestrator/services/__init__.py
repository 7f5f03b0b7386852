"""
Services package for the federation lifecycle and run drivers
"""

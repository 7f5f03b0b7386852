"""
Services package for update-level privacy
"""

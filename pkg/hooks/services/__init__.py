"""
Services package for the lifecycle hook system
"""

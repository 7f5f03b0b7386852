"""
Services package for parameter arithmetic, seeding and configuration
"""

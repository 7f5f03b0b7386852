"""
Services package for aggregation, client selection and speed estimation
"""

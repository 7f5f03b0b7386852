"""
Services package for synthetic datasets and non-IID partitioning
"""

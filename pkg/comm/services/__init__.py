"""
Services package for the wire protocol and transports
"""

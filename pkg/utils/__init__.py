"""Utilities package: configuration, logging, statistics store and charts"""

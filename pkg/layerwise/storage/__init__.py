"""Checkpoints, report files and run configuration"""

"""Pydantic schemas shared by services, storage and the CLI"""

#!/usr/bin/env python

"""Builds the povtrap poverty trap calculator
"""
import setuptools

setuptools.setup()

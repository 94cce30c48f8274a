"""Tests of the `oispace` package"""

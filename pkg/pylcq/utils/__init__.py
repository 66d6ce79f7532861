"""
Prebuilt scripts for performing specific predetermined checks.
"""

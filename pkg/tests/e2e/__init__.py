"""
End-to-end tests for the miscible command line.

This package runs ``python -m miscible`` in a subprocess against the shipped
scenarios and checks exit codes and the files each command writes.
"""

# E2E test package

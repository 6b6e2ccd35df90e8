# cython: language_level=3, boundscheck=False, wraparound=False
# Compiled twin of _exec.py: the same source, built as an extension module.
include "_exec.py"

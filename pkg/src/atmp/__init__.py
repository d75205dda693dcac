"""Asynchronous timed multiparty sessions: types, projection, semantics and a process calculus."""

__version__ = "0.1.0"

"""Hierarchical multi-agent payments orchestration.

A four-level agent hierarchy (conversational entry agent, domain
supervisors, routers, and payment workflows with process-summary agents)
with role-scoped state, an explicit handoff edge set, interrupt-driven
human-in-the-loop input, append-only persistence, a chat-style HTTP
service, and an evaluation harness with scripted/remote/chaos decision
backends.
"""

__version__ = "0.1.0"

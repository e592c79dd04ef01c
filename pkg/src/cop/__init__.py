"""Detection and recovery of controller failures in law-governed interaction.

Controllers enforce a law on the messages of their actors. Trusted CPnodes
log every event and operation to a per-law ledger; an inspector replays the
ledger, recomputes each ruling, and repairs and rebuilds any controller that
deviated.
"""

from cop.law import Event, EventKind, Law, LawRegistry, Operation, OpKind, Ruling

__version__ = "0.1.0"

__all__ = ["Event", "EventKind", "Law", "LawRegistry", "Operation", "OpKind", "Ruling", "__version__"]

"""Exception taxonomy for the PGAS runtime.

Every runtime-raised error derives from PgasError so callers can catch the
whole family. One-sided RMA failures are never raised asynchronously: they
are stored on the operation's handle and surface from wait_rma/wait_all_rma.
"""


class PgasError(Exception):
    """Base class for all runtime errors."""


# -- configuration / lifecycle ------------------------------------------------

class ConfigInvalid(PgasError):
    """Runtime configuration is missing or malformed."""


class BootstrapTimeout(PgasError):
    """A rank failed to reach its peers within the bootstrap deadline."""


class RankCountMismatch(PgasError):
    """Ranks disagree about the job size during bootstrap."""


class TransportClosed(PgasError):
    """Operation attempted on a closed transport, or a peer went away."""


class OutstandingOperations(PgasError):
    """Finalize called with pending RMA handles or held locks (strict mode)."""


class SpawnFailure(PgasError):
    """The launcher could not start a rank process."""


class NonzeroExit(PgasError):
    """One or more rank processes exited with a nonzero status."""

    def __init__(self, exit_codes):
        self.exit_codes = list(exit_codes)
        super().__init__(f"rank exit codes: {self.exit_codes}")


# -- active-message layer -----------------------------------------------------

class DuplicateHandler(PgasError):
    """Handler id already registered."""


class ReservedHandler(PgasError):
    """Handler id is in the runtime-reserved range (0-15)."""


class RegisteredAfterWireup(PgasError):
    """Handler registration attempted after wireup completed."""


class PayloadTooLarge(PgasError):
    """Active-message payload exceeds the configured maximum."""


class UnknownToken(PgasError):
    """Reply attempted with a token that is not live on this rank."""


class BadFrame(PgasError):
    """Incoming byte stream does not parse as a framed envelope."""


# -- memory -------------------------------------------------------------------

class OutOfMemory(PgasError):
    """Segment backing allocation failed."""


class AlreadyAttached(PgasError):
    """A segment was already attached on this rank."""


class SegmentExhausted(PgasError):
    """Allocation would cross the opposing watermark."""


class AllocationMismatch(PgasError):
    """Ranks disagreed on the size of a collective allocation."""


class InvalidAllocation(PgasError):
    """Zero-sized or overflowing allocation request."""


class NotAligned(PgasError):
    """Address translation requires an aligned-segment address."""


class InvalidRank(PgasError):
    """Rank id outside [0, nranks)."""


class OutOfBounds(PgasError):
    """Byte range falls outside the segment or outside any allocation."""


# -- collectives --------------------------------------------------------------

class AgreementMismatch(PgasError):
    """Ranks passed conflicting arguments to a collective."""


class RootMismatch(AgreementMismatch):
    """Ranks disagreed on the collective root."""


# -- distributed lock ---------------------------------------------------------

class SelfDeadlock(PgasError):
    """Rank attempted to re-acquire a lock it already holds."""


class NotHolder(PgasError):
    """Unlock attempted by a rank that does not hold the lock."""


# -- benchmarks / apps --------------------------------------------------------

class WrongRankCount(PgasError):
    """Benchmark requires a specific number of ranks."""


class DimensionMismatch(PgasError):
    """Matrix dimensions incompatible with the rank count."""


class DecompositionInvalid(PgasError):
    """Grid slab too thin for the stencil halo."""


class IoFailure(PgasError):
    """Report or CSV output could not be written."""

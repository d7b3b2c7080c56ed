"""Exception hierarchy.

Every error carries a ``code`` naming the constant it stands for, so the
CLI can print it verbatim.
"""

from __future__ import annotations


class SimError(Exception):
    """Base class for all simulator errors."""

    code = "SimError"

    def __str__(self) -> str:
        detail = super().__str__()
        return f"{self.code}: {detail}" if detail else self.code


class ConfigError(SimError):
    code = "ConfigError"


class ConflictingFlags(ConfigError):
    code = "ConflictingFlags"


class FlagsRequireLinked(ConfigError):
    code = "FlagsRequireLinked"


class MissingFaultPolicy(ConfigError):
    code = "MissingFaultPolicy"


class UnknownFlag(ConfigError):
    code = "UnknownFlag"


class WeightFileError(SimError):
    code = "WeightFileError"


class SecondLinkedApp(SimError):
    code = "SecondLinkedApp"


class BadCmdline(SimError):
    code = "BadCmdline"


class TooManyTasks(SimError):
    code = "TooManyTasks"


class ReentrantEnter(SimError):
    code = "ReentrantEnter"


class FrameReuse(SimError):
    code = "FrameReuse"


class BypassOnTrapProcess(SimError):
    code = "BypassOnTrapProcess"


class NoReturnInFlight(SimError):
    code = "NoReturnInFlight"


class HalfSwitchedStack(SimError):
    """An interrupt handler observed a stack that is being torn down."""

    code = "HalfSwitchedStack"


class SegFault(SimError):
    code = "SegFault"


class TripleFault(SimError):
    code = "TripleFault"


class KernelPanic(SimError):
    code = "KernelPanic"


class AddressSpaceExhausted(SimError):
    code = "AddressSpaceExhausted"


class MmLockHeld(SimError):
    code = "MmLockHeld"


class LockOwnership(SimError):
    code = "LockOwnership"


class KernelExecOnTrapProcess(SimError):
    code = "KernelExecOnTrapProcess"


class ShortcutOnTrapProcess(SimError):
    code = "ShortcutOnTrapProcess"


class BadFd(SimError):
    code = "BadFd"


class PeerClosed(SimError):
    code = "PeerClosed"


class Interrupted(SimError):
    """A blocking call was cut short by a signal (EINTR)."""

    code = "Interrupted"


class BadThreadState(SimError):
    code = "BadThreadState"


class WouldBlock(SimError):
    """Raised by synchronous drivers when a call tries to sleep."""

    code = "WouldBlock"


class EmptyAfterDiscard(SimError):
    code = "EmptyAfterDiscard"

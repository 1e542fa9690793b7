"""Python bindings for the tdisc C++ library."""

from ._tdisc import *  # noqa: F401,F403
from ._tdisc import __doc__  # noqa: F401

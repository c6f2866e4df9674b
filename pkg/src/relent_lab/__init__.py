"""Relative entropy tools for inhomogeneous balance laws in one space dimension."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .systems import *  # noqa: F401,F403
from .relent import *  # noqa: F401,F403
from .hypotheses import *  # noqa: F401,F403
from .solver import *  # noqa: F401,F403
from .diagnostics import *  # noqa: F401,F403
from .experiments import *  # noqa: F401,F403
from .cli import main, parse_config, dispatch, emit_outputs  # noqa: F401

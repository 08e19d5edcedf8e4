from ._panoctx import *  # noqa: F401,F403
from ._panoctx import __doc__  # noqa: F401

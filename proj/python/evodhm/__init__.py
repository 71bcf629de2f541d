from ._evodhm import *  # noqa: F401,F403

from . import experiments  # noqa: F401

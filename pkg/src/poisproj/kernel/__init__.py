from . import expr, fderiv, normalize  # noqa: F401  (submodules)

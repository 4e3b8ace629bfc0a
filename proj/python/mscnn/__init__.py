try:
    from ._mscnn import *  # noqa: F401,F403
    from ._mscnn import PUBLISHED_PARAMETER_TOTAL, Model, MscnnError
except ImportError:
    from _mscnn import *  # noqa: F401,F403
    from _mscnn import PUBLISHED_PARAMETER_TOTAL, Model, MscnnError

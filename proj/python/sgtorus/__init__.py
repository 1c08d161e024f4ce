"""Python interface to the torus solver core.

The compiled module ``_sgtorus`` normally sits next to this package after an
installed build.  For in-tree use, point ``SGTORUS_MODULE_DIR`` at the CMake
build directory that contains the compiled extension.
"""

import os
import sys

try:
    from _sgtorus import *  # noqa: F401,F403
    from _sgtorus import __doc__ as _core_doc
except ImportError:
    _module_dir = os.environ.get("SGTORUS_MODULE_DIR")
    if not _module_dir:
        raise
    if _module_dir not in sys.path:
        sys.path.insert(0, _module_dir)
    from _sgtorus import *  # noqa: F401,F403
    from _sgtorus import __doc__ as _core_doc

__doc__ = (__doc__ or "") + "\n\n" + (_core_doc or "")

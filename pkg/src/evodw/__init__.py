"""evodw: a metadata-driven, evolvable data warehouse engine.

Heterogeneous source batches land raw at level 0 of a data highway, flow
upward through metadata-defined ELT into a star schema, and get pre-computed
into OLAP cuboids. Detected source schema changes generate adaptation options
a developer chooses from; the chosen option applies atomically across
metadata, stored data, and cubes.
"""

from .config import EngineConfig, load_config
from .engine import Engine
from .errors import EngineError
from .metastore import MetaStore

__version__ = "0.1.0"

__all__ = ["Engine", "EngineConfig", "EngineError", "MetaStore", "load_config", "__version__"]

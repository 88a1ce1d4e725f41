from .errors import AclabError, ConfigError
from .potential import Potential, lemma41_constants
import logging
logger = logging.getLogger(__name__)

__all__ = ['AclabError', 'ConfigError', 'Potential', 'lemma41_constants']
